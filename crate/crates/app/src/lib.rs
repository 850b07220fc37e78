//! Command-line pipeline and HTTP service over `memexplain-core`.

pub mod config;
pub mod decisions;
pub mod explain;
pub mod layout;
pub mod pipeline;
pub mod server;

pub use config::ProjectConfig;
pub use pipeline::Project;
