//! Explainable case-based classification over precomputed meme features.
//!
//! Two explanation routes share one feature store:
//! - [`mlp_head`] trains a dense classification head whose L3 activations
//!   feed an exact cosine [`retrieval`] index of training memes;
//! - [`xdnn`] learns per-label prototype sets in a single pass and explains
//!   each decision by its winning prototype.
//!
//! [`metrics`] scores both with macro and support-weighted F1.

pub mod error;
pub mod feature_store;
pub mod metrics;
pub mod mlp_head;
pub mod retrieval;
pub mod xdnn;

pub use error::{Error, Result};
