use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use memexplain_app::decisions::DecisionLog;
use memexplain_app::explain::Engine;
use memexplain_app::pipeline::{self, write_synthetic_data};
use memexplain_app::server::{self, AppState};
use memexplain_app::{layout::DataLayout, Project, ProjectConfig};
use memexplain_core::feature_store::{FeatureSource, SyntheticSpec, Task};

#[derive(Parser)]
#[command(name = "memexplain", version, about = "Explainable case-based meme classification")]
struct Cli {
    /// Project config (TOML).
    #[arg(long, global = true, default_value = "memexplain.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to one task (mami_a, mami_b, hateful, synthetic-N).
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Restrict to one feature source (clip, bertweet, bert_base, clip+bertweet, synthetic).
    #[arg(long, global = true)]
    model: Option<FeatureSource>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate manifests and feature files and copy them into artifacts_dir.
    Ingest,
    /// Train the classification head.
    Train,
    /// Fit per-label prototype sets.
    XdnnFit,
    /// Embed training memes and build the neighbor index.
    Index,
    /// Score both methods and update the comparison table.
    Eval,
    /// Print the explanation payload for one meme.
    Explain {
        meme_id: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        /// Overrides listen_address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write a synthetic dataset and a config pointing at it.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        labels: usize,
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 500)]
        per_cluster: usize,
        #[arg(long, default_value_t = 0.1)]
        spread: f64,
        #[arg(long, default_value_t = 0.2)]
        dev_fraction: f64,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::GenSynthetic { out, labels, clusters, dim, per_cluster, spread, dev_fraction } = &cli.command {
        let seed = cli.seed.unwrap_or(0);
        let spec = SyntheticSpec {
            label_count: *labels,
            clusters_per_label: *clusters,
            dim: *dim,
            samples_per_cluster: *per_cluster,
            cluster_spread: *spread,
            seed,
        };
        let data = out.join("data");
        let task = write_synthetic_data(&DataLayout::new(&data), &spec, *dev_fraction, FeatureSource::Synthetic)?;
        let mut cfg = ProjectConfig::new("data".into(), "artifacts".into(), vec![task], vec![FeatureSource::Synthetic]);
        cfg.seed = seed;
        let path = out.join("memexplain.toml");
        std::fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} memes for {task} and {}", spec.total(), path.display());
        return Ok(());
    }

    let mut cfg = ProjectConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let (tasks, models) = cfg.select(cli.task, cli.model)?;
    let project = Project::new(cfg);
    let pairs = || tasks.iter().flat_map(|&t| models.iter().map(move |&m| (t, m)));

    match cli.command {
        Command::GenSynthetic { .. } => unreachable!(),
        Command::Ingest => {
            let report = pipeline::ingest(&project, &tasks, &models)?;
            print!("{}", report.to_text());
        }
        Command::Train => {
            for (t, m) in pairs() {
                let s = pipeline::cmd_train(&project, t, m)?;
                println!(
                    "{}: loss {:.4} -> {:.4}, best dev macro-F1 {} (epoch {}, {}), crc {}",
                    s.model_tag,
                    s.history.initial_loss,
                    s.history.final_loss().unwrap_or(f64::NAN),
                    s.history.best_dev_macro_f1().map_or("n/a".into(), |v| format!("{v:.4}")),
                    s.history.best_epoch.map_or("-".into(), |e| e.to_string()),
                    s.dev_source,
                    s.checksum
                );
            }
        }
        Command::XdnnFit => {
            for (t, m) in pairs() {
                let s = pipeline::cmd_fit_xdnn(&project, t, m)?;
                println!("{}: {} prototypes, crc {}", s.model_tag, s.prototypes, s.checksum);
                for r in &s.sets {
                    println!(
                        "  {}/{}: {} of {} (ratio {:.3}), peak {}",
                        r.label, r.polarity, r.prototypes, r.training_size, r.ratio, r.peak_exemplar
                    );
                }
            }
        }
        Command::Index => {
            for (t, m) in pairs() {
                let s = pipeline::cmd_index(&project, t, m)?;
                println!("{}: {} x {}, crc {}", s.model_tag, s.count, s.dim, s.checksum);
            }
        }
        Command::Eval => {
            for &t in &tasks {
                let mut last = None;
                for &m in &models {
                    let s = pipeline::cmd_eval(&project, t, m)?;
                    for r in &s.reports {
                        print_json(r)?;
                    }
                    last = Some(s.comparison);
                }
                if let Some(table) = last {
                    print!("{}", table.to_text());
                }
            }
        }
        Command::Explain { meme_id, k } => {
            let engine = Engine::load(&project, &tasks, &models)?;
            if cli.model.is_some() {
                if let Some((tag, why)) = engine.skipped.first() {
                    anyhow::bail!("{tag}: {why}");
                }
            }
            let e = engine.explain(&meme_id, cli.task, &[], k)?;
            print_json(&e)?;
        }
        Command::Serve { listen } => {
            let addr = listen.unwrap_or_else(|| project.config.listen_address.clone());
            let engine = Engine::load(&project, &tasks, &models)?;
            for (tag, why) in &engine.skipped {
                log::warn!("not serving {tag}: {why}");
            }
            let decisions = DecisionLog::open(&project.artifacts.decisions())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = server::bind(&addr).await?;
                server::serve(listener, Arc::new(AppState { engine, decisions })).await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
