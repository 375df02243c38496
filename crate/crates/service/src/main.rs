use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use declab_core::model::{SyntheticSpec, ToyModelSpec};
use declab_core::quality::{NativeMetric, NativeScorer, ScoreError, Scorer, ScorerInfo};
use declab_core::wire::{ScoreItem, ScoreResult};
use declab_service::{model_router, scorer_router, serve};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "declab-server", version, about = "Serve toy models and native scorers over HTTP")]
struct Cli {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8700", global = true)]
    addr: SocketAddr,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a toy logit provider.
    Model {
        /// Toy model spec as inline JSON, e.g. '{"kind":"synthetic","seed":3}'.
        #[arg(long, conflicts_with = "spec_file")]
        spec: Option<String>,
        /// Path to a JSON toy model spec.
        #[arg(long)]
        spec_file: Option<PathBuf>,
    },
    /// Serve a native metric, or a constant stub.
    Scorer {
        /// rougel or bleu.
        #[arg(long, default_value = "rougel")]
        metric: String,
        /// Answer every item with this score instead of computing the metric.
        #[arg(long)]
        constant: Option<f64>,
    },
}

struct ConstantScorer {
    metric: String,
    value: f64,
}

impl Scorer for ConstantScorer {
    fn info(&self) -> Result<ScorerInfo, ScoreError> {
        Ok(ScorerInfo {
            metric: self.metric.clone(),
            range: [0.0, 1.0],
        })
    }

    fn score(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScoreError> {
        Ok(items
            .iter()
            .map(|i| ScoreResult {
                id: i.id.clone(),
                score: self.value,
            })
            .collect())
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let router = match cli.command {
        Command::Model { spec, spec_file } => {
            let spec: ToyModelSpec = match (spec, spec_file) {
                (Some(s), _) => serde_json::from_str(&s).context("parsing --spec")?,
                (None, Some(p)) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                (None, None) => ToyModelSpec::Synthetic(SyntheticSpec::default()),
            };
            let model = spec.build().context("building toy model")?;
            model_router(Arc::from(model))
        }
        Command::Scorer { metric, constant } => {
            let scorer: Arc<dyn Scorer> = match constant {
                Some(value) => {
                    if !(0.0..=1.0).contains(&value) {
                        bail!("--constant must lie in [0, 1]");
                    }
                    Arc::new(ConstantScorer { metric, value })
                }
                None => {
                    let m = NativeMetric::parse(&metric)
                        .with_context(|| format!("unknown native metric {metric:?}"))?;
                    Arc::new(NativeScorer(m))
                }
            };
            scorer_router(scorer)
        }
    };
    serve(cli.addr, router).await?;
    Ok(())
}
