//! The sweep: ingest datasets, decode every (dataset, configuration, item)
//! unit, score the outputs and aggregate PRR reports.
//!
//! Work is journaled as it completes, so rerunning the same configuration
//! resumes where a previous run stopped. Aggregation only reads the journal
//! and iterates datasets, configurations and items in a fixed order, so the
//! report does not depend on the worker count.

use std::collections::BTreeMap;
use std::path::PathBuf;

use declab_client::{RemoteModel, RemoteScorer};
use declab_core::codec::WordCodec;
use declab_core::quality::{score_checked, NativeMetric, ScoreError};
use declab_core::wire::ScoreItem;
use declab_core::{decode, DecodeConfig, LogitProvider, ModelError, Need, StrategyParams};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ModelSource, RunConfig};
use crate::dataset::{ingest, DatasetItem, IngestError, Task};
use crate::journal::{score_stage, Entry, Journal, JournalState, UnitKey, DECODE_STAGE};
use crate::prompt::render_prompt;
use crate::report::{aggregate, write_outputs, Report};

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset {dataset}: {source}")]
    Ingest {
        dataset: String,
        source: IngestError,
    },
    #[error("{what}: {source}")]
    Model { what: String, source: ModelError },
    #[error("capability check failed:\n  - {}", .0.join("\n  - "))]
    Preflight(Vec<String>),
    #[error("scorer {metric:?}: {source}")]
    Scorer { metric: String, source: ScoreError },
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(
        "{quarantined} of {total} units quarantined, above the allowed fraction {threshold} \
         (report written to {report})"
    )]
    QuarantineExceeded {
        quarantined: usize,
        total: usize,
        threshold: f64,
        report: PathBuf,
    },
}

impl RunError {
    /// Process exit code: 2 when too many units were quarantined, 1 for
    /// every other failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::QuarantineExceeded { .. } => 2,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// One dataset with the configurations it is decoded under.
#[derive(Debug, Clone)]
pub struct PlannedDataset {
    pub label: String,
    pub task: Task,
    pub metrics: Vec<String>,
    /// Sorted by id.
    pub items: Vec<DatasetItem>,
    pub configs: Vec<DecodeConfig>,
    pub malformed_lines: usize,
}

impl PlannedDataset {
    pub fn key(&self, item: &DatasetItem, config: &DecodeConfig) -> UnitKey {
        UnitKey {
            dataset: self.label.clone(),
            item: item.id.clone(),
            config: config.clone(),
        }
    }
}

/// Every unit of a run, in canonical order (dataset label, configuration
/// grid order, item id).
#[derive(Debug, Clone)]
pub struct Plan {
    pub datasets: Vec<PlannedDataset>,
}

impl Plan {
    pub fn build(cfg: &RunConfig) -> Result<Self, RunError> {
        let grid = cfg.grid();
        let mut datasets = Vec::new();
        for d in &cfg.datasets {
            let label = d.label();
            let ingested = ingest(&d.path, d.task, cfg.max_malformed_fraction).map_err(|source| {
                RunError::Ingest {
                    dataset: label.clone(),
                    source,
                }
            })?;
            for m in &ingested.malformed {
                tracing::warn!("{label}: skipping line {}: {}", m.line, m.reason);
            }
            let mut items = ingested.items;
            items.sort_by(|a, b| a.id.cmp(&b.id));
            let configs = grid
                .iter()
                .map(|p| {
                    DecodeConfig::new(p.clone(), d.max_new_tokens())
                        .with_policy(cfg.uncertainty.scoring_policy)
                })
                .collect();
            datasets.push(PlannedDataset {
                label,
                task: d.task,
                metrics: d.metrics(),
                items,
                configs,
                malformed_lines: ingested.malformed.len(),
            });
        }
        datasets.sort_by(|a, b| a.label.cmp(&b.label));
        Ok(Self { datasets })
    }

    pub fn unit_count(&self) -> usize {
        self.datasets
            .iter()
            .map(|d| d.items.len() * d.configs.len())
            .sum()
    }

    /// Units in canonical order.
    pub fn units(&self) -> impl Iterator<Item = (&PlannedDataset, &DecodeConfig, &DatasetItem)> {
        self.datasets.iter().flat_map(|d| {
            d.configs
                .iter()
                .flat_map(move |c| d.items.iter().map(move |i| (d, c, i)))
        })
    }
}

/// Provider features a strategy needs.
pub fn requirement(params: &StrategyParams) -> Need {
    match params {
        StrategyParams::Dola(_) | StrategyParams::Sled(_) => Need::LAYERS,
        StrategyParams::Cs(_) | StrategyParams::FsdVec(_) => Need::HIDDEN,
        _ => Need::FINAL,
    }
}

pub fn build_model(what: &str, src: &ModelSource) -> Result<Box<dyn LogitProvider>, RunError> {
    let wrap = |source| RunError::Model {
        what: what.to_owned(),
        source,
    };
    match (&src.toy, &src.endpoint) {
        (Some(spec), _) => spec.build().map_err(wrap),
        (None, Some(url)) => Ok(Box::new(
            RemoteModel::connect(url, &src.remote_config()).map_err(wrap)?,
        )),
        (None, None) => Err(RunError::Config(ConfigError::Invalid(vec![format!(
            "{what}: one of `toy` or `endpoint` is required"
        )]))),
    }
}

/// Checks every configuration against the providers' capabilities before
/// any work starts.
pub fn preflight(
    plan: &Plan,
    model: &dyn LogitProvider,
    amateur: Option<&dyn LogitProvider>,
) -> Result<(), RunError> {
    let caps = model.capabilities();
    let mut problems = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for d in &plan.datasets {
        for c in &d.configs {
            let tag = format!("{} {}", c.params.id(), c.params.label());
            if !seen.insert(tag.clone()) {
                continue;
            }
            if let Err(e) = caps.supports(requirement(&c.params)) {
                problems.push(format!("{tag}: {e}"));
            }
            match &c.params {
                StrategyParams::Dola(p) if caps.exposes_layer_logits => {
                    let [lo, hi] = p.bucket;
                    if lo >= hi || hi > caps.layer_count - 1 {
                        problems.push(format!(
                            "{tag}: bucket needs premature layers below {hi}, model has {} layers",
                            caps.layer_count
                        ));
                    }
                }
                StrategyParams::Cd(_) => match amateur {
                    None => problems.push(format!("{tag}: no amateur model configured")),
                    Some(a) if a.vocab() != model.vocab() => problems.push(format!(
                        "{tag}: amateur vocabulary {} differs from model vocabulary {}",
                        a.vocab().size(),
                        model.vocab().size()
                    )),
                    _ => {}
                },
                _ => {}
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(RunError::Preflight(problems))
    }
}

/// A quality metric ready to score.
pub enum MetricScorer {
    Native(NativeMetric),
    Remote(RemoteScorer),
}

fn connect_scorers(cfg: &RunConfig, plan: &Plan) -> Result<BTreeMap<String, MetricScorer>, RunError> {
    let mut out = BTreeMap::new();
    for m in plan.datasets.iter().flat_map(|d| d.metrics.iter()) {
        if out.contains_key(m) {
            continue;
        }
        let scorer = if let Some(ep) = cfg.scorers.get(m) {
            MetricScorer::Remote(
                RemoteScorer::connect(&ep.endpoint, &ep.remote_config()).map_err(|source| {
                    RunError::Scorer {
                        metric: m.clone(),
                        source,
                    }
                })?,
            )
        } else if let Some(native) = NativeMetric::parse(m) {
            MetricScorer::Native(native)
        } else {
            return Err(RunError::Config(ConfigError::Invalid(vec![format!(
                "metric {m:?} has no scorer"
            )])));
        };
        out.insert(m.clone(), scorer);
    }
    Ok(out)
}

/// Overrides applied on top of the configuration by the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
    }
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub report: Report,
    pub output_dir: PathBuf,
    pub decoded: usize,
    pub scored: usize,
}

/// Runs (or resumes) a sweep and writes the report files.
pub fn run_sweep(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let plan = Plan::build(cfg)?;
    let model = build_model("model", &cfg.model)?;
    let amateur = cfg
        .amateur
        .as_ref()
        .map(|a| build_model("amateur", a))
        .transpose()?;
    preflight(&plan, model.as_ref(), amateur.as_deref())?;
    let scorers = connect_scorers(cfg, &plan)?;

    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(io_err(format!("creating {}", cfg.output_dir.display())))?;
    let journal_path = cfg.output_dir.join(JOURNAL_FILE);
    let mut state =
        JournalState::load(&journal_path).map_err(io_err(format!("reading {}", journal_path.display())))?;
    let journal = Journal::open(&journal_path).map_err(io_err(format!("opening {}", journal_path.display())))?;

    let decoded = decode_pending(cfg, &plan, model.as_ref(), amateur.as_deref(), &journal, &mut state)?;
    let scored = score_pending(cfg, &plan, &scorers, &journal, &mut state)?;

    let report = aggregate(cfg, &plan, &state);
    write_outputs(&cfg.output_dir, &report, &plan, &state, cfg)
        .map_err(io_err(format!("writing report to {}", cfg.output_dir.display())))?;

    let total = plan.unit_count();
    let quarantined = report.header.units_quarantined;
    if quarantined as f64 > cfg.max_quarantine_fraction * total as f64 {
        return Err(RunError::QuarantineExceeded {
            quarantined,
            total,
            threshold: cfg.max_quarantine_fraction,
            report: cfg.output_dir.clone(),
        });
    }
    Ok(RunSummary {
        report,
        output_dir: cfg.output_dir.clone(),
        decoded,
        scored,
    })
}

/// Rebuilds the report files from an existing journal without decoding or
/// scoring anything.
pub fn recompute(cfg: &RunConfig) -> Result<Report, RunError> {
    cfg.validate()?;
    let plan = Plan::build(cfg)?;
    let journal_path = cfg.output_dir.join(JOURNAL_FILE);
    if !journal_path.exists() {
        return Err(RunError::Io {
            context: format!("reading {}", journal_path.display()),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no journal"),
        });
    }
    let state =
        JournalState::load(&journal_path).map_err(io_err(format!("reading {}", journal_path.display())))?;
    let report = aggregate(cfg, &plan, &state);
    write_outputs(&cfg.output_dir, &report, &plan, &state, cfg)
        .map_err(io_err(format!("writing report to {}", cfg.output_dir.display())))?;
    Ok(report)
}

/// Everything `run` checks before decoding: configuration, datasets,
/// model handshakes and capabilities, scorer handshakes.
pub fn check(cfg: &RunConfig) -> Result<Plan, RunError> {
    cfg.validate()?;
    let plan = Plan::build(cfg)?;
    let model = build_model("model", &cfg.model)?;
    let amateur = cfg
        .amateur
        .as_ref()
        .map(|a| build_model("amateur", a))
        .transpose()?;
    preflight(&plan, model.as_ref(), amateur.as_deref())?;
    connect_scorers(cfg, &plan)?;
    Ok(plan)
}

fn decode_pending(
    cfg: &RunConfig,
    plan: &Plan,
    model: &dyn LogitProvider,
    amateur: Option<&dyn LogitProvider>,
    journal: &Journal,
    state: &mut JournalState,
) -> Result<usize, RunError> {
    let pending: Vec<_> = plan
        .units()
        .filter(|(d, c, i)| !state.generated.contains_key(&d.key(i, c).canonical()))
        .collect();
    if pending.is_empty() {
        return Ok(0);
    }
    let safe = model.concurrency_safe() && amateur.is_none_or(|a| a.concurrency_safe());
    let workers = if safe { cfg.workers.max(1) } else { 1 };
    tracing::info!("decoding {} units on {workers} worker(s)", pending.len());
    let codec = WordCodec::new(model.vocab());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| io_err("starting worker pool")(std::io::Error::other(e)))?;
    let entries: Vec<std::io::Result<Entry>> = pool.install(|| {
        pending
            .par_iter()
            .map(|(d, c, item)| {
                let key = d.key(item, c);
                let prompt = codec.encode(&render_prompt(item, &cfg.templates));
                let entry = match decode(model, amateur, &item.id, &prompt, c) {
                    Ok(mut record) => {
                        record.output.drop_hidden_trace();
                        Entry::Generated {
                            key,
                            text: codec.decode(record.output.generated()),
                            record,
                        }
                    }
                    Err(e) => {
                        tracing::warn!("{}/{} {}: {e}", d.label, item.id, c.params.id());
                        Entry::Quarantined {
                            key,
                            stage: DECODE_STAGE.into(),
                            reason: e.to_string(),
                        }
                    }
                };
                journal.append(&entry).map(|_| entry)
            })
            .collect()
    });
    let n = entries.len();
    for e in entries {
        state.apply(e.map_err(io_err("appending to journal"))?);
    }
    Ok(n)
}

/// One output awaiting a score.
struct Pending<'a> {
    key: UnitKey,
    canonical: String,
    item: &'a DatasetItem,
    text: String,
}

fn score_pending(
    cfg: &RunConfig,
    plan: &Plan,
    scorers: &BTreeMap<String, MetricScorer>,
    journal: &Journal,
    state: &mut JournalState,
) -> Result<usize, RunError> {
    let mut total = 0;
    for (metric, scorer) in scorers {
        let pending: Vec<Pending<'_>> = plan
            .units()
            .filter(|(d, _, _)| d.metrics.contains(metric))
            .filter_map(|(d, c, item)| {
                let key = d.key(item, c);
                let canonical = key.canonical();
                let text = state.generated.get(&canonical)?.text.clone();
                if state.score(&canonical, metric).is_some() {
                    return None;
                }
                Some(Pending {
                    key,
                    canonical,
                    item,
                    text,
                })
            })
            .collect();
        if pending.is_empty() {
            continue;
        }
        tracing::info!("scoring {} outputs with {metric}", pending.len());
        let outcomes: Vec<Result<f64, String>> = match scorer {
            MetricScorer::Native(m) => pending
                .par_iter()
                .map(|p| {
                    let refs = if cfg.multi_reference {
                        &p.item.references[..]
                    } else {
                        &p.item.references[..p.item.references.len().min(1)]
                    };
                    if refs.is_empty() {
                        Err("item has no reference".to_owned())
                    } else {
                        Ok(m.score(&p.text, refs))
                    }
                })
                .collect(),
            MetricScorer::Remote(r) => score_remote(r, &pending),
        };
        for (p, outcome) in pending.iter().zip(outcomes) {
            let entry = match outcome {
                Ok(score) => Entry::Scored {
                    key: p.key.clone(),
                    metric: metric.clone(),
                    score,
                },
                Err(reason) => {
                    tracing::warn!("{} {metric}: {reason}", p.canonical);
                    Entry::Quarantined {
                        key: p.key.clone(),
                        stage: score_stage(metric),
                        reason,
                    }
                }
            };
            journal.append(&entry).map_err(io_err("appending to journal"))?;
            state.apply(entry);
        }
        total += pending.len();
    }
    Ok(total)
}

fn score_item(p: &Pending<'_>, idx: usize) -> ScoreItem {
    ScoreItem {
        id: idx.to_string(),
        hypothesis: p.text.clone(),
        reference: p.item.references.first().cloned().unwrap_or_default(),
        aux: p.item.aux.clone(),
    }
}

/// Batched remote scoring; when a batch fails the items are retried one by
/// one so a single bad item only quarantines itself.
fn score_remote(scorer: &RemoteScorer, pending: &[Pending<'_>]) -> Vec<Result<f64, String>> {
    let items: Vec<ScoreItem> = pending.iter().enumerate().map(|(i, p)| score_item(p, i)).collect();
    match scorer.score_all(&items) {
        Ok(scores) => scores.into_iter().map(Ok).collect(),
        Err(e) => {
            tracing::warn!("batched scoring failed ({e}); retrying item by item");
            items
                .par_iter()
                .map(|it| {
                    score_checked(scorer, std::slice::from_ref(it))
                        .map(|v| v[0])
                        .map_err(|e| e.to_string())
                })
                .collect()
        }
    }
}
