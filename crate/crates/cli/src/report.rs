//! Aggregation of journaled generations into PRR reports and tables.
//!
//! Output files:
//! - `report.json`: header counts plus every table below
//! - `report.csv`: one row per (task, metric, uncertainty method, strategy,
//!   hyperparameters); PRR and bootstrap SD are scaled by 100
//! - `best.csv`, `best.txt`: best hyperparameters per strategy and
//!   task/metric, chosen by mean PRR over uncertainty methods
//! - `distinct.csv`: mean Distinct-1/2 of the outputs
//! - `uncertainty.csv`: mean uncertainty per method
//! - `curves.json`: rejection curves (uncertainty, oracle, random)

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use declab_core::eval::{
    attach_normalized, bootstrap, build_curve, prr, prr_diff, CurveOrdering, DiffEntry, EvalError,
    RejectionCurve,
};
use declab_core::model::math::mix_hash;
use declab_core::quality::{mean_distinct_n, normalize_text};
use declab_core::uncertainty::{self, UeMethod};
use declab_core::{DecodeConfig, EvalRecord};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SelectionMode};
use crate::journal::JournalState;
use crate::sweep::{Plan, PlannedDataset};

pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub task: String,
    pub kind: String,
    pub items: usize,
    pub malformed_lines: usize,
    pub units: usize,
    pub units_quarantined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub seed: u64,
    pub bootstrap_trials: usize,
    pub bootstrap_seed: u64,
    pub selection: SelectionMode,
    pub datasets: Vec<DatasetSummary>,
    pub units_total: usize,
    pub units_quarantined: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Fewer than two scored items.
    TooFew,
    /// All items have the same quality, so PRR is undefined.
    Degenerate,
    Error,
}

impl RowStatus {
    fn name(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::TooFew => "too_few",
            RowStatus::Degenerate => "degenerate",
            RowStatus::Error => "error",
        }
    }
}

/// Identifies a report row across runs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub task: String,
    pub quality_metric: String,
    pub ue_method: String,
    pub strategy: String,
    pub hyperparams: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrRow {
    #[serde(flatten)]
    pub key: RowKey,
    /// PRR × 100.
    pub prr: Option<f64>,
    /// Bootstrap standard deviation × 100.
    pub boot_sd: Option<f64>,
    pub n: usize,
    pub n_boot: usize,
    pub n_boot_degenerate: usize,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub strategy: String,
    pub task: String,
    pub quality_metric: String,
    /// None when no setting had a defined PRR for every method.
    pub hyperparams: Option<String>,
    /// Mean PRR × 100 over uncertainty methods on the reporting items.
    pub prr: Option<f64>,
    pub per_method: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinctRow {
    pub task: String,
    pub strategy: String,
    pub hyperparams: String,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMeanRow {
    pub task: String,
    pub strategy: String,
    pub hyperparams: String,
    pub ue_method: String,
    pub mean: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedUnit {
    pub task: String,
    pub item: String,
    pub strategy: String,
    pub hyperparams: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: ReportHeader,
    pub rows: Vec<PrrRow>,
    pub best: Vec<BestRow>,
    pub distinct: Vec<DistinctRow>,
    pub uncertainty_means: Vec<UncertaintyMeanRow>,
    pub quarantined: Vec<QuarantinedUnit>,
}

impl Report {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Defined PRR values keyed by row.
    pub fn prr_map(&self) -> BTreeMap<RowKey, f64> {
        self.rows
            .iter()
            .filter_map(|r| r.prr.map(|p| (r.key.clone(), p)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    #[serde(flatten)]
    pub key: RowKey,
    pub uncertainty: RejectionCurve,
    pub oracle: RejectionCurve,
    pub random: RejectionCurve,
}

/// Whether an item belongs to the hyperparameter-selection split.
pub fn in_dev_split(item_id: &str, seed: u64, dev_fraction: f64) -> bool {
    let h = mix_hash(seed, [declab_core::model::math::hash_str(item_id)]);
    (h as f64 / u64::MAX as f64) < dev_fraction
}

/// Per-cell inputs gathered from the journal.
struct Cell<'a> {
    dataset: &'a PlannedDataset,
    config: &'a DecodeConfig,
}

impl Cell<'_> {
    fn strategy(&self) -> String {
        self.config.params.id()
    }

    fn hyper(&self) -> String {
        self.config.params.label()
    }

    fn key(&self, metric: &str, method: UeMethod) -> RowKey {
        RowKey {
            task: self.dataset.label.clone(),
            quality_metric: metric.to_owned(),
            ue_method: method.name().to_owned(),
            strategy: self.strategy(),
            hyperparams: self.hyper(),
        }
    }

    /// Eval records of items with a generation and a score for `metric`,
    /// restricted to items accepted by `keep`. Items are in id order.
    fn records(
        &self,
        state: &JournalState,
        metric: &str,
        method: UeMethod,
        keep: &dyn Fn(&str) -> bool,
    ) -> Vec<EvalRecord> {
        let mut out = Vec::new();
        for item in &self.dataset.items {
            if !keep(&item.id) {
                continue;
            }
            let k = self.dataset.key(item, self.config).canonical();
            if state.quarantined.contains_key(&k) {
                continue;
            }
            let (Some(g), Some(q)) = (state.generated.get(&k), state.score(&k, metric)) else {
                continue;
            };
            let Ok(u) = uncertainty::score(&g.record, method) else {
                continue;
            };
            out.push(EvalRecord {
                item_id: item.id.clone(),
                uncertainty: u,
                quality_raw: [(metric.to_owned(), q)].into(),
                quality_norm: BTreeMap::new(),
            });
        }
        out
    }
}

fn status_of(e: &EvalError) -> RowStatus {
    match e {
        EvalError::TooFew(_) => RowStatus::TooFew,
        e if e.is_degenerate() => RowStatus::Degenerate,
        _ => RowStatus::Error,
    }
}

fn cells(plan: &Plan) -> impl Iterator<Item = Cell<'_>> {
    plan.datasets.iter().flat_map(|d| {
        d.configs.iter().map(move |c| Cell {
            dataset: d,
            config: c,
        })
    })
}

fn prr_row(cell: &Cell<'_>, records: &[EvalRecord], metric: &str, method: UeMethod, trials: usize, seed: u64) -> PrrRow {
    let mut row = PrrRow {
        key: cell.key(metric, method),
        prr: None,
        boot_sd: None,
        n: records.len(),
        n_boot: 0,
        n_boot_degenerate: 0,
        status: RowStatus::Ok,
    };
    match prr(records, metric) {
        Ok(res) => {
            row.prr = Some(res.prr * 100.0);
            if trials > 0 {
                match bootstrap(records, metric, trials, seed) {
                    Ok(b) => {
                        row.boot_sd = Some(b.sd * 100.0);
                        row.n_boot = b.trials;
                        row.n_boot_degenerate = b.degenerate;
                    }
                    Err(EvalError::AllTrialsDegenerate(n)) => row.n_boot_degenerate = n,
                    Err(e) => tracing::warn!("bootstrap failed for {:?}: {e}", row.key),
                }
            }
        }
        Err(e) => row.status = status_of(&e),
    }
    row
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Builds the report from the journal state. Never touches a model.
pub fn aggregate(cfg: &RunConfig, plan: &Plan, state: &JournalState) -> Report {
    let methods = &cfg.uncertainty.methods;
    let trials = cfg.bootstrap.trials;
    let boot_seed = cfg.bootstrap_seed();
    let all = |_: &str| true;

    let mut rows = Vec::new();
    let mut distinct = Vec::new();
    let mut uncertainty_means = Vec::new();
    for cell in cells(plan) {
        for metric in &cell.dataset.metrics {
            for &m in methods {
                let recs = cell.records(state, metric, m, &all);
                rows.push(prr_row(&cell, &recs, metric, m, trials, boot_seed));
            }
        }
        let gens: Vec<_> = cell
            .dataset
            .items
            .iter()
            .filter_map(|i| state.generated.get(&cell.dataset.key(i, cell.config).canonical()))
            .collect();
        let words: Vec<Vec<String>> = gens.iter().map(|g| normalize_text(&g.text)).collect();
        distinct.push(DistinctRow {
            task: cell.dataset.label.clone(),
            strategy: cell.strategy(),
            hyperparams: cell.hyper(),
            distinct_1: mean_distinct_n(&words, 1),
            distinct_2: mean_distinct_n(&words, 2),
            n: words.len(),
        });
        for &m in methods {
            let us: Vec<f64> = gens
                .iter()
                .filter_map(|g| uncertainty::score(&g.record, m).ok())
                .collect();
            uncertainty_means.push(UncertaintyMeanRow {
                task: cell.dataset.label.clone(),
                strategy: cell.strategy(),
                hyperparams: cell.hyper(),
                ue_method: m.name().to_owned(),
                mean: mean(&us),
                n: us.len(),
            });
        }
    }

    let best = best_settings(cfg, plan, state, &rows);

    let mut datasets = Vec::new();
    let mut quarantined = Vec::new();
    for d in &plan.datasets {
        let mut q = 0;
        for c in &d.configs {
            for item in &d.items {
                let k = d.key(item, c).canonical();
                if let Some(qr) = state.quarantined.get(&k) {
                    q += 1;
                    quarantined.push(QuarantinedUnit {
                        task: d.label.clone(),
                        item: item.id.clone(),
                        strategy: c.params.id(),
                        hyperparams: c.params.label(),
                        stage: qr.stage.clone(),
                        reason: qr.reason.clone(),
                    });
                } else if !state.generated.contains_key(&k) {
                    q += 1;
                    quarantined.push(QuarantinedUnit {
                        task: d.label.clone(),
                        item: item.id.clone(),
                        strategy: c.params.id(),
                        hyperparams: c.params.label(),
                        stage: "missing".into(),
                        reason: "no generation in the journal".into(),
                    });
                }
            }
        }
        datasets.push(DatasetSummary {
            task: d.label.clone(),
            kind: d.task.name().to_owned(),
            items: d.items.len(),
            malformed_lines: d.malformed_lines,
            units: d.items.len() * d.configs.len(),
            units_quarantined: q,
        });
    }

    Report {
        header: ReportHeader {
            seed: cfg.seed,
            bootstrap_trials: trials,
            bootstrap_seed: boot_seed,
            selection: cfg.selection.mode,
            units_total: plan.unit_count(),
            units_quarantined: quarantined.len(),
            datasets,
        },
        rows,
        best,
        distinct,
        uncertainty_means,
        quarantined,
    }
}

/// Picks, per (task, metric, strategy), the setting with the highest mean
/// PRR over uncertainty methods. Settings where any method's PRR is
/// undefined are not eligible; ties keep the earliest grid entry.
fn best_settings(cfg: &RunConfig, plan: &Plan, state: &JournalState, rows: &[PrrRow]) -> Vec<BestRow> {
    let methods = &cfg.uncertainty.methods;
    let by_key: BTreeMap<&RowKey, &PrrRow> = rows.iter().map(|r| (&r.key, r)).collect();
    let seed = cfg.seed;
    let frac = cfg.selection.dev_fraction;
    let dev = move |id: &str| in_dev_split(id, seed, frac);
    let test = move |id: &str| !in_dev_split(id, seed, frac);

    // per-method PRR × 100 of a cell on a subset
    let subset_prr = |cell: &Cell<'_>, metric: &str, keep: &dyn Fn(&str) -> bool| -> BTreeMap<String, Option<f64>> {
        methods
            .iter()
            .map(|&m| {
                let v = match cfg.selection.mode {
                    SelectionMode::Full => by_key.get(&cell.key(metric, m)).and_then(|r| r.prr),
                    SelectionMode::Split => {
                        prr(&cell.records(state, metric, m, keep), metric).ok().map(|r| r.prr * 100.0)
                    }
                };
                (m.name().to_owned(), v)
            })
            .collect()
    };
    let complete_mean = |vals: &BTreeMap<String, Option<f64>>| -> Option<f64> {
        let v: Option<Vec<f64>> = vals.values().copied().collect();
        v.and_then(|v| mean(&v))
    };

    let mut out = Vec::new();
    for d in &plan.datasets {
        let mut strategies: Vec<String> = Vec::new();
        for c in &d.configs {
            if !strategies.contains(&c.params.id()) {
                strategies.push(c.params.id());
            }
        }
        for metric in &d.metrics {
            for strategy in &strategies {
                let mut best: Option<(f64, Cell<'_>)> = None;
                for c in d.configs.iter().filter(|c| &c.params.id() == strategy) {
                    let cell = Cell { dataset: d, config: c };
                    let Some(score) = complete_mean(&subset_prr(&cell, metric, &dev)) else {
                        continue;
                    };
                    if best.as_ref().is_none_or(|(b, _)| score > *b) {
                        best = Some((score, cell));
                    }
                }
                let row = match best {
                    Some((_, cell)) => {
                        let per_method = subset_prr(&cell, metric, &test);
                        BestRow {
                            strategy: strategy.clone(),
                            task: d.label.clone(),
                            quality_metric: metric.clone(),
                            hyperparams: Some(cell.hyper()),
                            prr: complete_mean(&per_method),
                            per_method,
                        }
                    }
                    None => BestRow {
                        strategy: strategy.clone(),
                        task: d.label.clone(),
                        quality_metric: metric.clone(),
                        hyperparams: None,
                        prr: None,
                        per_method: BTreeMap::new(),
                    },
                };
                out.push(row);
            }
        }
    }
    out
}

/// Rejection curves of every cell with a defined PRR.
pub fn curves(cfg: &RunConfig, plan: &Plan, state: &JournalState) -> Vec<CurveSet> {
    let mut out = Vec::new();
    for cell in cells(plan) {
        for metric in &cell.dataset.metrics {
            for &m in &cfg.uncertainty.methods {
                let mut recs = cell.records(state, metric, m, &|_| true);
                if recs.len() < 2 || attach_normalized(&mut recs, metric).is_err() {
                    continue;
                }
                let curve = |o| build_curve(&recs, metric, o);
                if let (Ok(u), Ok(o), Ok(r)) = (
                    curve(CurveOrdering::Uncertainty),
                    curve(CurveOrdering::Oracle),
                    curve(CurveOrdering::Random),
                ) {
                    out.push(CurveSet {
                        key: cell.key(metric, m),
                        uncertainty: u,
                        oracle: o,
                        random: r,
                    });
                }
            }
        }
    }
    out
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "NA".into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

fn csv_writer(path: &Path) -> std::io::Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(std::io::Error::other)
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(std::io::Error::other)?;
    for r in rows {
        w.write_record(&r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Strategy rows × task/metric columns, each cell `hyperparams (PRR)`.
pub fn best_table(best: &[BestRow]) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut strategies: Vec<String> = Vec::new();
    for b in best {
        let col = format!("{}/{}", b.task, b.quality_metric);
        if !columns.contains(&col) {
            columns.push(col);
        }
        if !strategies.contains(&b.strategy) {
            strategies.push(b.strategy.clone());
        }
    }
    let cell = |s: &str, col: &str| -> String {
        best.iter()
            .find(|b| b.strategy == s && format!("{}/{}", b.task, b.quality_metric) == col)
            .map(|b| match (&b.hyperparams, b.prr) {
                (Some(h), p) => format!("{h} ({})", fmt_opt(p, 2)),
                (None, _) => "NA".into(),
            })
            .unwrap_or_default()
    };
    let mut grid = vec![std::iter::once("strategy".to_owned()).chain(columns.iter().cloned()).collect::<Vec<_>>()];
    for s in &strategies {
        grid.push(std::iter::once(s.clone()).chain(columns.iter().map(|c| cell(s, c))).collect());
    }
    let widths: Vec<usize> = (0..=columns.len())
        .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in grid.iter().enumerate() {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            writeln!(out, "{}", rule.join("  ")).unwrap();
        }
    }
    out
}

/// Writes every report file into `dir`.
pub fn write_outputs(
    dir: &Path,
    report: &Report,
    plan: &Plan,
    state: &JournalState,
    cfg: &RunConfig,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(REPORT_JSON), report)?;
    write_rows(
        &dir.join("report.csv"),
        &[
            "task", "quality_metric", "ue_method", "strategy", "hyperparams", "prr", "boot_sd", "n",
            "n_boot", "n_boot_degenerate", "status",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.key.task.clone(),
                r.key.quality_metric.clone(),
                r.key.ue_method.clone(),
                r.key.strategy.clone(),
                r.key.hyperparams.clone(),
                fmt_opt(r.prr, 2),
                fmt_opt(r.boot_sd, 2),
                r.n.to_string(),
                r.n_boot.to_string(),
                r.n_boot_degenerate.to_string(),
                r.status.name().to_owned(),
            ]
        }),
    )?;
    let methods: Vec<String> = cfg.uncertainty.methods.iter().map(|m| m.name().to_owned()).collect();
    let mut best_header = vec!["strategy", "task", "quality_metric", "hyperparams", "prr"];
    best_header.extend(methods.iter().map(String::as_str));
    write_rows(
        &dir.join("best.csv"),
        &best_header,
        report.best.iter().map(|b| {
            let mut r = vec![
                b.strategy.clone(),
                b.task.clone(),
                b.quality_metric.clone(),
                b.hyperparams.clone().unwrap_or_else(|| "NA".into()),
                fmt_opt(b.prr, 2),
            ];
            r.extend(methods.iter().map(|m| fmt_opt(b.per_method.get(m).copied().flatten(), 2)));
            r
        }),
    )?;
    std::fs::write(dir.join("best.txt"), best_table(&report.best))?;
    write_rows(
        &dir.join("distinct.csv"),
        &["task", "strategy", "hyperparams", "distinct_1", "distinct_2", "n"],
        report.distinct.iter().map(|d| {
            vec![
                d.task.clone(),
                d.strategy.clone(),
                d.hyperparams.clone(),
                format!("{:.3}", d.distinct_1),
                format!("{:.3}", d.distinct_2),
                d.n.to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("uncertainty.csv"),
        &["task", "strategy", "hyperparams", "ue_method", "mean", "n"],
        report.uncertainty_means.iter().map(|u| {
            vec![
                u.task.clone(),
                u.strategy.clone(),
                u.hyperparams.clone(),
                u.ue_method.clone(),
                fmt_opt(u.mean, 4),
                u.n.to_string(),
            ]
        }),
    )?;
    write_json(&dir.join("curves.json"), &curves(cfg, plan, state))?;
    Ok(())
}

/// PRR changes between two reports, for slopegraphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slopegraph {
    pub entries: Vec<DiffEntry<RowKey>>,
    pub only_in_a: Vec<RowKey>,
    pub only_in_b: Vec<RowKey>,
}

pub fn diff_reports(a: &Report, b: &Report) -> Slopegraph {
    let d = prr_diff(&a.prr_map(), &b.prr_map());
    Slopegraph {
        entries: d.entries,
        only_in_a: d.only_in_a,
        only_in_b: d.only_in_b,
    }
}

/// Writes `slopegraph.json` and `slopegraph.csv` into `dir`.
pub fn write_slopegraph(dir: &Path, s: &Slopegraph) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("slopegraph.json"), s)?;
    write_rows(
        &dir.join("slopegraph.csv"),
        &["task", "quality_metric", "ue_method", "strategy", "hyperparams", "prr_before", "prr_after", "delta"],
        s.entries.iter().map(|e| {
            vec![
                e.key.task.clone(),
                e.key.quality_metric.clone(),
                e.key.ue_method.clone(),
                e.key.strategy.clone(),
                e.key.hyperparams.clone(),
                format!("{:.2}", e.prr_before),
                format!("{:.2}", e.prr_after),
                format!("{:.2}", e.delta),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(strategy: &str, hyper: &str) -> RowKey {
        RowKey {
            task: "qa".into(),
            quality_metric: "rougel".into(),
            ue_method: "msp".into(),
            strategy: strategy.into(),
            hyperparams: hyper.into(),
        }
    }

    fn row(k: RowKey, prr: Option<f64>) -> PrrRow {
        PrrRow {
            key: k,
            prr,
            boot_sd: None,
            n: 10,
            n_boot: 0,
            n_boot_degenerate: 0,
            status: if prr.is_some() { RowStatus::Ok } else { RowStatus::Degenerate },
        }
    }

    fn report(rows: Vec<PrrRow>) -> Report {
        Report {
            header: ReportHeader {
                seed: 0,
                bootstrap_trials: 0,
                bootstrap_seed: 0,
                selection: SelectionMode::Full,
                datasets: vec![],
                units_total: 0,
                units_quarantined: 0,
            },
            rows,
            best: vec![],
            distinct: vec![],
            uncertainty_means: vec![],
            quarantined: vec![],
        }
    }

    #[test]
    fn diff_pairs_rows_and_lists_mismatches() {
        let a = report(vec![
            row(key("greedy", "-"), Some(10.0)),
            row(key("beam", "3"), Some(20.0)),
            row(key("cs", "0.2"), None),
        ]);
        let b = report(vec![row(key("greedy", "-"), Some(12.5)), row(key("dola", "[0, 16)"), Some(1.0))]);
        let s = diff_reports(&a, &b);
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].delta, 2.5);
        assert_eq!(s.only_in_a, vec![key("beam", "3")]);
        assert_eq!(s.only_in_b, vec![key("dola", "[0, 16)")]);
    }

    #[test]
    fn best_table_layout() {
        let best = vec![
            BestRow {
                strategy: "beam".into(),
                task: "qa".into(),
                quality_metric: "rougel".into(),
                hyperparams: Some("5".into()),
                prr: Some(12.345),
                per_method: BTreeMap::new(),
            },
            BestRow {
                strategy: "cd".into(),
                task: "qa".into(),
                quality_metric: "rougel".into(),
                hyperparams: None,
                prr: None,
                per_method: BTreeMap::new(),
            },
        ];
        let t = best_table(&best);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "strategy  qa/rougel");
        assert_eq!(lines[2], "beam      5 (12.35)");
        assert_eq!(lines[3], "cd        NA");
    }

    #[test]
    fn dev_split_is_deterministic_and_roughly_sized() {
        let ids: Vec<String> = (0..2000).map(|i| format!("item{i}")).collect();
        let dev = ids.iter().filter(|i| in_dev_split(i, 3, 0.3)).count();
        assert!((500..700).contains(&dev), "{dev}");
        assert!(ids.iter().all(|i| in_dev_split(i, 3, 0.3) == in_dev_split(i, 3, 0.3)));
    }
}
