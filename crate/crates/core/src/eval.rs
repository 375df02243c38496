//! Prediction–rejection curves, PRR, bootstrap statistics and PRR diffs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::math::mix_hash;
use crate::quality::{minmax_normalize, QualityError};
use crate::types::{EvalRecord, PrrResult};

pub const DEFAULT_BOOTSTRAP_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need at least 2 records, got {0}")]
    TooFew(usize),
    #[error("item {item:?} has no {metric:?} quality score")]
    MissingQuality { item: String, metric: String },
    #[error("item {0:?} has a non-finite uncertainty score")]
    NonFiniteUncertainty(String),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error("PRR undefined: oracle and random areas coincide")]
    Degenerate,
    #[error("bootstrap needs at least one trial")]
    NoTrials,
    #[error("all {0} bootstrap trials were degenerate")]
    AllTrialsDegenerate(usize),
}

impl EvalError {
    /// True for errors caused by the data having no quality spread.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            EvalError::Degenerate
                | EvalError::Quality(QualityError::Degenerate(_))
                | EvalError::AllTrialsDegenerate(_)
        )
    }
}

/// Which ordering decides the rejection sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveOrdering {
    /// Reject highest uncertainty first.
    Uncertainty,
    /// Reject lowest quality first.
    Oracle,
    /// Expected curve of a uniformly random ordering: the global mean.
    Random,
}

/// Mean retained quality at every rejection fraction `k / N`, `k = 0..=N`.
///
/// At `r = 1` nothing is retained; the value carries over from `r = (N-1)/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub ordering: CurveOrdering,
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
}

impl RejectionCurve {
    /// Trapezoidal area over the curve grid.
    pub fn area(&self) -> f64 {
        self.fractions
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(r, v)| (r[1] - r[0]) * (v[0] + v[1]) / 2.0)
            .sum()
    }

    /// Number of items retained at grid index `k`.
    pub fn retained(&self, k: usize) -> usize {
        self.fractions.len() - 1 - k
    }
}

/// One item as seen by the curve builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<'a> {
    pub id: &'a str,
    pub uncertainty: f64,
    pub quality: f64,
}

fn curve_from_order(ordering: CurveOrdering, qualities_in_keep_order: &[f64]) -> RejectionCurve {
    let n = qualities_in_keep_order.len();
    // prefix means: keep the first (n - k) items
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for q in qualities_in_keep_order {
        acc += q;
        prefix.push(acc);
    }
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..n {
        let keep = n - k;
        values.push(prefix[keep] / keep as f64);
    }
    values.push(*values.last().expect("n >= 1"));
    RejectionCurve {
        ordering,
        fractions: (0..=n).map(|k| k as f64 / n as f64).collect(),
        values,
    }
}

/// Builds a curve from points whose quality is already normalized.
pub fn curve_from_points(points: &[Point<'_>], ordering: CurveOrdering) -> RejectionCurve {
    let mut order: Vec<&Point<'_>> = points.iter().collect();
    match ordering {
        CurveOrdering::Uncertainty => order.sort_by(|a, b| {
            a.uncertainty
                .total_cmp(&b.uncertainty)
                .then_with(|| a.id.cmp(b.id))
        }),
        CurveOrdering::Oracle => order.sort_by(|a, b| {
            b.quality
                .total_cmp(&a.quality)
                .then_with(|| a.id.cmp(b.id))
        }),
        CurveOrdering::Random => {
            let mean = points.iter().map(|p| p.quality).sum::<f64>() / points.len() as f64;
            let mut c = curve_from_order(ordering, &vec![mean; points.len()]);
            c.values.iter_mut().for_each(|v| *v = mean);
            return c;
        }
    }
    let q: Vec<f64> = order.iter().map(|p| p.quality).collect();
    curve_from_order(ordering, &q)
}

fn check_points(points: &[Point<'_>]) -> Result<(), EvalError> {
    if points.len() < 2 {
        return Err(EvalError::TooFew(points.len()));
    }
    if let Some(p) = points.iter().find(|p| !p.uncertainty.is_finite()) {
        return Err(EvalError::NonFiniteUncertainty(p.id.to_owned()));
    }
    Ok(())
}

/// Areas and PRR for normalized points.
pub fn prr_from_points(points: &[Point<'_>]) -> Result<PrrResult, EvalError> {
    check_points(points)?;
    let a_uns = curve_from_points(points, CurveOrdering::Uncertainty).area();
    let a_orc = curve_from_points(points, CurveOrdering::Oracle).area();
    let a_rand = curve_from_points(points, CurveOrdering::Random).area();
    let den = a_orc - a_rand;
    if den <= 0.0 {
        return Err(EvalError::Degenerate);
    }
    Ok(PrrResult {
        prr: (a_uns - a_rand) / den,
        area_uns: a_uns,
        area_orc: a_orc,
        area_rand: a_rand,
        n_items: points.len(),
        boot_mean: None,
        boot_sd: None,
        n_boot: 0,
        n_boot_degenerate: 0,
    })
}

fn raw_quality(r: &EvalRecord, metric: &str) -> Result<f64, EvalError> {
    r.quality_raw
        .get(metric)
        .copied()
        .ok_or_else(|| EvalError::MissingQuality {
            item: r.item_id.clone(),
            metric: metric.to_owned(),
        })
}

/// Fills `quality_norm[metric]` by min-max normalizing the raw scores of the
/// whole set.
pub fn attach_normalized(records: &mut [EvalRecord], metric: &str) -> Result<(), EvalError> {
    let raw = records
        .iter()
        .map(|r| raw_quality(r, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = minmax_normalize(&raw)?;
    for (r, q) in records.iter_mut().zip(norm) {
        r.quality_norm.insert(metric.to_owned(), q);
    }
    Ok(())
}

/// Rejection curve over stored normalized quality.
pub fn build_curve(
    records: &[EvalRecord],
    metric: &str,
    ordering: CurveOrdering,
) -> Result<RejectionCurve, EvalError> {
    let points = normalized_points(records, metric)?;
    check_points(&points)?;
    Ok(curve_from_points(&points, ordering))
}

fn normalized_points<'a>(records: &'a [EvalRecord], metric: &str) -> Result<Vec<Point<'a>>, EvalError> {
    records
        .iter()
        .map(|r| {
            let q = r
                .quality_norm
                .get(metric)
                .copied()
                .ok_or_else(|| EvalError::MissingQuality {
                    item: r.item_id.clone(),
                    metric: metric.to_owned(),
                })?;
            Ok(Point {
                id: &r.item_id,
                uncertainty: r.uncertainty,
                quality: q,
            })
        })
        .collect()
}

fn raw_points<'a>(records: &[&'a EvalRecord], metric: &str) -> Result<Vec<Point<'a>>, EvalError> {
    let raw = records
        .iter()
        .map(|r| raw_quality(r, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = minmax_normalize(&raw)?;
    Ok(records
        .iter()
        .zip(norm)
        .map(|(r, q)| Point {
            id: &r.item_id,
            uncertainty: r.uncertainty,
            quality: q,
        })
        .collect())
}

/// PRR of a record set; raw quality is min-max normalized over the set.
pub fn prr(records: &[EvalRecord], metric: &str) -> Result<PrrResult, EvalError> {
    if records.len() < 2 {
        return Err(EvalError::TooFew(records.len()));
    }
    let refs: Vec<&EvalRecord> = records.iter().collect();
    prr_from_points(&raw_points(&refs, metric)?)
}

/// Bootstrap statistics of PRR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapStats {
    pub mean: f64,
    pub sd: f64,
    pub trials: usize,
    pub degenerate: usize,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_hash(seed, [trial as u64]))
}

/// Resamples the records with replacement `n_trials` times and recomputes
/// PRR, normalizing quality within every resample. Trials with no quality
/// spread are discarded and counted. Trials run in parallel but are reduced
/// in trial order, so the statistics are bit-stable for a given seed.
pub fn bootstrap(
    records: &[EvalRecord],
    metric: &str,
    n_trials: usize,
    seed: u64,
) -> Result<BootstrapStats, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let n = records.len();
    if n < 2 {
        return Err(EvalError::TooFew(n));
    }
    // surface missing scores before sampling hides them
    for r in records {
        raw_quality(r, metric)?;
    }
    let outcomes: Vec<Result<f64, EvalError>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let sample: Vec<&EvalRecord> = (0..n).map(|_| &records[rng.gen_range(0..n)]).collect();
            raw_points(&sample, metric).and_then(|p| prr_from_points(&p)).map(|r| r.prr)
        })
        .collect();
    let mut values = Vec::with_capacity(n_trials);
    let mut degenerate = 0;
    for o in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(e) if e.is_degenerate() => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(EvalError::AllTrialsDegenerate(degenerate));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    Ok(BootstrapStats {
        mean,
        sd: var.sqrt(),
        trials: values.len(),
        degenerate,
    })
}

/// PRR plus bootstrap statistics in one result.
pub fn prr_with_bootstrap(
    records: &[EvalRecord],
    metric: &str,
    n_trials: usize,
    seed: u64,
) -> Result<PrrResult, EvalError> {
    let mut res = prr(records, metric)?;
    if n_trials > 0 {
        let b = bootstrap(records, metric, n_trials, seed)?;
        res.boot_mean = Some(b.mean);
        res.boot_sd = Some(b.sd);
        res.n_boot = b.trials;
        res.n_boot_degenerate = b.degenerate;
    }
    Ok(res)
}

/// One key present in both runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry<K> {
    pub key: K,
    pub prr_before: f64,
    pub prr_after: f64,
    pub delta: f64,
}

/// Per-key PRR changes between two runs; keys found in only one run are
/// listed rather than dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrDiff<K> {
    pub entries: Vec<DiffEntry<K>>,
    pub only_in_a: Vec<K>,
    pub only_in_b: Vec<K>,
}

impl<K> PrrDiff<K> {
    pub fn has_mismatches(&self) -> bool {
        !self.only_in_a.is_empty() || !self.only_in_b.is_empty()
    }
}

pub fn prr_diff<K: Ord + Clone>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> PrrDiff<K> {
    let mut entries = Vec::new();
    let mut only_in_a = Vec::new();
    for (k, &before) in a {
        match b.get(k) {
            Some(&after) => entries.push(DiffEntry {
                key: k.clone(),
                prr_before: before,
                prr_after: after,
                delta: after - before,
            }),
            None => only_in_a.push(k.clone()),
        }
    }
    let only_in_b = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    PrrDiff {
        entries,
        only_in_a,
        only_in_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(id: &str, u: f64, q: f64) -> EvalRecord {
        EvalRecord {
            item_id: id.into(),
            uncertainty: u,
            quality_raw: [("m".to_owned(), q)].into(),
            quality_norm: BTreeMap::new(),
        }
    }

    fn recs(us: &[f64], qs: &[f64]) -> Vec<EvalRecord> {
        us.iter()
            .zip(qs)
            .enumerate()
            .map(|(i, (&u, &q))| rec(&format!("i{i:03}"), u, q))
            .collect()
    }

    #[test]
    fn two_point_perfect_curve() {
        let mut rs = recs(&[1.0, 0.0], &[0.0, 1.0]);
        attach_normalized(&mut rs, "m").unwrap();
        let c = build_curve(&rs, "m", CurveOrdering::Uncertainty).unwrap();
        assert_eq!(c.fractions, vec![0.0, 0.5, 1.0]);
        assert_eq!(c.values, vec![0.5, 1.0, 1.0]);
        let r = build_curve(&rs, "m", CurveOrdering::Random).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.5));
        assert_eq!(c.retained(1), 1);
    }

    #[test]
    fn prr_perfect_and_anticorrelated() {
        let qs = [0.1, 0.9, 0.4, 0.7, 0.3, 0.55];
        let inverse: Vec<f64> = qs.iter().map(|q| -q).collect();
        let p = prr(&recs(&inverse, &qs), "m").unwrap();
        assert!((p.prr - 1.0).abs() < 1e-9);
        let anti = prr(&recs(&qs, &qs), "m").unwrap();
        assert!(anti.prr < 0.0);
    }

    #[test]
    fn constant_quality_is_an_explicit_error() {
        let e = prr(&recs(&[1.0, 2.0, 3.0], &[0.4, 0.4, 0.4]), "m").unwrap_err();
        assert!(e.is_degenerate());
        assert!(matches!(prr(&recs(&[1.0], &[0.4]), "m"), Err(EvalError::TooFew(1))));
    }

    #[test]
    fn missing_metric_is_reported() {
        let rs = recs(&[1.0, 2.0], &[0.0, 1.0]);
        assert!(matches!(
            prr(&rs, "bleu"),
            Err(EvalError::MissingQuality { .. })
        ));
        assert!(matches!(
            build_curve(&rs, "m", CurveOrdering::Oracle),
            Err(EvalError::MissingQuality { .. })
        ));
    }

    #[test]
    fn uncertainty_ties_break_by_item_id() {
        let rs = vec![rec("b", 0.0, 1.0), rec("a", 0.0, 0.0), rec("c", 1.0, 0.5)];
        let mut rs2 = rs.clone();
        attach_normalized(&mut rs2, "m").unwrap();
        let c = build_curve(&rs2, "m", CurveOrdering::Uncertainty).unwrap();
        // keep order a, b, c: retaining 1 keeps "a" (quality 0)
        assert_eq!(c.values[2], 0.0);
        rs2.reverse();
        assert_eq!(build_curve(&rs2, "m", CurveOrdering::Uncertainty).unwrap(), c);
    }

    /// Independent oracle: for every k, sort, drop the k rejected items
    /// explicitly and average what remains.
    fn brute_curve(us: &[f64], qs: &[f64], ids: &[String], oracle: bool) -> Vec<f64> {
        let n = qs.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            let key = if oracle {
                qs[b].partial_cmp(&qs[a]).unwrap()
            } else {
                us[a].partial_cmp(&us[b]).unwrap()
            };
            key.then(ids[a].cmp(&ids[b]))
        });
        let mut out = Vec::new();
        for k in 0..=n {
            let keep = if k == n { 1 } else { n - k };
            let kept: Vec<f64> = idx[..keep].iter().map(|&i| qs[i]).collect();
            out.push(kept.iter().sum::<f64>() / kept.len() as f64);
        }
        out
    }

    fn brute_area(v: &[f64]) -> f64 {
        let n = (v.len() - 1) as f64;
        let mut a = 0.0;
        for k in 0..v.len() - 1 {
            a += 0.5 * (v[k] + v[k + 1]) / n;
        }
        a
    }

    #[test]
    fn curves_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = 10;
            let us: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
            let mut rs = recs(&us, &raw);
            if attach_normalized(&mut rs, "m").is_err() {
                continue;
            }
            let qs: Vec<f64> = rs.iter().map(|r| r.quality_norm["m"]).collect();
            let ids: Vec<String> = rs.iter().map(|r| r.item_id.clone()).collect();
            for (ord, oracle) in [(CurveOrdering::Uncertainty, false), (CurveOrdering::Oracle, true)] {
                let c = build_curve(&rs, "m", ord).unwrap();
                let want = brute_curve(&us, &qs, &ids, oracle);
                for (a, b) in c.values.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((c.area() - brute_area(&want)).abs() < 1e-12);
            }
            let mean = qs.iter().sum::<f64>() / n as f64;
            let p = prr(&rs, "m").unwrap();
            let bu = brute_area(&brute_curve(&us, &qs, &ids, false));
            let bo = brute_area(&brute_curve(&us, &qs, &ids, true));
            assert!((p.prr - (bu - mean) / (bo - mean)).abs() < 1e-9);
        }
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let us: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let qs: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let rs = recs(&us, &qs);
        let a = bootstrap(&rs, "m", 50, 42).unwrap();
        let b = bootstrap(&rs, "m", 50, 42).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.sd.to_bits(), b.sd.to_bits());
        let c = bootstrap(&rs, "m", 50, 43).unwrap();
        assert_ne!(a.mean.to_bits(), c.mean.to_bits());
    }

    #[test]
    fn bootstrap_constant_statistic_has_zero_sd() {
        // perfect ordering: every non-degenerate resample has PRR 1
        let qs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let us: Vec<f64> = qs.iter().map(|q| -q).collect();
        let b = bootstrap(&recs(&us, &qs), "m", 200, 1).unwrap();
        assert!((b.mean - 1.0).abs() < 1e-9);
        assert!(b.sd < 1e-9);
        assert_eq!(b.trials + b.degenerate, 200);
    }

    #[test]
    fn bootstrap_all_degenerate() {
        let rs = recs(&[0.5; 6], &[0.3; 6]);
        assert_eq!(
            bootstrap(&rs, "m", 20, 0),
            Err(EvalError::AllTrialsDegenerate(20))
        );
        assert_eq!(bootstrap(&rs, "m", 0, 0), Err(EvalError::NoTrials));
    }

    #[test]
    fn diff_cases() {
        let a: BTreeMap<&str, f64> = [("x", 10.0), ("y", 20.0), ("z", -5.0)].into();
        let same = prr_diff(&a, &a);
        assert!(same.entries.iter().all(|e| e.delta == 0.0));
        assert!(!same.has_mismatches());
        let b: BTreeMap<&str, f64> = [("x", 12.5), ("y", 15.0), ("w", 1.0)].into();
        let d = prr_diff(&a, &b);
        assert_eq!(d.entries.len(), 2);
        assert_eq!(d.entries[0].delta, 2.5);
        assert_eq!(d.entries[1].delta, -5.0);
        assert_eq!(d.only_in_a, vec!["z"]);
        assert_eq!(d.only_in_b, vec!["w"]);
    }

    fn arb_set() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..15).prop_flat_map(|n| {
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn oracle_area_dominates_random((us, qs) in arb_set()) {
            let rs = recs(&us, &qs);
            if let Ok(p) = prr(&rs, "m") {
                prop_assert!(p.area_orc >= p.area_rand);
                prop_assert!(p.area_orc + 1e-12 >= p.area_uns);
                prop_assert!(p.prr <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn prr_invariant_under_monotone_uncertainty((us, qs) in arb_set()) {
            let a = prr(&recs(&us, &qs), "m");
            let t: Vec<f64> = us.iter().map(|u| (u / 4.0).exp() * 3.0 + 1.0).collect();
            let b = prr(&recs(&t, &qs), "m");
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a.prr - b.prr).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }

        #[test]
        fn prr_invariant_under_affine_quality((us, qs) in arb_set(), s in 0.1f64..50.0, c in -20.0f64..20.0) {
            let a = prr(&recs(&us, &qs), "m");
            let scaled: Vec<f64> = qs.iter().map(|q| s * q + c).collect();
            let b = prr(&recs(&us, &scaled), "m");
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!((a.prr - b.prr).abs() < 1e-7);
            }
        }

        #[test]
        fn curves_share_the_origin((us, qs) in arb_set()) {
            let mut rs = recs(&us, &qs);
            if attach_normalized(&mut rs, "m").is_ok() {
                let v: Vec<f64> = [CurveOrdering::Uncertainty, CurveOrdering::Oracle, CurveOrdering::Random]
                    .iter()
                    .map(|&o| build_curve(&rs, "m", o).unwrap().values[0])
                    .collect();
                prop_assert!((v[0] - v[1]).abs() < 1e-12 && (v[1] - v[2]).abs() < 1e-12);
            }
        }
    }
}
