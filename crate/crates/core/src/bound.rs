//! Target-error bound from unlabeled target data and its Monte Carlo
//! calibration.
//!
//! The bound adds three terms: the reference model's source test error, the
//! empirical disagreement discrepancy of a trained critic on held-out data
//! (with `alpha = 1`), and a concentration correction.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{train_critic, train_reference, CriticSide, FeatureMap, LinearCritic, TrainConfig};
use crate::data::{fmt_f64, gen_gaussian_shift, rng, Dataset, GaussianShiftSpec};
use crate::discrepancy::SurrogateKind;
use crate::error::{Error, Result};

/// `sqrt((nS + 4 nT) ln(1/delta) / (2 nS nT))`.
pub fn sample_correction(n_source: usize, n_target: usize, delta: f64) -> Result<f64> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::invalid("sample sizes must be >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let (ns, nt) = (n_source as f64, n_target as f64);
    Ok(((ns + 4.0 * nt) * (1.0 / delta).ln() / (2.0 * ns * nt)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub source_test_error: f64,
    pub empirical_dd: f64,
    pub sample_correction: f64,
    pub bound: f64,
    pub true_target_error: Option<f64>,
    pub delta: f64,
    pub n_source: usize,
    pub n_target: usize,
    /// Whether the true labelling's discrepancy is at most the critic's, when
    /// target labels are known.
    pub premise_holds: Option<bool>,
    /// Caller's assertion that the critic never saw these test rows.
    pub disjoint_train_splits: bool,
}

impl BoundReport {
    pub fn from_terms(
        source_test_error: f64,
        empirical_dd: f64,
        delta: f64,
        n_source: usize,
        n_target: usize,
        true_target_error: Option<f64>,
    ) -> Result<Self> {
        let sample_correction = sample_correction(n_source, n_target, delta)?;
        let bound = source_test_error + empirical_dd + sample_correction;
        let premise_holds = true_target_error.map(|t| t - source_test_error <= empirical_dd);
        Ok(BoundReport {
            source_test_error,
            empirical_dd,
            sample_correction,
            bound,
            true_target_error,
            delta,
            n_source,
            n_target,
            premise_holds,
            disjoint_train_splits: true,
        })
    }

    pub fn violated(&self) -> Option<bool> {
        self.true_target_error.map(|t| t > self.bound)
    }
}

fn error_rate(pred: &[usize], labels: &[usize]) -> f64 {
    let wrong = pred.iter().zip(labels).filter(|(a, b)| a != b).count();
    wrong as f64 / pred.len() as f64
}

/// Evaluates the bound for a trained critic on held-out splits.
pub fn error_bound(
    src_test: &Dataset,
    tgt_test: &Dataset,
    reference: &LinearCritic,
    critic: &LinearCritic,
    delta: f64,
) -> Result<BoundReport> {
    if src_test.n() == 0 || tgt_test.n() == 0 {
        return Err(Error::EmptyData("bound needs non-empty test splits"));
    }
    let labels = src_test.require_labels("source test split needs labels")?;
    let ref_src = reference.predict_all(src_test);
    let ref_tgt = reference.predict_all(tgt_test);
    let src_err = error_rate(&ref_src, labels);
    let crit_src: Vec<usize> = src_test.rows().map(|x| critic.predict_input(reference, x)).collect();
    let crit_tgt: Vec<usize> = tgt_test.rows().map(|x| critic.predict_input(reference, x)).collect();
    let dd = error_rate(&crit_tgt, &ref_tgt) - error_rate(&crit_src, &ref_src);
    let true_err = tgt_test.labels().map(|l| error_rate(&ref_tgt, l));
    BoundReport::from_terms(src_err, dd, delta, src_test.n(), tgt_test.n(), true_err)
}

/// Synthetic setting for [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationScenario {
    pub data: GaussianShiftSpec,
    pub reference: TrainConfig,
    pub critic: TrainConfig,
    pub feature_map: FeatureMap,
    /// Fraction of each domain used for training.
    pub train_fraction: f64,
}

impl Default for CalibrationScenario {
    fn default() -> Self {
        CalibrationScenario {
            data: GaussianShiftSpec::translated(3, 2, 2.0, 1.0, 1000, 1000),
            reference: TrainConfig::reference(),
            critic: TrainConfig { batch_size: Some(64), ..TrainConfig::default() },
            feature_map: FeatureMap::ReferenceLogits,
            train_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub kind: SurrogateKind,
    pub delta: f64,
    pub seed: u64,
    pub report: BoundReport,
}

/// Splits, trains the reference and one critic per kind, and evaluates the
/// bound at every `delta`, once per seed.
pub fn calibrate(
    scenario: &CalibrationScenario,
    kinds: &[SurrogateKind],
    deltas: &[f64],
    seeds: &[u64],
) -> Result<Vec<CalibrationRow>> {
    if seeds.is_empty() || kinds.is_empty() || deltas.is_empty() {
        return Err(Error::invalid("calibration needs seeds, kinds and deltas"));
    }
    let per_seed: Vec<Vec<CalibrationRow>> =
        seeds.par_iter().map(|&seed| calibrate_seed(scenario, kinds, deltas, seed)).collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Held-out splits and a reference model for one seeded repeat.
pub struct SplitScenario {
    pub src_train: Dataset,
    pub src_test: Dataset,
    pub tgt_train: Dataset,
    pub tgt_test: Dataset,
    pub reference: LinearCritic,
}

pub fn prepare_splits(data: &GaussianShiftSpec, reference: &TrainConfig, train_fraction: f64, seed: u64) -> Result<SplitScenario> {
    let (src, tgt) = gen_gaussian_shift(data, seed)?;
    let (src_train, src_test) = src.split(train_fraction, &mut rng::stream(seed, "bound", "split-source", 0));
    let (tgt_train, tgt_test) = tgt.split(train_fraction, &mut rng::stream(seed, "bound", "split-target", 0));
    if [&src_train, &src_test, &tgt_train, &tgt_test].iter().any(|d| d.n() == 0) {
        return Err(Error::EmptyData("train fraction leaves an empty split"));
    }
    let ref_cfg = TrainConfig { seed: rng::child_seed(seed, "bound", "reference", 0), ..reference.clone() };
    let reference = train_reference(&src_train, data.k, &ref_cfg)?;
    Ok(SplitScenario { src_train, src_test, tgt_train, tgt_test, reference })
}

fn calibrate_seed(
    scenario: &CalibrationScenario,
    kinds: &[SurrogateKind],
    deltas: &[f64],
    seed: u64,
) -> Result<Vec<CalibrationRow>> {
    let sp = prepare_splits(&scenario.data, &scenario.reference, scenario.train_fraction, seed)?;
    let (src_tr, tgt_tr) = match scenario.feature_map {
        FeatureMap::RawInput => (sp.src_train.clone(), sp.tgt_train.clone()),
        FeatureMap::ReferenceLogits => (
            crate::critic::reference_logit_features(&sp.reference, &sp.src_train)?,
            crate::critic::reference_logit_features(&sp.reference, &sp.tgt_train)?,
        ),
    };
    let ref_s = sp.reference.predict_all(&sp.src_train);
    let ref_t = sp.reference.predict_all(&sp.tgt_train);
    let source = CriticSide::new(&src_tr, &ref_s)?;
    let target = CriticSide::new(&tgt_tr, &ref_t)?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let cfg = TrainConfig { seed: rng::child_seed(seed, "bound", "critic", 0), ..scenario.critic.clone() };
        let (critic, _) = train_critic(source, target, scenario.data.k, kind, scenario.feature_map, &cfg)?;
        for &delta in deltas {
            let report = error_bound(&sp.src_test, &sp.tgt_test, &sp.reference, &critic, delta)?;
            rows.push(CalibrationRow { kind, delta, seed, report });
        }
    }
    Ok(rows)
}

/// Fraction of rows with `trueErr > bound`, per `(kind, delta)` in first-seen
/// order.
pub fn violation_rates(rows: &[CalibrationRow]) -> Vec<(SurrogateKind, f64, f64)> {
    let mut keys: Vec<(SurrogateKind, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(k, d)| k == r.kind && d == r.delta) {
            keys.push((r.kind, r.delta));
        }
    }
    keys.into_iter()
        .map(|(kind, delta)| {
            let sel: Vec<_> = rows.iter().filter(|r| r.kind == kind && r.delta == delta).collect();
            let v = sel.iter().filter(|r| r.report.violated() == Some(true)).count();
            (kind, delta, v as f64 / sel.len() as f64)
        })
        .collect()
}

/// `kind,delta,seed,srcErr,dd,correction,bound,trueErr,violated`.
pub fn write_calibration_csv<W: Write>(rows: &[CalibrationRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["kind", "delta", "seed", "srcErr", "dd", "correction", "bound", "trueErr", "violated"])?;
    for r in rows {
        let rep = &r.report;
        out.write_record([
            r.kind.name().to_string(),
            fmt_f64(r.delta),
            r.seed.to_string(),
            fmt_f64(rep.source_test_error),
            fmt_f64(rep.empirical_dd),
            fmt_f64(rep.sample_correction),
            fmt_f64(rep.bound),
            rep.true_target_error.map(fmt_f64).unwrap_or_default(),
            rep.violated().map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn correction_value() {
        assert_abs_diff_eq!(sample_correction(1000, 1000, 0.05).unwrap(), 0.086541, epsilon = 1e-6);
        assert!(sample_correction(10, 10, 1.0).is_err());
        assert!(sample_correction(10, 10, 1.0 - 1e-12).unwrap() < 1e-5);
        assert!(sample_correction(0, 10, 0.1).is_err());
    }

    #[test]
    fn report_identity() {
        let r = BoundReport::from_terms(0.1, 0.25, 0.05, 100, 300, Some(0.5)).unwrap();
        assert_eq!(r.bound, r.source_test_error + r.empirical_dd + r.sample_correction);
        assert_eq!(r.violated(), Some(r.bound < 0.5));
    }
}
