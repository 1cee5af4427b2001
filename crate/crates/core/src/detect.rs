//! Harmful-shift detection by disagreement rate.
//!
//! A boosted critic is trained to agree with the reference on source data
//! and to disagree with it on a small target sample. The fraction of that
//! sample on which it manages to disagree is the test statistic. Its null
//! distribution comes from repeating the procedure on source-distributed
//! pseudo-targets.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{train_boosted_critic, train_reference, BoostConfig, BoostedCritic, CriticSide, LinearCritic, TrainConfig};
use crate::data::{fmt_f64, gen_gaussian_shift, rng, Dataset, GaussianShiftSpec};
use crate::discrepancy::SurrogateKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Size of each target sample.
    pub n_target: usize,
    pub null_runs: usize,
    pub bootstrap: usize,
    /// Tree settings. Its `alpha` is replaced by `target_weight`.
    pub boost: BoostConfig,
    /// Weight of each target row in the critic objective, with source rows
    /// weighted 1. Defaults to `1 / (n_target + 1)`, which keeps a critic
    /// from trading a single source disagreement for the whole target sample.
    pub target_weight: Option<f64>,
    /// Significance level at which a sample is flagged.
    pub level: f64,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            n_target: 20,
            null_runs: 500,
            bootstrap: 1000,
            boost: BoostConfig::default(),
            target_weight: None,
            level: 0.05,
            seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_target == 0 {
            return Err(Error::invalid("n_target must be >= 1"));
        }
        if self.null_runs < 100 {
            return Err(Error::invalid(format!("null_runs must be >= 100, got {}", self.null_runs)));
        }
        if self.bootstrap == 0 {
            return Err(Error::invalid("bootstrap must be >= 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("level must lie in (0, 1)"));
        }
        self.booster().validate()
    }

    /// Booster settings with the target weight applied.
    pub fn booster(&self) -> BoostConfig {
        let alpha = self.target_weight.unwrap_or(1.0 / (self.n_target as f64 + 1.0));
        BoostConfig { alpha, ..self.boost.clone() }
    }
}

/// Fraction of positions where the two label vectors differ.
pub fn disagreement_rate(critic: &[usize], reference: &[usize]) -> Result<f64> {
    if critic.len() != reference.len() {
        return Err(Error::LengthMismatch { expected: reference.len(), got: critic.len() });
    }
    if critic.is_empty() {
        return Err(Error::EmptyData("disagreement rate needs samples"));
    }
    let n = critic.iter().zip(reference).filter(|(a, b)| a != b).count();
    Ok(n as f64 / critic.len() as f64)
}

pub fn disagreement_statistic(critic: &BoostedCritic, reference: &LinearCritic, samples: &Dataset) -> Result<f64> {
    let c: Vec<usize> = samples.rows().map(|x| critic.predict(x)).collect();
    disagreement_rate(&c, &reference.predict_all(samples))
}

/// Data shared by every test: the reference, the source rows the critic must
/// agree on, a held-out source pool for pseudo-targets and the shifted pool.
#[derive(Debug, Clone)]
pub struct DetectionSetup {
    pub reference: LinearCritic,
    pub critic_source: Dataset,
    pub source_pool: Dataset,
    pub shifted_pool: Dataset,
    critic_source_ref: Vec<usize>,
}

impl DetectionSetup {
    pub fn new(reference: LinearCritic, critic_source: Dataset, source_pool: Dataset, shifted_pool: Dataset) -> Result<Self> {
        for data in [&critic_source, &source_pool, &shifted_pool] {
            if data.d() != reference.d() {
                return Err(Error::LengthMismatch { expected: reference.d(), got: data.d() });
            }
        }
        let critic_source_ref = reference.predict_all(&critic_source);
        Ok(DetectionSetup { reference, critic_source, source_pool, shifted_pool, critic_source_ref })
    }

    pub fn k(&self) -> usize {
        self.reference.k()
    }

    /// Trains a boosted critic against `sample` and returns its disagreement
    /// rate on that sample.
    pub fn statistic(&self, sample: &Dataset, kind: SurrogateKind, boost: &BoostConfig) -> Result<f64> {
        let sample_ref = self.reference.predict_all(sample);
        let critic = train_boosted_critic(
            CriticSide::new(&self.critic_source, &self.critic_source_ref)?,
            CriticSide::new(sample, &sample_ref)?,
            self.k(),
            kind,
            boost,
        )?;
        let c: Vec<usize> = sample.rows().map(|x| critic.predict(x)).collect();
        disagreement_rate(&c, &sample_ref)
    }
}

/// Synthetic setting for detection experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionScenario {
    pub data: GaussianShiftSpec,
    pub reference: TrainConfig,
    /// Source rows used to fit the reference.
    pub n_reference: usize,
    /// Source rows the critic must agree on; the remaining source rows form
    /// the pseudo-target pool.
    pub n_critic_source: usize,
}

impl Default for DetectionScenario {
    fn default() -> Self {
        DetectionScenario {
            data: GaussianShiftSpec::translated(5, 5, 2.0, 2.0, 2000, 1000),
            reference: TrainConfig::reference(),
            n_reference: 1000,
            n_critic_source: 200,
        }
    }
}

impl DetectionScenario {
    pub fn setup(&self, seed: u64) -> Result<DetectionSetup> {
        if self.n_reference + self.n_critic_source >= self.data.n_source {
            return Err(Error::invalid("source sample leaves no pseudo-target pool"));
        }
        let (src, tgt) = gen_gaussian_shift(&self.data, seed)?;
        let order = sample_indices(&mut rng::stream(seed, "detect", "split", 0), src.n(), src.n()).into_vec();
        let (a, rest) = order.split_at(self.n_reference);
        let (b, c) = rest.split_at(self.n_critic_source);
        let ref_train = src.subset(a);
        let cfg = TrainConfig { seed: rng::child_seed(seed, "detect", "reference", 0), ..self.reference.clone() };
        let reference = train_reference(&ref_train, self.data.k, &cfg)?;
        DetectionSetup::new(reference, src.subset(b), src.subset(c), tgt)
    }
}

fn draw(pool: &Dataset, n: usize, seed: u64, purpose: &str, index: u64) -> Result<Dataset> {
    if pool.n() < n {
        return Err(Error::invalid(format!("pool of {} rows is smaller than the sample size {n}", pool.n())));
    }
    let mut r = rng::stream(seed, "detect", purpose, index);
    let mut idx = sample_indices(&mut r, pool.n(), n).into_vec();
    idx.sort_unstable();
    Ok(pool.subset(&idx))
}

/// Sorted statistics of source-distributed pseudo-targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub kind: SurrogateKind,
    pub n_target: usize,
    pub stats: Vec<f64>,
}

pub fn calibrate_null(setup: &DetectionSetup, kind: SurrogateKind, cfg: &DetectionConfig) -> Result<NullDistribution> {
    cfg.validate()?;
    if setup.source_pool.n() < cfg.n_target {
        return Err(Error::invalid("source pool is smaller than n_target"));
    }
    let boost = cfg.booster();
    let mut stats: Vec<f64> = (0..cfg.null_runs)
        .into_par_iter()
        .map(|i| {
            let s = draw(&setup.source_pool, cfg.n_target, cfg.seed, "null-sample", i as u64)?;
            setup.statistic(&s, kind, &boost)
        })
        .collect::<Result<_>>()?;
    stats.sort_by(f64::total_cmp);
    Ok(NullDistribution { kind, n_target: cfg.n_target, stats })
}

/// Upper-tail p-value with add-one smoothing.
pub fn p_value(null: &[f64], observed: f64) -> f64 {
    let above = null.iter().filter(|&&s| s >= observed).count();
    (1 + above) as f64 / (1 + null.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullQuantiles {
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub statistic: f64,
    pub p_value: f64,
    pub flagged: bool,
    pub null_quantiles: NullQuantiles,
}

pub fn detect(
    setup: &DetectionSetup,
    target_sample: &Dataset,
    null: &NullDistribution,
    kind: SurrogateKind,
    cfg: &DetectionConfig,
) -> Result<DetectionResult> {
    if target_sample.n() != cfg.n_target {
        return Err(Error::LengthMismatch { expected: cfg.n_target, got: target_sample.n() });
    }
    if null.stats.is_empty() {
        return Err(Error::EmptyData("empty null distribution"));
    }
    let statistic = setup.statistic(target_sample, kind, &cfg.booster())?;
    let p = p_value(&null.stats, statistic);
    let s = &null.stats;
    Ok(DetectionResult {
        statistic,
        p_value: p,
        flagged: p <= cfg.level,
        null_quantiles: NullQuantiles {
            min: s[0],
            q05: quantile(s, 0.05),
            median: quantile(s, 0.5),
            q95: quantile(s, 0.95),
            max: s[s.len() - 1],
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC of the rule "flag when statistic >= threshold", from `(0, 0)` at an
/// infinite threshold to `(1, 1)`.
pub fn roc_points(negatives: &[f64], positives: &[f64]) -> Vec<RocPoint> {
    let mut thresholds: Vec<f64> = negatives.iter().chain(positives).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |v: &[f64], t: f64| v.iter().filter(|&&s| s >= t).count() as f64 / v.len() as f64;
    let mut out = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    out.extend(thresholds.into_iter().map(|t| RocPoint { threshold: t, tpr: rate(positives, t), fpr: rate(negatives, t) }));
    out
}

/// Probability that a positive outscores a negative, ties counting half.
pub fn auc(negatives: &[f64], positives: &[f64]) -> f64 {
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for &p in positives {
        let below = neg.partition_point(|&v| v < p);
        let not_above = neg.partition_point(|&v| v <= p);
        total += below as f64 + 0.5 * (not_above - below) as f64;
    }
    total / (neg.len() * positives.len()) as f64
}

/// 95% percentile interval of the AUC under resampling each class with
/// replacement.
pub fn bootstrap_auc_ci(negatives: &[f64], positives: &[f64], draws: usize, seed: u64) -> (f64, f64) {
    let mut aucs: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, "detect", "bootstrap", b as u64);
            let neg: Vec<f64> = (0..negatives.len()).map(|_| negatives[r.random_range(0..negatives.len())]).collect();
            let pos: Vec<f64> = (0..positives.len()).map(|_| positives[r.random_range(0..positives.len())]).collect();
            auc(&neg, &pos)
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    (quantile(&aucs, 0.025), quantile(&aucs, 0.975))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub kind: SurrogateKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(skip)]
    pub negatives: Vec<f64>,
    #[serde(skip)]
    pub positives: Vec<f64>,
    #[serde(skip)]
    pub points: Vec<RocPoint>,
}

/// Null statistics as negatives against `repeats` shifted samples as
/// positives. Samples are drawn from streams that do not depend on `kind`,
/// so different kinds see the same samples.
pub fn roc(setup: &DetectionSetup, kind: SurrogateKind, cfg: &DetectionConfig, repeats: usize) -> Result<RocReport> {
    if repeats == 0 {
        return Err(Error::invalid("roc needs at least one shifted repeat"));
    }
    let null = calibrate_null(setup, kind, cfg)?;
    let boost = cfg.booster();
    let positives: Vec<f64> = (0..repeats)
        .into_par_iter()
        .map(|i| {
            let s = draw(&setup.shifted_pool, cfg.n_target, cfg.seed, "shifted-sample", i as u64)?;
            setup.statistic(&s, kind, &boost)
        })
        .collect::<Result<_>>()?;
    let negatives = null.stats;
    let (ci_low, ci_high) = bootstrap_auc_ci(&negatives, &positives, cfg.bootstrap, cfg.seed);
    Ok(RocReport {
        kind,
        n: cfg.n_target,
        auc: auc(&negatives, &positives),
        ci_low,
        ci_high,
        points: roc_points(&negatives, &positives),
        negatives,
        positives,
    })
}

/// `threshold,tpr,fpr`.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["threshold", "tpr", "fpr"])?;
    for p in points {
        out.write_record([fmt_f64(p.threshold), fmt_f64(p.tpr), fmt_f64(p.fpr)])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
