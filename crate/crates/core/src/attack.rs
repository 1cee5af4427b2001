//! Projected sign-gradient attack on target data that tries to close the gap
//! between the error bound and the true target error.
//!
//! Each step first moves the selected target test rows, then the selected
//! target train rows, and finally refreshes the critic for a few epochs on
//! the perturbed train split. The per-row objective is
//! `-sum_c p~_c l_dis(c, critic(x)) - CE(y*, reference(x))` where `p~` is a
//! relaxed categorical sample of the reference's class probabilities.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gumbel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{error_bound, BoundReport};
use crate::critic::{reference_logit_features, refresh_critic, train_critic, CriticSide, FeatureMap, LinearCritic, TrainConfig};
use crate::data::{rng, Dataset};
use crate::discrepancy::SurrogateKind;
use crate::error::{Error, Result};
use crate::losses::{eval, grad_into, LossKind};
use crate::numeric::softmax_into;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Radius of the per-row perturbation in max-norm.
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    /// Share of each target split that is perturbed.
    pub fraction: f64,
    pub critic_refresh_epochs: usize,
    pub gumbel_temperature: f64,
    /// Rows per gradient batch.
    pub batch_size: usize,
    /// Confidence parameter of the bound recorded in the trace.
    pub delta: f64,
    pub feature_map: FeatureMap,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 4.0 / 255.0,
            step_size: 8.0 / 255.0,
            steps: 20,
            fraction: 0.5,
            critic_refresh_epochs: 5,
            gumbel_temperature: 1.0,
            batch_size: 256,
            delta: 0.05,
            feature_map: FeatureMap::RawInput,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::invalid("fraction must lie in [0, 1]"));
        }
        if !(self.gumbel_temperature > 0.0 && self.gumbel_temperature.is_finite()) {
            return Err(Error::invalid("gumbel_temperature must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Clamps every coordinate of `x` into `[x0_i - eps, x0_i + eps]`.
pub fn project_linf(x: &[f64], x0: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if x.len() != x0.len() {
        return Err(Error::LengthMismatch { expected: x0.len(), got: x.len() });
    }
    Ok(x.iter().zip(x0).map(|(&v, &c)| v.clamp(c - epsilon, c + epsilon)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// `bound - trueErr` on the current target test split.
    pub gap: f64,
    pub bound: f64,
    #[serde(rename = "trueErr")]
    pub true_err: f64,
    /// Rows whose gradient was non-finite and so kept their position.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub critic: LinearCritic,
    pub trace: Vec<TraceRow>,
    /// Indices of perturbed rows in the train and test splits.
    pub attacked_train: Vec<usize>,
    pub attacked_test: Vec<usize>,
}

/// Largest coordinate-wise distance between two datasets.
pub fn max_perturbation(a: &Dataset, b: &Dataset) -> f64 {
    a.features().iter().zip(b.features()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn select(n: usize, fraction: f64, seed: u64, purpose: &str) -> Vec<usize> {
    let m = ((fraction * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "attack", purpose, 0));
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

/// Gradient of the per-row attack objective with respect to the input.
#[allow(clippy::too_many_arguments)]
fn row_gradient(
    x: &[f64],
    y_true: usize,
    gumbel: &[f64],
    tau: f64,
    reference: &LinearCritic,
    critic: &LinearCritic,
    dis: LossKind,
    out: &mut [f64],
) -> bool {
    let k = reference.k();
    let z = reference.logits(x);
    let s = match critic.feature_map {
        FeatureMap::RawInput => critic.logits(x),
        FeatureMap::ReferenceLogits => critic.logits(&z),
    };
    // relaxed sample: softmax((z + g) / tau); the log-normaliser cancels
    let shifted: Vec<f64> = z.iter().zip(gumbel).map(|(a, g)| (a + g) / tau).collect();
    let mut relaxed = vec![0.0; k];
    softmax_into(&shifted, &mut relaxed);

    let mut g_s = vec![0.0; k];
    let mut tmp = vec![0.0; k];
    let mut u = vec![0.0; k];
    for c in 0..k {
        u[c] = -eval(dis, c, &s);
        grad_into(dis, c, &s, &mut tmp);
        for (a, b) in g_s.iter_mut().zip(&tmp) {
            *a -= relaxed[c] * b;
        }
    }
    let mean_u: f64 = relaxed.iter().zip(&u).map(|(p, v)| p * v).sum();
    let mut g_z: Vec<f64> = (0..k).map(|c| relaxed[c] * (u[c] - mean_u) / tau).collect();
    // -CE(y*, z) has gradient -(softmax(z) - e_y)
    softmax_into(&z, &mut tmp);
    for c in 0..k {
        g_z[c] -= tmp[c] - if c == y_true { 1.0 } else { 0.0 };
    }
    let mut from_critic = vec![0.0; x.len()];
    match critic.feature_map {
        FeatureMap::RawInput => critic.input_gradient(&g_s, &mut from_critic),
        FeatureMap::ReferenceLogits => {
            let mut via = vec![0.0; k];
            critic.input_gradient(&g_s, &mut via);
            for (a, b) in g_z.iter_mut().zip(&via) {
                *a += b;
            }
        }
    }
    reference.input_gradient(&g_z, out);
    for (o, f) in out.iter_mut().zip(&from_critic) {
        *o += f;
    }
    out.iter().all(|v| v.is_finite())
}

/// Value of the per-row attack objective, exposed for gradient checks.
pub fn row_objective(
    x: &[f64],
    y_true: usize,
    gumbel: &[f64],
    tau: f64,
    reference: &LinearCritic,
    critic: &LinearCritic,
    kind: SurrogateKind,
) -> f64 {
    let dis = kind.dis_loss();
    let z = reference.logits(x);
    let s = match critic.feature_map {
        FeatureMap::RawInput => critic.logits(x),
        FeatureMap::ReferenceLogits => critic.logits(&z),
    };
    let shifted: Vec<f64> = z.iter().zip(gumbel).map(|(a, g)| (a + g) / tau).collect();
    let relaxed = crate::numeric::softmax(&shifted);
    let agree: f64 = relaxed.iter().enumerate().map(|(c, p)| p * eval(dis, c, &s)).sum();
    -agree - eval(LossKind::Ce, y_true, &z)
}

/// Gradient of [`row_objective`].
pub fn row_objective_gradient(
    x: &[f64],
    y_true: usize,
    gumbel: &[f64],
    tau: f64,
    reference: &LinearCritic,
    critic: &LinearCritic,
    kind: SurrogateKind,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    row_gradient(x, y_true, gumbel, tau, reference, critic, kind.dis_loss(), &mut out);
    out
}

/// One projected sign-gradient step on the selected rows. Returns the number
/// of rows skipped for non-finite gradients.
#[allow(clippy::too_many_arguments)]
fn pgd_step(
    data: &mut Dataset,
    original: &Dataset,
    rows: &[usize],
    reference: &LinearCritic,
    critic: &LinearCritic,
    kind: SurrogateKind,
    cfg: &AttackConfig,
    purpose: &str,
    step: usize,
) -> Result<usize> {
    let labels = original.require_labels("attacked targets need true labels")?.to_vec();
    let k = reference.k();
    let d = data.d();
    let mut noise_rng = rng::stream(cfg.seed, "attack", purpose, step as u64);
    let gumbel = Gumbel::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let noise: Vec<f64> = (0..rows.len() * k).map(|_| noise_rng.sample(gumbel)).collect();
    let dis = kind.dis_loss();
    let mut updates: Vec<Option<Vec<f64>>> = Vec::with_capacity(rows.len());
    for (chunk_idx, chunk) in rows.chunks(cfg.batch_size).enumerate() {
        let base = chunk_idx * cfg.batch_size;
        let batch: Vec<Option<Vec<f64>>> = chunk
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let x = data.row(i);
                let g = &noise[(base + j) * k..(base + j + 1) * k];
                let mut grad = vec![0.0; d];
                if !row_gradient(x, labels[i], g, cfg.gumbel_temperature, reference, critic, dis, &mut grad) {
                    return None;
                }
                let moved: Vec<f64> =
                    x.iter().zip(&grad).map(|(v, gr)| v - cfg.step_size * sign(*gr)).collect();
                Some(moved)
            })
            .collect();
        updates.extend(batch);
    }
    let mut skipped = 0;
    for (&i, upd) in rows.iter().zip(updates) {
        match upd {
            Some(moved) => {
                let projected = project_linf(&moved, original.row(i), cfg.epsilon)?;
                data.features_mut()[i * d..(i + 1) * d].copy_from_slice(&projected);
            }
            None => skipped += 1,
        }
    }
    Ok(skipped)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn critic_features(reference: &LinearCritic, data: &Dataset, map: FeatureMap) -> Result<Dataset> {
    match map {
        FeatureMap::RawInput => Ok(data.clone()),
        FeatureMap::ReferenceLogits => reference_logit_features(reference, data),
    }
}

/// Trains a critic of `kind` on the given train splits.
pub fn fit_critic(
    src_train: &Dataset,
    tgt_train: &Dataset,
    reference: &LinearCritic,
    kind: SurrogateKind,
    feature_map: FeatureMap,
    cfg: &TrainConfig,
) -> Result<LinearCritic> {
    let src_f = critic_features(reference, src_train, feature_map)?;
    let tgt_f = critic_features(reference, tgt_train, feature_map)?;
    let ref_s = reference.predict_all(src_train);
    let ref_t = reference.predict_all(tgt_train);
    let (critic, _) = train_critic(
        CriticSide::new(&src_f, &ref_s)?,
        CriticSide::new(&tgt_f, &ref_t)?,
        reference.k(),
        kind,
        feature_map,
        cfg,
    )?;
    Ok(critic)
}

/// Bound report of a fresh critic of each kind trained against the attacked
/// target train split and evaluated on the attacked target test split.
#[allow(clippy::too_many_arguments)]
pub fn attacked_bounds(
    src_train: &Dataset,
    src_test: &Dataset,
    reference: &LinearCritic,
    outcome: &AttackOutcome,
    kinds: &[SurrogateKind],
    feature_map: FeatureMap,
    train_cfg: &TrainConfig,
    delta: f64,
) -> Result<Vec<(SurrogateKind, BoundReport)>> {
    kinds
        .iter()
        .map(|&kind| {
            let critic = fit_critic(src_train, &outcome.target_train, reference, kind, feature_map, train_cfg)?;
            Ok((kind, error_bound(src_test, &outcome.target_test, reference, &critic, delta)?))
        })
        .collect()
}

fn refresh(
    critic: &mut LinearCritic,
    src_train: &Dataset,
    tgt_train: &Dataset,
    reference: &LinearCritic,
    kind: SurrogateKind,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<()> {
    let src_f = critic_features(reference, src_train, critic.feature_map)?;
    let tgt_f = critic_features(reference, tgt_train, critic.feature_map)?;
    let ref_s = reference.predict_all(src_train);
    let ref_t = reference.predict_all(tgt_train);
    refresh_critic(critic, CriticSide::new(&src_f, &ref_s)?, CriticSide::new(&tgt_f, &ref_t)?, kind, cfg, epochs)
}

fn trace_row(step: usize, report: &BoundReport, skipped: usize) -> Result<TraceRow> {
    let true_err = report.true_target_error.ok_or(Error::invalid("attacked targets need true labels"))?;
    Ok(TraceRow { step, gap: report.bound - true_err, bound: report.bound, true_err, skipped })
}

/// Runs the two-step attack. The critic of `kind` is trained on the clean
/// splits first and refreshed after every step.
#[allow(clippy::too_many_arguments)]
pub fn attack_targets(
    src_train: &Dataset,
    src_test: &Dataset,
    tgt_train: &Dataset,
    tgt_test: &Dataset,
    reference: &LinearCritic,
    kind: SurrogateKind,
    train_cfg: &TrainConfig,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    for data in [src_train, src_test, tgt_train, tgt_test] {
        if data.d() != reference.d() {
            return Err(Error::LengthMismatch { expected: reference.d(), got: data.d() });
        }
    }
    tgt_train.require_labels("attacked targets need true labels")?;
    tgt_test.require_labels("attacked targets need true labels")?;
    let attacked_test = select(tgt_test.n(), cfg.fraction, cfg.seed, "select-test");
    let attacked_train = select(tgt_train.n(), cfg.fraction, cfg.seed, "select-train");

    let mut critic = fit_critic(src_train, tgt_train, reference, kind, cfg.feature_map, train_cfg)?;
    let mut train = tgt_train.clone();
    let mut test = tgt_test.clone();
    let report = error_bound(src_test, &test, reference, &critic, cfg.delta)?;
    let mut trace = vec![trace_row(0, &report, 0)?];
    if attacked_test.is_empty() && attacked_train.is_empty() {
        return Ok(AttackOutcome { target_train: train, target_test: test, critic, trace, attacked_train, attacked_test });
    }
    for step in 1..=cfg.steps {
        let mut skipped = pgd_step(&mut test, tgt_test, &attacked_test, reference, &critic, kind, cfg, "gumbel-test", step)?;
        skipped += pgd_step(&mut train, tgt_train, &attacked_train, reference, &critic, kind, cfg, "gumbel-train", step)?;
        refresh(&mut critic, src_train, &train, reference, kind, train_cfg, cfg.critic_refresh_epochs)?;
        let report = error_bound(src_test, &test, reference, &critic, cfg.delta)?;
        trace.push(trace_row(step, &report, skipped)?);
    }
    Ok(AttackOutcome { target_train: train, target_test: test, critic, trace, attacked_train, attacked_test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let x0 = [0.2, 0.5];
        assert_eq!(project_linf(&x0, &x0, 0.1).unwrap(), x0.to_vec());
        let far = project_linf(&[0.4, 0.7], &x0, 0.1).unwrap();
        assert!((far[0] - 0.3).abs() < 1e-15 && (far[1] - 0.6).abs() < 1e-15);
        assert_eq!(project_linf(&far, &x0, 0.1).unwrap(), far);
        assert!(project_linf(&[0.0], &x0, 0.1).is_err());
    }

    #[test]
    fn selection_size_and_determinism() {
        let a = select(100, 0.25, 3, "select-test");
        assert_eq!(a.len(), 25);
        assert_eq!(a, select(100, 0.25, 3, "select-test"));
        assert!(select(100, 0.0, 3, "select-test").is_empty());
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(AttackConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(AttackConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(AttackConfig::default().validate().is_ok());
    }
}
