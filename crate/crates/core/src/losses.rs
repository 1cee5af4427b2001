//! Pointwise losses over logits, their gradients, and the diagonal Hessian
//! bounds used by the boosted critic.
//!
//! Classes are 0-based throughout: a `K`-class problem uses labels `0..K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, log_sum_exp_except, sigmoid, softmax, softplus};

/// Ceiling applied to the disagreement loss when `softmax(s)_y` rounds to one.
pub const LOSS_CAP: f64 = 1e30;

/// Tolerance on the simplex sum of a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    ZeroOne,
    Ce,
    RgDis,
    GlkDis,
    OursDis,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::ZeroOne,
        LossKind::Ce,
        LossKind::RgDis,
        LossKind::GlkDis,
        LossKind::OursDis,
    ];

    /// The four losses with gradients.
    pub const SMOOTH: [LossKind; 4] = [
        LossKind::Ce,
        LossKind::RgDis,
        LossKind::GlkDis,
        LossKind::OursDis,
    ];
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::invalid("probability vector needs at least 2 entries"));
        }
        if q.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("probability entries must be finite and non-negative"));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ProbVector(q))
    }

    /// Softmax image of a logit vector.
    pub fn from_logits(s: &[f64]) -> Result<Self> {
        check_logits(s)?;
        Ok(ProbVector(softmax(s)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn check_logits(s: &[f64]) -> Result<()> {
    if s.len() < 2 {
        return Err(Error::invalid(format!("need K >= 2 logits, got {}", s.len())));
    }
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("logit {i} is not finite")));
    }
    Ok(())
}

fn check_label(y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(Error::invalid(format!("label {y} out of range for K = {k}")));
    }
    Ok(())
}

/// Log-probabilities of `s`, computed with max subtraction.
pub fn log_softmax(s: &[f64]) -> Result<Vec<f64>> {
    check_logits(s)?;
    let lse = log_sum_exp(s);
    Ok(s.iter().map(|&v| v - lse).collect())
}

/// Smallest index attaining the maximum logit.
pub fn score_to_class(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate().skip(1) {
        if v > s[best] {
            best = i;
        }
    }
    best
}

/// Loss value with input validation.
pub fn loss_eval(kind: LossKind, y: usize, s: &[f64]) -> Result<f64> {
    check_logits(s)?;
    check_label(y, s.len())?;
    Ok(eval(kind, y, s))
}

/// Unchecked loss value for inner loops. Callers guarantee `y < s.len()`,
/// `s.len() >= 2` and finite logits.
pub fn eval(kind: LossKind, y: usize, s: &[f64]) -> f64 {
    let k = s.len();
    match kind {
        LossKind::ZeroOne => f64::from(u8::from(score_to_class(s) != y)),
        LossKind::Ce => log_sum_exp(s) - s[y],
        LossKind::RgDis => softplus(s[y] - mean_except(s, y)),
        LossKind::GlkDis => log_sum_exp(s) - mean_except(s, y),
        LossKind::OursDis => {
            debug_assert!(k >= 2);
            let t = s[y] - log_sum_exp_except(s, y);
            softplus(t).min(LOSS_CAP)
        }
    }
}

fn mean_except(s: &[f64], y: usize) -> f64 {
    let total: f64 = s.iter().enumerate().filter(|&(i, _)| i != y).map(|(_, v)| v).sum();
    total / (s.len() - 1) as f64
}

/// Analytic gradient with respect to the logits.
pub fn loss_grad(kind: LossKind, y: usize, s: &[f64]) -> Result<Vec<f64>> {
    check_logits(s)?;
    check_label(y, s.len())?;
    if kind == LossKind::ZeroOne {
        return Err(Error::invalid("zero-one loss has no gradient"));
    }
    let mut g = vec![0.0; s.len()];
    grad_into(kind, y, s, &mut g);
    Ok(g)
}

/// Unchecked gradient written into `g`. `kind` must not be `ZeroOne`.
pub fn grad_into(kind: LossKind, y: usize, s: &[f64], g: &mut [f64]) {
    let k = s.len();
    let inv = 1.0 / (k - 1) as f64;
    match kind {
        LossKind::ZeroOne => g.fill(0.0),
        LossKind::Ce => {
            softmax_into_slice(s, g);
            g[y] -= 1.0;
        }
        LossKind::GlkDis => {
            softmax_into_slice(s, g);
            for (c, v) in g.iter_mut().enumerate() {
                if c != y {
                    *v -= inv;
                }
            }
        }
        LossKind::RgDis => {
            let sig = sigmoid(s[y] - mean_except(s, y));
            for (c, v) in g.iter_mut().enumerate() {
                *v = if c == y { sig } else { -sig * inv };
            }
        }
        LossKind::OursDis => {
            softmax_into_slice(s, g);
            let lse_o = log_sum_exp_except(s, y);
            for (c, v) in g.iter_mut().enumerate() {
                if c != y {
                    *v -= (s[c] - lse_o).exp();
                }
            }
        }
    }
}

fn softmax_into_slice(s: &[f64], out: &mut [f64]) {
    crate::numeric::softmax_into(s, out);
}

/// Diagonal upper bound on the Hessian, used as the second-order term when
/// fitting boosted trees. Defined for CE, GLK and OURS.
pub fn hessian_diag_bound(kind: LossKind, y: usize, s: &[f64]) -> Result<Vec<f64>> {
    check_logits(s)?;
    check_label(y, s.len())?;
    if !matches!(kind, LossKind::Ce | LossKind::GlkDis | LossKind::OursDis) {
        return Err(Error::invalid(format!("no Hessian bound for {kind:?}")));
    }
    let mut h = vec![0.0; s.len()];
    hessian_bound_into(kind, y, s, &mut h);
    Ok(h)
}

/// Unchecked Hessian bound written into `h`.
pub fn hessian_bound_into(kind: LossKind, y: usize, s: &[f64], h: &mut [f64]) {
    let p = softmax(s);
    // 1 - p_k as a sum of the other entries keeps precision when p_k -> 1.
    let rest = |k: usize| -> f64 { p.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum() };
    match kind {
        LossKind::OursDis => {
            let py = p[y];
            for (k, v) in h.iter_mut().enumerate() {
                *v = if k == y { 2.0 * py * rest(y) } else { 2.0 * p[k] * py };
            }
        }
        _ => {
            for (k, v) in h.iter_mut().enumerate() {
                *v = 2.0 * p[k] * rest(k);
            }
        }
    }
}
