//! Disagreement discrepancy on finite shift instances, its surrogates, the
//! per-point pseudo-loss decomposition, excess losses and closed-form
//! pointwise optima.
//!
//! A point with source mass `pS` and target mass `pT` is handled by exactly one
//! of two pseudo-losses: side one when `pS >= pT`, side two otherwise. Each side
//! reduces to a weighted pair `(w1, w2)` applied to the agreement loss on `y1`
//! and the disagreement loss on `y2`; the ratio `r = w1 / w2 = pS / (alpha pT)`
//! drives every closed form below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, check_logits, LossKind};
use crate::numeric::compensated_sum;

/// Tolerance on the unit-mass check of an instance.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelPair {
    pub y1: usize,
    pub y2: usize,
}

impl LabelPair {
    pub fn new(y1: usize, y2: usize) -> Self {
        LabelPair { y1, y2 }
    }

    pub fn agree(&self) -> bool {
        self.y1 == self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstancePoint {
    #[serde(rename = "pS")]
    pub p_s: f64,
    #[serde(rename = "pT")]
    pub p_t: f64,
    pub y1: usize,
    pub y2: usize,
}

impl InstancePoint {
    pub fn labels(&self) -> LabelPair {
        LabelPair::new(self.y1, self.y2)
    }
}

#[derive(Deserialize)]
struct RawInstance {
    #[serde(rename = "K")]
    k: usize,
    alpha: f64,
    points: Vec<InstancePoint>,
}

/// A finite input space with exact source and target masses and a pair of
/// reference labels per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct FiniteShiftInstance {
    #[serde(rename = "K")]
    k: usize,
    alpha: f64,
    points: Vec<InstancePoint>,
}

impl TryFrom<RawInstance> for FiniteShiftInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        FiniteShiftInstance::new(raw.k, raw.alpha, raw.points)
    }
}

impl FiniteShiftInstance {
    pub fn new(k: usize, alpha: f64, points: Vec<InstancePoint>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("K must be at least 2, got {k}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if points.is_empty() {
            return Err(Error::EmptyData("instance has no points"));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.p_s.is_finite() && p.p_t.is_finite() && p.p_s >= 0.0 && p.p_t >= 0.0) {
                return Err(Error::invalid(format!("point {i}: masses must be finite and >= 0")));
            }
            if p.y1 >= k || p.y2 >= k {
                return Err(Error::invalid(format!("point {i}: label out of range for K = {k}")));
            }
        }
        let s = compensated_sum(points.iter().map(|p| p.p_s));
        let t = compensated_sum(points.iter().map(|p| p.p_t));
        if (s - 1.0).abs() > MASS_TOL || (t - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("masses sum to ({s}, {t}), expected (1, 1)")));
        }
        Ok(FiniteShiftInstance { k, alpha, points })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn points(&self) -> &[InstancePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Source and target exchanged, reference labels exchanged, `alpha` inverted.
    pub fn swapped(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| InstancePoint { p_s: p.p_t, p_t: p.p_s, y1: p.y2, y2: p.y1 })
            .collect();
        FiniteShiftInstance { k: self.k, alpha: 1.0 / self.alpha, points }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.points.len() {
            return Err(Error::LengthMismatch { expected: self.points.len(), got });
        }
        Ok(())
    }
}

/// The three surrogate pairs. All use cross-entropy for agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SurrogateKind {
    Rg23,
    Glk23,
    Ours,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 3] = [SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours];

    pub fn dis_loss(self) -> LossKind {
        match self {
            SurrogateKind::Rg23 => LossKind::RgDis,
            SurrogateKind::Glk23 => LossKind::GlkDis,
            SurrogateKind::Ours => LossKind::OursDis,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Rg23 => "RG23",
            SurrogateKind::Glk23 => "GLK23",
            SurrogateKind::Ours => "OURS",
        }
    }
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RG23" | "RG" => Ok(SurrogateKind::Rg23),
            "GLK23" | "GLK" => Ok(SurrogateKind::Glk23),
            "OURS" => Ok(SurrogateKind::Ours),
            other => Err(Error::invalid(format!("unknown surrogate kind {other:?}"))),
        }
    }
}

/// Weighted risk `sum_i weights_i * losses_i`.
pub fn risk(weights: &[f64], losses: &[f64]) -> Result<f64> {
    if weights.len() != losses.len() {
        return Err(Error::LengthMismatch { expected: weights.len(), got: losses.len() });
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("risk weights must be non-negative"));
    }
    Ok(compensated_sum(weights.iter().zip(losses).map(|(w, l)| w * l)))
}

fn check_labels(inst: &FiniteShiftInstance, labels: &[usize]) -> Result<()> {
    inst.check_len(labels.len())?;
    if labels.iter().any(|&c| c >= inst.k) {
        return Err(Error::invalid("critic label out of range"));
    }
    Ok(())
}

fn check_logit_list(inst: &FiniteShiftInstance, logits: &[Vec<f64>]) -> Result<()> {
    inst.check_len(logits.len())?;
    for s in logits {
        if s.len() != inst.k {
            return Err(Error::LengthMismatch { expected: inst.k, got: s.len() });
        }
        check_logits(s)?;
    }
    Ok(())
}

/// `alpha * P_T[critic != y2] - P_S[critic != y1]`.
pub fn dd_true(inst: &FiniteShiftInstance, labels: &[usize]) -> Result<f64> {
    check_labels(inst, labels)?;
    let terms = inst.points.iter().zip(labels).map(|(p, &c)| {
        inst.alpha * p.p_t * f64::from(u8::from(c != p.y2)) - p.p_s * f64::from(u8::from(c != p.y1))
    });
    Ok(compensated_sum(terms))
}

/// `E_S[CE(y1)] + alpha * E_T[dis(y2)]`, to be minimized.
pub fn dd_surrogate(inst: &FiniteShiftInstance, logits: &[Vec<f64>], kind: SurrogateKind) -> Result<f64> {
    check_logit_list(inst, logits)?;
    let dis = kind.dis_loss();
    let terms = inst.points.iter().zip(logits).map(|(p, s)| {
        let mut v = 0.0;
        if p.p_s > 0.0 {
            v += p.p_s * losses::eval(LossKind::Ce, p.y1, s);
        }
        if p.p_t > 0.0 {
            v += inst.alpha * p.p_t * losses::eval(dis, p.y2, s);
        }
        v
    });
    Ok(compensated_sum(terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    One,
    Two,
}

impl Side {
    pub fn index(self) -> u8 {
        match self {
            Side::One => 1,
            Side::Two => 2,
        }
    }

    /// The side that is active for masses `(p_s, p_t)`.
    pub fn active(p_s: f64, p_t: f64) -> Result<Side> {
        if p_s == 0.0 && p_t == 0.0 {
            return Err(Error::UndefinedPoint);
        }
        Ok(if p_s >= p_t { Side::One } else { Side::Two })
    }
}

/// Inner weights of a pseudo-loss: it equals `w1 * l1 + w2 * l2` on its active
/// region. `w2` already includes `alpha` when built through [`PseudoWeights::for_side`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoWeights {
    pub w1: f64,
    pub w2: f64,
}

impl PseudoWeights {
    /// Weights of `L_side[l1, alpha * l2]`, or `None` when the side is inactive.
    pub fn for_side(side: Side, p_s: f64, p_t: f64, alpha: f64) -> Result<Option<Self>> {
        if !(p_s >= 0.0 && p_t >= 0.0) {
            return Err(Error::invalid("densities must be non-negative"));
        }
        if Side::active(p_s, p_t)? != side {
            return Ok(None);
        }
        Ok(Some(match side {
            Side::One => PseudoWeights { w1: 1.0, w2: alpha * p_t / p_s },
            Side::Two => PseudoWeights { w1: p_s / p_t, w2: alpha },
        }))
    }

    /// `w1 / w2`, `+inf` when `w2 = 0`.
    pub fn ratio(&self) -> f64 {
        if self.w2 == 0.0 {
            f64::INFINITY
        } else {
            self.w1 / self.w2
        }
    }
}

/// `L_side[l1, l2]` evaluated from the two loss values at the point.
pub fn pseudo_loss(side: Side, ell1: f64, ell2: f64, p_s: f64, p_t: f64) -> Result<f64> {
    Ok(match PseudoWeights::for_side(side, p_s, p_t, 1.0)? {
        None => 0.0,
        Some(PseudoWeights { w1, w2 }) => w1 * ell1 + w2 * ell2,
    })
}

/// Sign convention for rewriting the true discrepancy with pseudo-losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecastSign {
    /// `L[-l01, alpha l01]`: the decomposition sums to `dd_true`.
    Forward,
    /// `L[l01, -alpha l01]`: the minimization form, which sums to `-dd_true`.
    Minimize,
}

/// Per-point contributions `(pS * M1, pT * M2)` of the true recast.
pub fn dd_true_recast_terms(
    inst: &FiniteShiftInstance,
    labels: &[usize],
    sign: RecastSign,
) -> Result<Vec<(f64, f64)>> {
    check_labels(inst, labels)?;
    let flip = match sign {
        RecastSign::Forward => -1.0,
        RecastSign::Minimize => 1.0,
    };
    inst.points
        .iter()
        .zip(labels)
        .map(|(p, &c)| {
            if p.p_s == 0.0 && p.p_t == 0.0 {
                return Ok((0.0, 0.0));
            }
            let l1 = flip * f64::from(u8::from(c != p.y1));
            let l2 = -flip * inst.alpha * f64::from(u8::from(c != p.y2));
            let m1 = pseudo_loss(Side::One, l1, l2, p.p_s, p.p_t)?;
            let m2 = pseudo_loss(Side::Two, l1, l2, p.p_s, p.p_t)?;
            Ok((p.p_s * m1, p.p_t * m2))
        })
        .collect()
}

/// `R[M1](S) + R[M2](T)` for the true pseudo-losses.
pub fn dd_true_recast(inst: &FiniteShiftInstance, labels: &[usize], sign: RecastSign) -> Result<f64> {
    let terms = dd_true_recast_terms(inst, labels, sign)?;
    Ok(compensated_sum(terms.iter().flat_map(|&(a, b)| [a, b])))
}

/// Per-point contributions `(pS * N1, pT * N2)` of the surrogate recast.
pub fn dd_surr_recast_terms(
    inst: &FiniteShiftInstance,
    logits: &[Vec<f64>],
    kind: SurrogateKind,
) -> Result<Vec<(f64, f64)>> {
    check_logit_list(inst, logits)?;
    let dis = kind.dis_loss();
    inst.points
        .iter()
        .zip(logits)
        .map(|(p, s)| {
            if p.p_s == 0.0 && p.p_t == 0.0 {
                return Ok((0.0, 0.0));
            }
            // Losses multiplied by a zero weight are never evaluated, so a
            // saturated logit cannot turn `0 * cap` into noise.
            let l1 = if p.p_s > 0.0 { losses::eval(LossKind::Ce, p.y1, s) } else { 0.0 };
            let l2 = if p.p_t > 0.0 { inst.alpha * losses::eval(dis, p.y2, s) } else { 0.0 };
            let n1 = pseudo_loss(Side::One, l1, l2, p.p_s, p.p_t)?;
            let n2 = pseudo_loss(Side::Two, l1, l2, p.p_s, p.p_t)?;
            Ok((p.p_s * n1, p.p_t * n2))
        })
        .collect()
}

/// `R[N1](S) + R[N2](T)` for the surrogate pseudo-losses.
pub fn dd_surr_recast(inst: &FiniteShiftInstance, logits: &[Vec<f64>], kind: SurrogateKind) -> Result<f64> {
    let terms = dd_surr_recast_terms(inst, logits, kind)?;
    Ok(compensated_sum(terms.iter().flat_map(|&(a, b)| [a, b])))
}

/// Root of the pointwise optimality condition for the RG23 margin.
pub fn b_k(k: usize, r: f64) -> Result<f64> {
    if k < 3 {
        return Err(Error::invalid(format!("b_K needs K >= 3, got {k}")));
    }
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("b_K needs r >= 0, got {r}")));
    }
    Ok(b_k_unchecked(k as f64, r))
}

pub(crate) fn b_k_unchecked(k: f64, r: f64) -> f64 {
    let km1 = k - 1.0;
    let half = 0.5 * (r - 1.0) * km1;
    half + (km1 * r + half * half).sqrt()
}

/// How the argmax of a surrogate optimum relates to the reference label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// The optimum strictly predicts the reference label.
    Agrees,
    /// The optimum strictly predicts another label.
    Disagrees,
    /// The reference label ties for the maximum.
    Tie,
    /// The minimizer set contains both agreeing and non-agreeing points.
    Ambiguous,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Agrees => "agrees",
            Relation::Disagrees => "disagrees",
            Relation::Tie => "tie",
            Relation::Ambiguous => "ambiguous",
        }
    }
}

/// Pointwise infimum of `w1 * CE(y1) + w2 * dis(y2)` over logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseOpt {
    pub value: f64,
    /// Optimal probability of `y1`; `None` when the infimum is a limit with
    /// `q_y1 -> 1` or the optimum is a whole set.
    pub q_y1: Option<f64>,
    /// Full optimal probability vector, with `y1 = 0` and (when the labels
    /// differ) `y2 = 1`, when the minimizer is a single point or a limit point.
    pub q: Option<Vec<f64>>,
    /// Relation of the optimum's predicted class to `y1`.
    pub relation: Relation,
}

/// Closed-form pointwise optimum of a surrogate pseudo-loss.
pub fn pointwise_opt(kind: SurrogateKind, k: usize, weights: PseudoWeights, agree: bool) -> Result<PointwiseOpt> {
    let PseudoWeights { w1, w2 } = weights;
    if !(w1 >= 0.0 && w2 >= 0.0 && w1.is_finite() && w2.is_finite()) || (w1 == 0.0 && w2 == 0.0) {
        return Err(Error::invalid("pseudo-loss weights must be non-negative and not both zero"));
    }
    if k < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    let kf = k as f64;
    let km1 = kf - 1.0;
    let one_hot = |i: usize| {
        let mut q = vec![0.0; k];
        q[i] = 1.0;
        q
    };
    // Only the agreement term: push q_y1 to one.
    if w2 == 0.0 {
        return Ok(PointwiseOpt { value: 0.0, q_y1: None, q: Some(one_hot(0)), relation: Relation::Agrees });
    }
    // Only the disagreement term: drive q_y2 to zero.
    if w1 == 0.0 {
        let value = if kind == SurrogateKind::Glk23 { w2 * km1.ln() } else { 0.0 };
        let y2 = if agree { 0 } else { 1 };
        let q = (kind == SurrogateKind::Glk23).then(|| {
            let mut q = vec![1.0 / km1; k];
            q[y2] = 0.0;
            q
        });
        let relation = if agree { Relation::Disagrees } else { Relation::Ambiguous };
        return Ok(PointwiseOpt { value, q_y1: None, q, relation });
    }
    let r = w1 / w2;
    if !agree {
        return Ok(match kind {
            SurrogateKind::Ours | SurrogateKind::Rg23 => {
                PointwiseOpt { value: 0.0, q_y1: None, q: Some(one_hot(0)), relation: Relation::Agrees }
            }
            SurrogateKind::Glk23 => {
                let qy1 = (r * km1 + 1.0) / (km1 * (r + 1.0));
                let other = 1.0 / (km1 * (r + 1.0));
                let mut q = vec![other; k];
                q[0] = qy1;
                q[1] = 0.0;
                let value = (w1 + w2) * (km1 * (r + 1.0)).ln() - (w1 + w2 / km1) * (km1 * r + 1.0).ln();
                let relation = if qy1 > other || k == 2 { Relation::Agrees } else { Relation::Tie };
                PointwiseOpt { value, q_y1: Some(qy1), q: Some(q), relation }
            }
        });
    }
    Ok(match kind {
        SurrogateKind::Ours => {
            let qy = r / (r + 1.0);
            let value = w1 * (1.0 / r).ln_1p() + w2 * r.ln_1p();
            let lambda = 1.0 / km1;
            let (relation, q) = if k == 2 {
                let rel = if r > 1.0 {
                    Relation::Agrees
                } else if r < 1.0 {
                    Relation::Disagrees
                } else {
                    Relation::Tie
                };
                (rel, Some(vec![qy, 1.0 - qy]))
            } else if r > 1.0 {
                (Relation::Agrees, None)
            } else if r >= lambda {
                (Relation::Ambiguous, None)
            } else {
                (Relation::Disagrees, None)
            };
            PointwiseOpt { value, q_y1: Some(qy), q, relation }
        }
        SurrogateKind::Rg23 => {
            if k == 2 {
                // Identical to the OURS pseudo-loss for two classes.
                return pointwise_opt(SurrogateKind::Ours, k, weights, agree);
            }
            let b = b_k_unchecked(kf, r);
            let qy = b / (b + km1);
            let mut q = vec![1.0 / (b + km1); k];
            q[0] = qy;
            let value = w1 * (km1 / b).ln_1p() + w2 * b.ln_1p();
            PointwiseOpt { value, q_y1: Some(qy), q: Some(q), relation: order(b, 1.0) }
        }
        SurrogateKind::Glk23 => {
            let qy = r / (r + 1.0);
            let other = 1.0 / (km1 * (r + 1.0));
            let mut q = vec![other; k];
            q[0] = qy;
            let value = w1 * (1.0 / r).ln_1p() + w2 * (km1 * (r + 1.0)).ln();
            PointwiseOpt { value, q_y1: Some(qy), q: Some(q), relation: order(r, 1.0 / km1) }
        }
    })
}

fn order(a: f64, b: f64) -> Relation {
    if a > b {
        Relation::Agrees
    } else if a < b {
        Relation::Disagrees
    } else {
        Relation::Tie
    }
}

/// Value of the true pseudo-loss in the minimization form for critic label `c`.
fn true_pseudo_value(w: PseudoWeights, labels: LabelPair, c: usize) -> f64 {
    w.w1 * f64::from(u8::from(c != labels.y1)) - w.w2 * f64::from(u8::from(c != labels.y2))
}

/// Excess of the true pseudo-loss `L_side[l01, -alpha l01]` at critic label `c`.
pub fn excess_true(
    side: Side,
    p_s: f64,
    p_t: f64,
    alpha: f64,
    k: usize,
    labels: LabelPair,
    c: usize,
) -> Result<f64> {
    if labels.y1 >= k || labels.y2 >= k || c >= k {
        return Err(Error::invalid("label out of range"));
    }
    let Some(w) = PseudoWeights::for_side(side, p_s, p_t, alpha)? else {
        return Ok(0.0);
    };
    Ok(excess_true_weighted(w, k, labels, c))
}

pub(crate) fn excess_true_weighted(w: PseudoWeights, k: usize, labels: LabelPair, c: usize) -> f64 {
    let min = (0..k).map(|j| true_pseudo_value(w, labels, j)).fold(f64::INFINITY, f64::min);
    (true_pseudo_value(w, labels, c) - min).max(0.0)
}

/// Excess of the surrogate pseudo-loss `L_side[CE, alpha dis]` at logits `s`.
pub fn excess_surrogate(
    kind: SurrogateKind,
    side: Side,
    p_s: f64,
    p_t: f64,
    alpha: f64,
    labels: LabelPair,
    s: &[f64],
) -> Result<f64> {
    check_logits(s)?;
    let k = s.len();
    if labels.y1 >= k || labels.y2 >= k {
        return Err(Error::invalid("label out of range"));
    }
    let Some(w) = PseudoWeights::for_side(side, p_s, p_t, alpha)? else {
        return Ok(0.0);
    };
    let opt = pointwise_opt(kind, k, w, labels.agree())?;
    Ok(surrogate_pseudo_value(kind, w, labels, s) - opt.value)
}

/// `w1 * CE(y1, s) + w2 * dis(y2, s)`, skipping zero-weight terms.
pub fn surrogate_pseudo_value(kind: SurrogateKind, w: PseudoWeights, labels: LabelPair, s: &[f64]) -> f64 {
    let mut v = 0.0;
    if w.w1 > 0.0 {
        v += w.w1 * losses::eval(LossKind::Ce, labels.y1, s);
    }
    if w.w2 > 0.0 {
        v += w.w2 * losses::eval(kind.dis_loss(), labels.y2, s);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(p_s: f64, p_t: f64, y1: usize, y2: usize) -> InstancePoint {
        InstancePoint { p_s, p_t, y1, y2 }
    }

    #[test]
    fn separated_instance_has_unit_dd() {
        let inst = FiniteShiftInstance::new(3, 1.0, vec![pt(1.0, 0.0, 0, 0), pt(0.0, 1.0, 0, 0)]).unwrap();
        assert_abs_diff_eq!(dd_true(&inst, &[0, 1]).unwrap(), 1.0);
        assert_abs_diff_eq!(dd_true(&inst, &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn single_point_dd() {
        let inst = FiniteShiftInstance::new(3, 5.0 / 3.0, vec![pt(1.0, 1.0, 0, 0)]).unwrap();
        assert_abs_diff_eq!(dd_true(&inst, &[1]).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_surrogates() {
        let inst = FiniteShiftInstance::new(3, 1.0, vec![pt(1.0, 0.0, 0, 0), pt(0.0, 1.0, 0, 0)]).unwrap();
        let z = vec![vec![0.0; 3]; 2];
        let ours = dd_surrogate(&inst, &z, SurrogateKind::Ours).unwrap();
        assert_abs_diff_eq!(ours, 3f64.ln() + 1.5f64.ln(), epsilon = 1e-14);
        let glk = dd_surrogate(&inst, &z, SurrogateKind::Glk23).unwrap();
        assert_abs_diff_eq!(glk, 2.0 * 3f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn pseudo_loss_sides() {
        assert_eq!(pseudo_loss(Side::Two, 3.0, 4.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(pseudo_loss(Side::One, 1.0, 2.0, 0.3, 0.3).unwrap(), 3.0);
        assert_eq!(pseudo_loss(Side::Two, 1.0, 2.0, 0.3, 0.3).unwrap(), 0.0);
        assert_eq!(pseudo_loss(Side::Two, 1.0, 1.0, 0.25, 0.5).unwrap(), 1.5);
        assert!(matches!(pseudo_loss(Side::One, 1.0, 1.0, 0.0, 0.0), Err(Error::UndefinedPoint)));
    }

    #[test]
    fn b_k_values() {
        assert_abs_diff_eq!(b_k(3, 0.75).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b_k(3, 1.0).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(b_k(4, 0.5).unwrap(), 0.686141, epsilon = 1e-6);
        assert!(b_k(2, 1.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let w = |w1, w2| PseudoWeights { w1, w2 };
        let o = pointwise_opt(SurrogateKind::Ours, 3, w(2.0, 1.0), true).unwrap();
        assert_abs_diff_eq!(o.q_y1.unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        let o = pointwise_opt(SurrogateKind::Ours, 3, w(0.6, 1.0), true).unwrap();
        assert_abs_diff_eq!(o.value, 1.058501, epsilon = 1e-6);
        let g = pointwise_opt(SurrogateKind::Glk23, 3, w(0.6, 1.0), true).unwrap();
        let q = g.q.unwrap();
        assert_abs_diff_eq!(q[0], 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.3125, epsilon = 1e-15);
        let rg = pointwise_opt(SurrogateKind::Rg23, 3, w(0.85, 1.0), true).unwrap();
        assert_eq!(rg.relation, Relation::Agrees);
    }

    #[test]
    fn true_excess_examples() {
        let agree = LabelPair::new(0, 0);
        assert_abs_diff_eq!(excess_true(Side::Two, 0.5, 1.0, 1.0, 3, agree, 0).unwrap(), 0.5);
        assert_abs_diff_eq!(excess_true(Side::One, 1.0, 0.5, 1.0, 3, agree, 0).unwrap(), 0.0);
        let split = LabelPair::new(0, 1);
        assert_abs_diff_eq!(excess_true(Side::One, 0.7, 0.2, 2.0, 3, split, 0).unwrap(), 0.0);
    }

    #[test]
    fn source_only_excess_is_ce_excess() {
        let s = [0.4, -1.0, 2.0];
        let e = excess_surrogate(SurrogateKind::Ours, Side::One, 1.0, 0.0, 1.0, LabelPair::new(1, 2), &s).unwrap();
        let ce = losses::eval(LossKind::Ce, 1, &s);
        assert_abs_diff_eq!(e, ce, epsilon = 1e-14);
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = FiniteShiftInstance::new(3, 1.5, vec![pt(0.25, 0.5, 0, 1), pt(0.75, 0.5, 2, 2)]).unwrap();
        let text = serde_json::to_string(&inst).unwrap();
        assert!(text.contains("\"pS\"") && text.contains("\"K\""));
        let back: FiniteShiftInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst);
        let bad = r#"{"K":3,"alpha":1,"points":[{"pS":0.5,"pT":1,"y1":0,"y2":0}]}"#;
        assert!(serde_json::from_str::<FiniteShiftInstance>(bad).is_err());
    }
}
