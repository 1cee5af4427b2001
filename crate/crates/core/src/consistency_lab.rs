//! Brute-force oracles for pointwise infima and the gap functionals built on
//! them.
//!
//! The true pseudo-loss depends on logits only through the predicted class, so
//! both gap functionals reduce to a per-label table: for each label `j`, the
//! true excess of predicting `j` and the smallest surrogate excess over the
//! cone `{s : score_to_class(s) = j}`. ΔG and ΔH are then exact minima over
//! that table, and only the per-label surrogate minimum needs a numerical
//! search.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{
    dd_true, excess_true_weighted, pointwise_opt, surrogate_pseudo_value, FiniteShiftInstance, InstancePoint,
    LabelPair, PseudoWeights, Relation, Side, SurrogateKind,
};
use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::losses::{score_to_class, ProbVector};

/// Half-width of the logit box searched by [`brute_min`]. A logit gap of
/// `2 * LOGIT_BOX` puts limit infima within `1e-25` of their value.
pub const LOGIT_BOX: f64 = 30.0;

/// Slack used when deciding whether a label attains a surrogate excess level.
pub const GAP_TOL: f64 = 1e-7;

const COARSE_POINTS: usize = 33;
const BISECT_ITERS: usize = 64;
const GOLDEN_ITERS: usize = 80;

/// Search space for [`brute_min`]: a uniform simplex grid followed by
/// line-search refinement in logit space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplexGrid {
    pub k: usize,
    /// Grid points per axis; step is `1 / (resolution - 1)`.
    pub resolution: usize,
    /// Maximum refinement passes. A pass stops the search early when it fails
    /// to improve the value.
    pub refine_steps: usize,
}

impl SimplexGrid {
    pub fn new(k: usize, resolution: usize, refine_steps: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("simplex grid needs K >= 2"));
        }
        if resolution < 11 {
            return Err(Error::invalid(format!("grid resolution must be >= 11, got {resolution}")));
        }
        Ok(SimplexGrid { k, resolution, refine_steps })
    }

    /// Default resolution per class count.
    pub fn default_for(k: usize) -> Self {
        let resolution = match k {
            0..=2 => 1001,
            3 => 201,
            4 => 61,
            5 => 31,
            _ => 21,
        };
        SimplexGrid { k, resolution, refine_steps: 60 }
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let n = self.resolution - 1;
        let mut out = Vec::new();
        let mut cur = vec![0usize; self.k];
        compositions(n, 0, &mut cur, &mut out);
        out.into_iter()
            .map(|c| c.iter().map(|&v| grid_logit(v as f64 / n as f64)).collect())
            .collect()
    }
}

fn compositions(left: usize, idx: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let k = cur.len();
    if idx == k - 1 {
        cur[idx] = left;
        out.push(cur.clone());
        return;
    }
    for v in (0..=left).rev() {
        cur[idx] = v;
        compositions(left - v, idx + 1, cur, out);
    }
}

/// Logit of a grid probability, shifted so every logit lies in the box.
fn grid_logit(q: f64) -> f64 {
    // ln q is relative to an unnormalised max; the softmax is unchanged by the
    // shift, and zero maps to the box floor.
    let l = if q > 0.0 { q.ln() } else { f64::NEG_INFINITY };
    l.max(-2.0 * LOGIT_BOX)
}

/// Outcome of a successful [`brute_min`] search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteMin {
    pub q: ProbVector,
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Minimises `objective` over logits `s` in the box with `constraint(s)` true.
///
/// `objective` and `constraint` must be invariant to adding a constant to every
/// logit; this holds for every loss in the crate and for argmax regions.
/// Returns [`Error::Infeasible`] when no grid point satisfies the constraint.
pub fn brute_min<F, C>(objective: F, constraint: C, grid: &SimplexGrid) -> Result<BruteMin>
where
    F: Fn(&[f64]) -> f64 + Sync,
    C: Fn(&[f64]) -> bool + Sync,
{
    let eval = |s: &[f64]| -> f64 {
        let v = objective(s);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let pts = grid.points();
    let mut start: Vec<Vec<f64>> = pts
        .into_iter()
        .map(|mut s| {
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in s.iter_mut() {
                *v = (*v - m).max(-2.0 * LOGIT_BOX) + LOGIT_BOX;
            }
            s
        })
        .collect();
    let best = start
        .par_iter()
        .enumerate()
        .filter(|(_, s)| constraint(s))
        .map(|(i, s)| (eval(s), i))
        .reduce_with(|a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let Some((mut fx, idx)) = best else {
        return Err(Error::Infeasible);
    };
    let mut x = std::mem::take(&mut start[idx]);
    drop(start);

    let dirs = directions(grid.k);
    for _ in 0..grid.refine_steps {
        let before = fx;
        for d in &dirs {
            if let Some((t, v)) = line_search(&eval, &constraint, &x, d, fx) {
                for (xi, di) in x.iter_mut().zip(d) {
                    *xi += t * di;
                }
                fx = v;
            }
        }
        recentre(&mut x, &constraint);
        if !(fx < before) {
            break;
        }
    }
    let q = ProbVector::from_logits(&x)?;
    Ok(BruteMin { q, logits: x, value: fx })
}

fn recentre<C: Fn(&[f64]) -> bool>(x: &mut [f64], constraint: &C) {
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = 0.5 * (hi + lo);
    if shift == 0.0 {
        return;
    }
    let moved: Vec<f64> = x.iter().map(|v| v - shift).collect();
    if constraint(&moved) {
        x.copy_from_slice(&moved);
    }
}

/// Unit coordinates, pairwise differences and pairwise sums.
fn directions(k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for a in 0..k {
        let mut d = vec![0.0; k];
        d[a] = 1.0;
        out.push(d);
    }
    for a in 0..k {
        for b in a + 1..k {
            let mut d = vec![0.0; k];
            d[a] = 1.0;
            d[b] = -1.0;
            out.push(d);
            if k > 3 {
                let mut d = vec![0.0; k];
                d[a] = 1.0;
                d[b] = 1.0;
                out.push(d);
            }
        }
    }
    out
}

fn point(x: &[f64], d: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Largest feasible step towards `t_end` from the feasible `t = 0`.
fn feasible_extent<C: Fn(&[f64]) -> bool>(constraint: &C, x: &[f64], d: &[f64], t_end: f64) -> f64 {
    if constraint(&point(x, d, t_end)) {
        return t_end;
    }
    let (mut ok, mut bad) = (0.0, t_end);
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (ok + bad);
        if constraint(&point(x, d, mid)) {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    ok
}

fn line_search<F, C>(eval: &F, constraint: &C, x: &[f64], d: &[f64], fx: f64) -> Option<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64]) -> bool,
{
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&xi, &di) in x.iter().zip(d) {
        if di > 0.0 {
            hi = hi.min((LOGIT_BOX - xi) / di);
            lo = lo.max((-LOGIT_BOX - xi) / di);
        } else if di < 0.0 {
            hi = hi.min((-LOGIT_BOX - xi) / di);
            lo = lo.max((LOGIT_BOX - xi) / di);
        }
    }
    let hi = feasible_extent(constraint, x, d, hi.max(0.0));
    let lo = feasible_extent(constraint, x, d, lo.min(0.0));
    if hi - lo < 1e-13 {
        return None;
    }
    let phi = |t: f64| {
        let p = point(x, d, t);
        if constraint(&p) {
            eval(&p)
        } else {
            f64::INFINITY
        }
    };
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let ts: Vec<f64> = (0..COARSE_POINTS)
        .map(|i| if i + 1 == COARSE_POINTS { hi } else { lo + step * i as f64 })
        .collect();
    let vals: Vec<f64> = ts.iter().map(|&t| phi(t)).collect();
    let mut bi = 0;
    for i in 1..COARSE_POINTS {
        if vals[i] < vals[bi] {
            bi = i;
        }
    }
    let (mut bt, mut bv) = (ts[bi], vals[bi]);
    let mut a = ts[bi.saturating_sub(1)];
    let mut b = ts[(bi + 1).min(COARSE_POINTS - 1)];
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut e = a + INV_PHI * (b - a);
    let (mut fc, mut fe) = (phi(c), phi(e));
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 1e-13 * (1.0 + bt.abs()) {
            break;
        }
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - INV_PHI * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + INV_PHI * (b - a);
            fe = phi(e);
        }
    }
    for (t, v) in [(c, fc), (e, fe)] {
        if v < bv {
            bt = t;
            bv = v;
        }
    }
    (bv < fx).then_some((bt, bv))
}

/// Per-label entry of a gap profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCost {
    pub label: usize,
    /// True excess of predicting `label`.
    pub true_excess: f64,
    /// Smallest surrogate excess over logits predicting `label`.
    pub surrogate_min: f64,
    /// Probability vector attaining `surrogate_min`.
    pub q: Vec<f64>,
}

/// Per-label decomposition of one pseudo-loss at a single point.
///
/// The point has target mass 1 and source mass `r * alpha`, so that
/// `r = pS / (alpha pT)`. Reference labels are `(0, 0)` when `agree` and
/// `(0, 1)` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    pub kind: SurrogateKind,
    pub side: Side,
    pub k: usize,
    pub r: f64,
    pub alpha: f64,
    pub agree: bool,
    /// Whether `side` is the active pseudo-loss at this point.
    pub active: bool,
    pub labels: Vec<LabelCost>,
    pub grid: SimplexGrid,
}

/// Estimated value of ΔG or ΔH at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub epsilon: f64,
    /// `+inf` when the feasible set is empty.
    pub value: f64,
    /// Minimising probability vector, when one exists.
    pub q: Option<Vec<f64>>,
    pub label: Option<usize>,
    pub grid: SimplexGrid,
}

pub fn reference_labels(agree: bool) -> LabelPair {
    if agree {
        LabelPair::new(0, 0)
    } else {
        LabelPair::new(0, 1)
    }
}

/// Builds the per-label table for the pseudo-loss on `side`.
pub fn gap_profile(
    kind: SurrogateKind,
    side: Side,
    k: usize,
    r: f64,
    alpha: f64,
    agree: bool,
    grid: &SimplexGrid,
) -> Result<GapProfile> {
    if grid.k != k {
        return Err(Error::invalid(format!("grid has K = {}, expected {k}", grid.k)));
    }
    if !(r >= 0.0 && r.is_finite()) || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("r must be finite and >= 0, alpha finite and > 0"));
    }
    let labels = reference_labels(agree);
    let (p_s, p_t) = (r * alpha, 1.0);
    let weights = PseudoWeights::for_side(side, p_s, p_t, alpha)?;
    let Some(w) = weights else {
        let labels = (0..k)
            .map(|j| {
                let mut q = vec![0.0; k];
                q[j] = 1.0;
                LabelCost { label: j, true_excess: 0.0, surrogate_min: 0.0, q }
            })
            .collect();
        return Ok(GapProfile { kind, side, k, r, alpha, agree, active: false, labels, grid: *grid });
    };
    let opt = pointwise_opt(kind, k, w, agree)?;
    let costs = (0..k)
        .map(|j| {
            let found = brute_min(
                |s| surrogate_pseudo_value(kind, w, labels, s) - opt.value,
                |s| score_to_class(s) == j,
                grid,
            )?;
            Ok(LabelCost {
                label: j,
                true_excess: excess_true_weighted(w, k, labels, j),
                surrogate_min: found.value.max(0.0),
                q: found.q.into_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapProfile { kind, side, k, r, alpha, agree, active: true, labels: costs, grid: *grid })
}

impl GapProfile {
    /// `min { true excess : surrogate excess <= epsilon }`.
    pub fn delta_g(&self, epsilon: f64) -> GapEstimate {
        self.best_by(epsilon, |c| c.surrogate_min <= epsilon + GAP_TOL, |c| c.true_excess)
    }

    /// `min { surrogate excess : true excess >= epsilon }`, `+inf` when empty.
    pub fn delta_h(&self, epsilon: f64) -> GapEstimate {
        self.best_by(epsilon, |c| c.true_excess >= epsilon, |c| c.surrogate_min)
    }

    /// Labels whose cone contains a surrogate minimiser.
    pub fn minimiser_labels(&self) -> Vec<usize> {
        self.labels.iter().filter(|c| c.surrogate_min <= GAP_TOL).map(|c| c.label).collect()
    }

    fn best_by(&self, epsilon: f64, keep: impl Fn(&LabelCost) -> bool, value: impl Fn(&LabelCost) -> f64) -> GapEstimate {
        let best = self
            .labels
            .iter()
            .filter(|c| keep(c))
            .min_by(|a, b| value(a).total_cmp(&value(b)).then(a.label.cmp(&b.label)));
        match best {
            Some(c) => GapEstimate {
                epsilon,
                value: value(c),
                q: Some(c.q.clone()),
                label: Some(c.label),
                grid: self.grid,
            },
            None => GapEstimate { epsilon, value: f64::INFINITY, q: None, label: None, grid: self.grid },
        }
    }
}

/// ΔG at a single point; see [`GapProfile`] for the point construction.
#[allow(clippy::too_many_arguments)]
pub fn delta_g(
    kind: SurrogateKind,
    side: Side,
    k: usize,
    r: f64,
    alpha: f64,
    agree: bool,
    epsilon: f64,
    grid: &SimplexGrid,
) -> Result<GapEstimate> {
    check_epsilon(epsilon)?;
    Ok(gap_profile(kind, side, k, r, alpha, agree, grid)?.delta_g(epsilon))
}

/// ΔH at a single point; see [`GapProfile`] for the point construction.
#[allow(clippy::too_many_arguments)]
pub fn delta_h(
    kind: SurrogateKind,
    side: Side,
    k: usize,
    r: f64,
    alpha: f64,
    agree: bool,
    epsilon: f64,
    grid: &SimplexGrid,
) -> Result<GapEstimate> {
    check_epsilon(epsilon)?;
    Ok(gap_profile(kind, side, k, r, alpha, agree, grid)?.delta_h(epsilon))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(())
}

/// Lower edge of the inconsistency band.
pub fn band_lambda(kind: SurrogateKind, k: usize) -> Result<f64> {
    if k <= 2 {
        return Err(Error::invalid("the inconsistency band needs K > 2"));
    }
    let kf = k as f64;
    match kind {
        SurrogateKind::Rg23 => Ok(kf / (2.0 * kf - 2.0)),
        SurrogateKind::Glk23 => Ok(1.0 / (kf - 1.0)),
        SurrogateKind::Ours => Err(Error::NoBand("OURS")),
    }
}

/// `delta / (1 - delta) 1[S > 0] + alpha delta 1[T > 0]`.
pub fn inconsistency_floor(delta: f64, alpha: f64, source_mass_positive: bool, target_mass_positive: bool) -> Result<f64> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [0, 0.5), got {delta}")));
    }
    let mut z = 0.0;
    if source_mass_positive {
        z += delta / (1.0 - delta);
    }
    if target_mass_positive {
        z += alpha * delta;
    }
    Ok(z)
}

/// Surrogate-excess level below which ΔG stays at its value at zero on the
/// band `[lambda + delta, 1 - delta]`.
pub fn epsilon_star(kind: SurrogateKind, side: Side, k: usize, delta: f64, alpha: f64) -> Result<f64> {
    if k <= 2 {
        return Err(Error::invalid("epsilon_star needs K > 2"));
    }
    let kf = k as f64;
    let km1 = kf - 1.0;
    let upper = (kf - 2.0) / (2.0 * kf - 2.0);
    if !(delta > 0.0 && delta < upper) {
        return Err(Error::invalid(format!("delta must lie in (0, {upper}), got {delta}")));
    }
    match kind {
        SurrogateKind::Rg23 => {
            let r = kf / (2.0 * km1) + delta;
            let b = crate::discrepancy::b_k_unchecked(kf, r);
            let t1 = (kf * b / (b + km1)).ln();
            let t2 = (2.0 / (1.0 + b)).ln();
            Ok(match side {
                Side::One => t1 + (2.0 * km1) / (kf + 2.0 * delta * km1) * t2,
                Side::Two => alpha * (kf + 2.0 * delta * km1) / (2.0 * km1) * t1 + alpha * t2,
            })
        }
        SurrogateKind::Glk23 => {
            let a = delta * km1;
            let t1 = (kf / (a + kf)).ln();
            let t2 = ((delta * kf * km1 + kf) / (a + kf)).ln();
            Ok(match side {
                Side::One => km1 / (a + 1.0) * t1 + t2,
                Side::Two => alpha * t1 + alpha * (a + 1.0) / km1 * t2,
            })
        }
        SurrogateKind::Ours => Err(Error::NoBand("OURS")),
    }
}

/// One row of [`scan_band`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub kind: SurrogateKind,
    pub k: usize,
    pub alpha: f64,
    pub r: f64,
    /// Active pseudo-loss side at the band point.
    pub side: Side,
    /// Relation of the surrogate optimum's prediction to the reference label.
    pub relation: Relation,
    /// Surrogate-optimal probability vector at the band point.
    pub q_star: Vec<f64>,
    /// Largest achievable true discrepancy on the instance.
    pub sup_dd: f64,
    /// True discrepancy of the surrogate-optimal critic.
    pub critic_dd: f64,
    /// `sup_dd - critic_dd`, the smallest over surrogate minimisers.
    pub gap: f64,
    /// Gap of agreeing and non-agreeing surrogate minimisers, when they exist.
    pub agree_gap: Option<f64>,
    pub disagree_gap: Option<f64>,
    /// Floor for points inside the band `(lambda, 1)`.
    pub floor: Option<f64>,
    /// Whether the row satisfies its check: `gap >= floor` in the band for
    /// the inconsistent kinds, `gap ~ 0` for OURS.
    pub check: Option<bool>,
}

/// Two-point instance with one band point at density ratio `r` and a filler
/// point carrying the leftover one-sided mass.
pub fn band_instance(k: usize, alpha: f64, r: f64) -> Result<FiniteShiftInstance> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("band ratio must be positive, got {r}")));
    }
    let ra = r * alpha;
    let mut points = Vec::with_capacity(2);
    if ra <= 1.0 {
        points.push(InstancePoint { p_s: ra, p_t: 1.0, y1: 0, y2: 0 });
        if ra < 1.0 {
            points.push(InstancePoint { p_s: 1.0 - ra, p_t: 0.0, y1: 0, y2: 0 });
        }
    } else {
        points.push(InstancePoint { p_s: 1.0, p_t: 1.0 / ra, y1: 0, y2: 0 });
        points.push(InstancePoint { p_s: 0.0, p_t: 1.0 - 1.0 / ra, y1: 0, y2: 0 });
    }
    FiniteShiftInstance::new(k, alpha, points)
}

/// Scans band points for one surrogate and reports the true-discrepancy gap of
/// its pointwise optimum.
pub fn scan_band(kind: SurrogateKind, k: usize, alpha: f64, rs: &[f64], grid: &SimplexGrid) -> Result<Vec<BandRow>> {
    rs.iter().map(|&r| band_row(kind, k, alpha, r, grid)).collect()
}

fn band_row(kind: SurrogateKind, k: usize, alpha: f64, r: f64, grid: &SimplexGrid) -> Result<BandRow> {
    let inst = band_instance(k, alpha, r)?;
    let a = inst.points()[0];
    let side = Side::active(a.p_s, a.p_t)?;
    let filler_label = inst.points().get(1).map(|b| if b.p_s > 0.0 { 0 } else { 1 });
    let labelling = |c: usize| -> Vec<usize> {
        let mut v = vec![c];
        v.extend(filler_label);
        v
    };
    let mut sup_dd = f64::NEG_INFINITY;
    for c in 0..k {
        for c2 in 0..if filler_label.is_some() { k } else { 1 } {
            let mut l = vec![c];
            if filler_label.is_some() {
                l.push(c2);
            }
            sup_dd = sup_dd.max(dd_true(&inst, &l)?);
        }
    }
    let w = PseudoWeights::for_side(side, a.p_s, a.p_t, alpha)?.expect("active side");
    let opt = pointwise_opt(kind, k, w, true)?;

    let (relation, q_star, critic_dd, agree_gap, disagree_gap) = match opt.q.clone() {
        Some(q) if kind != SurrogateKind::Ours => {
            let logits: Vec<f64> = q.iter().map(|v| v.max(1e-300).ln()).collect();
            let c = score_to_class(&logits);
            let dd = dd_true(&inst, &labelling(c))?;
            (opt.relation, q, dd, None, None)
        }
        _ => {
            let profile = gap_profile(kind, side, k, r, alpha, true, grid)?;
            let minimisers = profile.minimiser_labels();
            let gap_of = |c: usize| dd_true(&inst, &labelling(c)).map(|d| sup_dd - d);
            let agree_gap = if minimisers.contains(&0) { Some(gap_of(0)?) } else { None };
            let mut disagree_gap: Option<f64> = None;
            for &c in minimisers.iter().filter(|&&c| c != 0) {
                let g = gap_of(c)?;
                disagree_gap = Some(disagree_gap.map_or(g, |d| d.min(g)));
            }
            let best = profile
                .labels
                .iter()
                .filter(|l| minimisers.contains(&l.label))
                .min_by(|x, y| gap_of(x.label).unwrap_or(f64::INFINITY).total_cmp(&gap_of(y.label).unwrap_or(f64::INFINITY)))
                .ok_or(Error::Infeasible)?;
            let dd = dd_true(&inst, &labelling(best.label))?;
            (opt.relation, best.q.clone(), dd, agree_gap, disagree_gap)
        }
    };
    let gap = sup_dd - critic_dd;

    let (floor, check) = match kind {
        SurrogateKind::Ours => (None, Some(gap.abs() <= 1e-6)),
        _ => {
            let lambda = band_lambda(kind, k)?;
            if r > lambda && r < 1.0 {
                let delta = (r - lambda).min(1.0 - r);
                // Indicators are split by side: the band point feeds exactly one
                // of the two pseudo-losses.
                let floor = inconsistency_floor(delta, alpha, side == Side::One, side == Side::Two)?;
                (Some(floor), Some(gap >= floor - 1e-12))
            } else {
                (None, None)
            }
        }
    };
    Ok(BandRow {
        kind,
        k,
        alpha,
        r,
        side,
        relation,
        q_star,
        sup_dd,
        critic_dd,
        gap,
        agree_gap,
        disagree_gap,
        floor,
        check,
    })
}

fn write_q<W: Write>(out: &mut csv::Writer<W>, q: Option<&[f64]>, k: usize) -> Result<()> {
    for i in 0..k {
        let v = q.and_then(|q| q.get(i)).copied();
        out.write_field(v.map(fmt_f64).unwrap_or_default())?;
    }
    Ok(())
}

fn header(k: usize, extra: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = ["kind", "K", "alpha", "r", "epsilon", "value"].iter().map(|s| s.to_string()).collect();
    h.extend((0..k).map(|i| format!("q{i}")));
    h.push("relation".into());
    h.extend(extra.iter().map(|s| s.to_string()));
    h
}

/// Writes band rows as CSV. `value` is the gap, `epsilon` is 0.
pub fn write_band_csv<W: Write>(rows: &[BandRow], writer: W) -> Result<()> {
    let k = rows.iter().map(|r| r.k).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(header(k, &["side", "sup_dd", "critic_dd", "agree_gap", "disagree_gap", "floor", "check"]))?;
    for row in rows {
        out.write_field(row.kind.name())?;
        out.write_field(row.k.to_string())?;
        out.write_field(fmt_f64(row.alpha))?;
        out.write_field(fmt_f64(row.r))?;
        out.write_field(fmt_f64(0.0))?;
        out.write_field(fmt_f64(row.gap))?;
        write_q(&mut out, Some(&row.q_star), k)?;
        out.write_field(row.relation.as_str())?;
        out.write_field(row.side.index().to_string())?;
        out.write_field(fmt_f64(row.sup_dd))?;
        out.write_field(fmt_f64(row.critic_dd))?;
        out.write_field(row.agree_gap.map(fmt_f64).unwrap_or_default())?;
        out.write_field(row.disagree_gap.map(fmt_f64).unwrap_or_default())?;
        out.write_field(row.floor.map(fmt_f64).unwrap_or_default())?;
        out.write_field(row.check.map(|c| c.to_string()).unwrap_or_default())?;
        out.write_record(None::<&[u8]>)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// A ΔG or ΔH estimate tagged with its setting, for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub functional: String,
    pub profile_kind: SurrogateKind,
    pub side: Side,
    pub k: usize,
    pub alpha: f64,
    pub r: f64,
    pub relation: Relation,
    pub estimate: GapEstimate,
}

/// Writes gap estimates as CSV.
pub fn write_gap_csv<W: Write>(rows: &[GapRow], writer: W) -> Result<()> {
    let k = rows.iter().map(|r| r.k).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(header(k, &["functional", "side"]))?;
    for row in rows {
        out.write_field(row.profile_kind.name())?;
        out.write_field(row.k.to_string())?;
        out.write_field(fmt_f64(row.alpha))?;
        out.write_field(fmt_f64(row.r))?;
        out.write_field(fmt_f64(row.estimate.epsilon))?;
        out.write_field(fmt_f64(row.estimate.value))?;
        write_q(&mut out, row.estimate.q.as_deref(), k)?;
        out.write_field(row.relation.as_str())?;
        out.write_field(&row.functional)?;
        out.write_field(row.side.index().to_string())?;
        out.write_record(None::<&[u8]>)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{eval, LossKind};
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_sizes() {
        assert_eq!(SimplexGrid::new(3, 11, 0).unwrap().points().len(), 66);
        assert!(SimplexGrid::new(3, 10, 0).is_err());
    }

    #[test]
    fn unconstrained_ce_goes_to_vertex() {
        let g = SimplexGrid::new(3, 21, 3).unwrap();
        let m = brute_min(|s| eval(LossKind::Ce, 1, s), |_| true, &g).unwrap();
        assert!(m.value < 1e-20, "{m:?}");
        assert!(m.q.as_slice()[1] > 1.0 - 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let g = SimplexGrid::new(3, 21, 3).unwrap();
        assert!(matches!(brute_min(|_| 0.0, |_| false, &g), Err(Error::Infeasible)));
    }

    #[test]
    fn band_edges() {
        assert_eq!(band_lambda(SurrogateKind::Glk23, 3).unwrap(), 0.5);
        assert_eq!(band_lambda(SurrogateKind::Rg23, 3).unwrap(), 0.75);
        assert!(band_lambda(SurrogateKind::Ours, 3).is_err());
        assert_abs_diff_eq!(inconsistency_floor(0.1, 5.0 / 3.0, true, true).unwrap(), 0.277_777_8, epsilon = 1e-7);
        assert_eq!(inconsistency_floor(0.1, 2.0, false, false).unwrap(), 0.0);
    }

    #[test]
    fn glk_epsilon_star_side_two() {
        let e = epsilon_star(SurrogateKind::Glk23, Side::Two, 3, 0.1, 1.0).unwrap();
        let expect = (3.0f64 / 3.2).ln() + (1.2 / 2.0) * (3.6f64 / 3.2).ln();
        assert_abs_diff_eq!(e, expect, epsilon = 1e-15);
        assert!(epsilon_star(SurrogateKind::Rg23, Side::One, 3, 0.05, 1.0).unwrap() > 0.0);
        assert!(epsilon_star(SurrogateKind::Glk23, Side::One, 3, 0.25, 1.0).is_err());
    }
}
