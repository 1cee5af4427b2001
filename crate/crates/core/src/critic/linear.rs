//! Linear critics and the reference classifier, trained with AdamW.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{rng, Dataset};
use crate::discrepancy::SurrogateKind;
use crate::error::{Error, Result};
use crate::losses::{self, score_to_class, LossKind};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureMap {
    RawInput,
    /// Inputs are the logits of a fixed reference model.
    ReferenceLogits,
}

#[derive(Serialize, Deserialize)]
struct LinearJson {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    #[serde(rename = "featureMap")]
    feature_map: FeatureMap,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// Affine map from features to `K` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearJson", into = "LinearJson")]
pub struct LinearCritic {
    k: usize,
    d: usize,
    pub feature_map: FeatureMap,
    /// Row-major `K x d`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<LinearJson> for LinearCritic {
    type Error = Error;

    fn try_from(j: LinearJson) -> Result<Self> {
        if j.kind != "linear" {
            return Err(Error::invalid(format!("expected a linear critic, got {:?}", j.kind)));
        }
        if j.w.len() != j.k || j.w.iter().any(|r| r.len() != j.d) {
            return Err(Error::invalid("weight matrix does not match K x d"));
        }
        LinearCritic::from_parts(j.k, j.d, j.feature_map, j.w.concat(), j.b)
    }
}

impl From<LinearCritic> for LinearJson {
    fn from(c: LinearCritic) -> Self {
        LinearJson {
            kind: "linear".into(),
            k: c.k,
            d: c.d,
            feature_map: c.feature_map,
            w: c.w.chunks(c.d).map(<[f64]>::to_vec).collect(),
            b: c.b,
        }
    }
}

impl LinearCritic {
    pub fn zeros(k: usize, d: usize, feature_map: FeatureMap) -> Self {
        LinearCritic { k, d, feature_map, w: vec![0.0; k * d], b: vec![0.0; k] }
    }

    pub fn from_parts(k: usize, d: usize, feature_map: FeatureMap, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if k < 2 || d == 0 {
            return Err(Error::invalid("linear critic needs K >= 2 and d >= 1"));
        }
        if w.len() != k * d {
            return Err(Error::LengthMismatch { expected: k * d, got: w.len() });
        }
        if b.len() != k {
            return Err(Error::LengthMismatch { expected: k, got: b.len() });
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear critic parameters must be finite"));
        }
        Ok(LinearCritic { k, d, feature_map, w, b })
    }

    /// Uniform on `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn random(k: usize, d: usize, feature_map: FeatureMap, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (d as f64).sqrt();
        let w = (0..k * d).map(|_| rng.random_range(-a..=a)).collect();
        let b = (0..k).map(|_| rng.random_range(-a..=a)).collect();
        LinearCritic { k, d, feature_map, w, b }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w[c * self.d..(c + 1) * self.d];
            *o = self.b[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.logits_into(x, &mut out);
        out
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        score_to_class(&self.logits(x))
    }

    /// Prediction on a raw input, passing it through `reference` first when
    /// the critic reads reference logits.
    pub fn predict_input(&self, reference: &LinearCritic, x: &[f64]) -> usize {
        match self.feature_map {
            FeatureMap::RawInput => self.predict(x),
            FeatureMap::ReferenceLogits => self.predict(&reference.logits(x)),
        }
    }

    pub fn predict_all(&self, data: &Dataset) -> Vec<usize> {
        data.rows().map(|x| self.predict(x)).collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        crate::numeric::softmax(&self.logits(x))
    }

    /// Jacobian-vector product `W^T v` for a logit-space vector `v`.
    pub fn input_gradient(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (c, &vc) in v.iter().enumerate() {
            let row = &self.w[c * self.d..(c + 1) * self.d];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += vc * wv;
            }
        }
    }

    fn check_input(&self, data: &Dataset) -> Result<()> {
        if data.d() != self.d {
            return Err(Error::LengthMismatch { expected: self.d, got: data.d() });
        }
        Ok(())
    }
}

/// Replaces each row by the reference model's logits.
pub fn reference_logit_features(reference: &LinearCritic, data: &Dataset) -> Result<Dataset> {
    reference.check_input(data)?;
    let mut features = Vec::with_capacity(data.n() * reference.k);
    for x in data.rows() {
        features.extend(reference.logits(x));
    }
    Dataset::with_ids(features, reference.k, data.labels().map(<[usize]>::to_vec), data.origin, data.ids().to_vec())
}

/// Optimiser settings shared by the critic and reference trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub restarts: usize,
    /// Mini-batch size; `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 3e-3,
            weight_decay: 5e-4,
            restarts: 30,
            batch_size: None,
            seed: 0,
            alpha: 1.0,
        }
    }
}

impl TrainConfig {
    /// Defaults for fitting the reference classifier.
    pub fn reference() -> Self {
        TrainConfig { epochs: 300, learning_rate: 5e-2, restarts: 1, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam state over a flat parameter vector.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    wd: f64,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64, wd: f64) -> Self {
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, wd }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] *= 1.0 - self.lr * self.wd;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// One weighted term of a linear-model objective.
struct Term<'a> {
    data: &'a Dataset,
    labels: &'a [usize],
    loss: LossKind,
    weight: f64,
}

impl Term<'_> {
    fn mean_weight(&self, count: usize) -> f64 {
        self.weight / count as f64
    }
}

/// Objective value and gradient over `rows` of each term, written into `grad`
/// laid out as `[W | b]`. Also returns, per term, how many rows the model
/// labels differently from the term's labels.
fn objective_grad(
    model: &LinearCritic,
    terms: &[Term<'_>],
    rows: &[Vec<usize>],
    grad: &mut [f64],
) -> (f64, Vec<usize>) {
    grad.fill(0.0);
    let (k, d) = (model.k, model.d);
    let mut s = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut parts = Vec::new();
    let mut mismatches = vec![0; terms.len()];
    for ((term, idx), miss) in terms.iter().zip(rows).zip(mismatches.iter_mut()) {
        if idx.is_empty() {
            continue;
        }
        let scale = term.mean_weight(idx.len());
        for &i in idx {
            let x = term.data.row(i);
            let y = term.labels[i];
            model.logits_into(x, &mut s);
            if score_to_class(&s) != y {
                *miss += 1;
            }
            parts.push(scale * losses::eval(term.loss, y, &s));
            losses::grad_into(term.loss, y, &s, &mut g);
            for c in 0..k {
                let gc = scale * g[c];
                let row = &mut grad[c * d..(c + 1) * d];
                for (gr, &xv) in row.iter_mut().zip(x) {
                    *gr += gc * xv;
                }
                grad[k * d + c] += gc;
            }
        }
    }
    (compensated_sum(parts), mismatches)
}

fn full_rows(terms: &[Term<'_>]) -> Vec<Vec<usize>> {
    terms.iter().map(|t| (0..t.data.n()).collect()).collect()
}

/// Objective value over every row, with per-term mismatch counts.
fn objective_counts(model: &LinearCritic, terms: &[Term<'_>]) -> (f64, Vec<usize>) {
    let mut s = vec![0.0; model.k];
    let mut mismatches = vec![0; terms.len()];
    let mut vals = Vec::new();
    for (t, miss) in terms.iter().zip(mismatches.iter_mut()) {
        let scale = t.mean_weight(t.data.n());
        for (i, x) in t.data.rows().enumerate() {
            model.logits_into(x, &mut s);
            if score_to_class(&s) != t.labels[i] {
                *miss += 1;
            }
            vals.push(scale * losses::eval(t.loss, t.labels[i], &s));
        }
    }
    (compensated_sum(vals), mismatches)
}

fn objective(model: &LinearCritic, terms: &[Term<'_>]) -> f64 {
    objective_counts(model, terms).0
}

/// `alpha * target mismatch rate - source mismatch rate` from the counts of a
/// two-term objective.
fn dd_from_counts(terms: &[Term<'_>], counts: &[usize], alpha: f64) -> f64 {
    let rate = |i: usize| if terms[i].data.n() == 0 { 0.0 } else { counts[i] as f64 / terms[i].data.n() as f64 };
    alpha * rate(1) - rate(0)
}

/// Per-epoch training record. Full-batch runs record the state at the start of
/// the epoch. Mini-batch runs record the mean batch objective and the
/// mismatches seen while passing over the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub objective: f64,
    pub dd_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Index of the selected restart.
    pub selected: usize,
    /// Training-split discrepancy of every restart, `None` when it diverged.
    pub restart_dd: Vec<Option<f64>>,
    pub epochs: Vec<EpochStat>,
}

fn params_of(model: &LinearCritic) -> Vec<f64> {
    let mut p = model.w.clone();
    p.extend_from_slice(&model.b);
    p
}

fn set_params(model: &mut LinearCritic, p: &[f64]) {
    let kd = model.k * model.d;
    model.w.copy_from_slice(&p[..kd]);
    model.b.copy_from_slice(&p[kd..]);
}

/// Runs AdamW on `terms` from `model`. Returns per-epoch stats, or `None` if
/// the objective stopped being finite.
fn optimise(
    model: &mut LinearCritic,
    terms: &[Term<'_>],
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut impl Rng,
    mut record: impl FnMut(usize, f64, &[usize]) -> Option<EpochStat>,
) -> Option<Vec<EpochStat>> {
    use rand::seq::SliceRandom;
    let mut params = params_of(model);
    let mut grad = vec![0.0; params.len()];
    let mut opt = AdamW::new(params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut stats = Vec::new();
    let full = full_rows(terms);
    for epoch in 0..epochs {
        match cfg.batch_size {
            None => {
                let (v, counts) = objective_grad(model, terms, &full, &mut grad);
                if !v.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return None;
                }
                if let Some(s) = record(epoch, v, &counts) {
                    stats.push(s);
                }
                opt.step(&mut params, &grad);
                set_params(model, &params);
            }
            Some(bs) => {
                let mut orders: Vec<Vec<usize>> = full.clone();
                for o in orders.iter_mut() {
                    o.shuffle(rng);
                }
                let longest = orders.iter().map(Vec::len).max().unwrap_or(0);
                let batches = longest.div_ceil(bs).max(1);
                let mut running = Vec::with_capacity(batches);
                let mut counts = vec![0; terms.len()];
                for bi in 0..batches {
                    let rows: Vec<Vec<usize>> = orders
                        .iter()
                        .map(|o| {
                            // Every term is cut into the same number of batches.
                            if o.is_empty() {
                                return Vec::new();
                            }
                            let per = o.len().div_ceil(batches);
                            (bi * per..((bi + 1) * per).min(o.len())).map(|j| o[j]).collect()
                        })
                        .collect();
                    let (v, miss) = objective_grad(model, terms, &rows, &mut grad);
                    if !v.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                        return None;
                    }
                    running.push(v);
                    counts.iter_mut().zip(miss).for_each(|(a, b)| *a += b);
                    opt.step(&mut params, &grad);
                    set_params(model, &params);
                }
                let value = compensated_sum(running) / batches as f64;
                if let Some(s) = record(epoch, value, &counts) {
                    stats.push(s);
                }
            }
        }
    }
    if model.w.iter().chain(&model.b).any(|v| !v.is_finite()) {
        return None;
    }
    Some(stats)
}

/// Fits a multinomial linear classifier to labelled data by minimising
/// cross-entropy. Uses the first restart stream only.
pub fn train_reference(data: &Dataset, k: usize, cfg: &TrainConfig) -> Result<LinearCritic> {
    cfg.validate()?;
    let labels = data.require_labels("reference training needs labels")?;
    if labels.iter().any(|&y| y >= k) {
        return Err(Error::invalid(format!("labels must lie in [0, {k})")));
    }
    let mut r = rng::stream(cfg.seed, "critic", "reference", 0);
    let mut model = LinearCritic::random(k, data.d(), FeatureMap::RawInput, &mut r);
    let terms = [Term { data, labels, loss: LossKind::Ce, weight: 1.0 }];
    optimise(&mut model, &terms, cfg, cfg.epochs, &mut r, |_, _, _| None)
        .ok_or(Error::AllRestartsFailed(1))?;
    Ok(model)
}

/// Labelled view of one side of the discrepancy objective: features plus the
/// reference labels the critic should agree with (source) or avoid (target).
#[derive(Debug, Clone, Copy)]
pub struct CriticSide<'a> {
    pub data: &'a Dataset,
    pub ref_labels: &'a [usize],
}

impl<'a> CriticSide<'a> {
    pub fn new(data: &'a Dataset, ref_labels: &'a [usize]) -> Result<Self> {
        if data.n() != ref_labels.len() {
            return Err(Error::LengthMismatch { expected: data.n(), got: ref_labels.len() });
        }
        Ok(CriticSide { data, ref_labels })
    }
}

/// `alpha * disagreement rate on target - disagreement rate on source`.
pub fn empirical_dd(
    predict: impl Fn(&[f64]) -> usize,
    source: CriticSide<'_>,
    target: CriticSide<'_>,
    alpha: f64,
) -> f64 {
    let rate = |side: CriticSide<'_>| {
        if side.data.n() == 0 {
            return 0.0;
        }
        let wrong = side.data.rows().zip(side.ref_labels).filter(|(x, &y)| predict(x) != y).count();
        wrong as f64 / side.data.n() as f64
    };
    alpha * rate(target) - rate(source)
}

fn check_sides(source: &CriticSide<'_>, target: &CriticSide<'_>) -> Result<usize> {
    if source.data.d() != target.data.d() {
        return Err(Error::LengthMismatch { expected: source.data.d(), got: target.data.d() });
    }
    if source.data.n() == 0 || target.data.n() == 0 {
        return Err(Error::EmptyData("critic training needs source and target rows"));
    }
    Ok(source.data.d())
}

fn infer_k(source: &CriticSide<'_>, target: &CriticSide<'_>, k: usize) -> Result<()> {
    if source.ref_labels.iter().chain(target.ref_labels).any(|&y| y >= k) {
        return Err(Error::invalid(format!("reference labels must lie in [0, {k})")));
    }
    Ok(())
}

/// Trains `restarts` critics in parallel and keeps the one with the highest
/// training discrepancy (lowest index on ties).
pub fn train_critic(
    source: CriticSide<'_>,
    target: CriticSide<'_>,
    k: usize,
    kind: SurrogateKind,
    feature_map: FeatureMap,
    cfg: &TrainConfig,
) -> Result<(LinearCritic, TrainTrace)> {
    cfg.validate()?;
    let d = check_sides(&source, &target)?;
    infer_k(&source, &target, k)?;
    let terms = [
        Term { data: source.data, labels: source.ref_labels, loss: LossKind::Ce, weight: 1.0 },
        Term { data: target.data, labels: target.ref_labels, loss: kind.dis_loss(), weight: cfg.alpha },
    ];
    let runs: Vec<Option<(LinearCritic, f64, Vec<EpochStat>)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|idx| {
            let mut r = rng::stream(cfg.seed, "critic", "restart", idx as u64);
            let mut model = LinearCritic::random(k, d, feature_map, &mut r);
            let stats = optimise(&mut model, &terms, cfg, cfg.epochs, &mut r, |epoch, value, counts| {
                Some(EpochStat { epoch, objective: value, dd_true: dd_from_counts(&terms, counts, cfg.alpha) })
            })?;
            let dd = empirical_dd(|x| model.predict(x), source, target, cfg.alpha);
            Some((model, dd, stats))
        })
        .collect();
    let restart_dd: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|x| x.1)).collect();
    let mut best: Option<usize> = None;
    for (i, dd) in restart_dd.iter().enumerate() {
        if let Some(v) = dd {
            if best.is_none_or(|b| *v > restart_dd[b].unwrap_or(f64::NEG_INFINITY)) {
                best = Some(i);
            }
        }
    }
    let selected = best.ok_or(Error::AllRestartsFailed(cfg.restarts))?;
    let (model, _, epochs) = runs.into_iter().nth(selected).flatten().expect("selected restart exists");
    Ok((model, TrainTrace { selected, restart_dd, epochs }))
}

/// Continues training `critic` for `epochs` epochs with fresh optimiser state.
pub fn refresh_critic(
    critic: &mut LinearCritic,
    source: CriticSide<'_>,
    target: CriticSide<'_>,
    kind: SurrogateKind,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<()> {
    check_sides(&source, &target)?;
    critic.check_input(source.data)?;
    let terms = [
        Term { data: source.data, labels: source.ref_labels, loss: LossKind::Ce, weight: 1.0 },
        Term { data: target.data, labels: target.ref_labels, loss: kind.dis_loss(), weight: cfg.alpha },
    ];
    let mut r = rng::stream(cfg.seed, "critic", "refresh", 0);
    let mut work = critic.clone();
    if optimise(&mut work, &terms, cfg, epochs, &mut r, |_, _, _| None).is_some() {
        *critic = work;
    }
    Ok(())
}

/// Value of the surrogate objective for `critic` on the given sides.
pub fn surrogate_objective(
    critic: &LinearCritic,
    source: CriticSide<'_>,
    target: CriticSide<'_>,
    kind: SurrogateKind,
    alpha: f64,
) -> f64 {
    let terms = [
        Term { data: source.data, labels: source.ref_labels, loss: LossKind::Ce, weight: 1.0 },
        Term { data: target.data, labels: target.ref_labels, loss: kind.dis_loss(), weight: alpha },
    ];
    objective(critic, &terms)
}
