//! Second-order gradient boosting with one regression tree per class per
//! round. Trees fit per-sample gradients and diagonal Hessian bounds of the
//! critic objective; splits are exact and greedy.

use serde::{Deserialize, Serialize};

use super::linear::CriticSide;
use crate::discrepancy::SurrogateKind;
use crate::error::{Error, Result};
use crate::losses::{self, score_to_class, LossKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { rounds: 20, max_depth: 3, shrinkage: 0.3, lambda: 1.0, alpha: 1.0 }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.max_depth) {
            return Err(Error::invalid(format!("max depth must lie in [1, 6], got {}", self.max_depth)));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::invalid("shrinkage must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub node: usize,
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub node: usize,
    pub value: f64,
}

/// Axis-aligned regression tree. Node 0 is the root; rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub splits: Vec<Split>,
    pub leaves: Vec<Leaf>,
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            if let Some(s) = self.splits.iter().find(|s| s.node == node) {
                node = if x[s.feature] <= s.threshold { s.left } else { s.right };
            } else {
                return self.leaves.iter().find(|l| l.node == node).map_or(0.0, |l| l.value);
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, node: usize) -> usize {
            match t.splits.iter().find(|s| s.node == node) {
                Some(s) => 1 + walk(t, s.left).max(walk(t, s.right)),
                None => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    pub class: usize,
    pub tree: Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub trees: Vec<ClassTree>,
}

/// Additive per-class tree ensemble producing `K` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedCritic {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub rounds: Vec<Round>,
    pub shrinkage: f64,
    #[serde(rename = "maxDepth")]
    pub max_depth: usize,
}

impl BoostedCritic {
    pub fn empty(k: usize, shrinkage: f64, max_depth: usize) -> Self {
        BoostedCritic { kind: "boosted".into(), k, rounds: Vec::new(), shrinkage, max_depth }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.k];
        for round in &self.rounds {
            for ct in &round.trees {
                s[ct.class] += self.shrinkage * ct.tree.eval(x);
            }
        }
        s
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        score_to_class(&self.logits(x))
    }
}

struct Sample<'a> {
    x: &'a [f64],
    label: usize,
    loss: LossKind,
    weight: f64,
}

struct Builder<'a> {
    samples: &'a [Sample<'a>],
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    max_depth: usize,
    d: usize,
    tree: Tree,
    next_node: usize,
}

impl Builder<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            -g / (h + self.lambda)
        }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    fn build(&mut self, node: usize, idx: Vec<usize>, depth: usize) {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        if h == 0.0 || depth >= self.max_depth || idx.len() < 2 {
            let value = self.leaf_value(g, h);
            self.tree.leaves.push(Leaf { node, value });
            return;
        }
        let parent = self.score(g, h);
        // (gain, feature, threshold, left count) of the best split so far.
        let mut best: Option<(f64, usize, f64, usize)> = None;
        let mut order = idx.clone();
        for f in 0..self.d {
            order.sort_by(|&a, &b| self.samples[a].x[f].total_cmp(&self.samples[b].x[f]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                gl += self.grad[i];
                hl += self.hess[i];
                let (xa, xb) = (self.samples[i].x[f], self.samples[order[pos + 1]].x[f]);
                if xa == xb {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(g - gl, h - hl) - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (xa + xb), pos + 1));
                }
            }
        }
        let Some((_, feature, threshold, _)) = best else {
            let value = self.leaf_value(g, h);
            self.tree.leaves.push(Leaf { node, value });
            return;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.samples[i].x[feature] <= threshold);
        let left = self.next_node;
        let right = self.next_node + 1;
        self.next_node += 2;
        self.tree.splits.push(Split { node, feature, threshold, left, right });
        self.build(left, left_idx, depth + 1);
        self.build(right, right_idx, depth + 1);
    }
}

/// Boosts a critic that agrees with `source` reference labels and disagrees
/// with `target` reference labels, the latter weighted by `alpha`.
pub fn train_boosted_critic(
    source: CriticSide<'_>,
    target: CriticSide<'_>,
    k: usize,
    kind: SurrogateKind,
    cfg: &BoostConfig,
) -> Result<BoostedCritic> {
    cfg.validate()?;
    if kind == SurrogateKind::Rg23 {
        return Err(Error::invalid("the boosted critic supports GLK23 and OURS"));
    }
    if source.data.d() != target.data.d() {
        return Err(Error::LengthMismatch { expected: source.data.d(), got: target.data.d() });
    }
    if source.ref_labels.iter().chain(target.ref_labels).any(|&y| y >= k) || k < 2 {
        return Err(Error::invalid(format!("reference labels must lie in [0, {k})")));
    }
    let d = source.data.d();
    let samples: Vec<Sample<'_>> = source
        .data
        .rows()
        .zip(source.ref_labels)
        .map(|(x, &label)| Sample { x, label, loss: LossKind::Ce, weight: 1.0 })
        .chain(
            target
                .data
                .rows()
                .zip(target.ref_labels)
                .map(|(x, &label)| Sample { x, label, loss: kind.dis_loss(), weight: cfg.alpha }),
        )
        .collect();
    let n = samples.len();
    let mut critic = BoostedCritic::empty(k, cfg.shrinkage, cfg.max_depth);
    let mut logits = vec![vec![0.0; k]; n];
    let mut g = vec![0.0; k];
    let mut h = vec![0.0; k];
    for _ in 0..cfg.rounds {
        let mut grads = vec![vec![0.0; n]; k];
        let mut hess = vec![vec![0.0; n]; k];
        for (i, s) in samples.iter().enumerate() {
            losses::grad_into(s.loss, s.label, &logits[i], &mut g);
            losses::hessian_bound_into(s.loss, s.label, &logits[i], &mut h);
            for c in 0..k {
                grads[c][i] = s.weight * g[c];
                hess[c][i] = s.weight * h[c];
            }
        }
        let mut round = Round { trees: Vec::with_capacity(k) };
        for c in 0..k {
            let mut b = Builder {
                samples: &samples,
                grad: &grads[c],
                hess: &hess[c],
                lambda: cfg.lambda,
                max_depth: cfg.max_depth,
                d,
                tree: Tree { splits: Vec::new(), leaves: Vec::new() },
                next_node: 1,
            };
            b.build(0, (0..n).collect(), 0);
            round.trees.push(ClassTree { class: c, tree: b.tree });
        }
        for (i, s) in samples.iter().enumerate() {
            for ct in &round.trees {
                logits[i][ct.class] += cfg.shrinkage * ct.tree.eval(s.x);
            }
        }
        critic.rounds.push(round);
    }
    Ok(critic)
}
