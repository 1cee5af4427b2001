use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{rng, Dataset, Origin};
use crate::discrepancy::{FiniteShiftInstance, InstancePoint};
use crate::error::{Error, Result};

/// Class-conditional Gaussians whose target means are translated copies of
/// the source means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianShiftSpec {
    pub k: usize,
    pub d: usize,
    pub source_means: Vec<Vec<f64>>,
    pub target_means: Vec<Vec<f64>>,
    /// Standard deviation of every coordinate.
    pub sigma: f64,
    pub n_source: usize,
    pub n_target: usize,
    /// Probability of replacing a label with a uniformly drawn other class.
    pub label_noise: f64,
}

impl GaussianShiftSpec {
    /// Class `c` centred at `separation * (+/- e_{c mod d})`, target means moved
    /// by `shift` along the all-ones diagonal (unit length).
    pub fn translated(k: usize, d: usize, separation: f64, shift: f64, n_source: usize, n_target: usize) -> Self {
        let source_means: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let mut m = vec![0.0; d];
                if d > 0 {
                    let sign = if (c / d).is_multiple_of(2) { 1.0 } else { -1.0 };
                    m[c % d] = sign * separation;
                }
                m
            })
            .collect();
        let step = if d > 0 { shift / (d as f64).sqrt() } else { 0.0 };
        let target_means = source_means.iter().map(|m| m.iter().map(|v| v + step).collect()).collect();
        GaussianShiftSpec { k, d, source_means, target_means, sigma: 1.0, n_source, n_target, label_noise: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.d == 0 {
            return Err(Error::invalid("gaussian spec needs K >= 2 and d >= 1"));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::invalid("gaussian spec needs positive sample sizes"));
        }
        for means in [&self.source_means, &self.target_means] {
            if means.len() != self.k {
                return Err(Error::LengthMismatch { expected: self.k, got: means.len() });
            }
            for m in means.iter() {
                if m.len() != self.d {
                    return Err(Error::LengthMismatch { expected: self.d, got: m.len() });
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("class means must be finite"));
                }
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::invalid("label noise must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

fn sample(spec: &GaussianShiftSpec, means: &[Vec<f64>], n: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<usize>) {
    let mut x = Vec::with_capacity(n * spec.d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..spec.k);
        for &m in &means[c] {
            let z: f64 = rng.sample(StandardNormal);
            x.push(m + spec.sigma * z);
        }
        let label = if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            let other = rng.random_range(0..spec.k - 1);
            if other >= c {
                other + 1
            } else {
                other
            }
        } else {
            c
        };
        y.push(label);
    }
    (x, y)
}

/// Draws labelled source and target samples, min-max scaled per column to
/// `[0, 1]` over the pooled data.
pub fn gen_gaussian_shift(spec: &GaussianShiftSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut r_s = rng::stream(seed, "data", "gaussian-source", 0);
    let mut r_t = rng::stream(seed, "data", "gaussian-target", 0);
    let (mut xs, ys) = sample(spec, &spec.source_means, spec.n_source, &mut r_s);
    let (mut xt, yt) = sample(spec, &spec.target_means, spec.n_target, &mut r_t);
    let d = spec.d;
    for j in 0..d {
        let col = xs.iter().skip(j).step_by(d).chain(xt.iter().skip(j).step_by(d));
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for v in xs.iter_mut().skip(j).step_by(d).chain(xt.iter_mut().skip(j).step_by(d)) {
            *v = ((*v - lo) / span).clamp(0.0, 1.0);
        }
    }
    Ok((
        Dataset::new(xs, d, Some(ys), Origin::Source)?,
        Dataset::new(xt, d, Some(yt), Origin::Target)?,
    ))
}

/// Band points at prescribed density ratios `pS / (alpha pT)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecipe {
    pub lambda: f64,
    pub delta: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteInstanceSpec {
    Points { k: usize, alpha: f64, points: Vec<InstancePoint> },
    Band { k: usize, alpha: f64, recipe: BandRecipe },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub instance: FiniteShiftInstance,
    /// Whether each point's density ratio lies in `[lambda + delta, 1 - delta]`.
    pub in_band: Vec<bool>,
}

/// Builds a finite instance.
///
/// For a band recipe every ratio gets one point with equal target mass and
/// reference labels that agree; leftover one-sided mass goes to filler points,
/// which are never in the band.
pub fn gen_discrete_instance(spec: &DiscreteInstanceSpec) -> Result<GeneratedInstance> {
    match spec {
        DiscreteInstanceSpec::Points { k, alpha, points } => {
            let instance = FiniteShiftInstance::new(*k, *alpha, points.clone())?;
            let in_band = vec![false; instance.len()];
            Ok(GeneratedInstance { instance, in_band })
        }
        DiscreteInstanceSpec::Band { k, alpha, recipe } => {
            let BandRecipe { lambda, delta, ratios } = recipe;
            let (lo, hi) = (lambda + delta, 1.0 - delta);
            if !(*lambda > 0.0 && *lambda < 1.0 && *delta > 0.0) || lo > hi {
                return Err(Error::invalid(format!("band [{lo}, {hi}] is empty")));
            }
            if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
                return Err(Error::invalid("band ratios must be positive and non-empty"));
            }
            let m = ratios.len() as f64;
            let total_r: f64 = ratios.iter().sum();
            let mass = (1.0 / m).min(1.0 / (alpha * total_r));
            let mut points: Vec<InstancePoint> = ratios
                .iter()
                .enumerate()
                .map(|(i, &r)| InstancePoint { p_s: r * alpha * mass, p_t: mass, y1: i % k, y2: i % k })
                .collect();
            let mut in_band: Vec<bool> = ratios.iter().map(|&r| r >= lo - 1e-12 && r <= hi + 1e-12).collect();
            let left_s = 1.0 - points.iter().map(|p| p.p_s).sum::<f64>();
            let left_t = 1.0 - points.iter().map(|p| p.p_t).sum::<f64>();
            if left_s > 1e-12 {
                points.push(InstancePoint { p_s: left_s, p_t: 0.0, y1: 0, y2: 0 });
                in_band.push(false);
            }
            if left_t > 1e-12 {
                points.push(InstancePoint { p_s: 0.0, p_t: left_t, y1: 0, y2: 0 });
                in_band.push(false);
            }
            let instance = FiniteShiftInstance::new(*k, *alpha, points)?;
            Ok(GeneratedInstance { instance, in_band })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_band_point_has_unit_masses() {
        let spec = DiscreteInstanceSpec::Band {
            k: 3,
            alpha: 5.0 / 3.0,
            recipe: BandRecipe { lambda: 0.5, delta: 0.1, ratios: vec![0.6] },
        };
        let g = gen_discrete_instance(&spec).unwrap();
        assert_eq!(g.instance.len(), 1);
        let p = g.instance.points()[0];
        assert!((p.p_s - 1.0).abs() < 1e-12 && p.p_t == 1.0);
        assert_eq!(g.in_band, vec![true]);
    }

    #[test]
    fn empty_band_is_rejected() {
        let spec = DiscreteInstanceSpec::Band {
            k: 3,
            alpha: 1.0,
            recipe: BandRecipe { lambda: 0.5, delta: 0.3, ratios: vec![0.6] },
        };
        assert!(gen_discrete_instance(&spec).is_err());
    }

    #[test]
    fn mixed_band_flags() {
        let spec = DiscreteInstanceSpec::Band {
            k: 4,
            alpha: 1.0,
            recipe: BandRecipe { lambda: 1.0 / 3.0, delta: 0.05, ratios: vec![0.5, 0.2, 0.9, 1.5] },
        };
        let g = gen_discrete_instance(&spec).unwrap();
        assert_eq!(&g.in_band[..4], &[true, false, true, false]);
        for (p, &b) in g.instance.points().iter().zip(&g.in_band) {
            if b {
                let r = p.p_s / (g.instance.alpha() * p.p_t);
                assert!((0.38..=0.95).contains(&r));
            }
        }
    }

    #[test]
    fn gaussian_is_deterministic_and_scaled() {
        let spec = GaussianShiftSpec::translated(3, 2, 3.0, 1.0, 50, 40);
        let (s1, t1) = gen_gaussian_shift(&spec, 11).unwrap();
        let (s2, t2) = gen_gaussian_shift(&spec, 11).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert!(s1.features().iter().chain(t1.features()).all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((s1.n(), t1.n()), (50, 40));
    }
}
