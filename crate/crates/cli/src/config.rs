//! Flat per-command configuration documents.
//!
//! Every command reads a single JSON object whose keys are listed on the
//! matching struct. Missing keys take the documented defaults and unknown keys
//! are rejected.

use std::path::Path;

use disdis::attack::AttackConfig;
use disdis::bound::CalibrationScenario;
use disdis::critic::{BoostConfig, FeatureMap, TrainConfig};
use disdis::data::{BandRecipe, DiscreteInstanceSpec, GaussianShiftSpec};
use disdis::detect::{DetectionConfig, DetectionScenario};
use disdis::SurrogateKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn translated(
    k: usize,
    d: usize,
    separation: f64,
    shift: f64,
    sigma: f64,
    n_source: usize,
    n_target: usize,
    label_noise: f64,
) -> GaussianShiftSpec {
    GaussianShiftSpec { sigma, label_noise, ..GaussianShiftSpec::translated(k, d, separation, shift, n_source, n_target) }
}

/// `gen`: a Gaussian source/target pair, and optionally a band instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    pub separation: f64,
    pub shift: f64,
    pub sigma: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub label_noise: f64,
    /// When non-empty, also writes a finite band instance with these ratios.
    pub band_ratios: Vec<f64>,
    pub band_lambda: f64,
    pub band_delta: f64,
    pub band_alpha: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            k: 3,
            d: 2,
            separation: 2.0,
            shift: 1.0,
            sigma: 1.0,
            n_source: 1000,
            n_target: 1000,
            label_noise: 0.0,
            band_ratios: Vec::new(),
            band_lambda: 0.5,
            band_delta: 0.1,
            band_alpha: 1.0,
        }
    }
}

impl GenConfig {
    pub fn gaussian(&self) -> GaussianShiftSpec {
        translated(self.k, self.d, self.separation, self.shift, self.sigma, self.n_source, self.n_target, self.label_noise)
    }

    pub fn band(&self) -> Option<DiscreteInstanceSpec> {
        (!self.band_ratios.is_empty()).then(|| DiscreteInstanceSpec::Band {
            k: self.k,
            alpha: self.band_alpha,
            recipe: BandRecipe { lambda: self.band_lambda, delta: self.band_delta, ratios: self.band_ratios.clone() },
        })
    }
}

/// `consistency`: band scans and gap functionals at single points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub seed: u64,
    pub kinds: Vec<SurrogateKind>,
    pub k_values: Vec<usize>,
    pub r_values: Vec<f64>,
    /// Target weight; `None` uses `1 / r`, which puts unit mass on both
    /// domains at the band point.
    pub alpha: Option<f64>,
    pub epsilons: Vec<f64>,
    pub grid_resolution: Option<usize>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            seed: 0,
            kinds: vec![SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours],
            k_values: vec![3],
            r_values: vec![0.6, 0.85],
            alpha: None,
            epsilons: vec![0.0, 1e-3, 2e-3, 5e-3, 1e-2],
            grid_resolution: None,
        }
    }
}

/// Shared by `train`, `bound` and `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    pub separation: f64,
    pub shift: f64,
    pub sigma: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub label_noise: f64,
    pub train_fraction: f64,
    pub reference_epochs: usize,
    pub reference_learning_rate: f64,
    pub kinds: Vec<SurrogateKind>,
    pub feature_map: FeatureMap,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub restarts: usize,
    pub batch_size: Option<usize>,
    pub alpha: f64,
    pub deltas: Vec<f64>,
    /// Number of seeds for `calibrate`, starting at `seed`.
    pub seeds: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        let s = CalibrationScenario::default();
        BoundConfig {
            seed: 0,
            k: s.data.k,
            d: s.data.d,
            separation: 2.0,
            shift: 1.0,
            sigma: s.data.sigma,
            n_source: s.data.n_source,
            n_target: s.data.n_target,
            label_noise: 0.0,
            train_fraction: s.train_fraction,
            reference_epochs: s.reference.epochs,
            reference_learning_rate: s.reference.learning_rate,
            kinds: vec![SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours],
            feature_map: s.feature_map,
            epochs: s.critic.epochs,
            learning_rate: s.critic.learning_rate,
            weight_decay: s.critic.weight_decay,
            restarts: s.critic.restarts,
            batch_size: s.critic.batch_size,
            alpha: s.critic.alpha,
            deltas: vec![0.05],
            seeds: 20,
        }
    }
}

impl BoundConfig {
    pub fn scenario(&self) -> CalibrationScenario {
        CalibrationScenario {
            data: translated(
                self.k,
                self.d,
                self.separation,
                self.shift,
                self.sigma,
                self.n_source,
                self.n_target,
                self.label_noise,
            ),
            reference: TrainConfig {
                epochs: self.reference_epochs,
                learning_rate: self.reference_learning_rate,
                ..TrainConfig::reference()
            },
            critic: self.critic(self.seed),
            feature_map: self.feature_map,
            train_fraction: self.train_fraction,
        }
    }

    pub fn critic(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            restarts: self.restarts,
            batch_size: self.batch_size,
            seed,
            alpha: self.alpha,
        }
    }
}

/// `attack`: the bound-minimising perturbation and the held-out scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackRunConfig {
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    pub separation: f64,
    pub shift: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub train_fraction: f64,
    /// Kinds scored on the attacked data.
    pub kinds: Vec<SurrogateKind>,
    /// Surrogate of the critic the attack itself uses.
    pub attack_kind: SurrogateKind,
    pub feature_map: FeatureMap,
    pub epochs: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub batch_size: Option<usize>,
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub fractions: Vec<f64>,
    pub critic_refresh_epochs: usize,
    pub gumbel_temperature: f64,
    pub attack_batch_size: usize,
    pub delta: f64,
    /// Number of scenarios per fraction, seeded from `seed` upwards.
    pub scenarios: u64,
}

impl Default for AttackRunConfig {
    fn default() -> Self {
        let a = AttackConfig::default();
        let t = TrainConfig::default();
        AttackRunConfig {
            seed: 0,
            k: 3,
            d: 2,
            separation: 2.0,
            shift: 1.0,
            n_source: 1000,
            n_target: 1000,
            train_fraction: 0.5,
            kinds: vec![SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours],
            attack_kind: SurrogateKind::Ours,
            feature_map: FeatureMap::ReferenceLogits,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            restarts: t.restarts,
            batch_size: Some(64),
            epsilon: a.epsilon,
            step_size: a.step_size,
            steps: a.steps,
            fractions: vec![0.0, 0.25, 0.5],
            critic_refresh_epochs: a.critic_refresh_epochs,
            gumbel_temperature: a.gumbel_temperature,
            attack_batch_size: a.batch_size,
            delta: a.delta,
            scenarios: 5,
        }
    }
}

impl AttackRunConfig {
    pub fn data(&self) -> GaussianShiftSpec {
        GaussianShiftSpec::translated(self.k, self.d, self.separation, self.shift, self.n_source, self.n_target)
    }

    pub fn critic(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            restarts: self.restarts,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn attack(&self, fraction: f64, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            step_size: self.step_size,
            steps: self.steps,
            fraction,
            critic_refresh_epochs: self.critic_refresh_epochs,
            gumbel_temperature: self.gumbel_temperature,
            batch_size: self.attack_batch_size,
            delta: self.delta,
            feature_map: self.feature_map,
            seed,
        }
    }
}

/// `detect`: null calibration and ROC curves for boosted critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub seed: u64,
    pub k: usize,
    /// Feature dimension; `None` uses `k`.
    pub d: Option<usize>,
    pub separation: f64,
    pub shift: f64,
    pub n_source: usize,
    pub n_shifted: usize,
    pub n_reference: usize,
    pub n_critic_source: usize,
    pub kinds: Vec<SurrogateKind>,
    pub sample_sizes: Vec<usize>,
    pub null_runs: usize,
    pub repeats: usize,
    pub bootstrap: usize,
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub lambda: f64,
    pub target_weight: Option<f64>,
    pub level: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let s = DetectionScenario::default();
        let c = DetectionConfig::default();
        let b = BoostConfig::default();
        DetectConfig {
            seed: 0,
            k: s.data.k,
            d: None,
            separation: 2.0,
            shift: 2.0,
            n_source: s.data.n_source,
            n_shifted: s.data.n_target,
            n_reference: s.n_reference,
            n_critic_source: s.n_critic_source,
            kinds: vec![SurrogateKind::Glk23, SurrogateKind::Ours],
            sample_sizes: vec![10, 20, 50],
            null_runs: 200,
            repeats: 200,
            bootstrap: c.bootstrap,
            rounds: b.rounds,
            max_depth: b.max_depth,
            shrinkage: b.shrinkage,
            lambda: b.lambda,
            target_weight: c.target_weight,
            level: c.level,
        }
    }
}

impl DetectConfig {
    pub fn scenario(&self) -> DetectionScenario {
        DetectionScenario {
            data: GaussianShiftSpec::translated(
                self.k,
                self.d.unwrap_or(self.k),
                self.separation,
                self.shift,
                self.n_source,
                self.n_shifted,
            ),
            n_reference: self.n_reference,
            n_critic_source: self.n_critic_source,
            ..DetectionScenario::default()
        }
    }

    pub fn detection(&self, n_target: usize) -> DetectionConfig {
        DetectionConfig {
            n_target,
            null_runs: self.null_runs,
            bootstrap: self.bootstrap,
            boost: BoostConfig {
                rounds: self.rounds,
                max_depth: self.max_depth,
                shrinkage: self.shrinkage,
                lambda: self.lambda,
                ..BoostConfig::default()
            },
            target_weight: self.target_weight,
            level: self.level,
            seed: self.seed,
        }
    }
}

/// `selftest` takes no tunables beyond the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestConfig {
    pub seed: u64,
}
