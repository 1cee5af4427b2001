//! Trainable critics: multi-start linear critics, the reference classifier
//! they are measured against, and a boosted tree critic.

mod boost;
mod linear;

pub use boost::{train_boosted_critic, BoostConfig, BoostedCritic, ClassTree, Leaf, Round, Split, Tree};
pub use linear::{
    empirical_dd, reference_logit_features, refresh_critic, surrogate_objective, train_critic, train_reference,
    CriticSide, EpochStat, FeatureMap, LinearCritic, TrainConfig, TrainTrace,
};
