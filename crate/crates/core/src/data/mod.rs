//! Datasets, synthetic generators, persistence and seeded randomness.

mod gen;
mod io;
pub mod rng;

pub use gen::{
    gen_discrete_instance, gen_gaussian_shift, BandRecipe, DiscreteInstanceSpec, GaussianShiftSpec, GeneratedInstance,
};
pub use io::{fmt_f64, load_csv, load_json, save_csv, save_json, CsvSchema};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Source,
    Target,
}

/// Row-major feature matrix with optional class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    d: usize,
    labels: Option<Vec<usize>>,
    pub origin: Origin,
    ids: Vec<u64>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, d: usize, labels: Option<Vec<usize>>, origin: Origin) -> Result<Self> {
        let n = if d == 0 { 0 } else { features.len() / d };
        let ids = (0..n as u64).collect();
        Self::with_ids(features, d, labels, origin, ids)
    }

    pub fn with_ids(
        features: Vec<f64>,
        d: usize,
        labels: Option<Vec<usize>>,
        origin: Origin,
        ids: Vec<u64>,
    ) -> Result<Self> {
        if d == 0 || features.is_empty() {
            return Err(Error::EmptyData("dataset needs at least one row and one column"));
        }
        if features.len() % d != 0 {
            return Err(Error::invalid(format!("{} values do not fill rows of width {d}", features.len())));
        }
        let n = features.len() / d;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: l.len() });
            }
        }
        if ids.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: ids.len() });
        }
        Ok(Dataset { features, d, labels, origin, ids })
    }

    pub fn n(&self) -> usize {
        self.features.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an error naming `what` needed them.
    pub fn require_labels(&self, what: &'static str) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(Error::EmptyData(what))
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            d: self.d,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            origin: self.origin,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Seeded split into a head of `round(frac * n)` rows and the rest.
    pub fn split(&self, frac: f64, rng: &mut impl rand::Rng) -> (Dataset, Dataset) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.shuffle(rng);
        let cut = ((frac * self.n() as f64).round() as usize).clamp(0, self.n());
        let (a, b) = idx.split_at(cut);
        (self.subset(a), self.subset(b))
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.iter().copied().max())
    }
}
