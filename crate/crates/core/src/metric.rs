//! Hierarchy-weighted distance between label sets and the contrastive
//! pair weights derived from it.
//!
//! A coordinate that differs at level `l` costs `max_depth - l + 1`, so a
//! disagreement near the root weighs more than one near the leaves.

use serde::{Deserialize, Serialize};

use crate::taxonomy::{LabelVector, Taxonomy, TaxonomyError};

/// Which label-set distance drives the pair weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Level-weighted distance.
    #[default]
    Hierarchical,
    /// Plain Hamming distance (every coordinate weighs 1).
    Hamming,
}

#[derive(Debug, Clone)]
pub struct MetricContext {
    level_weight: Vec<f64>,
    normalizer: f64,
    normalize_gamma: bool,
}

impl MetricContext {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let top = taxonomy.max_depth();
        let level_weight: Vec<f64> = taxonomy.depths().iter().map(|&l| (top - l + 1) as f64).collect();
        let normalizer = level_weight.iter().sum();
        Self { level_weight, normalizer, normalize_gamma: false }
    }

    /// Divide the negative-pair weight by `C` as well. Off by default.
    pub fn with_normalized_gamma(mut self, on: bool) -> Self {
        self.normalize_gamma = on;
        self
    }

    pub fn normalizes_gamma(&self) -> bool {
        self.normalize_gamma
    }

    pub fn len(&self) -> usize {
        self.level_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level_weight.is_empty()
    }

    /// Per-coordinate weight `max_depth - depth(k) + 1`.
    pub fn level_weight(&self, k: usize) -> f64 {
        self.level_weight[k]
    }

    /// `C`: distance between the empty set and the full label set.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn check(&self, v: &LabelVector) -> Result<(), TaxonomyError> {
        if v.len() != self.len() {
            return Err(TaxonomyError::LengthMismatch { expected: self.len(), got: v.len() });
        }
        Ok(())
    }

    pub fn rho(&self, a: &LabelVector, b: &LabelVector) -> Result<f64, TaxonomyError> {
        self.check(a)?;
        self.check(b)?;
        Ok(a.bits().iter().zip(b.bits()).zip(&self.level_weight).filter(|((x, y), _)| x != y).map(|(_, w)| w).sum())
    }

    /// Distance under `mode`.
    pub fn distance(&self, mode: DistanceMode, a: &LabelVector, b: &LabelVector) -> Result<f64, TaxonomyError> {
        match mode {
            DistanceMode::Hierarchical => self.rho(a, b),
            DistanceMode::Hamming => {
                self.check(a)?;
                self.check(b)?;
                Ok(hamming(a, b)? as f64)
            }
        }
    }

    /// Normalizer matching `mode`: `C` for the weighted distance, `n` for Hamming.
    pub fn mode_normalizer(&self, mode: DistanceMode) -> f64 {
        match mode {
            DistanceMode::Hierarchical => self.normalizer,
            DistanceMode::Hamming => self.len() as f64,
        }
    }

    /// `(sigma, gamma)` for an anchor and another sample's label set:
    /// `sigma = 1 - rho / C` weights positives, `gamma = rho` weights negatives.
    pub fn sigma_gamma(&self, anchor: &LabelVector, other: &LabelVector) -> Result<(f64, f64), TaxonomyError> {
        self.weights(DistanceMode::Hierarchical, anchor, other)
    }

    /// [`sigma_gamma`](Self::sigma_gamma) with the distance chosen by `mode`.
    pub fn weights(
        &self,
        mode: DistanceMode,
        anchor: &LabelVector,
        other: &LabelVector,
    ) -> Result<(f64, f64), TaxonomyError> {
        let d = self.distance(mode, anchor, other)?;
        let c = self.mode_normalizer(mode);
        let sigma = 1.0 - d / c;
        let gamma = if self.normalize_gamma { d / c } else { d };
        Ok((sigma, gamma))
    }
}

/// Number of differing coordinates.
pub fn hamming(a: &LabelVector, b: &LabelVector) -> Result<usize, TaxonomyError> {
    if a.len() != b.len() {
        return Err(TaxonomyError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count())
}
