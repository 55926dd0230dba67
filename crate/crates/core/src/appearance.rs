//! Appearance features, cosine distances, the per-track feature gallery, and
//! the fourth-root transform into the distance-model domain.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A unit-norm appearance feature vector.
///
/// Inputs are renormalized on construction rather than trusted; the
/// distance-distribution model downstream assumes unit-norm features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    values: Vec<f32>,
}

impl Feature {
    /// Builds a feature from raw values, renormalizing to unit Euclidean norm.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("feature vector must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature vector contains non-finite values".into()));
        }
        let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(Error::Domain("feature vector has zero norm".into()));
        }
        let values = values.iter().map(|v| (*v as f64 / norm) as f32).collect();
        Ok(Feature { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    fn dot(&self, other: &Feature) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    }
}

/// Cosine distance `1 - a.b` between two unit-norm features, in `[0, 2]`.
pub fn cosine_distance(a: &Feature, b: &Feature) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Domain(format!(
            "feature dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((1.0 - a.dot(b)).max(0.0))
}

/// Bounded ring buffer of a track's historical appearance features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGallery {
    entries: VecDeque<(u32, Feature)>,
    budget: usize,
}

impl FeatureGallery {
    pub fn new(budget: usize) -> Self {
        FeatureGallery {
            entries: VecDeque::new(),
            budget: budget.max(1),
        }
    }

    /// Appends a feature observed at `frame`; the oldest entry is dropped when
    /// the budget is exceeded. Frame indices must be strictly increasing.
    pub fn push(&mut self, frame: u32, feature: Feature) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if frame <= *last {
                return Err(Error::Input(format!(
                    "gallery frame indices must be strictly increasing: {frame} after {last}"
                )));
            }
        }
        if self.entries.len() == self.budget {
            self.entries.pop_front();
        }
        self.entries.push_back((frame, feature));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn features(&self) -> impl Iterator<Item = &Feature> {
        self.entries.iter().map(|(_, f)| f)
    }
}

/// Minimum cosine distance between a query feature and the gallery.
pub fn min_distance(f: &Feature, gallery: &FeatureGallery) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::State("minimum distance over an empty gallery".into()));
    }
    let mut best = f64::INFINITY;
    for g in gallery.features() {
        let d = cosine_distance(f, g)?;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// Mean of the `min(k, |gallery|)` smallest cosine distances between the query
/// and the gallery. When the gallery holds fewer than `k` features, all of
/// them are considered.
pub fn knn_mean_distance(f: &Feature, gallery: &FeatureGallery, k: usize) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::State("kNN distance over an empty gallery".into()));
    }
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let mut distances = gallery
        .features()
        .map(|g| cosine_distance(f, g))
        .collect::<Result<Vec<_>>>()?;
    distances.sort_by(|a, b| a.total_cmp(b));
    let take = k.min(distances.len());
    Ok(distances[..take].iter().sum::<f64>() / take as f64)
}

/// One step of exponential-moving-average feature smoothing with coefficient
/// `eta`; the result is renormalized to unit norm. An absent smoothed feature
/// initializes to the incoming one.
pub fn ema_update(smoothed: Option<&Feature>, incoming: &Feature, eta: f32) -> Result<Feature> {
    match smoothed {
        None => Ok(incoming.clone()),
        Some(s) => {
            if s.dim() != incoming.dim() {
                return Err(Error::Domain(format!(
                    "feature dimension mismatch: {} vs {}",
                    s.dim(),
                    incoming.dim()
                )));
            }
            let blended: Vec<f32> = s
                .values
                .iter()
                .zip(&incoming.values)
                .map(|(a, b)| eta * a + (1.0 - eta) * b)
                .collect();
            Feature::new(blended)
        }
    }
}

/// Fourth-root transform of a raw (chi-square-like) distance into the domain
/// where the per-track mixture model is fitted.
pub fn to_model_domain(d: f64) -> Result<f64> {
    if !d.is_finite() || d < 0.0 {
        return Err(Error::Domain(format!("distance must be finite and nonnegative, got {d}")));
    }
    // x^(1/4) via two square roots: exact for the domain and faster than powf.
    Ok(d.sqrt().sqrt())
}
