//! Incremental univariate Gaussian mixture estimation over a track's
//! historical appearance-distance stream.
//!
//! The model is fitted in the fourth-root distance domain and grows one sample
//! at a time: each arriving distance either updates the existing components or
//! creates a new one (gated by a chi-square criterion on the squared
//! Mahalanobis distance), after which spurious components are pruned. The
//! small-mean prefix of components covering a weight portion `upsilon` is
//! treated as the outlier-free part of the mixture when computing the
//! cumulative probability used by the hybrid association cost.

use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};

/// Lower clamp for component variances; the variance recursion can drive
/// sigma^2 negative under floating-point cancellation.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Order in which components are ranked by mean when selecting the
/// outlier-free subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    /// Smallest-mean components first (ground-truth detections tend to have
    /// smaller appearance distances).
    #[default]
    Ascending,
    Descending,
}

/// One mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Mixture weight, in [0, 1]; weights sum to 1 across the model.
    pub weight: f64,
    /// Mean in the fourth-root distance domain.
    pub mean: f64,
    /// Variance in the fourth-root distance domain; always positive.
    pub variance: f64,
    /// Accumulated posterior probability mass.
    pub accumulated_posterior: f64,
    /// Observations seen since this component was created.
    pub age: u64,
}

/// Configuration of the incremental mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgmmConfig {
    /// Initial variance of a newly created component.
    pub initial_variance: f64,
    /// Maximum number of components; the smallest-weight component is
    /// discarded when a creation would exceed it.
    pub max_components: usize,
    /// Age threshold above which a low-mass component is deemed spurious.
    pub min_age: u64,
    /// Accumulated-posterior threshold below which an old component is deemed
    /// spurious.
    pub min_mass: f64,
    /// Tail probability of the update gate; a sample updates the existing
    /// components when its smallest squared Mahalanobis distance is below the
    /// (1 - gate_tail) chi-square quantile with one degree of freedom.
    pub gate_tail: f64,
    /// Component ranking used by inlier selection.
    pub sort_order: SortOrder,
}

impl Default for IgmmConfig {
    fn default() -> Self {
        IgmmConfig {
            initial_variance: 0.005,
            max_components: 5,
            min_age: 5,
            min_mass: 3.0,
            gate_tail: 0.01,
            sort_order: SortOrder::Ascending,
        }
    }
}

impl IgmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_variance > 0.0) {
            return Err(Error::Domain("initial variance must be positive".into()));
        }
        if self.max_components < 1 {
            return Err(Error::Domain("max_components must be at least 1".into()));
        }
        if self.min_age < 1 {
            return Err(Error::Domain("min_age must be at least 1".into()));
        }
        if !(self.min_mass > 0.0) {
            return Err(Error::Domain("min_mass must be positive".into()));
        }
        if !(self.gate_tail > 0.0 && self.gate_tail < 1.0) {
            return Err(Error::Domain("gate_tail must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Chi-square quantile with one degree of freedom, through the inverse error
/// function: chi2_{1,p} = 2 * erf_inv(p)^2.
pub fn chi_square_quantile_1dof(p: f64) -> f64 {
    let r = erf::erf_inv(p);
    2.0 * r * r
}

/// Standard normal cumulative distribution function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian density with the standard normalizer.
pub fn gaussian_pdf(d: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(d.is_finite() && mean.is_finite() && variance.is_finite()) {
        return Err(Error::Domain("non-finite input to gaussian_pdf".into()));
    }
    if variance <= 0.0 {
        return Err(Error::Domain(format!("variance must be positive, got {variance}")));
    }
    let z = d - mean;
    Ok((-z * z / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt())
}

/// The per-track incremental mixture model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "IgmmSnapshot", into = "IgmmSnapshot")]
pub struct IgmmModel {
    components: Vec<Component>,
    config: IgmmConfig,
    observation_count: u64,
    // chi2_{1,1-gate_tail}, computed once per configuration
    gate: f64,
}

/// Serialized form: components, configuration, and the sample counter.
#[derive(Serialize, Deserialize)]
struct IgmmSnapshot {
    components: Vec<Component>,
    config: IgmmConfig,
    observation_count: u64,
}

impl From<IgmmSnapshot> for IgmmModel {
    fn from(s: IgmmSnapshot) -> Self {
        let gate = chi_square_quantile_1dof(1.0 - s.config.gate_tail);
        IgmmModel {
            components: s.components,
            config: s.config,
            observation_count: s.observation_count,
            gate,
        }
    }
}

impl From<IgmmModel> for IgmmSnapshot {
    fn from(m: IgmmModel) -> Self {
        IgmmSnapshot {
            components: m.components,
            config: m.config,
            observation_count: m.observation_count,
        }
    }
}

impl Default for IgmmModel {
    fn default() -> Self {
        IgmmModel::new(IgmmConfig::default())
    }
}

impl IgmmModel {
    pub fn new(config: IgmmConfig) -> Self {
        let gate = chi_square_quantile_1dof(1.0 - config.gate_tail);
        IgmmModel {
            components: Vec::new(),
            config,
            observation_count: 0,
            gate,
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn config(&self) -> &IgmmConfig {
        &self.config
    }

    pub fn observation_count(&self) -> u64 {
        self.observation_count
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// The cached update-gate threshold chi2_{1,1-gate_tail}.
    pub fn gate_threshold(&self) -> f64 {
        self.gate
    }

    fn renormalize(&mut self) {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if total > 0.0 {
            for c in &mut self.components {
                c.weight /= total;
            }
        } else if !self.components.is_empty() {
            let uniform = 1.0 / self.components.len() as f64;
            for c in &mut self.components {
                c.weight = uniform;
            }
        }
    }

    /// Smallest squared Mahalanobis distance of `d` to any component.
    pub fn min_squared_mahalanobis(&self, d: f64) -> Option<f64> {
        self.components
            .iter()
            .map(|c| {
                let z = d - c.mean;
                z * z / c.variance
            })
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Posterior responsibility of each component for the sample `d`.
    ///
    /// When every weighted density underflows to zero, full responsibility is
    /// assigned to the nearest-mean component (the limit of the tempered
    /// posterior at the 0/0 point).
    pub fn posterior(&self, d: f64) -> Result<Vec<f64>> {
        if self.components.is_empty() {
            return Err(Error::State("posterior of an empty mixture".into()));
        }
        let weighted: Vec<f64> = self
            .components
            .iter()
            .map(|c| gaussian_pdf(d, c.mean, c.variance).map(|p| c.weight * p))
            .collect::<Result<_>>()?;
        let total: f64 = weighted.iter().sum();
        if total > 0.0 {
            Ok(weighted.iter().map(|w| w / total).collect())
        } else {
            let nearest = self
                .components
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| (d - a.mean).abs().total_cmp(&(d - b.mean).abs()))
                .map(|(i, _)| i)
                .unwrap();
            let mut out = vec![0.0; self.components.len()];
            out[nearest] = 1.0;
            Ok(out)
        }
    }

    /// Creates a new component at `d` with the configured initial variance.
    ///
    /// When the model already holds the maximum number of components, the
    /// smallest-weight component is discarded first. The new component's
    /// weight is set to `1 / sum(N_m)` before the final renormalization.
    pub fn create_component(&mut self, d: f64) -> Result<()> {
        if !d.is_finite() {
            return Err(Error::Domain(format!("non-finite sample {d}")));
        }
        if self.components.len() >= self.config.max_components {
            let smallest = self
                .components
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.weight.total_cmp(&b.weight))
                .map(|(i, _)| i)
                .unwrap();
            self.components.remove(smallest);
        }
        let mass: f64 = self.components.iter().map(|c| c.accumulated_posterior).sum::<f64>() + 1.0;
        self.components.push(Component {
            weight: 1.0 / mass,
            mean: d,
            variance: self.config.initial_variance,
            accumulated_posterior: 1.0,
            age: 1,
        });
        self.renormalize();
        Ok(())
    }

    /// Updates every existing component with the sample `d`.
    ///
    /// The caller must have verified the update gate; a sample outside the
    /// gate belongs to `create_component`.
    pub fn update_components(&mut self, d: f64) -> Result<()> {
        let min_mahal = self
            .min_squared_mahalanobis(d)
            .ok_or_else(|| Error::State("update of an empty mixture".into()))?;
        if min_mahal >= self.gate {
            return Err(Error::Contract(format!(
                "update gate not satisfied: squared Mahalanobis {min_mahal} >= {}",
                self.gate
            )));
        }
        let responsibilities = self.posterior(d)?;
        for (c, r) in self.components.iter_mut().zip(responsibilities) {
            c.age += 1;
            c.accumulated_posterior += r;
            let xi = r / c.accumulated_posterior;
            let delta_old = d - c.mean;
            c.mean += xi * delta_old;
            let delta_new = d - c.mean;
            c.variance -= xi * (c.variance - delta_new * delta_new) + xi * xi * delta_old * delta_old;
            c.variance = c.variance.max(VARIANCE_FLOOR);
        }
        let mass: f64 = self.components.iter().map(|c| c.accumulated_posterior).sum();
        for c in &mut self.components {
            c.weight = c.accumulated_posterior / mass;
        }
        self.renormalize();
        Ok(())
    }

    /// Removes components that are old (`age > min_age`) yet have gathered
    /// little posterior mass (`accumulated_posterior < min_mass`).
    ///
    /// A model that has seen data never prunes itself empty: when every
    /// component qualifies as spurious, the one with the most accumulated
    /// mass survives.
    pub fn remove_spurious(&mut self) {
        let (min_age, min_mass) = (self.config.min_age, self.config.min_mass);
        let spurious = |c: &Component| c.age > min_age && c.accumulated_posterior < min_mass;
        if self.components.iter().all(|c| spurious(c)) {
            if let Some(keep) = self
                .components
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.accumulated_posterior.total_cmp(&b.accumulated_posterior))
                .map(|(i, _)| i)
            {
                let kept = self.components[keep].clone();
                self.components = vec![kept];
            }
        } else {
            self.components.retain(|c| !spurious(c));
        }
        self.renormalize();
    }

    /// Feeds one sample to the model: create or update per the chi-square
    /// gate, then prune spurious components.
    pub fn observe(&mut self, d: f64) -> Result<()> {
        if !d.is_finite() {
            return Err(Error::Domain(format!("non-finite sample {d}")));
        }
        match self.min_squared_mahalanobis(d) {
            Some(m) if m < self.gate => self.update_components(d)?,
            _ => self.create_component(d)?,
        }
        self.remove_spurious();
        self.observation_count += 1;
        Ok(())
    }

    /// Indices of the minimal mean-ranked prefix of components whose
    /// cumulative weight exceeds `upsilon`. When no prefix exceeds it, all
    /// components are returned.
    pub fn select_inlier_components(&self, upsilon: f64) -> Result<Vec<usize>> {
        if self.components.is_empty() {
            return Err(Error::State("inlier selection on an empty mixture".into()));
        }
        let mut order: Vec<usize> = (0..self.components.len()).collect();
        order.sort_by(|&a, &b| {
            let cmp = self.components[a].mean.total_cmp(&self.components[b].mean);
            match self.config.sort_order {
                SortOrder::Ascending => cmp,
                SortOrder::Descending => cmp.reverse(),
            }
        });
        let mut cumulative = 0.0;
        let mut selected = Vec::new();
        for &i in &order {
            cumulative += self.components[i].weight;
            selected.push(i);
            if cumulative > upsilon {
                break;
            }
        }
        Ok(selected)
    }

    /// Cumulative probability of the mixture restricted to the inlier subset,
    /// with the subset's weights renormalized.
    pub fn truncated_cdf(&self, inliers: &[usize], d: f64) -> Result<f64> {
        if inliers.is_empty() {
            return Err(Error::State("truncated CDF over an empty inlier set".into()));
        }
        let mut weight = 0.0;
        let mut accum = 0.0;
        for &i in inliers {
            let c = self
                .components
                .get(i)
                .ok_or_else(|| Error::State(format!("inlier index {i} out of range")))?;
            weight += c.weight;
            accum += c.weight * standard_normal_cdf((d - c.mean) / c.variance.sqrt());
        }
        if weight <= 0.0 {
            return Err(Error::State("inlier subset has zero total weight".into()));
        }
        Ok(accum / weight)
    }

    /// Sum of component weights; 1 within floating error for nonempty models.
    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Mixture density at `d`, optionally restricted (and renormalized) to an
    /// inlier subset.
    pub fn density(&self, inliers: Option<&[usize]>, d: f64) -> Result<f64> {
        let indices: Vec<usize> = match inliers {
            Some(set) => set.to_vec(),
            None => (0..self.components.len()).collect(),
        };
        if indices.is_empty() {
            return Err(Error::State("density of an empty mixture".into()));
        }
        let mut weight = 0.0;
        let mut accum = 0.0;
        for &i in &indices {
            let c = self
                .components
                .get(i)
                .ok_or_else(|| Error::State(format!("component index {i} out of range")))?;
            weight += c.weight;
            accum += c.weight * gaussian_pdf(d, c.mean, c.variance)?;
        }
        Ok(accum / weight)
    }
}
