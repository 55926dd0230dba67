//! Constant-velocity Kalman filter in image space plus Mahalanobis motion
//! gating.
//!
//! The 8-dimensional state holds the bounding-box center position, aspect
//! ratio, height, and their velocities; the box parameters are observed
//! directly (linear observation model).

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;
type Mat4 = SMatrix<f64, 4, 4>;
type Vec4 = SVector<f64, 4>;
type Mat4x8 = SMatrix<f64, 4, 8>;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom;
/// the default Mahalanobis gating threshold for box measurements.
pub const CHI2_GATE_4DOF: f64 = 9.4877;

/// A single-frame bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64, confidence: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Domain(format!(
                "bounding box must have positive size, got {width}x{height}"
            )));
        }
        Ok(BoundingBox {
            left,
            top,
            width,
            height,
            confidence,
        })
    }

    /// Measurement vector (center-x, center-y, aspect ratio, height).
    pub fn to_xyah(&self) -> [f64; 4] {
        [
            self.left + self.width / 2.0,
            self.top + self.height / 2.0,
            self.width / self.height,
            self.height,
        ]
    }

    pub fn from_xyah(cx: f64, cy: f64, aspect: f64, height: f64, confidence: f64) -> Result<Self> {
        let width = aspect * height;
        BoundingBox::new(cx - width / 2.0, cy - height / 2.0, width, height, confidence)
    }

    pub fn intersection_over_union(&self, other: &BoundingBox) -> f64 {
        let x1 = self.left.max(other.left);
        let y1 = self.top.max(other.top);
        let x2 = (self.left + self.width).min(other.left + other.width);
        let y2 = (self.top + self.height).min(other.top + other.height);
        let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
        let union = self.width * self.height + other.width * other.height - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Mean and covariance of a track's motion state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub mean: [f64; 8],
    pub covariance: [[f64; 8]; 8],
}

impl KalmanState {
    fn mean_vec(&self) -> Vec8 {
        Vec8::from_column_slice(&self.mean)
    }

    fn cov_mat(&self) -> Mat8 {
        Mat8::from_fn(|r, c| self.covariance[r][c])
    }

    fn from_parts(mean: Vec8, cov: Mat8) -> Self {
        let mut state = KalmanState {
            mean: [0.0; 8],
            covariance: [[0.0; 8]; 8],
        };
        for i in 0..8 {
            state.mean[i] = mean[i];
            for j in 0..8 {
                // store the symmetrized covariance
                state.covariance[i][j] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            }
        }
        state
    }

    /// The bounding box described by the state mean.
    pub fn to_bounding_box(&self, confidence: f64) -> Result<BoundingBox> {
        BoundingBox::from_xyah(self.mean[0], self.mean[1], self.mean[2], self.mean[3], confidence)
    }
}

/// Constant-velocity filter with height-scaled noise, shared across tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanFilter {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for KalmanFilter {
    fn default() -> Self {
        KalmanFilter {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

impl KalmanFilter {
    fn motion_matrix() -> Mat8 {
        let mut f = Mat8::identity();
        for i in 0..4 {
            f[(i, i + 4)] = 1.0;
        }
        f
    }

    fn observation_matrix() -> Mat4x8 {
        Mat4x8::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// Creates a state from an unassociated detection, with zero velocity.
    pub fn initiate(&self, bbox: &BoundingBox) -> KalmanState {
        let [cx, cy, a, h] = bbox.to_xyah();
        let mean = Vec8::from_column_slice(&[cx, cy, a, h, 0.0, 0.0, 0.0, 0.0]);
        let swp = self.std_weight_position;
        let swv = self.std_weight_velocity;
        let std = [
            2.0 * swp * h,
            2.0 * swp * h,
            1e-2,
            2.0 * swp * h,
            10.0 * swv * h,
            10.0 * swv * h,
            1e-5,
            10.0 * swv * h,
        ];
        let cov = Mat8::from_diagonal(&Vec8::from_iterator(std.iter().map(|s| s * s)));
        KalmanState::from_parts(mean, cov)
    }

    /// One constant-velocity prediction step with height-scaled process noise.
    pub fn predict(&self, state: &KalmanState) -> KalmanState {
        let f = Self::motion_matrix();
        let mean = f * state.mean_vec();
        let h = state.mean[3];
        let swp = self.std_weight_position;
        let swv = self.std_weight_velocity;
        let std = [swp * h, swp * h, 1e-2, swp * h, swv * h, swv * h, 1e-5, swv * h];
        let q = Mat8::from_diagonal(&Vec8::from_iterator(std.iter().map(|s| s * s)));
        let cov = f * state.cov_mat() * f.transpose() + q;
        KalmanState::from_parts(mean, cov)
    }

    /// Projects the state distribution to measurement space.
    fn project(&self, state: &KalmanState) -> (Vec4, Mat4) {
        let hmat = Self::observation_matrix();
        let h = state.mean[3];
        let swp = self.std_weight_position;
        let std = [swp * h, swp * h, 1e-1, swp * h];
        let r = Mat4::from_diagonal(&Vec4::from_iterator(std.iter().map(|s| s * s)));
        let mean = hmat * state.mean_vec();
        let cov = hmat * state.cov_mat() * hmat.transpose() + r;
        (mean, cov)
    }

    /// Standard Kalman measurement update with a detection box.
    pub fn update(&self, state: &KalmanState, bbox: &BoundingBox) -> Result<KalmanState> {
        let (projected_mean, projected_cov) = self.project(state);
        let chol = projected_cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
        let hmat = Self::observation_matrix();
        // gain K = P H^T S^-1, via S K^T = H P
        let pht = state.cov_mat() * hmat.transpose();
        let gain = chol.solve(&pht.transpose()).transpose();
        let [cx, cy, a, hh] = bbox.to_xyah();
        let innovation = Vec4::from_column_slice(&[cx, cy, a, hh]) - projected_mean;
        let mean = state.mean_vec() + gain * innovation;
        let cov = state.cov_mat() - gain * projected_cov * gain.transpose();
        Ok(KalmanState::from_parts(mean, cov))
    }

    /// Squared Mahalanobis distance of each box measurement from the
    /// predicted measurement distribution.
    pub fn gating_distances(&self, state: &KalmanState, boxes: &[BoundingBox]) -> Result<Vec<f64>> {
        let (projected_mean, projected_cov) = self.project(state);
        let chol = projected_cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
        Ok(boxes
            .iter()
            .map(|b| {
                let [cx, cy, a, h] = b.to_xyah();
                let diff = Vec4::from_column_slice(&[cx, cy, a, h]) - projected_mean;
                let solved = chol.solve(&diff);
                diff.dot(&solved)
            })
            .collect())
    }

    /// Boolean admission mask: true where the squared Mahalanobis distance is
    /// below `threshold`.
    pub fn motion_gate(
        &self,
        state: &KalmanState,
        boxes: &[BoundingBox],
        threshold: f64,
    ) -> Result<Vec<bool>> {
        Ok(self
            .gating_distances(state, boxes)?
            .into_iter()
            .map(|d| d < threshold)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bbox(l: f64, t: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(l, t, w, h, 1.0).unwrap()
    }

    #[test]
    fn initiate_then_predict_keeps_box() {
        let kf = KalmanFilter::default();
        let b = bbox(12.0, 30.0, 20.0, 50.0);
        let predicted = kf.predict(&kf.initiate(&b));
        let out = predicted.to_bounding_box(1.0).unwrap();
        assert_abs_diff_eq!(out.left, b.left, epsilon = 1e-9);
        assert_abs_diff_eq!(out.top, b.top, epsilon = 1e-9);
        assert_abs_diff_eq!(out.width, b.width, epsilon = 1e-9);
        assert_abs_diff_eq!(out.height, b.height, epsilon = 1e-9);
    }

    #[test]
    fn initiate_square_box_aspect_ratio() {
        let kf = KalmanFilter::default();
        let state = kf.initiate(&bbox(0.0, 0.0, 10.0, 10.0));
        assert_abs_diff_eq!(state.mean[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn update_with_same_box_keeps_position() {
        let kf = KalmanFilter::default();
        let b = bbox(5.0, 8.0, 30.0, 60.0);
        let state = kf.initiate(&b);
        let updated = kf.update(&state, &b).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(updated.mean[i], state.mean[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn velocity_advances_center() {
        let kf = KalmanFilter::default();
        let mut state = kf.initiate(&bbox(0.0, 0.0, 10.0, 20.0));
        state.mean[4] = 1.0; // one pixel per frame in x
        let predicted = kf.predict(&state);
        assert_abs_diff_eq!(predicted.mean[0], state.mean[0] + 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(predicted.mean[1], state.mean[1], epsilon = 1e-9);
    }

    #[test]
    fn predict_grows_covariance_trace() {
        let kf = KalmanFilter::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let b = bbox(
                rng.gen_range(0.0..500.0),
                rng.gen_range(0.0..500.0),
                rng.gen_range(5.0..80.0),
                rng.gen_range(5.0..120.0),
            );
            let state = kf.initiate(&b);
            let before: f64 = (0..8).map(|i| state.covariance[i][i]).sum();
            let after_state = kf.predict(&state);
            let after: f64 = (0..8).map(|i| after_state.covariance[i][i]).sum();
            assert!(after >= before);
        }
    }

    #[test]
    fn update_shrinks_position_variance() {
        let kf = KalmanFilter::default();
        let b = bbox(10.0, 10.0, 20.0, 40.0);
        let state = kf.predict(&kf.initiate(&b));
        let updated = kf.update(&state, &bbox(11.0, 10.5, 20.0, 40.0)).unwrap();
        assert!(updated.covariance[0][0] < state.covariance[0][0]);
        assert!(updated.covariance[1][1] < state.covariance[1][1]);
    }

    #[test]
    fn repeated_updates_converge_to_measurement() {
        // the constant-velocity model first interprets the initial jump as
        // velocity and overshoots, then the error decays monotonically
        let kf = KalmanFilter::default();
        let start = bbox(0.0, 0.0, 20.0, 40.0);
        let target = bbox(50.0, 30.0, 20.0, 40.0);
        let [cx, cy, ..] = target.to_xyah();
        let mut state = kf.initiate(&start);
        let mut last_err = f64::INFINITY;
        for step in 0..25 {
            state = kf.predict(&state);
            state = kf.update(&state, &target).unwrap();
            let err = ((state.mean[0] - cx).powi(2) + (state.mean[1] - cy).powi(2)).sqrt();
            if step >= 5 {
                assert!(err <= last_err + 1e-9, "step {step}: {err} > {last_err}");
            }
            last_err = err;
        }
        assert!(last_err < 0.5, "final error {last_err}");
    }

    #[test]
    fn constant_velocity_target_is_tracked() {
        // error decays geometrically once the velocity estimate settles
        let kf = KalmanFilter::default();
        let mut state = kf.initiate(&bbox(0.0, 0.0, 10.0, 20.0));
        let mut errors = Vec::new();
        for frame in 1..=20 {
            state = kf.predict(&state);
            let truth = bbox(3.0 * frame as f64, 2.0 * frame as f64, 10.0, 20.0);
            state = kf.update(&state, &truth).unwrap();
            let [cx, cy, ..] = truth.to_xyah();
            errors.push(((state.mean[0] - cx).powi(2) + (state.mean[1] - cy).powi(2)).sqrt());
        }
        assert!(errors[19] < 0.05, "final error {}", errors[19]);
        for pair in errors[5..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{} > {}", pair[1], pair[0]);
        }
    }

    #[test]
    fn gate_admits_predicted_mean_rejects_far_box() {
        let kf = KalmanFilter::default();
        let b = bbox(100.0, 100.0, 20.0, 40.0);
        let state = kf.predict(&kf.initiate(&b));
        let at_mean = state.to_bounding_box(1.0).unwrap();
        let far = bbox(10_000.0, 10_000.0, 20.0, 40.0);
        let mask = kf.motion_gate(&state, &[at_mean, far], CHI2_GATE_4DOF).unwrap();
        assert_eq!(mask, vec![true, false]);
    }

    #[test]
    fn gating_distance_matches_dense_inverse_oracle() {
        let kf = KalmanFilter::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let b = bbox(
                rng.gen_range(0.0..300.0),
                rng.gen_range(0.0..300.0),
                rng.gen_range(10.0..50.0),
                rng.gen_range(10.0..90.0),
            );
            let state = kf.predict(&kf.initiate(&b));
            let probe = bbox(
                rng.gen_range(0.0..300.0),
                rng.gen_range(0.0..300.0),
                rng.gen_range(10.0..50.0),
                rng.gen_range(10.0..90.0),
            );
            let fast = kf.gating_distances(&state, &[probe]).unwrap()[0];
            // explicit matrix-inverse recomputation
            let (mean, cov) = kf.project(&state);
            let inv = cov.try_inverse().unwrap();
            let [cx, cy, a, h] = probe.to_xyah();
            let diff = Vec4::from_column_slice(&[cx, cy, a, h]) - mean;
            let oracle = diff.dot(&(inv * diff));
            assert_abs_diff_eq!(fast, oracle, epsilon = 1e-6 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn covariance_stays_symmetric_positive_definite() {
        let kf = KalmanFilter::default();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut state = kf.initiate(&bbox(50.0, 50.0, 20.0, 40.0));
        for _ in 0..1000 {
            state = kf.predict(&state);
            let jitter = bbox(
                state.mean[0] - state.mean[2] * state.mean[3] / 2.0 + rng.gen_range(-2.0..2.0),
                state.mean[1] - state.mean[3] / 2.0 + rng.gen_range(-2.0..2.0),
                (state.mean[2] * state.mean[3]).max(1.0),
                state.mean[3].max(1.0),
            );
            state = kf.update(&state, &jitter).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    assert_abs_diff_eq!(
                        state.covariance[i][j],
                        state.covariance[j][i],
                        epsilon = 1e-9
                    );
                }
                assert!(state.covariance[i][i] > 0.0);
            }
            // positive-definiteness via Cholesky
            assert!(state.cov_mat().cholesky().is_some());
        }
    }

    #[test]
    fn zero_size_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 10.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 10.0, -1.0, 1.0).is_err());
    }
}
