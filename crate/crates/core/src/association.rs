//! Detection-to-track cost matrices under the four association strategies,
//! the hybrid appearance/statistics cost, gating, and the Hungarian solver.

use serde::{Deserialize, Serialize};

use crate::appearance::{cosine_distance, knn_mean_distance, min_distance, to_model_domain};
use crate::error::{Error, Result};
use crate::igmm::IgmmModel;
use crate::motion::KalmanFilter;
use crate::tracker::{Detection, Track, TrackState};

/// Distance term used by the hybrid cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HtaBase {
    Cms,
    Knn { k: usize },
    #[default]
    Ema,
}

/// Track association strategy with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum Strategy {
    /// Cascade matching on the minimum gallery distance.
    Cms,
    /// Single-shot matching on the mean distance to the k nearest gallery
    /// features.
    Knn { k: usize },
    /// Single-shot matching on the distance to the track's smoothed feature.
    Ema { eta: f32 },
    /// Single-shot matching on the hybrid cost: lambda * distance +
    /// (1 - lambda) * cumulative probability of the track's distance model.
    Hta {
        lambda: f64,
        min_track_length: usize,
        upsilon: f64,
        eta: f32,
        base: HtaBase,
        /// Match with the age cascade instead of single-shot.
        cascade: bool,
    },
}

impl Strategy {
    pub fn hta(lambda: f64, min_track_length: usize, upsilon: f64, eta: f32) -> Self {
        Strategy::Hta {
            lambda,
            min_track_length,
            upsilon,
            eta,
            base: HtaBase::Ema,
            cascade: false,
        }
    }

    /// Smoothing coefficient the tracker should use when maintaining the
    /// per-track EMA feature.
    pub fn ema_coefficient(&self) -> f32 {
        match self {
            Strategy::Ema { eta } | Strategy::Hta { eta, .. } => *eta,
            _ => 0.9,
        }
    }

    /// Whether the tracker should use the age cascade for this strategy.
    pub fn uses_cascade(&self) -> bool {
        match self {
            Strategy::Cms => true,
            Strategy::Hta { cascade, .. } => *cascade,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Knn { k } if *k < 1 => Err(Error::Domain("k must be at least 1".into())),
            Strategy::Ema { eta } if !(0.0..=1.0).contains(eta) => {
                Err(Error::Domain("eta must lie in [0, 1]".into()))
            }
            Strategy::Hta {
                lambda,
                min_track_length,
                upsilon,
                eta,
                ..
            } => {
                if !(0.0..=1.0).contains(lambda) {
                    return Err(Error::Domain("lambda must lie in [0, 1]".into()));
                }
                if *min_track_length < 1 {
                    return Err(Error::Domain("min track length must be at least 1".into()));
                }
                if !(0.0..=1.0).contains(upsilon) {
                    return Err(Error::Domain("upsilon must lie in [0, 1]".into()));
                }
                if !(0.0..=1.0).contains(eta) {
                    return Err(Error::Domain("eta must lie in [0, 1]".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Rectangular detection-by-track cost matrix. Gated entries hold the
/// infeasible sentinel, which is larger than any admissible cost.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    d_max: f64,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, d_max: f64) -> Self {
        let sentinel = d_max + 1e5;
        CostMatrix {
            rows,
            cols,
            d_max,
            data: vec![sentinel; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn sentinel(&self) -> f64 {
        self.d_max + 1e5
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cost: f64) {
        self.data[row * self.cols + col] = cost;
    }

    pub fn is_feasible(&self, row: usize, col: usize) -> bool {
        self.get(row, col) < self.sentinel()
    }
}

/// A gated partial matching between detections (rows) and tracks (columns).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Raw appearance distance between a detection and a track under the given
/// strategy (for HTA, under its base distance term).
pub fn distance_term(detection: &Detection, track: &Track, strategy: &Strategy) -> Result<f64> {
    let base = match strategy {
        Strategy::Cms => HtaBase::Cms,
        Strategy::Knn { k } => HtaBase::Knn { k: *k },
        Strategy::Ema { .. } => HtaBase::Ema,
        Strategy::Hta { base, .. } => *base,
    };
    match base {
        HtaBase::Cms => min_distance(&detection.feature, &track.gallery),
        HtaBase::Knn { k } => knn_mean_distance(&detection.feature, &track.gallery, k),
        HtaBase::Ema => {
            let smoothed = track
                .smoothed
                .as_ref()
                .ok_or_else(|| Error::State("track has no smoothed feature".into()))?;
            cosine_distance(&detection.feature, smoothed)
        }
    }
}

/// The hybrid association cost.
///
/// Falls back to the plain distance while the track has fewer than
/// `min_track_length` recorded distances or its model is empty; otherwise
/// mixes the distance with the truncated-mixture cumulative probability of
/// the fourth-rooted distance.
pub fn hybrid_cost(
    d_raw: f64,
    model: &IgmmModel,
    record_count: usize,
    lambda: f64,
    min_track_length: usize,
    upsilon: f64,
) -> Result<f64> {
    if !d_raw.is_finite() || d_raw < 0.0 {
        return Err(Error::Domain(format!("raw distance must be finite and nonnegative, got {d_raw}")));
    }
    if record_count < min_track_length || model.is_empty() {
        return Ok(d_raw);
    }
    let inliers = model.select_inlier_components(upsilon)?;
    let probability = model.truncated_cdf(&inliers, to_model_domain(d_raw)?)?;
    Ok(lambda * d_raw + (1.0 - lambda) * probability)
}

/// Builds the gated cost matrix for a set of detections against candidate
/// tracks.
///
/// Appearance gating is always applied to the raw distance term (for HTA the
/// probability term is unitless, so the gate calibrated for distances is
/// checked before mixing); motion gating, when a threshold is given, uses the
/// squared Mahalanobis distance of each box from the track's predicted
/// measurement distribution.
pub fn build_cost_matrix(
    detections: &[Detection],
    tracks: &[&Track],
    strategy: &Strategy,
    d_max: f64,
    kalman: &KalmanFilter,
    motion_gate: Option<f64>,
) -> Result<CostMatrix> {
    let mut matrix = CostMatrix::new(detections.len(), tracks.len(), d_max);
    if detections.is_empty() || tracks.is_empty() {
        return Ok(matrix);
    }
    let boxes: Vec<_> = detections.iter().map(|d| d.bbox).collect();
    for (j, track) in tracks.iter().enumerate() {
        let admitted = match motion_gate {
            Some(threshold) => kalman.motion_gate(&track.kalman, &boxes, threshold)?,
            None => vec![true; detections.len()],
        };
        // inlier selection is per track, not per pair
        let hta_inliers = match strategy {
            Strategy::Hta {
                min_track_length,
                upsilon,
                ..
            } if track.distance_records.len() >= *min_track_length && !track.igmm.is_empty() => {
                Some(track.igmm.select_inlier_components(*upsilon)?)
            }
            _ => None,
        };
        for (i, detection) in detections.iter().enumerate() {
            if !admitted[i] {
                continue;
            }
            let d_raw = distance_term(detection, track, strategy)?;
            if d_raw > d_max {
                continue;
            }
            let cost = match (strategy, &hta_inliers) {
                (Strategy::Hta { lambda, .. }, Some(inliers)) => {
                    let p = track.igmm.truncated_cdf(inliers, to_model_domain(d_raw)?)?;
                    lambda * d_raw + (1.0 - lambda) * p
                }
                _ => d_raw,
            };
            matrix.set(i, j, cost);
        }
    }
    Ok(matrix)
}

/// Shortest-augmenting-path Hungarian method on a rectangular matrix with
/// `rows <= cols`. Returns the matched column of each row. Ties are broken
/// deterministically by scanning rows then columns in increasing order.
fn hungarian(costs: &CostMatrix) -> Vec<usize> {
    let n = costs.rows();
    let m = costs.cols();
    debug_assert!(n <= m);
    // 1-based potentials; p[j] holds the row matched to column j (0 = none)
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum-total-cost matching over the feasible entries of a rectangular
/// cost matrix. Pairs whose optimal solution would use a sentinel entry are
/// dissolved into unmatched rows and columns.
pub fn solve_assignment(matrix: &CostMatrix) -> Assignment {
    let rows = matrix.rows();
    let cols = matrix.cols();
    if rows == 0 || cols == 0 {
        return Assignment {
            matches: Vec::new(),
            unmatched_detections: (0..rows).collect(),
            unmatched_tracks: (0..cols).collect(),
        };
    }
    let row_to_col = if rows <= cols {
        hungarian(matrix)
    } else {
        // transpose, solve, invert
        let mut t = CostMatrix::new(cols, rows, matrix.d_max());
        for i in 0..rows {
            for j in 0..cols {
                t.set(j, i, matrix.get(i, j));
            }
        }
        let col_to_row = hungarian(&t);
        let mut row_to_col = vec![usize::MAX; rows];
        for (j, &i) in col_to_row.iter().enumerate() {
            row_to_col[i] = j;
        }
        row_to_col
    };

    let mut matches = Vec::new();
    let mut matched_cols = vec![false; cols];
    let mut unmatched_detections = Vec::new();
    for (i, &j) in row_to_col.iter().enumerate() {
        if j != usize::MAX && matrix.is_feasible(i, j) {
            matches.push((i, j));
            matched_cols[j] = true;
        } else {
            unmatched_detections.push(i);
        }
    }
    let unmatched_tracks = (0..cols).filter(|&j| !matched_cols[j]).collect();
    Assignment {
        matches,
        unmatched_detections,
        unmatched_tracks,
    }
}

/// Matching cascade that prefers recently updated tracks: confirmed tracks
/// are matched level by level in increasing time-since-update, and tentative
/// tracks occupy the final level.
pub fn cascade_match(
    detections: &[Detection],
    tracks: &[&Track],
    strategy: &Strategy,
    d_max: f64,
    kalman: &KalmanFilter,
    motion_gate: Option<f64>,
    max_age: usize,
) -> Result<Assignment> {
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for age in 1..=max_age {
        let level: Vec<usize> = tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.state != TrackState::Tentative && t.time_since_update == age as u32)
            .map(|(j, _)| j)
            .collect();
        if !level.is_empty() {
            levels.push(level);
        }
    }
    let tentative: Vec<usize> = tracks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.state == TrackState::Tentative)
        .map(|(j, _)| j)
        .collect();
    if !tentative.is_empty() {
        levels.push(tentative);
    }

    let mut remaining: Vec<usize> = (0..detections.len()).collect();
    let mut matches = Vec::new();
    let mut matched_tracks = vec![false; tracks.len()];
    for level in levels {
        if remaining.is_empty() {
            break;
        }
        let level_detections: Vec<Detection> =
            remaining.iter().map(|&i| detections[i].clone()).collect();
        let level_tracks: Vec<&Track> = level.iter().map(|&j| tracks[j]).collect();
        let matrix = build_cost_matrix(
            &level_detections,
            &level_tracks,
            strategy,
            d_max,
            kalman,
            motion_gate,
        )?;
        let sub = solve_assignment(&matrix);
        let mut still_unmatched = Vec::new();
        let mut taken = vec![false; remaining.len()];
        for (li, lj) in sub.matches {
            matches.push((remaining[li], level[lj]));
            matched_tracks[level[lj]] = true;
            taken[li] = true;
        }
        for (pos, &det) in remaining.iter().enumerate() {
            if !taken[pos] {
                still_unmatched.push(det);
            }
        }
        remaining = still_unmatched;
    }
    matches.sort_unstable();
    let unmatched_tracks = (0..tracks.len()).filter(|&j| !matched_tracks[j]).collect();
    Ok(Assignment {
        matches,
        unmatched_detections: remaining,
        unmatched_tracks,
    })
}

/// Commits a matched pair's distance into the track's statistics: the
/// fourth-rooted raw distance is appended to the record list and fed to the
/// track's mixture model.
pub fn record_assignment_distance(track: &mut Track, d_raw: f64) -> Result<()> {
    let d = to_model_domain(d_raw)?;
    track.distance_records.push(d);
    track.igmm.observe(d)
}
