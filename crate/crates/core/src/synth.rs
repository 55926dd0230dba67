//! Deterministic synthetic sequence generation for benchmarking association
//! strategies.
//!
//! Each target follows a piecewise-linear path between waypoints and carries a
//! fixed identity direction in feature space. Observed features are the
//! identity plus isotropic noise whose scale varies per target, so the typical
//! self-distance differs between targets. Occlusion windows suppress a
//! target's detections for a stretch of frames, and optional corruption swaps
//! in heavily perturbed features to mimic partial occlusions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

use crate::appearance::Feature;
use crate::error::{Error, Result};
use crate::io::SequenceBundle;
use crate::metrics::SequenceAnnotations;
use crate::motion::BoundingBox;
use crate::tracker::Detection;

/// One simulated target.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    /// Path of the box centre: (frame, x, y), frames strictly increasing.
    /// The target exists from the first waypoint frame to the last.
    pub waypoints: Vec<(u32, f64, f64)>,
    /// Box width and height in pixels.
    pub size: (f64, f64),
    /// Isotropic feature-noise scale for this target.
    pub noise_scale: f64,
    /// Inclusive frame ranges during which the target emits no detection.
    pub occlusions: Vec<(u32, u32)>,
}

impl TargetSpec {
    fn span(&self) -> (u32, u32) {
        (self.waypoints[0].0, self.waypoints[self.waypoints.len() - 1].0)
    }

    fn occluded(&self, frame: u32) -> bool {
        self.occlusions.iter().any(|&(a, b)| frame >= a && frame <= b)
    }

    /// Linearly interpolated centre position at `frame`.
    fn position(&self, frame: u32) -> (f64, f64) {
        let f = frame as f64;
        for pair in self.waypoints.windows(2) {
            let (f0, x0, y0) = pair[0];
            let (f1, x1, y1) = pair[1];
            if frame <= f1 {
                let t = if f1 == f0 { 0.0 } else { (f - f0 as f64) / (f1 - f0) as f64 };
                return (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            }
        }
        let (_, x, y) = self.waypoints[self.waypoints.len() - 1];
        (x, y)
    }
}

/// Full description of a synthetic sequence.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub name: String,
    pub frame_count: u32,
    pub feature_dim: usize,
    pub targets: Vec<TargetSpec>,
    /// Cosine similarity between different identities (0 = orthogonal,
    /// close to 1 = nearly indistinguishable).
    pub identity_similarity: f64,
    /// Standard deviation of box centre/size jitter in pixels.
    pub position_noise: f64,
    /// Probability that a visible target is missed in a frame.
    pub miss_rate: f64,
    /// Expected number of clutter detections per frame.
    pub clutter_rate: f64,
    /// Probability that an emitted feature is heavily corrupted.
    pub corrupt_rate: f64,
    /// Noise scale used for corrupted features.
    pub corrupt_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::Domain("frame_count must be positive".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Domain("feature_dim must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.identity_similarity) {
            return Err(Error::Domain("identity_similarity must be in [0, 1)".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.waypoints.is_empty() {
                return Err(Error::Domain(format!("target {i} has no waypoints")));
            }
            if !t.waypoints.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(Error::Domain(format!(
                    "target {i} waypoint frames must be strictly increasing"
                )));
            }
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Identity directions with pairwise cosine similarity close to
/// `identity_similarity`: a shared component plus an orthogonalized unique
/// component per target.
fn make_identities(rng: &mut ChaCha8Rng, count: usize, dim: usize, similarity: f64) -> Vec<Vec<f64>> {
    let shared = random_unit(rng, dim);
    let s = similarity.sqrt();
    let u = (1.0 - similarity).sqrt();
    (0..count)
        .map(|_| {
            let raw = random_unit(rng, dim);
            // remove the shared component so identities differ only in the
            // orthogonal part
            let dot: f64 = raw.iter().zip(&shared).map(|(a, b)| a * b).sum();
            let mut unique: Vec<f64> = raw
                .iter()
                .zip(&shared)
                .map(|(a, b)| a - dot * b)
                .collect();
            let norm = unique.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            for x in &mut unique {
                *x /= norm;
            }
            shared
                .iter()
                .zip(&unique)
                .map(|(a, b)| s * a + u * b)
                .collect()
        })
        .collect()
}

fn observe_feature(rng: &mut ChaCha8Rng, identity: &[f64], noise_scale: f64) -> Feature {
    let direction = random_unit(rng, identity.len());
    let values: Vec<f32> = identity
        .iter()
        .zip(&direction)
        .map(|(a, b)| (a + noise_scale * b) as f32)
        .collect();
    Feature::new(values).expect("synthetic feature is finite and nonzero")
}

/// Generates a sequence bundle with ground truth from a synthetic spec.
/// Output is a pure function of the spec, including its seed.
pub fn generate(spec: &SyntheticSpec) -> Result<SequenceBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let identities = make_identities(
        &mut rng,
        spec.targets.len(),
        spec.feature_dim,
        spec.identity_similarity,
    );

    let mut detections: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    let mut ground_truth = SequenceAnnotations::default();

    for frame in 1..=spec.frame_count {
        let mut frame_dets = Vec::new();
        for (index, target) in spec.targets.iter().enumerate() {
            let (start, end) = target.span();
            if frame < start || frame > end {
                continue;
            }
            let (cx, cy) = target.position(frame);
            let (w, h) = target.size;
            let gt_box = BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h, 1.0)?;
            ground_truth.insert(frame, (index + 1) as u32, gt_box);

            if target.occluded(frame) || rng.gen_bool(spec.miss_rate) {
                continue;
            }
            let jitter = |rng: &mut ChaCha8Rng| -> f64 {
                let g: f64 = rng.sample(StandardNormal);
                g * spec.position_noise
            };
            let left = cx - w / 2.0 + jitter(&mut rng);
            let top = cy - h / 2.0 + jitter(&mut rng);
            let dw = (w + jitter(&mut rng)).max(1.0);
            let dh = (h + jitter(&mut rng)).max(1.0);
            let confidence = 0.6 + 0.4 * rng.gen::<f64>();
            let noise = if rng.gen_bool(spec.corrupt_rate) {
                spec.corrupt_scale
            } else {
                target.noise_scale
            };
            frame_dets.push(Detection {
                bbox: BoundingBox::new(left, top, dw, dh, confidence)?,
                feature: observe_feature(&mut rng, &identities[index], noise),
            });
        }

        let clutter = poisson_draw(&mut rng, spec.clutter_rate);
        for _ in 0..clutter {
            let left = rng.gen::<f64>() * 900.0;
            let top = rng.gen::<f64>() * 600.0;
            let values: Vec<f32> = random_unit(&mut rng, spec.feature_dim)
                .into_iter()
                .map(|x| x as f32)
                .collect();
            frame_dets.push(Detection {
                bbox: BoundingBox::new(left, top, 40.0, 80.0, 0.4 + 0.3 * rng.gen::<f64>())?,
                feature: Feature::new(values)?,
            });
        }

        if !frame_dets.is_empty() {
            detections.insert(frame, frame_dets);
        }
    }

    Ok(SequenceBundle {
        name: spec.name.clone(),
        frame_rate: 30.0,
        frame_count: spec.frame_count,
        feature_dim: spec.feature_dim,
        detections,
        ground_truth: Some(ground_truth),
    })
}

fn poisson_draw(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    // Knuth's method; rates here are small (a few clutter boxes per frame)
    let threshold = (-rate).exp();
    let mut count = 0usize;
    let mut product = rng.gen::<f64>();
    while product > threshold {
        count += 1;
        product *= rng.gen::<f64>();
    }
    count
}

/// A crowded crossing scenario where appearance quality varies by target:
/// several targets converge on the centre of the frame, cross during a shared
/// occlusion-prone window, and separate again. Half the targets have clean
/// features and half noisy ones, so a fixed distance threshold treats them
/// unequally while per-track distance statistics do not.
pub fn ambiguity_suite(seed: u64) -> SyntheticSpec {
    let frame_count = 120u32;
    let target_count = 10usize;
    let mut targets = Vec::with_capacity(target_count);
    for i in 0..target_count {
        // targets start in adjacent clean/noisy pairs that cross each other
        // early, then everyone converges on a common central region
        let pair = (i / 2) as f64;
        let angle = pair / (target_count as f64 / 2.0) * std::f64::consts::TAU;
        let (sin, cos) = angle.sin_cos();
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        let sx = 450.0 + 230.0 * cos;
        let sy = 300.0 + 160.0 * sin + side * 30.0;
        let ex = 450.0 - 320.0 * cos;
        let ey = 300.0 - 220.0 * sin + side * 40.0;
        let noise_scale = if (i / 2) % 2 == 0 { 0.10 } else { 0.30 };
        // one short occlusion while the start pairs are still adjacent and
        // tracks are young, one longer window during the central crossing
        let early = 7 + i as u32;
        let mid = 45 + 3 * i as u32;
        let occlusions = vec![(early, early + 3), (mid, mid + 7)];
        let (mx, my) = (450.0 + 20.0 * cos, 300.0 + 15.0 * sin - side * 20.0);
        targets.push(TargetSpec {
            waypoints: vec![
                (1, sx, sy),
                (12, sx * 0.96 + 18.0, sy - side * 55.0),
                (frame_count / 2, mx, my),
                (frame_count, ex, ey),
            ],
            size: (42.0, 95.0),
            noise_scale,
            occlusions,
        });
    }
    SyntheticSpec {
        name: format!("ambiguity-{seed}"),
        frame_count,
        feature_dim: 32,
        targets,
        identity_similarity: 0.9,
        position_noise: 1.5,
        miss_rate: 0.03,
        clutter_rate: 0.3,
        corrupt_rate: 0.08,
        corrupt_scale: 0.6,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::cosine_distance;

    fn two_target_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            name: "two".into(),
            frame_count: 20,
            feature_dim: 16,
            targets: vec![
                TargetSpec {
                    waypoints: vec![(1, 100.0, 100.0), (20, 300.0, 100.0)],
                    size: (40.0, 80.0),
                    noise_scale: 0.05,
                    occlusions: vec![],
                },
                TargetSpec {
                    waypoints: vec![(5, 500.0, 400.0), (20, 500.0, 200.0)],
                    size: (40.0, 80.0),
                    noise_scale: 0.05,
                    occlusions: vec![(10, 12)],
                },
            ],
            identity_similarity: 0.5,
            position_noise: 0.5,
            miss_rate: 0.0,
            clutter_rate: 0.0,
            corrupt_rate: 0.0,
            corrupt_scale: 0.5,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&two_target_spec(7)).unwrap();
        let b = generate(&two_target_spec(7)).unwrap();
        assert_eq!(a.detection_count(), b.detection_count());
        for (frame, dets) in &a.detections {
            let other = &b.detections[frame];
            for (d, e) in dets.iter().zip(other) {
                assert_eq!(d.bbox.left, e.bbox.left);
                assert_eq!(d.feature, e.feature);
            }
        }
        let c = generate(&two_target_spec(8)).unwrap();
        assert_ne!(
            a.detections[&1][0].bbox.left,
            c.detections[&1][0].bbox.left
        );
    }

    #[test]
    fn respects_spans_occlusions_and_counts() {
        let bundle = generate(&two_target_spec(3)).unwrap();
        // target 2 does not exist before frame 5
        assert_eq!(bundle.detections[&1].len(), 1);
        assert_eq!(bundle.detections[&6].len(), 2);
        // occlusion window removes target 2's detection but not its gt box
        for frame in 10..=12 {
            assert_eq!(bundle.detections[&frame].len(), 1);
        }
        let gt = bundle.ground_truth.as_ref().unwrap();
        assert_eq!(gt.frames[&11].len(), 2);
        // 20 frames of target 1 + 13 visible frames of target 2
        assert_eq!(bundle.detection_count(), 20 + 13);
    }

    #[test]
    fn waypoint_interpolation_is_linear() {
        let spec = two_target_spec(1);
        let (x, y) = spec.targets[0].position(10);
        // frame 1 -> 100, frame 20 -> 300: frame 10 is 9/19 of the way
        assert!((x - (100.0 + 200.0 * 9.0 / 19.0)).abs() < 1e-9);
        assert_eq!(y, 100.0);
    }

    #[test]
    fn identity_similarity_controls_cross_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ids = make_identities(&mut rng, 6, 64, 0.88);
        let features: Vec<Feature> = ids
            .iter()
            .map(|id| Feature::new(id.iter().map(|x| *x as f32).collect()).unwrap())
            .collect();
        let mut cross = Vec::new();
        for i in 0..features.len() {
            for j in i + 1..features.len() {
                cross.push(cosine_distance(&features[i], &features[j]).unwrap());
            }
        }
        let mean = cross.iter().sum::<f64>() / cross.len() as f64;
        // expected cross-identity distance about 1 - similarity
        assert!((mean - 0.12).abs() < 0.05, "mean cross distance {mean}");
    }

    #[test]
    fn noise_scale_controls_self_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let identity = random_unit(&mut rng, 32);
        let measure = |rng: &mut ChaCha8Rng, scale: f64| -> f64 {
            let samples: Vec<Feature> =
                (0..200).map(|_| observe_feature(rng, &identity, scale)).collect();
            let mut total = 0.0;
            for pair in samples.windows(2) {
                total += cosine_distance(&pair[0], &pair[1]).unwrap();
            }
            total / (samples.len() - 1) as f64
        };
        let clean = measure(&mut rng, 0.04);
        let noisy = measure(&mut rng, 0.16);
        assert!(clean < 0.01, "clean self distance {clean}");
        assert!(noisy > 3.0 * clean, "noisy {noisy} vs clean {clean}");
        assert!(noisy < 0.2, "noisy self distance {noisy} exceeds gate");
    }

    #[test]
    fn ambiguity_suite_is_well_formed() {
        let spec = ambiguity_suite(1);
        spec.validate().unwrap();
        let bundle = generate(&spec).unwrap();
        assert_eq!(bundle.feature_dim, 32);
        assert!(bundle.detection_count() > 800);
        let gt = bundle.ground_truth.as_ref().unwrap();
        assert_eq!(gt.frames[&1].len(), 10);
        assert_eq!(gt.frames[&120].len(), 10);
    }

    #[test]
    fn bundle_round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = generate(&two_target_spec(5)).unwrap();
        crate::io::write_bundle(&bundle, dir.path()).unwrap();
        let back = crate::io::load_bundle(dir.path(), 0.0).unwrap();
        assert_eq!(back.name, bundle.name);
        assert_eq!(back.frame_count, bundle.frame_count);
        assert_eq!(back.detection_count(), bundle.detection_count());
        assert_eq!(
            back.ground_truth.as_ref().unwrap().total_boxes(),
            bundle.ground_truth.as_ref().unwrap().total_boxes()
        );
        for (frame, dets) in &bundle.detections {
            for (d, e) in dets.iter().zip(&back.detections[frame]) {
                assert!((d.bbox.left - e.bbox.left).abs() < 0.01);
                assert_eq!(d.feature, e.feature);
            }
        }
    }
}
