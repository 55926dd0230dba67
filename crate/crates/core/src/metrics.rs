//! CLEAR-MOT and identity metrics over ground truth and tracker output.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::association::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::motion::BoundingBox;

/// Per-frame identity-labelled boxes for a whole sequence, keyed by frame.
#[derive(Debug, Clone, Default)]
pub struct SequenceAnnotations {
    pub frames: BTreeMap<u32, Vec<(u32, BoundingBox)>>,
}

impl SequenceAnnotations {
    pub fn insert(&mut self, frame: u32, id: u32, bbox: BoundingBox) {
        self.frames.entry(frame).or_default().push((id, bbox));
    }

    pub fn total_boxes(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    fn validate(&self, label: &str) -> Result<()> {
        for (frame, boxes) in &self.frames {
            let mut seen = HashSet::new();
            for (id, _) in boxes {
                if !seen.insert(*id) {
                    return Err(Error::Input(format!(
                        "{label} frame {frame} contains duplicate id {id}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Evaluation report for one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub idf1: f64,
    pub mota: f64,
    /// Average IoU over true-positive matches.
    pub motp: f64,
    /// Percentage of ground-truth targets tracked for at least 80% of their
    /// life span.
    pub mostly_tracked: f64,
    /// Percentage of ground-truth targets tracked for at most 20% of their
    /// life span.
    pub mostly_lost: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub gt_boxes: usize,
    pub hyp_boxes: usize,
}

/// Per-frame CLEAR correspondence: matched (gt index, hyp index, IoU) plus
/// the leftover indices.
#[derive(Debug, Clone, Default)]
pub struct FrameCorrespondence {
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_hyp: Vec<usize>,
}

/// Matches one frame of ground truth against hypotheses on `1 - IoU` cost.
///
/// Pairs below `iou_threshold` are excluded. The CLEAR continuity rule is
/// honored: a gt-hyp identity pair matched in the previous frame is kept when
/// still above threshold, before new pairs are formed.
pub fn match_frame(
    gt: &[(u32, BoundingBox)],
    hyp: &[(u32, BoundingBox)],
    iou_threshold: f64,
    previous: &HashMap<u32, u32>,
) -> FrameCorrespondence {
    let mut gt_free: Vec<usize> = (0..gt.len()).collect();
    let mut hyp_free: Vec<usize> = (0..hyp.len()).collect();
    let mut out = FrameCorrespondence::default();

    // continuity: keep last frame's identity pairs that still overlap
    let hyp_by_id: HashMap<u32, usize> = hyp.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
    let mut kept_gt = HashSet::new();
    let mut kept_hyp = HashSet::new();
    for (gi, (gt_id, gt_box)) in gt.iter().enumerate() {
        if let Some(hyp_id) = previous.get(gt_id) {
            if let Some(&hi) = hyp_by_id.get(hyp_id) {
                if kept_hyp.contains(&hi) {
                    continue;
                }
                let iou = gt_box.intersection_over_union(&hyp[hi].1);
                if iou >= iou_threshold {
                    out.matches.push((gi, hi, iou));
                    kept_gt.insert(gi);
                    kept_hyp.insert(hi);
                }
            }
        }
    }
    gt_free.retain(|gi| !kept_gt.contains(gi));
    hyp_free.retain(|hi| !kept_hyp.contains(hi));

    // optimal matching on the remainder
    if !gt_free.is_empty() && !hyp_free.is_empty() {
        let mut matrix = CostMatrix::new(gt_free.len(), hyp_free.len(), 1.0);
        for (r, &gi) in gt_free.iter().enumerate() {
            for (c, &hi) in hyp_free.iter().enumerate() {
                let iou = gt[gi].1.intersection_over_union(&hyp[hi].1);
                if iou >= iou_threshold {
                    matrix.set(r, c, 1.0 - iou);
                }
            }
        }
        let assignment = solve_assignment(&matrix);
        for (r, c) in assignment.matches {
            let (gi, hi) = (gt_free[r], hyp_free[c]);
            let iou = gt[gi].1.intersection_over_union(&hyp[hi].1);
            out.matches.push((gi, hi, iou));
            kept_gt.insert(gi);
            kept_hyp.insert(hi);
        }
    }

    out.unmatched_gt = (0..gt.len()).filter(|gi| !kept_gt.contains(gi)).collect();
    out.unmatched_hyp = (0..hyp.len()).filter(|hi| !kept_hyp.contains(hi)).collect();
    out.matches.sort_unstable_by_key(|&(gi, _, _)| gi);
    out
}

/// Evaluates a hypothesis sequence against ground truth at the given IoU
/// threshold (0.5 is the benchmark convention).
pub fn evaluate(
    gt: &SequenceAnnotations,
    hyp: &SequenceAnnotations,
    iou_threshold: f64,
) -> Result<MetricsReport> {
    gt.validate("ground truth")?;
    hyp.validate("hypothesis")?;

    let empty: Vec<(u32, BoundingBox)> = Vec::new();
    let frames: std::collections::BTreeSet<u32> = gt
        .frames
        .keys()
        .chain(hyp.frames.keys())
        .copied()
        .collect();

    let mut false_positives = 0usize;
    let mut false_negatives = 0usize;
    let mut id_switches = 0usize;
    let mut iou_sum = 0.0;
    let mut iou_count = 0usize;

    // per gt identity: last matched hypothesis id, and per-frame tracked flags
    let mut previous: HashMap<u32, u32> = HashMap::new();
    let mut last_matched_hyp: HashMap<u32, u32> = HashMap::new();
    let mut gt_status: HashMap<u32, Vec<bool>> = HashMap::new();

    // identity overlap counts for the ID metrics
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();

    for &frame in &frames {
        let gt_boxes = gt.frames.get(&frame).unwrap_or(&empty);
        let hyp_boxes = hyp.frames.get(&frame).unwrap_or(&empty);
        let corr = match_frame(gt_boxes, hyp_boxes, iou_threshold, &previous);

        false_positives += corr.unmatched_hyp.len();
        false_negatives += corr.unmatched_gt.len();

        previous.clear();
        let mut matched_gt: HashSet<u32> = HashSet::new();
        for (gi, hi, iou) in &corr.matches {
            let gt_id = gt_boxes[*gi].0;
            let hyp_id = hyp_boxes[*hi].0;
            iou_sum += iou;
            iou_count += 1;
            if let Some(last) = last_matched_hyp.get(&gt_id) {
                if *last != hyp_id {
                    id_switches += 1;
                }
            }
            last_matched_hyp.insert(gt_id, hyp_id);
            previous.insert(gt_id, hyp_id);
            matched_gt.insert(gt_id);
        }
        for (gt_id, _) in gt_boxes {
            gt_status
                .entry(*gt_id)
                .or_default()
                .push(matched_gt.contains(gt_id));
        }

        // frame-wise identity overlaps, independent of the CLEAR matching
        for (gt_id, gt_box) in gt_boxes {
            for (hyp_id, hyp_box) in hyp_boxes {
                if gt_box.intersection_over_union(hyp_box) >= iou_threshold {
                    *overlap.entry((*gt_id, *hyp_id)).or_default() += 1;
                }
            }
        }
    }

    // MT / ML / fragmentations over each ground-truth target's life span
    let mut mostly_tracked = 0usize;
    let mut mostly_lost = 0usize;
    let mut fragmentations = 0usize;
    for status in gt_status.values() {
        let lifespan = status.len();
        let tracked = status.iter().filter(|&&s| s).count();
        let ratio = tracked as f64 / lifespan as f64;
        if ratio >= 0.8 {
            mostly_tracked += 1;
        }
        if ratio <= 0.2 {
            mostly_lost += 1;
        }
        // trim trailing untracked frames: a lost tail is not a fragmentation
        let last_tracked = status.iter().rposition(|&s| s);
        if let Some(end) = last_tracked {
            for w in status[..=end].windows(2) {
                if w[0] && !w[1] {
                    fragmentations += 1;
                }
            }
        }
    }

    let gt_boxes_total = gt.total_boxes();
    let hyp_boxes_total = hyp.total_boxes();
    let mota = if gt_boxes_total > 0 {
        1.0 - (false_positives + false_negatives + id_switches) as f64 / gt_boxes_total as f64
    } else {
        1.0
    };
    let motp = if iou_count > 0 {
        iou_sum / iou_count as f64
    } else {
        0.0
    };

    let idf1 = compute_idf1(gt, hyp, &overlap, gt_boxes_total, hyp_boxes_total);

    let gt_targets = gt_status.len();
    let (mt_pct, ml_pct) = if gt_targets > 0 {
        (
            100.0 * mostly_tracked as f64 / gt_targets as f64,
            100.0 * mostly_lost as f64 / gt_targets as f64,
        )
    } else {
        (0.0, 0.0)
    };

    Ok(MetricsReport {
        idf1,
        mota,
        motp,
        mostly_tracked: mt_pct,
        mostly_lost: ml_pct,
        false_positives,
        false_negatives,
        id_switches,
        fragmentations,
        gt_boxes: gt_boxes_total,
        hyp_boxes: hyp_boxes_total,
    })
}

/// IDF1 via an exact global bipartite matching between ground-truth and
/// hypothesis identities on non-overlap counts.
fn compute_idf1(
    gt: &SequenceAnnotations,
    hyp: &SequenceAnnotations,
    overlap: &HashMap<(u32, u32), usize>,
    gt_boxes_total: usize,
    hyp_boxes_total: usize,
) -> f64 {
    let mut gt_len: BTreeMap<u32, usize> = BTreeMap::new();
    for boxes in gt.frames.values() {
        for (id, _) in boxes {
            *gt_len.entry(*id).or_default() += 1;
        }
    }
    let mut hyp_len: BTreeMap<u32, usize> = BTreeMap::new();
    for boxes in hyp.frames.values() {
        for (id, _) in boxes {
            *hyp_len.entry(*id).or_default() += 1;
        }
    }
    let gt_ids: Vec<u32> = gt_len.keys().copied().collect();
    let hyp_ids: Vec<u32> = hyp_len.keys().copied().collect();
    if gt_ids.is_empty() && hyp_ids.is_empty() {
        return 1.0;
    }

    // square matrix over real + dummy identities; a real-real entry costs the
    // frames of either identity not covered by the pair, a real-dummy entry
    // costs the identity's whole length
    let n = gt_ids.len() + hyp_ids.len();
    let max_cost = (gt_boxes_total + hyp_boxes_total) as f64;
    let mut matrix = CostMatrix::new(n, n, max_cost);
    for r in 0..n {
        for c in 0..n {
            let cost = match (gt_ids.get(r), hyp_ids.get(c)) {
                (Some(g), Some(h)) => {
                    let m = overlap.get(&(*g, *h)).copied().unwrap_or(0);
                    (gt_len[g] + hyp_len[h] - 2 * m) as f64
                }
                (Some(g), None) => gt_len[g] as f64,
                (None, Some(h)) => hyp_len[h] as f64,
                (None, None) => 0.0,
            };
            matrix.set(r, c, cost);
        }
    }
    let assignment = solve_assignment(&matrix);
    let mut idtp = 0usize;
    for (r, c) in assignment.matches {
        if let (Some(g), Some(h)) = (gt_ids.get(r), hyp_ids.get(c)) {
            idtp += overlap.get(&(*g, *h)).copied().unwrap_or(0);
        }
    }
    let idfn = gt_boxes_total - idtp;
    let idfp = hyp_boxes_total - idtp;
    let denom = 2 * idtp + idfp + idfn;
    if denom == 0 {
        1.0
    } else {
        2.0 * idtp as f64 / denom as f64
    }
}
