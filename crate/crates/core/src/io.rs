//! MOTChallenge-format ingestion, feature files, sequence bundles, and result
//! writing.
//!
//! A sequence bundle is a directory holding:
//!   - `det.txt`      detections, one CSV row `frame,id,left,top,w,h,conf,x,y,z`
//!   - `features.csv` appearance features, `frame,detection-index,v0,...,v{l-1}`
//!     preceded by a header line `# dim=<l>`
//!   - `gt.txt`       optional ground truth in the same box format
//!   - `seqinfo.txt`  plain-text `key=value` metadata (name, frame_rate,
//!     frame_count, feature_dim)

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::appearance::Feature;
use crate::error::{Error, Result};
use crate::metrics::SequenceAnnotations;
use crate::motion::BoundingBox;
use crate::tracker::{Detection, ResultRow};

/// A raw detection row before feature attachment.
#[derive(Debug, Clone, Copy)]
pub struct DetectionRow {
    pub frame: u32,
    pub bbox: BoundingBox,
}

/// A loaded sequence: per-frame detections with their features, plus optional
/// ground truth.
#[derive(Debug, Clone)]
pub struct SequenceBundle {
    pub name: String,
    pub frame_rate: f64,
    pub frame_count: u32,
    pub feature_dim: usize,
    pub detections: BTreeMap<u32, Vec<Detection>>,
    pub ground_truth: Option<SequenceAnnotations>,
}

impl SequenceBundle {
    /// Detection stream in frame order, covering every frame from 1 to
    /// `frame_count` (frames without detections yield empty slices).
    pub fn stream(&self) -> Vec<(u32, &[Detection])> {
        (1..=self.frame_count)
            .map(|frame| {
                let dets = self
                    .detections
                    .get(&frame)
                    .map(|v| v.as_slice())
                    .unwrap_or(&[]);
                (frame, dets)
            })
            .collect()
    }

    pub fn detection_count(&self) -> usize {
        self.detections.values().map(Vec::len).sum()
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<T> {
    field
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("missing or malformed {what}"),
        })
}

/// Reads a MOTChallenge detection file, dropping rows with confidence below
/// `score_threshold`. The id column and trailing fields are ignored.
pub fn read_detections(path: &Path, score_threshold: f64) -> Result<Vec<DetectionRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(',');
        let frame: u32 = parse_field(fields.next(), path, lineno, "frame")?;
        let _id: f64 = parse_field(fields.next(), path, lineno, "id")?;
        let left: f64 = parse_field(fields.next(), path, lineno, "left")?;
        let top: f64 = parse_field(fields.next(), path, lineno, "top")?;
        let width: f64 = parse_field(fields.next(), path, lineno, "width")?;
        let height: f64 = parse_field(fields.next(), path, lineno, "height")?;
        let conf: f64 = parse_field(fields.next(), path, lineno, "confidence")?;
        if conf < score_threshold {
            continue;
        }
        let bbox = BoundingBox::new(left, top, width, height, conf).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        rows.push(DetectionRow { frame, bbox });
    }
    Ok(rows)
}

/// Reads a MOTChallenge ground-truth file. Rows whose seventh column (the
/// consider flag) is 0 are skipped.
pub fn read_ground_truth(path: &Path) -> Result<SequenceAnnotations> {
    let text = fs::read_to_string(path)?;
    let mut annotations = SequenceAnnotations::default();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(',');
        let frame: u32 = parse_field(fields.next(), path, lineno, "frame")?;
        let id: u32 = parse_field(fields.next(), path, lineno, "id")?;
        let left: f64 = parse_field(fields.next(), path, lineno, "left")?;
        let top: f64 = parse_field(fields.next(), path, lineno, "top")?;
        let width: f64 = parse_field(fields.next(), path, lineno, "width")?;
        let height: f64 = parse_field(fields.next(), path, lineno, "height")?;
        let flag: f64 = fields
            .next()
            .map(str::trim)
            .and_then(|s| s.parse().ok())
            .unwrap_or(1.0);
        if flag == 0.0 {
            continue;
        }
        let bbox = BoundingBox::new(left, top, width, height, 1.0).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        annotations.insert(frame, id, bbox);
    }
    Ok(annotations)
}

/// Reads a feature file: a `# dim=<l>` header line followed by one row
/// `frame,detection-index,v0,...,v{l-1}` per detection.
pub fn read_features(path: &Path) -> Result<BTreeMap<(u32, u32), Feature>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "empty feature file".into(),
    })?;
    let dim: usize = header
        .trim()
        .strip_prefix('#')
        .and_then(|s| s.trim().strip_prefix("dim="))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "expected header line '# dim=<l>'".into(),
        })?;
    let mut features = BTreeMap::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(',');
        let frame: u32 = parse_field(fields.next(), path, lineno, "frame")?;
        let det_index: u32 = parse_field(fields.next(), path, lineno, "detection index")?;
        let values: Vec<f32> = fields
            .map(|f| {
                f.trim().parse::<f32>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    message: format!("malformed feature value '{f}'"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected {dim} feature values, found {}", values.len()),
            });
        }
        let feature = Feature::new(values).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        features.insert((frame, det_index), feature);
    }
    Ok(features)
}

/// Writes a feature file in the format `read_features` expects.
pub fn write_features(features: &BTreeMap<(u32, u32), Feature>, dim: usize, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# dim={dim}\n"));
    for ((frame, det_index), feature) in features {
        out.push_str(&format!("{frame},{det_index}"));
        for v in feature.values() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a plain-text `key=value` metadata file.
pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: "expected 'key=value'".into(),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Loads a sequence bundle directory. Every detection row must have exactly
/// one feature row keyed by (frame, per-frame detection index).
pub fn load_bundle(dir: &Path, score_threshold: f64) -> Result<SequenceBundle> {
    let info_path = dir.join("seqinfo.txt");
    let info = read_key_values(&info_path)?;
    let get = |key: &str| {
        info.get(key)
            .ok_or_else(|| Error::Input(format!("{} is missing key '{key}'", info_path.display())))
    };
    let name = get("name")?.clone();
    let frame_rate: f64 = get("frame_rate")?
        .parse()
        .map_err(|_| Error::Input("malformed frame_rate".into()))?;
    let frame_count: u32 = get("frame_count")?
        .parse()
        .map_err(|_| Error::Input("malformed frame_count".into()))?;
    let feature_dim: usize = get("feature_dim")?
        .parse()
        .map_err(|_| Error::Input("malformed feature_dim".into()))?;

    let det_path = dir.join("det.txt");
    let feature_path = dir.join("features.csv");
    if !feature_path.exists() {
        return Err(Error::Input(format!(
            "missing feature file {}",
            feature_path.display()
        )));
    }
    let rows = read_detections(&det_path, score_threshold)?;
    let features = read_features(&feature_path)?;

    let mut detections: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    let mut per_frame_index: BTreeMap<u32, u32> = BTreeMap::new();
    for row in rows {
        let index = per_frame_index.entry(row.frame).or_insert(0);
        let feature = features.get(&(row.frame, *index)).ok_or_else(|| {
            Error::Input(format!(
                "no feature row for frame {} detection {} in {}",
                row.frame,
                index,
                feature_path.display()
            ))
        })?;
        if feature.dim() != feature_dim {
            return Err(Error::Input(format!(
                "feature dimension {} does not match declared {}",
                feature.dim(),
                feature_dim
            )));
        }
        *index += 1;
        detections.entry(row.frame).or_default().push(Detection {
            bbox: row.bbox,
            feature: feature.clone(),
        });
    }

    let gt_path = dir.join("gt.txt");
    let ground_truth = if gt_path.exists() {
        Some(read_ground_truth(&gt_path)?)
    } else {
        None
    };

    Ok(SequenceBundle {
        name,
        frame_rate,
        frame_count,
        feature_dim,
        detections,
        ground_truth,
    })
}

/// Serializes result rows in MOTChallenge format, sorted by frame then id:
/// `frame,id,left,top,width,height,1,-1,-1,-1`.
pub fn format_results(rows: &[ResultRow]) -> String {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.track_id));
    let mut out = String::new();
    for r in sorted {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},1,-1,-1,-1\n",
            r.frame, r.track_id, r.bbox.left, r.bbox.top, r.bbox.width, r.bbox.height
        ));
    }
    out
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    if let Some(id) = rows.iter().find(|r| r.track_id == 0) {
        return Err(Error::Input(format!(
            "track ids must be positive, found {} at frame {}",
            id.track_id, id.frame
        )));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(format_results(rows).as_bytes())?;
    Ok(())
}

/// Reads a result file back as identity-labelled annotations.
pub fn read_results(path: &Path) -> Result<SequenceAnnotations> {
    let text = fs::read_to_string(path)?;
    let mut annotations = SequenceAnnotations::default();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(',');
        let frame: u32 = parse_field(fields.next(), path, lineno, "frame")?;
        let id: u32 = parse_field(fields.next(), path, lineno, "id")?;
        let left: f64 = parse_field(fields.next(), path, lineno, "left")?;
        let top: f64 = parse_field(fields.next(), path, lineno, "top")?;
        let width: f64 = parse_field(fields.next(), path, lineno, "width")?;
        let height: f64 = parse_field(fields.next(), path, lineno, "height")?;
        let bbox = BoundingBox::new(left, top, width, height, 1.0).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        annotations.insert(frame, id, bbox);
    }
    Ok(annotations)
}

/// Writes a bundle directory (used by the synthetic generator and tests).
pub fn write_bundle(bundle: &SequenceBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut info = String::new();
    info.push_str(&format!("name={}\n", bundle.name));
    info.push_str(&format!("frame_rate={}\n", bundle.frame_rate));
    info.push_str(&format!("frame_count={}\n", bundle.frame_count));
    info.push_str(&format!("feature_dim={}\n", bundle.feature_dim));
    fs::write(dir.join("seqinfo.txt"), info)?;

    let mut det = String::new();
    let mut features = BTreeMap::new();
    for (frame, dets) in &bundle.detections {
        for (index, d) in dets.iter().enumerate() {
            det.push_str(&format!(
                "{},-1,{:.2},{:.2},{:.2},{:.2},{:.4},-1,-1,-1\n",
                frame, d.bbox.left, d.bbox.top, d.bbox.width, d.bbox.height, d.bbox.confidence
            ));
            features.insert((*frame, index as u32), d.feature.clone());
        }
    }
    fs::write(dir.join("det.txt"), det)?;
    write_features(&features, bundle.feature_dim, &dir.join("features.csv"))?;

    if let Some(gt) = &bundle.ground_truth {
        let mut out = String::new();
        for (frame, boxes) in &gt.frames {
            for (id, b) in boxes {
                out.push_str(&format!(
                    "{},{},{:.2},{:.2},{:.2},{:.2},1,1,1\n",
                    frame, id, b.left, b.top, b.width, b.height
                ));
            }
        }
        fs::write(dir.join("gt.txt"), out)?;
    }
    Ok(())
}
