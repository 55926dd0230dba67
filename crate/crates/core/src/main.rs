//! Command-line driver: track a sequence bundle, evaluate result files,
//! compare association strategies, generate synthetic data, and dump a
//! track's distance-model plot data.
//!
//! Exit codes: 0 success, 1 input error, 2 internal invariant violation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hta_mot::association::{HtaBase, Strategy};
use hta_mot::error::Error;
use hta_mot::io::{self, SequenceBundle};
use hta_mot::metrics::{self, MetricsReport, SequenceAnnotations};
use hta_mot::synth;
use hta_mot::tracker::{ResultRow, TrackArchive, Tracker, TrackerConfig};
use hta_mot::Result;

#[derive(Parser)]
#[command(name = "hta-mot", about = "Multi-object tracking with per-track distance models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracker over a sequence bundle directory.
    Track {
        /// Bundle directory (det.txt, features.csv, seqinfo.txt, optional gt.txt).
        bundle: PathBuf,
        #[command(flatten)]
        flags: TrackFlags,
        /// Output directory for results.txt, manifest.json, tracks.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score result files against a ground-truth file.
    Eval {
        /// Ground-truth file in MOTChallenge format.
        #[arg(long)]
        gt: PathBuf,
        /// One or more result files.
        results: Vec<PathBuf>,
        /// Optional path for a machine-readable JSON report.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run several strategies over one bundle and print a comparison table.
    Compare {
        bundle: PathBuf,
        /// Comma-separated strategy names (cms, knn, ema, hta).
        #[arg(long, value_delimiter = ',', default_value = "cms,knn,ema,hta")]
        strategies: Vec<String>,
        #[command(flatten)]
        flags: TrackFlags,
        /// Optional directory for per-strategy result files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic sequence bundle with ground truth.
    Generate {
        /// Scenario preset: "ambiguity" (crowded crossing, mixed feature
        /// quality) or "separable" (clean, trivially separable identities).
        #[arg(long, default_value = "ambiguity")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a track's distance records, fitted mixture density, and inlier
    /// component subset as CSV plot data.
    InspectTrack {
        /// Directory written by `track` (reads its tracks.json).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        track_id: u32,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Tracker configuration flags shared by `track` and `compare`. Values in a
/// `--config` key-value file are applied first; flags override the file.
#[derive(Args, Clone, Default)]
struct TrackFlags {
    /// Association strategy: cms, knn, ema, or hta.
    #[arg(long)]
    strategy: Option<String>,
    /// Mixing weight between current distance and model probability (hta).
    #[arg(long)]
    lambda: Option<f64>,
    /// Records required before the distance model joins the cost (hta).
    #[arg(long = "min-track-length")]
    min_track_length: Option<usize>,
    /// Weight portion covered by inlier components (hta).
    #[arg(long)]
    upsilon: Option<f64>,
    /// Neighbour count (knn).
    #[arg(long)]
    k: Option<usize>,
    /// Feature smoothing coefficient (ema, hta).
    #[arg(long)]
    eta: Option<f32>,
    /// Appearance gate: pairs with distance above this are infeasible.
    #[arg(long)]
    dmax: Option<f64>,
    /// Minimum detection confidence for use and track spawning.
    #[arg(long = "score-threshold")]
    score_threshold: Option<f64>,
    /// Per-track feature gallery capacity.
    #[arg(long = "gallery-budget")]
    gallery_budget: Option<usize>,
    /// Seed recorded in the manifest (tracking itself is deterministic).
    #[arg(long)]
    seed: Option<u64>,
    /// Plain-text key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Everything needed to reconstruct a tracking run.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    sequence: String,
    frame_count: u32,
    detection_count: usize,
    config: TrackerConfig,
    seed: Option<u64>,
    /// Wall-clock seconds for ingestion plus tracking.
    elapsed_seconds: f64,
    /// Frames per second including ingestion.
    fps: f64,
    results_path: String,
    tracks_path: String,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let code = match err {
            Error::Contract(_) | Error::State(_) | Error::Numerical(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track { bundle, flags, out } => cmd_track(&bundle, &flags, &out),
        Command::Eval { gt, results, json } => cmd_eval(&gt, &results, json.as_deref()),
        Command::Compare {
            bundle,
            strategies,
            flags,
            out,
        } => cmd_compare(&bundle, &strategies, &flags, out.as_deref()),
        Command::Generate { preset, seed, out } => cmd_generate(&preset, seed, &out),
        Command::InspectTrack { run, track_id, out } => {
            cmd_inspect(&run, track_id, out.as_deref())
        }
    }
}

/// Builds the tracker configuration from defaults, then the config file, then
/// command-line flags.
fn resolve_config(flags: &TrackFlags) -> Result<TrackerConfig> {
    let mut file: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = &flags.config {
        for (key, value) in io::read_key_values(path)? {
            file.insert(key.replace('-', "_"), value);
        }
    }

    fn parsed<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
        match file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Input(format!("malformed config value {key}={raw}"))),
        }
    }

    let mut config = TrackerConfig::default();
    if let Some(v) = parsed(&file, "dmax")? {
        config.d_max = v;
    }
    if let Some(v) = flags.dmax {
        config.d_max = v;
    }
    if let Some(v) = parsed(&file, "score_threshold")? {
        config.score_threshold = v;
    }
    if let Some(v) = flags.score_threshold {
        config.score_threshold = v;
    }
    if let Some(v) = parsed(&file, "gallery_budget")? {
        config.gallery_budget = v;
    }
    if let Some(v) = flags.gallery_budget {
        config.gallery_budget = v;
    }
    if let Some(v) = parsed(&file, "n_init")? {
        config.n_init = v;
    }
    if let Some(v) = parsed(&file, "max_age")? {
        config.max_age = v;
    }

    // strategy parameters: defaults, then file, then flags
    let defaults = Strategy::hta(0.9, 15, 0.8, 0.9);
    let (mut lambda, mut min_len, mut upsilon, mut eta) = match defaults {
        Strategy::Hta {
            lambda,
            min_track_length,
            upsilon,
            eta,
            ..
        } => (lambda, min_track_length, upsilon, eta),
        _ => unreachable!(),
    };
    let mut k = 5usize;
    if let Some(v) = parsed(&file, "lambda")? {
        lambda = v;
    }
    if let Some(v) = flags.lambda {
        lambda = v;
    }
    if let Some(v) = parsed(&file, "min_track_length")? {
        min_len = v;
    }
    if let Some(v) = flags.min_track_length {
        min_len = v;
    }
    if let Some(v) = parsed(&file, "upsilon")? {
        upsilon = v;
    }
    if let Some(v) = flags.upsilon {
        upsilon = v;
    }
    if let Some(v) = parsed(&file, "eta")? {
        eta = v;
    }
    if let Some(v) = flags.eta {
        eta = v;
    }
    if let Some(v) = parsed(&file, "k")? {
        k = v;
    }
    if let Some(v) = flags.k {
        k = v;
    }
    let base = match file.get("hta_base").map(String::as_str) {
        None | Some("ema") => HtaBase::Ema,
        Some("cms") => HtaBase::Cms,
        Some("knn") => HtaBase::Knn { k },
        Some(other) => {
            return Err(Error::Input(format!("unknown hta_base '{other}'")));
        }
    };
    let cascade = parsed(&file, "cascade")?.unwrap_or(false);

    let name = flags
        .strategy
        .clone()
        .or_else(|| file.get("strategy").cloned())
        .unwrap_or_else(|| "hta".into());
    config.strategy = match name.as_str() {
        "cms" => Strategy::Cms,
        "knn" => Strategy::Knn { k },
        "ema" => Strategy::Ema { eta },
        "hta" => Strategy::Hta {
            lambda,
            min_track_length: min_len,
            upsilon,
            eta,
            base,
            cascade,
        },
        other => {
            return Err(Error::Input(format!(
                "unknown strategy '{other}' (expected cms, knn, ema, or hta)"
            )));
        }
    };
    config.validate()?;
    Ok(config)
}

/// Loads the bundle and runs one tracker over it, timing ingestion plus
/// association together.
fn run_tracker(
    bundle_dir: &Path,
    config: &TrackerConfig,
) -> Result<(SequenceBundle, Vec<ResultRow>, Vec<TrackArchive>, f64)> {
    let started = Instant::now();
    let bundle = io::load_bundle(bundle_dir, config.score_threshold)?;
    let mut tracker = Tracker::new(config.clone())?;
    let mut rows = Vec::new();
    for (frame, detections) in bundle.stream() {
        rows.extend(tracker.step(frame, detections)?);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let archive = tracker.archived_tracks();
    Ok((bundle, rows, archive, elapsed))
}

fn cmd_track(bundle_dir: &Path, flags: &TrackFlags, out: &Path) -> Result<()> {
    let config = resolve_config(flags)?;
    let (bundle, rows, archive, elapsed) = run_tracker(bundle_dir, &config)?;

    fs::create_dir_all(out)?;
    let results_path = out.join("results.txt");
    io::write_results(&rows, &results_path)?;
    let tracks_path = out.join("tracks.json");
    fs::write(&tracks_path, serde_json::to_string_pretty(&archive)?)?;

    let manifest = RunManifest {
        sequence: bundle.name.clone(),
        frame_count: bundle.frame_count,
        detection_count: bundle.detection_count(),
        config,
        seed: flags.seed,
        elapsed_seconds: elapsed,
        fps: bundle.frame_count as f64 / elapsed.max(1e-9),
        results_path: results_path.display().to_string(),
        tracks_path: tracks_path.display().to_string(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    println!(
        "{}: {} frames, {} detections, {} output rows, {:.1} fps",
        bundle.name,
        bundle.frame_count,
        manifest.detection_count,
        rows.len(),
        manifest.fps
    );
    Ok(())
}

const TABLE_HEADER: &str =
    "name            IDF1   MOTA   MOTP     MT     ML     FP     FN   IDS  Frag";

fn table_row(name: &str, r: &MetricsReport) -> String {
    format!(
        "{:<14} {:>5.1}% {:>5.1}% {:>5.1}% {:>5.1}% {:>5.1}% {:>6} {:>6} {:>5} {:>5}",
        name,
        100.0 * r.idf1,
        100.0 * r.mota,
        100.0 * r.motp,
        r.mostly_tracked,
        r.mostly_lost,
        r.false_positives,
        r.false_negatives,
        r.id_switches,
        r.fragmentations
    )
}

fn cmd_eval(gt_path: &Path, results: &[PathBuf], json: Option<&Path>) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Input("no result files given".into()));
    }
    let gt = io::read_ground_truth(gt_path)?;
    let mut reports = Vec::new();
    println!("{TABLE_HEADER}");
    for path in results {
        let hyp = io::read_results(path)?;
        let report = metrics::evaluate(&gt, &hyp, 0.5)?;
        println!("{}", table_row(&path.display().to_string(), &report));
        reports.push((path.display().to_string(), report));
    }
    if let Some(path) = json {
        let body: Vec<serde_json::Value> = reports
            .iter()
            .map(|(file, report)| {
                serde_json::json!({ "file": file, "metrics": report })
            })
            .collect();
        fs::write(path, serde_json::to_string_pretty(&body)?)?;
    }
    Ok(())
}

fn cmd_compare(
    bundle_dir: &Path,
    strategies: &[String],
    flags: &TrackFlags,
    out: Option<&Path>,
) -> Result<()> {
    if strategies.is_empty() {
        return Err(Error::Input("no strategies given".into()));
    }
    println!("{TABLE_HEADER}    FPS");
    for name in strategies {
        let mut flags = flags.clone();
        flags.strategy = Some(name.clone());
        let config = resolve_config(&flags)?;
        let (bundle, rows, _, elapsed) = run_tracker(bundle_dir, &config)?;
        let gt = bundle.ground_truth.as_ref().ok_or_else(|| {
            Error::Input(format!("{} has no gt.txt to compare against", bundle_dir.display()))
        })?;
        let mut hyp = SequenceAnnotations::default();
        for row in &rows {
            hyp.insert(row.frame, row.track_id, row.bbox);
        }
        let report = metrics::evaluate(gt, &hyp, 0.5)?;
        println!(
            "{} {:>6.1}",
            table_row(name, &report),
            bundle.frame_count as f64 / elapsed.max(1e-9)
        );
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            io::write_results(&rows, &dir.join(format!("{name}.txt")))?;
        }
    }
    Ok(())
}

fn cmd_generate(preset: &str, seed: u64, out: &Path) -> Result<()> {
    let spec = match preset {
        "ambiguity" => synth::ambiguity_suite(seed),
        "separable" => {
            let mut spec = synth::ambiguity_suite(seed);
            spec.name = format!("separable-{seed}");
            spec.identity_similarity = 0.0;
            spec.miss_rate = 0.0;
            spec.clutter_rate = 0.0;
            spec.corrupt_rate = 0.0;
            for target in &mut spec.targets {
                target.noise_scale = 0.0;
                target.occlusions.clear();
            }
            spec
        }
        other => {
            return Err(Error::Input(format!(
                "unknown preset '{other}' (expected ambiguity or separable)"
            )));
        }
    };
    let bundle = synth::generate(&spec)?;
    io::write_bundle(&bundle, out)?;
    println!(
        "{}: wrote {} frames, {} detections to {}",
        bundle.name,
        bundle.frame_count,
        bundle.detection_count(),
        out.display()
    );
    Ok(())
}

/// Plot data for one track: its recorded distances, the fitted mixture, and
/// the density restricted to the inlier components.
fn inspect_csv(track: &TrackArchive, upsilon: f64) -> Result<String> {
    let mut out = String::from("kind,x,y,z\n");
    for d in &track.distance_records {
        out.push_str(&format!("record,{d},,\n"));
    }
    let model = &track.igmm;
    if model.is_empty() {
        return Ok(out);
    }
    let inliers = model.select_inlier_components(upsilon)?;
    for (index, c) in model.components().iter().enumerate() {
        out.push_str(&format!(
            "component,{},{},{}\n",
            c.mean,
            c.weight,
            if inliers.contains(&index) { 1 } else { 0 }
        ));
    }
    // dense grid wide enough to capture all component mass
    let (lo, hi) = (-0.5f64, 1.5f64);
    let steps = 2000usize;
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        let full = model.density(None, x)?;
        let inlier = model.density(Some(&inliers), x)?;
        out.push_str(&format!("density,{x},{full},{inlier}\n"));
    }
    Ok(out)
}

fn cmd_inspect(run: &Path, track_id: u32, out: Option<&Path>) -> Result<()> {
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json"))?)?;
    let archive: Vec<TrackArchive> =
        serde_json::from_str(&fs::read_to_string(run.join("tracks.json"))?)?;
    let track = archive.iter().find(|t| t.id == track_id).ok_or_else(|| {
        Error::Input(format!("no track with id {track_id} in {}", run.display()))
    })?;
    let upsilon = match manifest.config.strategy {
        Strategy::Hta { upsilon, .. } => upsilon,
        _ => 0.8,
    };
    let csv = inspect_csv(track, upsilon)?;
    match out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
