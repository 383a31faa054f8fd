//! The `odt` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adjoint::Constraint;
use crate::calibration::{apply_calibration, calibrate_dataset_with, estimate_wavevector, CalibrationFlag, CalibrationOptions};
use crate::error::{OdtError, Result};
use crate::forward::RiVolume;
use crate::io::{self, load_dataset, load_volume, read_json, save_dataset, save_volume, write_atomic, write_json};
use crate::reconstruct::{reconstruct, reconstruct_from, Precision, ReconstructionConfig, StopReason};
use crate::report::{self, Axis, Circle};
use crate::simulate::{perturb_reported_illuminations, rasterize_phantom, simulate_dataset, spiral_illuminations, NoiseSpec, PhantomSpec};
use crate::stitch::{build_blend_masks, global_frame, place_chain, stitch, Frame, DEFAULT_MIN_CONFIDENCE};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";
pub const COST_FILE: &str = "cost.csv";

/// Acquisition settings for `simulate`; the grid comes from the phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub wavelength_medium_um: f64,
    pub na_detection: f64,
    pub na_illumination: f64,
    pub n_angles: usize,
    #[serde(default)]
    pub z_hat_um: Option<f64>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    /// Uniform reporting error injected per axis, in frequency samples.
    #[serde(default)]
    pub perturb_samples: f64,
}

#[derive(Debug, Parser)]
#[command(name = "odt", version, about = "Multi-slice optical diffraction tomography")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phantom + system spec -> intensity dataset (and the ground-truth volume).
    Simulate(SimulateArgs),
    /// Dataset -> calibration report + corrected dataset.
    Calibrate(CalibrateArgs),
    /// Dataset + config -> volume + cost history.
    Reconstruct(ReconstructArgs),
    /// Manifest of overlapping volumes -> fused volume + placement report.
    Stitch(StitchArgs),
    /// Volume or dataset -> slice images, spectra and line profiles.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub phantom: PathBuf,
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub perturb_samples: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub search_radius: Option<f64>,
    /// Search the whole brightfield disk instead of around the reported wavevector.
    #[arg(long)]
    pub no_hints: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this volume instead of the homogeneous medium.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_constraint)]
    pub constraint: Option<Constraint>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub stop_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_confidence: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub volume: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Voxel `k,i,j` the slices and profile pass through; defaults to the center.
    #[arg(long, value_parser = parse_point)]
    pub point: Option<[usize; 3]>,
    /// Write `profile_<axis>.csv` along this axis.
    #[arg(long)]
    pub profile: Option<Axis>,
    /// Dataset angles to draw; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<usize>>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_constraint(s: &str) -> std::result::Result<Constraint, String> {
    parse_enum(s)
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    parse_enum(s)
}

fn parse_point(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected k,i,j".to_string())
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| OdtError::io(dir, e))
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let phantom: PhantomSpec = read_json(&a.phantom)?;
    let mut system: SystemSpec = read_json(&a.system)?;
    if let Some(seed) = a.seed {
        system.seed = seed;
    }
    if let Some(p) = a.perturb_samples {
        system.perturb_samples = p;
    }
    let truth = rasterize_phantom(&phantom)?;
    let z_hat = system
        .z_hat_um
        .unwrap_or_else(|| crate::forward::OpticalSystem::centered_focus(phantom.dz_um, phantom.n_layers));
    let sys = crate::forward::OpticalSystem::new(
        phantom.nx,
        phantom.ny,
        phantom.pixel_pitch_um,
        system.wavelength_medium_um,
        phantom.n_medium,
        system.na_detection,
        z_hat,
    )?;
    let illums = spiral_illuminations(system.n_angles, system.na_illumination, sys.wavelength_vacuum())?;
    let mut ds = simulate_dataset(&truth, &illums, &sys, &system.noise, system.seed)?;
    if system.perturb_samples > 0.0 {
        perturb_reported_illuminations(&mut ds, system.perturb_samples, system.seed)?;
    }
    create_out(&a.out)?;
    save_dataset(&ds, &a.out)?;
    save_volume(&truth, &a.out.join("phantom"))?;
    write_json(
        &a.out.join(EFFECTIVE_CONFIG_FILE),
        &serde_json::json!({ "phantom": phantom, "system": system }),
    )?;
    log::info!("simulated {} angles into {}", ds.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut opts = CalibrationOptions::default();
    if let Some(t) = a.confidence_threshold {
        opts.confidence_threshold = t;
    }
    if let Some(r) = a.search_radius {
        opts.search_radius_samples = r;
    }
    if a.no_hints {
        opts.use_hints = false;
    }
    let result = calibrate_dataset_with(&ds, &opts)?;
    let corrected = apply_calibration(&ds, &result);
    create_out(&a.out)?;
    save_dataset(&corrected, &a.out)?;
    let report = result.report();
    write_json(&a.out.join("calibration_report.json"), &report)?;
    write_json(&a.out.join(EFFECTIVE_CONFIG_FILE), &opts)?;
    log::info!(
        "calibrated {} angles: {} ok, {} darkfield, {} low confidence; max correction {:.3} samples",
        ds.len(),
        report.n_ok,
        report.n_darkfield,
        report.n_low_confidence,
        report.max_correction_samples
    );
    Ok(())
}

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut cfg: ReconstructionConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ReconstructionConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.tv.beta = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.constraint {
        cfg.constraint = v;
    }
    if let Some(v) = a.precision {
        cfg.precision = v;
    }
    if let Some(v) = a.stop_tolerance {
        cfg.stop_tolerance = v;
    }
    create_out(&a.out)?;
    write_json(&a.out.join(EFFECTIVE_CONFIG_FILE), &cfg)?;
    let result = match &a.initial {
        Some(p) => reconstruct_from(&ds, &cfg, load_volume(p)?)?,
        None => reconstruct(&ds, &cfg)?,
    };
    save_volume(&result.volume, &a.out.join("volume"))?;
    let mut csv = String::from("epoch,cost\n");
    for (e, c) in result.history.epoch.iter().zip(&result.history.cost) {
        csv.push_str(&format!("{e},{c:e}\n"));
    }
    write_atomic(&a.out.join(COST_FILE), csv.as_bytes())?;
    write_json(
        &a.out.join("summary.json"),
        &serde_json::json!({
            "epochs_completed": result.history.len(),
            "stop_reason": result.stop_reason,
            "first_cost": result.history.first(),
            "last_cost": result.history.last(),
        }),
    )?;
    log::info!(
        "{} epochs ({}), cost {:e} -> {:e}",
        result.history.len(),
        match result.stop_reason {
            StopReason::MaxEpochs => "epoch limit",
            StopReason::Plateau => "plateau",
        },
        result.history.first().unwrap_or(f64::NAN),
        result.history.last().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlacementEntry {
    path: PathBuf,
    offset: [i64; 3],
    /// Registration against the preceding volume; absent for the first.
    shift: Option<[i64; 3]>,
    confidence: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PlacementReport {
    frame: Frame,
    min_confidence: f64,
    volumes: Vec<PlacementEntry>,
}

fn stitch_cmd(a: &StitchArgs) -> Result<()> {
    let manifest = io::load_manifest(&a.manifest)?;
    let min_confidence = a
        .min_confidence
        .or(manifest.min_confidence)
        .unwrap_or(DEFAULT_MIN_CONFIDENCE);
    let volumes = manifest
        .volumes
        .iter()
        .map(|p| load_volume(p))
        .collect::<Result<Vec<RiVolume>>>()?;
    let (placed, regs) = place_chain(volumes, min_confidence)?;
    let masks = build_blend_masks(&placed)?;
    let fused = stitch(&placed, &masks)?;
    create_out(&a.out)?;
    save_volume(&fused, &a.out.join("volume"))?;
    let report = PlacementReport {
        frame: global_frame(&placed)?,
        min_confidence,
        volumes: manifest
            .volumes
            .iter()
            .zip(&placed)
            .enumerate()
            .map(|(i, (path, p))| PlacementEntry {
                path: path.clone(),
                offset: p.offset,
                shift: i.checked_sub(1).map(|j| regs[j].shift),
                confidence: i.checked_sub(1).map(|j| regs[j].confidence),
            })
            .collect(),
    };
    write_json(&a.out.join("placement.json"), &report)?;
    write_json(
        &a.out.join(EFFECTIVE_CONFIG_FILE),
        &serde_json::json!({ "manifest": manifest, "min_confidence": min_confidence }),
    )?;
    Ok(())
}

const REPORTED_COLOR: [u8; 3] = [255, 64, 64];
const DETECTED_COLOR: [u8; 3] = [64, 255, 64];

#[derive(Debug, Serialize)]
struct SpectrumEntry {
    angle: usize,
    file: String,
    reported: [f64; 2],
    detected: Option<[f64; 2]>,
    confidence: f64,
    flag: CalibrationFlag,
}

fn inspect_cmd(a: &InspectArgs) -> Result<()> {
    create_out(&a.out)?;
    if let Some(path) = &a.volume {
        let volume = load_volume(path)?;
        let (l, x, y) = volume.dim();
        let at = a.point.unwrap_or([l / 2, x / 2, y / 2]);
        report::write_orthogonal_slices(&volume, at, &a.out)?;
        if let Some(axis) = a.profile {
            let samples = report::line_profile(&volume, axis, at)?;
            let name = format!("profile_{}.csv", serde_json::to_value(axis).unwrap().as_str().unwrap_or("axis"));
            write_atomic(&a.out.join(name), report::profile_csv(&samples).as_bytes())?;
        }
        return Ok(());
    }
    let Some(path) = &a.dataset else {
        return Err(OdtError::param("volume", "either --volume or --dataset is required"));
    };
    let ds = load_dataset(path)?;
    let system = ds.geometry.system()?;
    let radius = system.pupil().cutoff();
    let indices: Vec<usize> = a.angles.clone().unwrap_or_else(|| (0..ds.len()).collect());
    let mut entries = Vec::new();
    for idx in indices {
        let (Some(img), Some(il)) = (ds.intensities.get(idx), ds.illuminations.get(idx)) else {
            return Err(OdtError::param("angles", format!("angle {idx} out of range (dataset has {})", ds.len())));
        };
        let est = estimate_wavevector(img, &system, Some(il.k0));
        let mut circles = Vec::new();
        for sign in [1.0, -1.0] {
            circles.push(Circle {
                center: [sign * il.k0[0], sign * il.k0[1]],
                radius,
                color: REPORTED_COLOR,
            });
            if let Some(k) = est.k0 {
                circles.push(Circle {
                    center: [sign * k[0], sign * k[1]],
                    radius,
                    color: DETECTED_COLOR,
                });
            }
        }
        let file = format!("spectrum_{idx:04}.png");
        report::write_spectrum_png(img, &system, &circles, &a.out.join(&file))?;
        entries.push(SpectrumEntry {
            angle: idx,
            file,
            reported: il.k0,
            detected: est.k0,
            confidence: est.confidence,
            flag: est.flag,
        });
    }
    write_json(
        &a.out.join("spectra.json"),
        &serde_json::json!({
            "reported_color": REPORTED_COLOR,
            "detected_color": DETECTED_COLOR,
            "disk_radius_rad_per_um": radius,
            "angles": entries,
        }),
    )
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Stitch(a) => stitch_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

/// One-line JSON description of a failure, as printed on stderr.
pub fn error_line(err: &OdtError) -> String {
    serde_json::json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code != 0 {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": "usage", "message": e.kind().to_string() })
                );
            }
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
