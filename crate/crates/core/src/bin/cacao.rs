//! Command-line front end for simulation, aberration recovery, and
//! coded-aperture deconvolution.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cacao_core::aperture::MaskShape;
use cacao_core::blur::{estimate_blur, BlurParams};
use cacao_core::deconv::{deconvolve, DeconvParams, DeconvProblem};
use cacao_core::error::{Error, Result};
use cacao_core::field::{ComplexField2D, RealImage2D};
use cacao_core::io;
use cacao_core::pipeline::{
    resolution_report, run_pipeline, simulate_captures, PipelineConfig, SimRecipe,
};
use cacao_core::register::{average_frames, radiometric_calibrate, register_frames};
use cacao_core::simulate::{measure_snr, PupilFunction, Rect};
use cacao_core::synthesis::{synthesize_pupil, SynthesisParams};

#[derive(Parser)]
#[command(
    name = "cacao",
    about = "Computational aberration recovery and coded-aperture deconvolution",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture stack from a JSON recipe.
    Simulate(SimulateArgs),
    /// Two-point radiometric calibration of a capture stack or one raster.
    Calibrate(CalibrateArgs),
    /// Register a directory of frames for rotation and translation.
    Register(RegisterArgs),
    /// Estimate local blur kernels from the small-aperture captures.
    EstimateBlur(EstimateBlurArgs),
    /// Stitch estimated kernels into the complex pupil function.
    SynthesizePupil(SynthesizeArgs),
    /// Deconvolve the big-mask captures with a recovered pupil.
    Deconvolve(DeconvolveArgs),
    /// Run the full pipeline from a JSON config.
    Pipeline(PipelineArgs),
    /// Emit the resolution-arithmetic report (optionally capture metrics).
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation recipe (a `SimRecipe`).
    #[arg(long)]
    config: PathBuf,
    /// Output capture directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the noise seed in the recipe.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Capture directory or single PFM.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    dark: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Output directory (for capture input) or PFM path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Directory of PFM frames, registered in lexicographic order.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 0)]
    reference_index: usize,
    /// Where to write the per-frame transforms (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optionally write the registered sum of all usable frames.
    #[arg(long)]
    sum: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateBlurArgs {
    /// Capture directory produced by `simulate` (or compatible).
    #[arg(long)]
    captures: PathBuf,
    /// Output kernel directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    captures: PathBuf,
    /// Kernel directory from `estimate-blur`.
    #[arg(long)]
    kernels: PathBuf,
    /// Output stem for the pupil field (writes re/im PFMs + JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    sweeps: usize,
}

#[derive(Args)]
struct DeconvolveArgs {
    #[arg(long)]
    captures: PathBuf,
    /// Pupil stem from `synthesize-pupil`.
    #[arg(long)]
    pupil: PathBuf,
    /// Output PFM (a PNG is written next to it).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON pipeline config (a `PipelineConfig`).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 520.0)]
    wavelength_nm: f64,
    #[arg(long, default_value_t = 5.5)]
    aperture_mm: f64,
    #[arg(long, default_value_t = 167.0)]
    focal_mm: f64,
    /// Optional capture directory to summarize (measured SNR).
    #[arg(long)]
    captures: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("CACAO_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn load_pfm_image(path: &Path) -> Result<RealImage2D> {
    io::read_pfm(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let mut recipe: SimRecipe = serde_json::from_str(&text)?;
            if let Some(seed) = args.seed {
                recipe.noise = match recipe.noise {
                    cacao_core::pipeline::NoiseSpec::TargetSnr {
                        snr,
                        read_noise_sigma,
                        ..
                    } => cacao_core::pipeline::NoiseSpec::TargetSnr {
                        snr,
                        read_noise_sigma,
                        seed,
                    },
                    cacao_core::pipeline::NoiseSpec::Explicit {
                        photon_scale,
                        read_noise_sigma,
                        dark_offset,
                        ..
                    } => cacao_core::pipeline::NoiseSpec::Explicit {
                        photon_scale,
                        read_noise_sigma,
                        dark_offset,
                        seed,
                    },
                    off => off,
                };
            }
            let sim = simulate_captures(&recipe)?;
            io::save_capture_set(&args.out, &sim.captures)?;
            println!(
                "wrote {} captures ({} scan + {} big masks) to {}",
                sim.captures.entries.len(),
                sim.scan.len(),
                sim.big_masks.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Calibrate(args) => {
            let dark = load_pfm_image(&args.dark)?;
            let reference = load_pfm_image(&args.reference)?;
            if args.input.is_dir() {
                let set = io::load_capture_set(&args.input)?;
                let mut out = set.clone();
                let mut dead_total = 0usize;
                for e in out.entries.iter_mut() {
                    let (img, dead) = radiometric_calibrate(&e.image, &dark, &reference)?;
                    e.image = img;
                    dead_total += dead;
                }
                io::save_capture_set(&args.out, &out)?;
                println!(
                    "calibrated {} captures ({} dead pixels) into {}",
                    out.entries.len(),
                    dead_total,
                    args.out.display()
                );
            } else {
                let img = load_pfm_image(&args.input)?;
                let (out, dead) = radiometric_calibrate(&img, &dark, &reference)?;
                io::write_pfm(&args.out, &out)?;
                println!("calibrated {} ({dead} dead pixels)", args.out.display());
            }
            Ok(())
        }
        Command::Register(args) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.frames)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pfm"))
                .collect();
            paths.sort();
            if paths.len() < 2 {
                return Err(Error::Parameter(format!(
                    "{} holds {} PFM frames; need at least 2",
                    args.frames.display(),
                    paths.len()
                )));
            }
            let frames: Vec<RealImage2D> = paths
                .iter()
                .map(|p| load_pfm_image(p))
                .collect::<Result<_>>()?;
            let regs = register_frames(&frames, args.reference_index)?;
            std::fs::write(&args.out, serde_json::to_string_pretty(&regs)?)?;
            let usable = regs.iter().filter(|r| r.usable).count();
            println!("registered {}/{} frames", usable, regs.len());
            if let Some(sum_path) = args.sum {
                let spec = cacao_core::aperture::ApertureSpec::full(0, 1.0);
                let group = vec![(spec, (0..frames.len()).collect::<Vec<_>>())];
                let entries = average_frames(&frames, &regs, &group)?;
                if let Some(e) = entries.first() {
                    io::write_pfm(&sum_path, &e.image)?;
                    println!("summed {} frames into {}", e.frame_count, sum_path.display());
                }
            }
            Ok(())
        }
        Command::EstimateBlur(args) => {
            let set = io::load_capture_set(&args.captures)?;
            let mut scan: Vec<_> = set
                .entries
                .iter()
                .filter(|e| matches!(e.spec.shape, MaskShape::SmallCircular { .. }))
                .collect();
            scan.sort_by_key(|e| e.spec.id);
            let reference = scan
                .first()
                .ok_or_else(|| Error::Parameter("no small-aperture captures".into()))?;
            let params = BlurParams {
                max_iter: args.max_iter,
                ..BlurParams::default()
            };
            std::fs::create_dir_all(&args.out)?;
            for (idx, e) in scan.iter().enumerate() {
                let est = estimate_blur(&reference.image, &e.image, &params)?;
                io::save_kernel(&args.out, idx, &est, e.spec.id)?;
            }
            println!("wrote {} kernels to {}", scan.len(), args.out.display());
            Ok(())
        }
        Command::SynthesizePupil(args) => {
            let set = io::load_capture_set(&args.captures)?;
            let mut scan_specs: Vec<_> = set
                .entries
                .iter()
                .map(|e| e.spec.clone())
                .filter(|s| matches!(s.shape, MaskShape::SmallCircular { .. }))
                .collect();
            scan_specs.sort_by_key(|s| s.id);
            let aperture_radius = scan_specs
                .iter()
                .find_map(|s| match &s.shape {
                    MaskShape::SmallCircular { radius_px, .. } => Some(*radius_px),
                    _ => None,
                })
                .ok_or_else(|| Error::Parameter("no small-aperture captures".into()))?;
            let seq = cacao_core::aperture::ScanSequence {
                apertures: scan_specs,
                overlap_fraction: 0.4,
                pupil_radius_px: set.meta.optics.pupil_radius_px,
                aperture_radius_px: aperture_radius,
            };
            let mut kernels = Vec::new();
            for idx in 0..seq.len() {
                let path = args.kernels.join(format!("kernel_{idx:04}.pfm"));
                kernels.push(io::read_pfm(&path)?);
            }
            let params = SynthesisParams {
                max_sweeps: args.sweeps,
                ..SynthesisParams::default()
            };
            let (pupil, diag) = synthesize_pupil(&kernels, &seq, &set.meta.optics, &params)?;
            io::save_complex_field(&args.out, &pupil.field, Some(pupil.wavelength))?;
            println!(
                "synthesized pupil in {} sweeps (mean error {:.3e}) -> {}",
                diag.sweeps,
                diag.error_history.last().copied().unwrap_or(f64::NAN),
                args.out.display()
            );
            Ok(())
        }
        Command::Deconvolve(args) => {
            let set = io::load_capture_set(&args.captures)?;
            let (field, _) = io::load_complex_field(&args.pupil)?;
            let pupil = PupilFunction {
                support_radius_px: set.meta.optics.pupil_radius_px,
                wavelength: set.meta.optics.wavelength,
                focal_length: set.meta.optics.focal_length,
                field: ComplexField2D {
                    pitch: set.meta.optics.pupil_pitch,
                    ..field
                },
            };
            let mut big: Vec<_> = set
                .entries
                .iter()
                .filter(|e| !matches!(e.spec.shape, MaskShape::SmallCircular { .. }))
                .collect();
            big.sort_by_key(|e| e.spec.id);
            if big.is_empty() {
                return Err(Error::Parameter("no big-mask captures to deconvolve".into()));
            }
            let problem = DeconvProblem {
                captures: big.iter().map(|e| (e.spec.clone(), e.image.clone())).collect(),
                pupil,
            };
            let params = DeconvParams {
                max_iter: args.max_iter,
                ..DeconvParams::default()
            };
            let (latent, diag) = deconvolve(&problem, &params)?;
            io::write_pfm(&args.out, &latent)?;
            io::write_png16(&args.out.with_extension("png"), &latent)?;
            println!(
                "deconvolved {} captures in {} iterations (residual {:.3e}) -> {}",
                problem.captures.len(),
                diag.iterations,
                diag.residual_history.last().copied().unwrap_or(f64::NAN),
                args.out.display()
            );
            Ok(())
        }
        Command::Pipeline(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let mut config: PipelineConfig = serde_json::from_str(&text)?;
            if let Some(out) = args.out {
                config.output_dir = Some(out);
            }
            let report = run_pipeline(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Report(args) => {
            let resolution = resolution_report(
                args.wavelength_nm * 1e-9,
                args.aperture_mm * 1e-3,
                args.focal_mm * 1e-3,
            );
            let mut doc = serde_json::json!({ "resolution": resolution });
            if let Some(dir) = &args.captures {
                let set = io::load_capture_set(dir)?;
                let full = set
                    .entries
                    .iter()
                    .find(|e| matches!(e.spec.shape, MaskShape::FullCircular { .. }));
                let snr = match full {
                    Some(e) => {
                        let n = e.image.rows();
                        let s = (n / 8).max(4);
                        Some(measure_snr(
                            &e.image,
                            Rect {
                                row: 2,
                                col: 2,
                                height: s,
                                width: s,
                            },
                        )?)
                    }
                    None => set.meta.measured_snr,
                };
                doc["captures"] = serde_json::json!({
                    "entries": set.entries.len(),
                    "measured_snr": snr,
                });
            }
            let text = serde_json::to_string_pretty(&doc)?;
            match args.out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
