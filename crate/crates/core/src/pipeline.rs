//! End-to-end orchestration: simulate or load a capture stack, calibrate,
//! tile, estimate per-aperture kernels, synthesize the pupil, deconvolve
//! each tile, merge, and report metrics.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::aperture::{
    coded_aperture_search, render_mask, ApertureSpec, CodedPattern, MaskShape, ScanSequence,
    spiral_small_apertures,
};
use crate::blur::{estimate_blur, BlurParams};
use crate::deconv::{
    build_big_mask_set, combined_otf_coverage, deconvolve, DeconvParams, DeconvProblem,
};
use crate::error::{Error, Result};
use crate::field::RealImage2D;
use crate::io;
use crate::metrics::{best_integer_shift, in_band_rel_error, rel_l2};
use crate::register::radiometric_calibrate;
use crate::scene::SceneSpec;
use crate::simulate::{
    capture_image, measure_snr, photon_scale_for_target_snr, psf_from_masked_pupil, CaptureEntry,
    CaptureMeta, CaptureSet, GroundTruthScene, NoiseModel, OpticsGeometry, PupilFunction, Rect,
};
use crate::synthesis::{synthesize_pupil, SynthesisParams};
use crate::tile::{merge_tiles, split_tiles, TileGrid};
use crate::zernike::ZernikeCoeffs;

/// Where the coded-aperture pattern comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CodedSource {
    Search {
        cells: usize,
        noise_level: f64,
        generations: usize,
        population: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
    Pattern {
        k: usize,
        cells: Vec<u8>,
    },
}

impl Default for CodedSource {
    fn default() -> Self {
        CodedSource::Search {
            cells: 11,
            noise_level: 1e-3,
            generations: 20,
            population: 16,
            seed: 7,
        }
    }
}

/// Noise configuration for simulated captures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseSpec {
    Off,
    /// Calibrate the photon scale so the full-aperture capture hits the
    /// target SNR in its flat border region.
    TargetSnr {
        snr: f64,
        #[serde(default)]
        read_noise_sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    Explicit {
        photon_scale: f64,
        #[serde(default)]
        read_noise_sigma: f64,
        #[serde(default)]
        dark_offset: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Off
    }
}

/// Full synthetic acquisition recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRecipe {
    pub grid_n: usize,
    pub scene: SceneSpec,
    pub optics: OpticsGeometry,
    pub aperture_radius_px: f64,
    #[serde(default = "default_overlap")]
    pub overlap_fraction: f64,
    /// One Zernike draw (Noll index, radians) per tile, row-major.
    pub tile_aberrations: Vec<Vec<(u32, f64)>>,
    #[serde(default)]
    pub coded: CodedSource,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_frames")]
    pub frames: u32,
    #[serde(default = "default_tile")]
    pub tile_size_px: usize,
    #[serde(default = "default_tile_overlap")]
    pub tile_overlap_px: usize,
}

fn default_overlap() -> f64 {
    0.4
}
fn default_frames() -> u32 {
    1
}
fn default_tile() -> usize {
    0 // 0 = single tile covering the image
}
fn default_tile_overlap() -> usize {
    0
}

impl SimRecipe {
    pub fn tile_grid(&self, rows: usize, cols: usize) -> Result<TileGrid> {
        let tile = if self.tile_size_px == 0 {
            rows.min(cols)
        } else {
            self.tile_size_px
        };
        TileGrid::new(rows, cols, tile, self.tile_overlap_px)
    }

    pub fn coded_pattern(&self) -> Result<CodedPattern> {
        match &self.coded {
            CodedSource::Search {
                cells,
                noise_level,
                generations,
                population,
                seed,
            } => coded_aperture_search(*cells, *noise_level, *generations, *population, *seed),
            CodedSource::File { path } => Ok(io::load_pattern(path)?.0),
            CodedSource::Pattern { k, cells } => CodedPattern::new(*k, cells.clone()),
        }
    }
}

/// Everything a synthetic acquisition produces, ground truth included.
#[derive(Debug, Clone)]
pub struct SimulatedAcquisition {
    pub captures: CaptureSet,
    pub truth: GroundTruthScene,
    pub scan: ScanSequence,
    pub big_masks: Vec<ApertureSpec>,
    pub pupils: Vec<PupilFunction>,
}

/// Flat corner region used for SNR measurements on captures.
pub fn border_rect(n: usize) -> Rect {
    let s = (n / 8).max(4);
    Rect {
        row: 2,
        col: 2,
        height: s,
        width: s,
    }
}

/// Render the scene, draw the per-tile pupils, and capture every mask in
/// the scan sequence plus the five-mask deconvolution set. Tiles are
/// simulated independently (piecewise-isoplanatic model) and merged into
/// full-field captures.
pub fn simulate_captures(recipe: &SimRecipe) -> Result<SimulatedAcquisition> {
    let sample = recipe.scene.render(recipe.grid_n);
    let grid = recipe.tile_grid(sample.rows(), sample.cols())?;
    if recipe.tile_aberrations.len() != grid.tile_count() {
        return Err(Error::Parameter(format!(
            "{} aberration draws for {} tiles",
            recipe.tile_aberrations.len(),
            grid.tile_count()
        )));
    }
    let coeffs: Vec<ZernikeCoeffs> = recipe
        .tile_aberrations
        .iter()
        .map(|t| ZernikeCoeffs::new(t.clone()))
        .collect::<Result<_>>()?;
    let truth = GroundTruthScene::new(sample.clone(), coeffs.clone(), grid.clone())?;

    let tile_n = grid.tile_size_px;
    let optics = recipe.optics;
    if optics.pupil_radius_px * 2.0 > tile_n as f64 {
        return Err(Error::Parameter(
            "pupil diameter exceeds the tile grid".into(),
        ));
    }
    let pupils: Vec<PupilFunction> = coeffs
        .iter()
        .map(|c| PupilFunction::from_zernike(tile_n, &optics, c))
        .collect::<Result<_>>()?;

    let scan = spiral_small_apertures(
        optics.pupil_radius_px,
        recipe.aperture_radius_px,
        recipe.overlap_fraction,
    )?;
    let pattern = recipe.coded_pattern()?;
    let coded = ApertureSpec::coded(0, pattern, 0, 2.0 * optics.pupil_radius_px);
    let big_masks = build_big_mask_set(&coded)?;

    let scene_tiles = split_tiles(&sample, &grid)?;

    // calibrate the photon scale against the clean full-aperture capture
    let noise = match &recipe.noise {
        NoiseSpec::Off => NoiseModel::noiseless(),
        NoiseSpec::Explicit {
            photon_scale,
            read_noise_sigma,
            dark_offset,
            seed,
        } => NoiseModel {
            photon_scale: *photon_scale,
            read_noise_sigma: *read_noise_sigma,
            dark_offset: *dark_offset,
            rng_seed: *seed,
        },
        NoiseSpec::TargetSnr {
            snr,
            read_noise_sigma,
            seed,
        } => {
            let clean = capture_image(
                &scene_tiles[0],
                &pupils[0],
                &big_masks[0],
                &NoiseModel::noiseless(),
                1,
            )?;
            let rect = border_rect(tile_n);
            let mut acc = 0.0;
            for r in rect.row..rect.row + rect.height {
                for c in rect.col..rect.col + rect.width {
                    acc += clean.data[(r, c)];
                }
            }
            let mean = acc / (rect.height * rect.width) as f64;
            // per-frame target: summing `frames` frames gains √frames
            let per_frame_snr = snr / (recipe.frames.max(1) as f64).sqrt();
            NoiseModel {
                photon_scale: photon_scale_for_target_snr(mean, per_frame_snr, *read_noise_sigma),
                read_noise_sigma: *read_noise_sigma,
                dark_offset: 0.0,
                rng_seed: *seed,
            }
        }
    };

    let all_specs: Vec<ApertureSpec> = scan
        .apertures
        .iter()
        .cloned()
        .chain(big_masks.iter().cloned())
        .collect();

    let entries: Vec<CaptureEntry> = all_specs
        .par_iter()
        .enumerate()
        .map(|(entry_idx, spec)| -> Result<CaptureEntry> {
            let mut tiles = Vec::with_capacity(grid.tile_count());
            for (t, scene_tile) in scene_tiles.iter().enumerate() {
                let mut nm = noise;
                nm.rng_seed = noise
                    .rng_seed
                    .wrapping_add((entry_idx as u64) * 0x9E37_79B9)
                    .wrapping_add((t as u64) * 0x85EB_CA6B);
                tiles.push(capture_image(scene_tile, &pupils[t], spec, &nm, recipe.frames)?);
            }
            let image = merge_tiles(&tiles, &grid)?;
            Ok(CaptureEntry {
                spec: spec.clone(),
                image,
                frame_count: recipe.frames,
            })
        })
        .collect::<Result<_>>()?;

    // measured SNR on the full-aperture capture's flat border
    let full_idx = scan.len();
    let snr = measure_snr(&entries[full_idx].image, border_rect(tile_n)).ok();

    let meta = CaptureMeta {
        optics,
        camera_pitch: optics.camera_pitch(tile_n),
        noise,
        measured_snr: snr,
    };
    Ok(SimulatedAcquisition {
        captures: CaptureSet { entries, meta },
        truth,
        scan,
        big_masks,
        pupils,
    })
}

/// Solver settings for one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "d_blur_iter")]
    pub blur_max_iter: usize,
    #[serde(default = "d_blur_delta")]
    pub blur_delta: f64,
    #[serde(default = "d_sweeps")]
    pub synthesis_sweeps: usize,
    #[serde(default = "d_deconv_iter")]
    pub deconv_max_iter: usize,
    #[serde(default = "d_deconv_delta")]
    pub deconv_delta: f64,
}

fn d_blur_iter() -> usize {
    200
}
fn d_blur_delta() -> f64 {
    1e-3
}
fn d_sweeps() -> usize {
    100
}
fn d_deconv_iter() -> usize {
    300
}
fn d_deconv_delta() -> f64 {
    1e-3
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            blur_max_iter: d_blur_iter(),
            blur_delta: d_blur_delta(),
            synthesis_sweeps: d_sweeps(),
            deconv_max_iter: d_deconv_iter(),
            deconv_delta: d_deconv_delta(),
        }
    }
}

/// Pipeline configuration: either a simulation recipe or a capture
/// directory, plus solver settings and output options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub simulate: Option<SimRecipe>,
    #[serde(default)]
    pub capture_dir: Option<PathBuf>,
    /// Optional dark/reference PFMs applied to every capture.
    #[serde(default)]
    pub calibration: Option<CalibrationPaths>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationPaths {
    pub dark: PathBuf,
    pub reference: PathBuf,
}

/// Per-tile outcome in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileReport {
    pub tile_id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub synthesis_sweeps: usize,
    pub deconv_iterations: usize,
    pub final_residual: f64,
    pub otf_min_combined: f64,
    pub otf_min_full: f64,
    pub otf_null_fraction_full: f64,
    /// Worst big-mask PSF error vs ground truth (common-shift registered),
    /// present only for simulated runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psf_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_band_relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub tiles: Vec<TileReport>,
    /// Whole-image in-band error vs ground truth (single-tile runs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_band_relative_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture_snr: Option<f64>,
    pub tile_count: usize,
    pub scan_apertures: usize,
    pub big_masks: usize,
}

struct TileOutcome {
    report: TileReport,
    recovered: RealImage2D,
    pupil: Option<PupilFunction>,
}

fn process_tile(
    tile_id: usize,
    scan: &ScanSequence,
    scan_tiles: &[RealImage2D],
    big_specs: &[ApertureSpec],
    big_tiles: &[RealImage2D],
    optics: &OpticsGeometry,
    solver: &SolverConfig,
    truth: Option<(&PupilFunction, &RealImage2D)>,
) -> Result<TileOutcome> {
    let blur_params = BlurParams {
        max_iter: solver.blur_max_iter,
        delta: solver.blur_delta,
        ..BlurParams::default()
    };
    let reference = &scan_tiles[0];
    let kernels: Vec<RealImage2D> = scan_tiles
        .par_iter()
        .map(|i_m| estimate_blur(reference, i_m, &blur_params).map(|e| e.kernel))
        .collect::<Result<_>>()?;

    let synth_params = SynthesisParams {
        max_sweeps: solver.synthesis_sweeps,
        ..SynthesisParams::default()
    };
    let (pupil, synth_diag) = synthesize_pupil(&kernels, scan, optics, &synth_params)?;

    let coverage = combined_otf_coverage(&pupil, big_specs)?;

    let problem = DeconvProblem {
        captures: big_specs
            .iter()
            .cloned()
            .zip(big_tiles.iter().cloned())
            .collect(),
        pupil: pupil.clone(),
    };
    let deconv_params = DeconvParams {
        max_iter: solver.deconv_max_iter,
        delta: solver.deconv_delta,
        ..DeconvParams::default()
    };
    let (recovered, deconv_diag) = deconvolve(&problem, &deconv_params)?;

    let (psf_error, in_band) = if let Some((true_pupil, true_tile)) = truth {
        let n = recovered.n();
        let full_mask = render_mask(&big_specs[0], n, optics.pupil_radius_px)?;
        let h_true = psf_from_masked_pupil(true_pupil, &full_mask)?;
        let h_rec = psf_from_masked_pupil(&pupil, &full_mask)?;
        let shift = best_integer_shift(&h_true.data, &h_rec.data);
        let mut worst: f64 = 0.0;
        for spec in big_specs {
            let mask = render_mask(spec, n, optics.pupil_radius_px)?;
            let ht = psf_from_masked_pupil(true_pupil, &mask)?;
            let hr = psf_from_masked_pupil(&pupil, &mask)?;
            let rolled = crate::field::roll(&hr, shift.0, shift.1);
            let scale = ht.sum() / rolled.sum().max(1e-300);
            let e = rel_l2(&rolled.data.mapv(|v| v * scale), &ht.data);
            worst = worst.max(e);
        }
        let band = crate::deconv::BAND_FRACTION * 2.0 * optics.pupil_radius_px;
        let err = in_band_rel_error(&recovered, true_tile, band, true)?;
        (Some(worst), Some(err))
    } else {
        (None, None)
    };

    Ok(TileOutcome {
        report: TileReport {
            tile_id,
            error: None,
            synthesis_sweeps: synth_diag.sweeps,
            deconv_iterations: deconv_diag.iterations,
            final_residual: *deconv_diag.residual_history.last().unwrap_or(&f64::NAN),
            otf_min_combined: coverage.min_modulus_combined,
            otf_min_full: coverage.min_modulus_full_only,
            otf_null_fraction_full: coverage.null_fraction_each.first().copied().unwrap_or(0.0),
            psf_error,
            in_band_relative_error: in_band,
        },
        recovered,
        pupil: Some(pupil),
    })
}

/// Run the full pipeline described by the config. Per-tile failures are
/// isolated: the tile falls back to its aberrated full-aperture capture and
/// the error is recorded in the report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let (set, sim) = match (&config.simulate, &config.capture_dir) {
        (Some(recipe), _) => {
            let sim = simulate_captures(recipe)?;
            (sim.captures.clone(), Some(sim))
        }
        (None, Some(dir)) => (io::load_capture_set(dir)?, None),
        (None, None) => {
            return Err(Error::Parameter(
                "config needs either a simulation recipe or a capture directory".into(),
            ))
        }
    };
    set.validate()?;

    // optional two-point calibration of every capture
    let entries: Vec<CaptureEntry> = if let Some(cal) = &config.calibration {
        let dark = io::read_pfm(&cal.dark)?;
        let reference = io::read_pfm(&cal.reference)?;
        set.entries
            .iter()
            .map(|e| -> Result<CaptureEntry> {
                let (image, dead) = radiometric_calibrate(&e.image, &dark, &reference)?;
                if dead > 0 {
                    log::warn!("capture {}: {dead} dead pixels zeroed", e.spec.id);
                }
                Ok(CaptureEntry {
                    spec: e.spec.clone(),
                    image,
                    frame_count: e.frame_count,
                })
            })
            .collect::<Result<_>>()?
    } else {
        set.entries.clone()
    };

    // split entries into the scan sequence and the big-mask set
    let mut scan_entries: Vec<&CaptureEntry> = entries
        .iter()
        .filter(|e| matches!(e.spec.shape, MaskShape::SmallCircular { .. }))
        .collect();
    scan_entries.sort_by_key(|e| e.spec.id);
    let mut big_entries: Vec<&CaptureEntry> = entries
        .iter()
        .filter(|e| !matches!(e.spec.shape, MaskShape::SmallCircular { .. }))
        .collect();
    big_entries.sort_by_key(|e| e.spec.id);
    if scan_entries.is_empty() || big_entries.is_empty() {
        return Err(Error::Parameter(
            "capture set must hold both a small-aperture scan and big-mask captures".into(),
        ));
    }

    let optics = set.meta.optics;
    let scan = match &sim {
        Some(s) => s.scan.clone(),
        None => {
            let aperture_radius = scan_entries
                .iter()
                .filter_map(|e| match &e.spec.shape {
                    MaskShape::SmallCircular { radius_px, .. } => Some(*radius_px),
                    _ => None,
                })
                .next()
                .unwrap_or(1.0);
            ScanSequence {
                apertures: scan_entries.iter().map(|e| e.spec.clone()).collect(),
                overlap_fraction: 0.4,
                pupil_radius_px: optics.pupil_radius_px,
                aperture_radius_px: aperture_radius,
            }
        }
    };
    let big_specs: Vec<ApertureSpec> = big_entries.iter().map(|e| e.spec.clone()).collect();

    // tile grids follow the simulation recipe; loaded sets run single-tile
    let rows = entries[0].image.rows();
    let cols = entries[0].image.cols();
    let grid = match (&sim, &config.simulate) {
        (Some(_), Some(recipe)) => recipe.tile_grid(rows, cols)?,
        _ => TileGrid::new(rows, cols, rows.min(cols), 0)?,
    };

    let scan_tiles_per_entry: Vec<Vec<RealImage2D>> = scan_entries
        .iter()
        .map(|e| split_tiles(&e.image, &grid))
        .collect::<Result<_>>()?;
    let big_tiles_per_entry: Vec<Vec<RealImage2D>> = big_entries
        .iter()
        .map(|e| split_tiles(&e.image, &grid))
        .collect::<Result<_>>()?;
    let truth_tiles: Option<Vec<RealImage2D>> = sim
        .as_ref()
        .map(|s| split_tiles(&s.truth.sample, &grid))
        .transpose()?;

    let tile_ids: Vec<usize> = (0..grid.tile_count()).collect();
    let outcomes: Vec<TileOutcome> = tile_ids
        .par_iter()
        .map(|&t| {
            let scan_tiles: Vec<RealImage2D> = scan_tiles_per_entry
                .iter()
                .map(|tiles| tiles[t].clone())
                .collect();
            let big_tiles: Vec<RealImage2D> = big_tiles_per_entry
                .iter()
                .map(|tiles| tiles[t].clone())
                .collect();
            let truth = sim.as_ref().map(|s| {
                (
                    &s.pupils[t],
                    &truth_tiles.as_ref().expect("truth tiles present")[t],
                )
            });
            match process_tile(
                t,
                &scan,
                &scan_tiles,
                &big_specs,
                &big_tiles,
                &optics,
                &config.solver,
                truth,
            ) {
                Ok(out) => out,
                Err(e) => {
                    log::warn!("tile {t} failed: {e}; falling back to the aberrated capture");
                    TileOutcome {
                        report: TileReport {
                            tile_id: t,
                            error: Some(e.to_string()),
                            synthesis_sweeps: 0,
                            deconv_iterations: 0,
                            final_residual: f64::NAN,
                            otf_min_combined: 0.0,
                            otf_min_full: 0.0,
                            otf_null_fraction_full: 0.0,
                            psf_error: None,
                            in_band_relative_error: None,
                        },
                        recovered: big_tiles[0].clone(),
                        pupil: None,
                    }
                }
            }
        })
        .collect();

    let recovered_tiles: Vec<RealImage2D> = outcomes.iter().map(|o| o.recovered.clone()).collect();
    let merged = merge_tiles(&recovered_tiles, &grid)?;

    let global_err = match (&sim, grid.tile_count()) {
        (Some(s), 1) if merged.is_square() && merged.rows() % 2 == 0 => {
            let band = crate::deconv::BAND_FRACTION * 2.0 * optics.pupil_radius_px;
            Some(in_band_rel_error(&merged, &s.truth.sample, band, true)?)
        }
        _ => None,
    };

    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        io::write_pfm(&dir.join("recovered.pfm"), &merged)?;
        io::write_png16(&dir.join("recovered.png"), &merged)?;
        io::write_png16(&dir.join("aberrated_full.png"), &big_entries[0].image)?;
        for o in &outcomes {
            if let Some(p) = &o.pupil {
                let stem = dir.join(format!("tile_{:02}_pupil", o.report.tile_id));
                io::save_complex_field(&stem, &p.field, Some(p.wavelength))?;
                let n = o.recovered.n();
                let full = render_mask(&big_specs[0], n, optics.pupil_radius_px)?;
                let h = psf_from_masked_pupil(p, &full)?;
                io::write_png16(&dir.join(format!("tile_{:02}_psf.png", o.report.tile_id)), &h)?;
            }
        }
    }

    let report = PipelineReport {
        tiles: outcomes.into_iter().map(|o| o.report).collect(),
        in_band_relative_error: global_err,
        capture_snr: set.meta.measured_snr,
        tile_count: grid.tile_count(),
        scan_apertures: scan.len(),
        big_masks: big_specs.len(),
    };

    if let Some(dir) = &config.output_dir {
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(report)
}

// --- resolution arithmetic -------------------------------------------------

/// One element of the standard three-bar resolution chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsafElement {
    pub group: i32,
    pub element: u32,
}

impl UsafElement {
    /// Line pairs per millimeter: `2^(group + (element-1)/6)`.
    pub fn lp_per_mm(&self) -> f64 {
        (2.0f64).powf(self.group as f64 + (self.element as f64 - 1.0) / 6.0)
    }

    pub fn period_um(&self) -> f64 {
        1000.0 / self.lp_per_mm()
    }
}

/// Diffraction-limited incoherent MTF (autocorrelation of a clear disk) at
/// normalized frequency `s = ν/ν_cutoff`.
pub fn incoherent_mtf(s: f64) -> f64 {
    if s >= 1.0 {
        return 0.0;
    }
    if s <= 0.0 {
        return 1.0;
    }
    (2.0 / std::f64::consts::PI) * (s.acos() - s * (1.0 - s * s).sqrt())
}

/// Practical contrast floor for calling a bar element resolved.
pub const RESOLVABLE_MTF: f64 = 0.10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub numerical_aperture: f64,
    pub coherent_cutoff_period_um: f64,
    pub incoherent_cutoff_period_um: f64,
    /// Elements resolvable incoherently but beyond the coherent cutoff:
    /// from the first element past the coherent cutoff to the finest one
    /// whose incoherent MTF is at least [`RESOLVABLE_MTF`].
    pub bracket: (UsafElement, UsafElement),
}

fn usaf_elements() -> impl Iterator<Item = UsafElement> {
    (-2..=9).flat_map(|group| (1..=6).map(move |element| UsafElement { group, element }))
}

/// Resolution arithmetic for a clear aperture of diameter `d` at focal
/// length `f`: cutoff periodicities λ/NA and λ/(2NA), plus the chart
/// bracket they imply.
pub fn resolution_report(wavelength_m: f64, aperture_diameter_m: f64, focal_length_m: f64) -> ResolutionReport {
    let na = aperture_diameter_m / (2.0 * focal_length_m);
    let coherent_period_um = wavelength_m / na * 1e6;
    let incoherent_period_um = wavelength_m / (2.0 * na) * 1e6;
    let coherent_cutoff_lpmm = 1000.0 / coherent_period_um;
    let incoherent_cutoff_lpmm = 1000.0 / incoherent_period_um;

    // coarsest element the coherent transfer function already rejects
    let start = usaf_elements()
        .filter(|e| e.lp_per_mm() > coherent_cutoff_lpmm)
        .min_by(|a, b| a.lp_per_mm().total_cmp(&b.lp_per_mm()))
        .expect("chart covers the cutoff");
    // finest element the incoherent system still resolves with contrast
    let end = usaf_elements()
        .filter(|e| incoherent_mtf(e.lp_per_mm() / incoherent_cutoff_lpmm) >= RESOLVABLE_MTF)
        .max_by(|a, b| a.lp_per_mm().total_cmp(&b.lp_per_mm()))
        .expect("chart covers the cutoff");
    let end = if end.lp_per_mm() < start.lp_per_mm() {
        start
    } else {
        end
    };

    ResolutionReport {
        numerical_aperture: na,
        coherent_cutoff_period_um: coherent_period_um,
        incoherent_cutoff_period_um: incoherent_period_um,
        bracket: (start, end),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usaf_frequencies_match_the_standard_table() {
        let g5e1 = UsafElement { group: 5, element: 1 };
        assert!((g5e1.lp_per_mm() - 32.0).abs() < 1e-12);
        let g5e5 = UsafElement { group: 5, element: 5 };
        assert!((g5e5.lp_per_mm() - 50.797).abs() < 1e-2);
    }

    #[test]
    fn demo_geometry_lands_between_g5e1_and_g5e5() {
        let report = resolution_report(520e-9, 5.5e-3, 0.167);
        assert!((report.coherent_cutoff_period_um - 31.6).abs() < 0.2);
        assert!((report.incoherent_cutoff_period_um - 15.8).abs() < 0.1);
        assert_eq!(report.bracket.0, UsafElement { group: 5, element: 1 });
        assert_eq!(report.bracket.1, UsafElement { group: 5, element: 5 });
    }

    #[test]
    fn incoherent_mtf_endpoints() {
        assert_eq!(incoherent_mtf(0.0), 1.0);
        assert_eq!(incoherent_mtf(1.0), 0.0);
        assert!((incoherent_mtf(0.5) - 0.3910).abs() < 1e-3);
    }

    #[test]
    fn single_tile_noiseless_pipeline_smoke() {
        // small geometry so the whole chain runs quickly
        let recipe = SimRecipe {
            grid_n: 128,
            scene: SceneSpec::SiemensStar {
                spokes: 12,
                radius_frac: 0.3,
            },
            optics: OpticsGeometry {
                wavelength: 520e-9,
                focal_length: 0.167,
                pupil_pitch: 2.75e-3 / 30.0,
                pupil_radius_px: 30.0,
            },
            aperture_radius_px: 9.0,
            overlap_fraction: 0.4,
            tile_aberrations: vec![vec![(4, 1.5), (8, -1.0)]],
            coded: CodedSource::Pattern {
                k: 7,
                cells: (0..49).map(|i| u8::from(i % 3 != 1)).collect(),
            },
            noise: NoiseSpec::Off,
            frames: 1,
            tile_size_px: 0,
            tile_overlap_px: 0,
        };
        let config = PipelineConfig {
            simulate: Some(recipe),
            capture_dir: None,
            calibration: None,
            solver: SolverConfig {
                blur_max_iter: 80,
                synthesis_sweeps: 40,
                deconv_max_iter: 150,
                ..SolverConfig::default()
            },
            output_dir: None,
        };
        let report = run_pipeline(&config).unwrap();
        assert_eq!(report.tile_count, 1);
        assert!(report.tiles[0].error.is_none(), "{:?}", report.tiles[0].error);
        let err = report.in_band_relative_error.expect("simulated run reports error");
        assert!(err < 0.05, "in-band error {err}");
        // determinism: identical config gives bit-identical metrics
        let report2 = run_pipeline(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&report2).unwrap()
        );
    }
}
