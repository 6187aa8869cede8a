//! Combined multi-aperture Tikhonov deconvolution.
//!
//! The latent tile image is recovered from the full-aperture and rotated
//! coded-aperture captures jointly: data-fidelity gradients are summed over
//! captures with one shared regularizer, with a spatial non-negativity
//! projection each iteration and backtracking on the step size so the
//! residual never increases.

use ndarray::Array2;
use num_complex::Complex64;

use crate::aperture::{render_mask, ApertureSpec, MaskShape};
use crate::error::{Error, Result};
use crate::field::{fft2_array, RealImage2D};
use crate::simulate::{otf, psf_from_masked_pupil, PupilFunction};

/// Captures plus the recovered pupil they were taken through. The per-mask
/// PSFs/OTFs are always recomputed from the pupil, never loaded from disk.
#[derive(Debug, Clone)]
pub struct DeconvProblem {
    pub captures: Vec<(ApertureSpec, RealImage2D)>,
    pub pupil: PupilFunction,
}

#[derive(Debug, Clone)]
pub struct DeconvParams {
    pub max_iter: usize,
    /// Relative residual-change stopping tolerance.
    pub tol: f64,
    /// Shared Tikhonov weight relative to the peak summed OTF power.
    pub delta: f64,
    pub step: f64,
    /// Optional per-capture weights (default: equal).
    pub weights: Option<Vec<f64>>,
}

impl Default for DeconvParams {
    fn default() -> Self {
        Self {
            max_iter: 150,
            tol: 1e-10,
            delta: 1e-3,
            step: 1.0,
            weights: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeconvDiagnostics {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// The five-mask acquisition set: the full circular aperture followed by
/// the coded aperture at 0°, 45°, 90° and 135°. The full aperture radius
/// comes from the coded aperture's diameter (they match by construction).
pub fn build_big_mask_set(coded: &ApertureSpec) -> Result<Vec<ApertureSpec>> {
    let (pattern, diameter) = match &coded.shape {
        MaskShape::Coded {
            pattern,
            diameter_px,
            ..
        } => (pattern.clone(), *diameter_px),
        _ => {
            return Err(Error::Parameter(
                "big-mask set requires a coded aperture".into(),
            ))
        }
    };
    let radius = diameter / 2.0;
    let mut masks = vec![ApertureSpec::full(0, radius)];
    for (i, angle) in [0u32, 45, 90, 135].into_iter().enumerate() {
        masks.push(ApertureSpec::coded(i + 1, pattern.clone(), angle, diameter));
    }
    Ok(masks)
}

/// OTF coverage over the incoherent bandpass (95% of the cutoff radius
/// `2·support`): worst combined modulus `√(Σ|Hₙ|²)`, worst full-aperture
/// modulus, and the per-mask fraction of in-band nulls (`|H| < 1e-3`).
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub min_modulus_combined: f64,
    pub min_modulus_full_only: f64,
    pub null_fraction_each: Vec<f64>,
    pub band_radius_px: f64,
}

pub const NULL_THRESHOLD: f64 = 1e-3;
pub const BAND_FRACTION: f64 = 0.95;

pub fn combined_otf_coverage(
    pupil: &PupilFunction,
    masks: &[ApertureSpec],
) -> Result<CoverageReport> {
    if masks.is_empty() {
        return Err(Error::Parameter("empty mask list".into()));
    }
    let n = pupil.n();
    let c = n as f64 / 2.0;
    let band = BAND_FRACTION * 2.0 * pupil.support_radius_px;
    let mut combined_power = Array2::<f64>::zeros((n, n));
    let mut null_fraction_each = Vec::with_capacity(masks.len());
    let mut min_full = f64::INFINITY;
    let mut saw_full = false;

    for spec in masks {
        let mask = render_mask(spec, n, pupil.support_radius_px)?;
        let h = psf_from_masked_pupil(pupil, &mask)?;
        let big_h = otf(&h)?;
        let mut nulls = 0usize;
        let mut in_band = 0usize;
        let is_full = matches!(spec.shape, MaskShape::FullCircular { .. });
        for ((i, j), z) in big_h.data.indexed_iter() {
            let y = i as f64 - c;
            let x = j as f64 - c;
            if (x * x + y * y).sqrt() > band {
                continue;
            }
            let m = z.norm();
            combined_power[(i, j)] += m * m;
            in_band += 1;
            if m < NULL_THRESHOLD {
                nulls += 1;
            }
            if is_full && m < min_full {
                min_full = m;
            }
        }
        if is_full {
            saw_full = true;
        }
        null_fraction_each.push(nulls as f64 / in_band.max(1) as f64);
    }

    if !saw_full {
        // evaluate the implicit full aperture for the comparison baseline
        let mask = render_mask(
            &ApertureSpec::full(usize::MAX, pupil.support_radius_px),
            n,
            pupil.support_radius_px,
        )?;
        let h = psf_from_masked_pupil(pupil, &mask)?;
        let big_h = otf(&h)?;
        min_full = f64::INFINITY;
        for ((i, j), z) in big_h.data.indexed_iter() {
            let y = i as f64 - c;
            let x = j as f64 - c;
            if (x * x + y * y).sqrt() <= band {
                min_full = min_full.min(z.norm());
            }
        }
    }

    let mut min_combined = f64::INFINITY;
    for ((i, j), &p) in combined_power.indexed_iter() {
        let y = i as f64 - c;
        let x = j as f64 - c;
        if (x * x + y * y).sqrt() <= band {
            min_combined = min_combined.min(p.sqrt());
        }
    }

    Ok(CoverageReport {
        min_modulus_combined: min_combined,
        min_modulus_full_only: min_full,
        null_fraction_each,
        band_radius_px: band,
    })
}

struct DerivedOtfs {
    /// Raw transfer spectra `Gₙ` such that `Φₙ = Gₙ·O` for plain circular
    /// convolution under the unitary transform convention.
    g: Vec<Array2<Complex64>>,
    phi: Vec<Array2<Complex64>>,
    weights: Vec<f64>,
    denom: Array2<f64>,
}

fn derive(problem: &DeconvProblem, params: &DeconvParams) -> Result<DerivedOtfs> {
    if problem.captures.is_empty() {
        return Err(Error::Parameter("no captures to deconvolve".into()));
    }
    let n = problem.pupil.n();
    let nf = n as f64;
    let weights = match &params.weights {
        Some(w) => {
            if w.len() != problem.captures.len() {
                return Err(Error::Parameter("one weight per capture required".into()));
            }
            w.clone()
        }
        None => vec![1.0; problem.captures.len()],
    };
    let mut g = Vec::with_capacity(problem.captures.len());
    let mut phi = Vec::with_capacity(problem.captures.len());
    for (spec, image) in &problem.captures {
        if image.data.dim() != (n, n) {
            return Err(Error::Dimension("capture grid differs from the pupil grid".into()));
        }
        let mask = render_mask(spec, n, problem.pupil.support_radius_px)?;
        let h = psf_from_masked_pupil(&problem.pupil, &mask)?;
        let g_n = fft2_array(&h.data.mapv(|v| Complex64::new(v, 0.0)), true).mapv(|z| z * nf);
        let phi_n = fft2_array(&image.data.mapv(|v| Complex64::new(v, 0.0)), true);
        g.push(g_n);
        phi.push(phi_n);
    }
    let mut power = Array2::<f64>::zeros((n, n));
    for (gn, w) in g.iter().zip(&weights) {
        for (p, z) in power.iter_mut().zip(gn.iter()) {
            *p += w * z.norm_sqr();
        }
    }
    let peak = power.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Degenerate("all derived transfer functions are zero".into()));
    }
    let delta = params.delta * peak;
    let denom = power.mapv(|p| p + delta);
    Ok(DerivedOtfs {
        g,
        phi,
        weights,
        denom,
    })
}

fn residual_of(d: &DerivedOtfs, o_spec: &Array2<Complex64>) -> f64 {
    let mut acc = 0.0;
    for ((gn, phin), w) in d.g.iter().zip(&d.phi).zip(&d.weights) {
        for ((g, p), o) in gn.iter().zip(phin.iter()).zip(o_spec.iter()) {
            acc += w * (p - g * o).norm_sqr();
        }
    }
    acc
}

/// L2 norm of the summed data-fidelity gradient evaluated at a candidate
/// latent image; zero (to roundoff) iff the candidate is a fixed point of
/// the iteration.
pub fn residual_gradient(problem: &DeconvProblem, candidate: &RealImage2D) -> Result<f64> {
    let params = DeconvParams::default();
    let d = derive(problem, &params)?;
    let o_spec = fft2_array(&candidate.data.mapv(|v| Complex64::new(v, 0.0)), true);
    let mut acc = 0.0;
    let n = candidate.rows();
    for idx in ndarray::indices((n, n)) {
        let mut grad = Complex64::new(0.0, 0.0);
        for (k, gn) in d.g.iter().enumerate() {
            let g = gn[(idx.0, idx.1)];
            grad += d.weights[k] * g.conj() * (d.phi[k][(idx.0, idx.1)] - g * o_spec[(idx.0, idx.1)]);
        }
        acc += grad.norm_sqr();
    }
    Ok(acc.sqrt())
}

/// Recover the latent tile image. Initialization is the Wiener solution
/// with the shared regularizer; each iteration adds the summed
/// preconditioned gradient and projects onto non-negative images.
pub fn deconvolve(
    problem: &DeconvProblem,
    params: &DeconvParams,
) -> Result<(RealImage2D, DeconvDiagnostics)> {
    let d = derive(problem, params)?;
    let n = problem.pupil.n();
    let pitch = problem.captures[0].1.pitch;

    let wiener = |idx: (usize, usize)| -> Complex64 {
        let mut num = Complex64::new(0.0, 0.0);
        for (k, gn) in d.g.iter().enumerate() {
            num += d.weights[k] * gn[idx].conj() * d.phi[k][idx];
        }
        num / d.denom[idx]
    };
    let mut o_spec = Array2::from_shape_fn((n, n), wiener);
    let project = |spec: &Array2<Complex64>| -> (Array2<f64>, Array2<Complex64>) {
        let spatial = fft2_array(spec, false);
        let clipped = spatial.mapv(|z| z.re.max(0.0));
        let back = fft2_array(&clipped.mapv(|v| Complex64::new(v, 0.0)), true);
        (clipped, back)
    };
    let (mut o_img, mut o_proj) = project(&o_spec);
    o_spec = o_proj;

    let mut residual = residual_of(&d, &o_spec);
    if !residual.is_finite() {
        return Err(Error::NonConvergence {
            context: "deconvolution residual is not finite at initialization".into(),
            residual,
        });
    }
    let mut history = vec![residual];
    let mut iterations = 0usize;
    let mut step = params.step;

    for it in 0..params.max_iter {
        iterations = it + 1;
        // summed preconditioned gradient
        let mut grad = Array2::<Complex64>::zeros((n, n));
        for (k, gn) in d.g.iter().enumerate() {
            for ((gr, g), (p, o)) in grad
                .iter_mut()
                .zip(gn.iter())
                .zip(d.phi[k].iter().zip(o_spec.iter()))
            {
                *gr += d.weights[k] * g.conj() * (p - g * o);
            }
        }
        for (gr, dn) in grad.iter_mut().zip(d.denom.iter()) {
            *gr /= *dn;
        }

        // backtracking: accept only residual decreases
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Array2<Complex64> = ndarray::Zip::from(&o_spec)
                .and(&grad)
                .map_collect(|o, g| o + step * g);
            let (img, proj) = project(&trial);
            let r = residual_of(&d, &proj);
            if !r.is_finite() {
                return Err(Error::NonConvergence {
                    context: format!("deconvolution diverged at iteration {iterations}"),
                    residual: r,
                });
            }
            if r <= residual {
                let improvement = (residual - r) / residual.max(1e-300);
                o_img = img;
                o_spec = proj;
                o_proj = o_spec.clone();
                let _ = &o_proj;
                residual = r;
                history.push(r);
                accepted = true;
                step = (step * 1.25).min(params.step);
                if improvement < params.tol {
                    return Ok((
                        RealImage2D { data: o_img, pitch },
                        DeconvDiagnostics {
                            iterations,
                            residual_history: history,
                        },
                    ));
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // projection-limited stall; current iterate is the best seen
        }
    }

    Ok((
        RealImage2D { data: o_img, pitch },
        DeconvDiagnostics {
            iterations,
            residual_history: history,
        },
    ))
}
