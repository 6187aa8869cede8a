//! Phase retrieval stitching measured local-PSF intensities into the full
//! complex pupil function.
//!
//! Each sweep visits the apertures in their spiral-out order, replaces the
//! modulus of the masked pupil's Fourier transform with the measured one
//! (keeping the phase), and feeds the correction back through the aperture
//! mask. The kernels are used exactly as measured: their lateral shifts
//! carry each aperture's mean phase gradient and must not be removed.

use ndarray::Array2;
use num_complex::Complex64;

use crate::aperture::{render_mask, ScanSequence};
use crate::error::{Error, Result};
use crate::field::{fft2_array, ComplexField2D, Plane, RealImage2D};
use crate::simulate::{OpticsGeometry, PupilFunction};
use crate::zernike::circular_support;

#[derive(Debug, Clone, Copy)]
pub struct SynthesisParams {
    pub max_sweeps: usize,
    /// Relaxation of the additive correction.
    pub beta: f64,
    /// Stop once the relative change of the mean data error stays below
    /// this for `stall_window` consecutive sweeps.
    pub stall_tol: f64,
    pub stall_window: usize,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            beta: 1.0,
            stall_tol: 1e-4,
            stall_window: 5,
        }
    }
}

/// Convergence diagnostics of one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisDiagnostics {
    pub sweeps: usize,
    /// Per-aperture relative intensity error from the final sweep.
    pub per_aperture_error: Vec<f64>,
    /// Mean data error per sweep.
    pub error_history: Vec<f64>,
}

/// Recover the full pupil from the aperture-scanned kernel intensities.
///
/// `kernels[m]` is the measured intensity for `seq.apertures[m]`. All-zero
/// kernels are skipped with a warning; a length mismatch is an error.
pub fn synthesize_pupil(
    kernels: &[RealImage2D],
    seq: &ScanSequence,
    optics: &OpticsGeometry,
    params: &SynthesisParams,
) -> Result<(PupilFunction, SynthesisDiagnostics)> {
    if kernels.len() != seq.len() {
        return Err(Error::Parameter(format!(
            "{} kernels for {} apertures",
            kernels.len(),
            seq.len()
        )));
    }
    if kernels.is_empty() {
        return Err(Error::Parameter("empty capture sequence".into()));
    }
    let n = kernels[0].rows();
    for k in kernels {
        if k.data.dim() != (n, n) {
            return Err(Error::Dimension("kernels live on different grids".into()));
        }
        if k.min() < -1e-12 * k.max().abs() {
            return Err(Error::Parameter("kernels must be non-negative".into()));
        }
    }

    let support = circular_support(seq.pupil_radius_px, n)?;
    let masks: Vec<RealImage2D> = seq
        .apertures
        .iter()
        .map(|s| render_mask(s, n, seq.pupil_radius_px))
        .collect::<Result<_>>()?;
    let usable: Vec<bool> = kernels
        .iter()
        .enumerate()
        .map(|(m, k)| {
            if k.sum() <= 0.0 {
                log::warn!("aperture {m} has an all-zero kernel; skipped");
                false
            } else {
                true
            }
        })
        .collect();

    let sqrt_b: Vec<Array2<f64>> = kernels
        .iter()
        .map(|k| k.data.mapv(|v| v.max(0.0).sqrt()))
        .collect();

    // flat modulus-1, phase-0 start on the support
    let mut pupil = Array2::from_shape_fn((n, n), |idx| {
        Complex64::new(support.data[idx], 0.0)
    });

    let mut history: Vec<f64> = Vec::new();
    let mut per_aperture = vec![0.0; kernels.len()];
    let mut stall = 0usize;
    let mut sweeps = 0usize;

    for sweep in 0..params.max_sweeps {
        sweeps = sweep + 1;
        let mut err_acc = 0.0;
        let mut err_count = 0usize;
        for m in 0..kernels.len() {
            if !usable[m] {
                continue;
            }
            let mask = &masks[m];
            let masked = ndarray::Zip::from(&pupil)
                .and(&mask.data)
                .map_collect(|p, &w| if w > 0.0 { *p } else { Complex64::new(0.0, 0.0) });
            let psi = fft2_array(&masked, true);

            // data error on intensities
            let b = &kernels[m].data;
            let mut num = 0.0;
            let mut den = 0.0;
            for (z, &bv) in psi.iter().zip(b.iter()) {
                let d = z.norm_sqr() - bv;
                num += d * d;
                den += bv * bv;
            }
            let e = (num / den.max(1e-300)).sqrt();
            per_aperture[m] = e;
            err_acc += e;
            err_count += 1;

            // modulus replacement, phase kept (zero phase where |ψ| ~ 0)
            let max_mod = psi.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let guard = 1e-12 * max_mod;
            let psi_new = ndarray::Zip::from(&psi)
                .and(&sqrt_b[m])
                .map_collect(|z, &s| {
                    let m0 = z.norm();
                    if m0 > guard {
                        z * (s / m0)
                    } else {
                        Complex64::new(s, 0.0)
                    }
                });
            let corr = fft2_array(&(&psi_new - &psi), false);
            ndarray::Zip::from(&mut pupil)
                .and(&mask.data)
                .and(&corr)
                .and(&support.data)
                .for_each(|p, &w, &dc, &sup| {
                    if w > 0.0 && sup > 0.0 {
                        *p += params.beta * dc;
                    }
                });
        }
        if err_count == 0 {
            return Err(Error::Degenerate("all kernels were empty".into()));
        }
        let mean_err = err_acc / err_count as f64;
        if let Some(&prev) = history.last() {
            let change = (prev - mean_err).abs() / prev.max(1e-300);
            if change < params.stall_tol {
                stall += 1;
            } else {
                stall = 0;
            }
        }
        history.push(mean_err);
        if stall >= params.stall_window {
            break;
        }
    }

    let field = ComplexField2D::new(pupil, optics.pupil_pitch, Plane::Pupil)?;
    Ok((
        PupilFunction {
            field,
            support_radius_px: seq.pupil_radius_px,
            wavelength: optics.wavelength,
            focal_length: optics.focal_length,
        },
        SynthesisDiagnostics {
            sweeps,
            per_aperture_error: per_aperture,
            error_history: history,
        },
    ))
}
