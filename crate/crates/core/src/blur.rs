//! Local PSF recovery from an image pair: the near-aberration-free
//! center-aperture capture and a blurred off-center capture.
//!
//! The kernel is estimated by iterative Tikhonov-regularized updates in the
//! Fourier domain with the step preconditioned by `|I₁|/|I₁|_max`, and a
//! spatial projection every iteration: non-negativity, a centered support
//! window, and renormalization to the measured energy ratio.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{fft2_array, RealImage2D};

/// Solver parameters with the defaults used throughout the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct BlurParams {
    pub max_iter: usize,
    /// Relative kernel-update stopping tolerance.
    pub tol: f64,
    /// Tikhonov weight relative to `|I₁|²_max`.
    pub delta: f64,
    /// Regularization of the Wiener initializer.
    pub init_delta: f64,
    /// Side of the centered square support window; `None` = N/4.
    pub support_window: Option<usize>,
    pub step: f64,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            delta: 1e-3,
            init_delta: 1e-2,
            support_window: None,
            step: 1.0,
        }
    }
}

/// Recovered blur kernel with its diagnostics.
#[derive(Debug, Clone)]
pub struct BlurEstimate {
    pub kernel: RealImage2D,
    /// Subpixel center of mass, absolute (row, col) grid coordinates.
    pub centroid: (f64, f64),
    /// Final data-fidelity residual `‖I_m − I₁·B‖`.
    pub residual: f64,
    pub iterations_used: usize,
}

struct Projection {
    window_half: usize,
    target_sum: f64,
    n: usize,
}

impl Projection {
    /// Non-negativity, centered support window, energy renormalization.
    fn apply(&self, kernel: &mut Array2<f64>) {
        let c = self.n / 2;
        let lo = c - self.window_half;
        let hi = c + self.window_half;
        for ((i, j), v) in kernel.indexed_iter_mut() {
            if *v < 0.0 || i < lo || i >= hi || j < lo || j >= hi {
                *v = 0.0;
            }
        }
        let sum: f64 = kernel.iter().sum();
        if sum > 0.0 {
            let scale = self.target_sum / sum;
            kernel.mapv_inplace(|v| v * scale);
        }
    }
}

/// Estimate the kernel `b` with `i_m ≈ b ∗ i_ref` from a capture pair.
///
/// Errors: a zero-energy reference is degenerate; if the residual grows for
/// five consecutive iterations the solver reports non-convergence (the best
/// iterate is still the internal state the caller can re-run for, per the
/// returned context).
pub fn estimate_blur(
    i_ref: &RealImage2D,
    i_m: &RealImage2D,
    params: &BlurParams,
) -> Result<BlurEstimate> {
    if i_ref.data.dim() != i_m.data.dim() {
        return Err(Error::Dimension(format!(
            "image pair differs: {:?} vs {:?}",
            i_ref.data.dim(),
            i_m.data.dim()
        )));
    }
    if !i_ref.is_square() || i_ref.rows() % 2 != 0 {
        return Err(Error::Dimension("blur estimation needs an even square grid".into()));
    }
    let sum_ref = i_ref.sum();
    if sum_ref <= 0.0 {
        return Err(Error::Degenerate("reference image has zero energy".into()));
    }
    let n = i_ref.rows();
    let nf = n as f64;

    // spectra; K is the reference spectrum scaled so that I_m = K ⊙ B for
    // a plain discrete convolution under the unitary transform convention
    let k_spec = fft2_array(&i_ref.data.mapv(|v| Complex64::new(v, 0.0)), true).mapv(|z| z * nf);
    let d_spec = fft2_array(&i_m.data.mapv(|v| Complex64::new(v, 0.0)), true);
    let k_max2 = k_spec.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    let k_max = k_max2.sqrt();

    let projection = Projection {
        window_half: params.support_window.unwrap_or(n / 4).min(n) / 2,
        target_sum: i_m.sum() / sum_ref,
        n,
    };

    // Wiener-filtered quotient initializer
    let mut b_spec = Array2::from_shape_fn((n, n), |idx| {
        let k = k_spec[idx];
        k.conj() * d_spec[idx] / (k.norm_sqr() + params.init_delta * k_max2)
    });

    let mut kernel = project_spatial(&b_spec, &projection);
    b_spec = fft2_array(&kernel.mapv(|v| Complex64::new(v, 0.0)), true);

    let residual_of = |b: &Array2<Complex64>| -> f64 {
        b.indexed_iter()
            .map(|(idx, z)| (d_spec[idx] - k_spec[idx] * z).norm_sqr())
            .sum::<f64>()
            .sqrt()
    };

    let mut residual = residual_of(&b_spec);
    let mut best_kernel = kernel.clone();
    let mut best_residual = residual;
    let mut iterations = 0usize;
    let mut grow_streak = 0usize;

    for it in 0..params.max_iter {
        iterations = it + 1;
        // preconditioned Tikhonov gradient step in the Fourier domain
        for (idx, b) in b_spec.indexed_iter_mut() {
            let k = k_spec[idx];
            let w = k.norm() / k_max;
            let num = k.conj() * (d_spec[idx] - k * *b);
            *b += params.step * w * num / (k.norm_sqr() + params.delta * k_max2);
        }
        let next = project_spatial(&b_spec, &projection);
        b_spec = fft2_array(&next.mapv(|v| Complex64::new(v, 0.0)), true);
        let next_residual = residual_of(&b_spec);

        let delta_kernel = rel_change(&next, &kernel);
        kernel = next;

        if next_residual > residual {
            grow_streak += 1;
            if grow_streak >= 5 {
                return Err(Error::NonConvergence {
                    context: format!(
                        "blur estimation diverged after {iterations} iterations (best residual {best_residual:.3e})"
                    ),
                    residual: next_residual,
                });
            }
        } else {
            grow_streak = 0;
        }
        if next_residual < best_residual {
            best_residual = next_residual;
            best_kernel = kernel.clone();
        }
        residual = next_residual;

        if delta_kernel < params.tol {
            break;
        }
    }

    let out = RealImage2D {
        data: best_kernel,
        pitch: i_m.pitch,
    };
    let centroid = out.centroid();
    Ok(BlurEstimate {
        kernel: out,
        centroid,
        residual: best_residual,
        iterations_used: iterations,
    })
}

fn project_spatial(b_spec: &Array2<Complex64>, projection: &Projection) -> Array2<f64> {
    let spatial = fft2_array(b_spec, false);
    let mut kernel = spatial.mapv(|z| z.re);
    projection.apply(&mut kernel);
    kernel
}

fn rel_change(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}
