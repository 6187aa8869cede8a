//! Error metrics shared by tests, the acceptance suite and pipeline reports.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{fft2_array, RealImage2D};

/// Relative L2 error `‖a − b‖ / ‖b‖`.
pub fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
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

/// Zero-lag normalized cross-correlation (cosine similarity).
pub fn ncc(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Relative L2 error between two images restricted to spatial frequencies
/// inside `band_radius_px` (centered spectra). Optionally fits a global
/// scale and subpixel translation of `a` onto `b` first — both are
/// unobservable in the deconvolution chain (arbitrary radiometric scale,
/// common lateral shift).
pub fn in_band_rel_error(
    a: &RealImage2D,
    b: &RealImage2D,
    band_radius_px: f64,
    register: bool,
) -> Result<f64> {
    if a.data.dim() != b.data.dim() {
        return Err(Error::Dimension("metric operands differ in size".into()));
    }
    if !a.is_square() || a.rows() % 2 != 0 {
        return Err(Error::Dimension("in-band metric needs an even square grid".into()));
    }
    let n = a.rows();
    let c = n as f64 / 2.0;
    let fa = fft2_array(&a.data.mapv(|v| Complex64::new(v, 0.0)), true);
    let fb = fft2_array(&b.data.mapv(|v| Complex64::new(v, 0.0)), true);

    let band = |i: usize, j: usize| -> bool {
        let y = i as f64 - c;
        let x = j as f64 - c;
        (x * x + y * y).sqrt() <= band_radius_px
    };

    let (shift, scale) = if register {
        let shift = crate::register::phase_correlate(b, a)?.shift;
        // scale from the DC bins (total intensity ratio)
        let dc_a = fa[(n / 2, n / 2)].norm();
        let dc_b = fb[(n / 2, n / 2)].norm();
        let scale = if dc_a > 0.0 { dc_b / dc_a } else { 1.0 };
        (shift, scale)
    } else {
        ((0.0, 0.0), 1.0)
    };

    let mut num = 0.0;
    let mut den = 0.0;
    for ((i, j), zb) in fb.indexed_iter() {
        if !band(i, j) {
            continue;
        }
        let mut za = fa[(i, j)] * scale;
        if register {
            let kr = i as f64 - c;
            let kc = j as f64 - c;
            let phase = -2.0 * std::f64::consts::PI * (kr * shift.0 + kc * shift.1) / n as f64;
            za *= Complex64::from_polar(1.0, phase);
        }
        num += (za - zb).norm_sqr();
        den += zb.norm_sqr();
    }
    if den == 0.0 {
        return Err(Error::Degenerate("reference has no in-band energy".into()));
    }
    Ok((num / den).sqrt())
}

/// Integer displacement `(dr, dc)` maximizing the circular cross-correlation,
/// i.e. rolling `b` by the result best aligns it with `a`.
pub fn best_integer_shift(a: &Array2<f64>, b: &Array2<f64>) -> (isize, isize) {
    let (rows, cols) = a.dim();
    let fa = fft2_array(&a.mapv(|v| Complex64::new(v, 0.0)), true);
    let fb = fft2_array(&b.mapv(|v| Complex64::new(v, 0.0)), true);
    let cross = ndarray::Zip::from(&fa)
        .and(&fb)
        .map_collect(|x, y| x * y.conj());
    let corr = fft2_array(&cross, false);
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for ((i, j), z) in corr.indexed_iter() {
        if z.re > best_v {
            best_v = z.re;
            best = (i, j);
        }
    }
    (
        best.0 as isize - rows as isize / 2,
        best.1 as isize - cols as isize / 2,
    )
}

/// Ringing-artifact metric: energy of the high-pass component of `img`
/// outside `support`, as a fraction of the reference's energy inside it.
/// The high-pass cut is at `hp_radius_px` in the centered spectrum.
pub fn artifact_fraction(
    img: &RealImage2D,
    reference: &RealImage2D,
    support: &RealImage2D,
    hp_radius_px: f64,
) -> Result<f64> {
    if img.data.dim() != support.data.dim() || img.data.dim() != reference.data.dim() {
        return Err(Error::Dimension("artifact metric operands differ".into()));
    }
    let n = img.rows();
    let c = n as f64 / 2.0;
    let mut spec = fft2_array(&img.data.mapv(|v| Complex64::new(v, 0.0)), true);
    for ((i, j), z) in spec.indexed_iter_mut() {
        let y = i as f64 - c;
        let x = j as f64 - c;
        if (x * x + y * y).sqrt() <= hp_radius_px {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    let hp = fft2_array(&spec, false);
    let mut outside = 0.0;
    for ((i, j), z) in hp.indexed_iter() {
        if support.data[(i, j)] == 0.0 {
            outside += z.re * z.re;
        }
    }
    let mut inside = 0.0;
    for ((i, j), &v) in reference.data.indexed_iter() {
        if support.data[(i, j)] > 0.0 {
            inside += v * v;
        }
    }
    if inside == 0.0 {
        return Err(Error::Degenerate("support holds no reference energy".into()));
    }
    Ok(outside / inside)
}
