//! 2D complex fields and the Fourier machinery shared by every module.
//!
//! Conventions used throughout the crate:
//!
//! * Grids are square with an even side `N` for complex fields; the grid
//!   center (DC bin, rotation pivot, PSF origin) is the pixel `(N/2, N/2)`.
//! * `fft2`/`ifft2` are unitary (orthonormal) and keep DC at the grid
//!   center, so Parseval holds exactly and `ifft2(fft2(f)) == f` up to
//!   roundoff.
//! * Pixel `(i, j)` has centered coordinates `(y, x) = (i - N/2, j - N/2)`.

use ndarray::Array2;
use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Which optical plane a field lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Sample,
    Pupil,
    Camera,
}

/// Square grid of complex samples with a physical sample pitch.
#[derive(Debug, Clone)]
pub struct ComplexField2D {
    pub data: Array2<Complex64>,
    /// Physical sample spacing, meters per pixel (plane-dependent).
    pub pitch: f64,
    pub plane: Plane,
}

impl ComplexField2D {
    /// Validates the grid invariants: square, even side ≥ 32, pitch > 0.
    pub fn new(data: Array2<Complex64>, pitch: f64, plane: Plane) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::Dimension(format!("field must be square, got {r}x{c}")));
        }
        if r < 32 || r % 2 != 0 {
            return Err(Error::Dimension(format!(
                "field side must be even and >= 32, got {r}"
            )));
        }
        if !(pitch > 0.0) {
            return Err(Error::Parameter(format!("pitch must be > 0, got {pitch}")));
        }
        Ok(Self { data, pitch, plane })
    }

    pub fn zeros(n: usize, pitch: f64, plane: Plane) -> Result<Self> {
        Self::new(Array2::zeros((n, n)), pitch, plane)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Elementwise squared-modulus image on the same grid.
    pub fn intensity(&self) -> RealImage2D {
        RealImage2D {
            data: self.data.mapv(|z| z.norm_sqr()),
            pitch: self.pitch,
        }
    }

    /// Total energy `Σ|f|²`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Real-valued raster. Intensity images are elementwise ≥ 0; residual and
/// phase maps may be signed. Rectangular shapes are allowed for mosaics;
/// all Fourier-side operations require a square grid.
#[derive(Debug, Clone)]
pub struct RealImage2D {
    pub data: Array2<f64>,
    /// Physical sample spacing, meters per pixel.
    pub pitch: f64,
}

impl RealImage2D {
    pub fn new(data: Array2<f64>, pitch: f64) -> Result<Self> {
        if !(pitch > 0.0) {
            return Err(Error::Parameter(format!("pitch must be > 0, got {pitch}")));
        }
        Ok(Self { data, pitch })
    }

    pub fn zeros(rows: usize, cols: usize, pitch: f64) -> Self {
        Self {
            data: Array2::zeros((rows, cols)),
            pitch,
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    /// Side length for square images.
    pub fn n(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows()
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Promote to a complex field (zero imaginary part). Requires the
    /// complex-field grid invariants.
    pub fn to_complex(&self, plane: Plane) -> Result<ComplexField2D> {
        ComplexField2D::new(self.data.mapv(|v| Complex64::new(v, 0.0)), self.pitch, plane)
    }

    /// Center of mass `(row, col)` in grid coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let mut m = 0.0;
        let mut mr = 0.0;
        let mut mc = 0.0;
        for ((i, j), &v) in self.data.indexed_iter() {
            m += v;
            mr += v * i as f64;
            mc += v * j as f64;
        }
        if m == 0.0 {
            (self.rows() as f64 / 2.0, self.cols() as f64 / 2.0)
        } else {
            (mr / m, mc / m)
        }
    }
}

static PLANNER: Lazy<Mutex<FftPlanner<f64>>> = Lazy::new(|| Mutex::new(FftPlanner::new()));
static FWD_CACHE: Lazy<Mutex<HashMap<usize, Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));
static INV_CACHE: Lazy<Mutex<HashMap<usize, Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

pub(crate) fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let cache = if forward { &FWD_CACHE } else { &INV_CACHE };
    let mut guard = cache.lock().unwrap();
    if let Some(f) = guard.get(&n) {
        return f.clone();
    }
    let mut planner = PLANNER.lock().unwrap();
    let f = if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    };
    guard.insert(n, f.clone());
    f
}

/// In-place quadrant swap moving the grid center to index 0 (its own
/// inverse for even side lengths).
pub fn fftshift2(a: &mut Array2<Complex64>) {
    let (rows, cols) = a.dim();
    debug_assert!(rows % 2 == 0 && cols % 2 == 0);
    let (hr, hc) = (rows / 2, cols / 2);
    for i in 0..hr {
        for j in 0..cols {
            let (i2, j2) = ((i + hr) % rows, (j + hc) % cols);
            let tmp = a[(i, j)];
            a[(i, j)] = a[(i2, j2)];
            a[(i2, j2)] = tmp;
        }
    }
}

fn fft2_inner(data: &Array2<Complex64>, forward: bool) -> Array2<Complex64> {
    let (rows, cols) = data.dim();
    let mut a = data.clone();
    fftshift2(&mut a);

    // rows
    let plan_c = plan(cols, forward);
    for mut row in a.rows_mut() {
        let s = row.as_slice_mut().expect("contiguous row");
        plan_c.process(s);
    }
    // columns via transpose
    let mut t = a.t().to_owned();
    let plan_r = plan(rows, forward);
    for mut row in t.rows_mut() {
        let s = row.as_slice_mut().expect("contiguous row");
        plan_r.process(s);
    }
    let mut out = t.t().to_owned();
    fftshift2(&mut out);
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    out.mapv_inplace(|z| z * scale);
    out
}

/// Unitary centered 2D Fourier transform. DC lands at `(N/2, N/2)`.
pub fn fft2(f: &ComplexField2D) -> ComplexField2D {
    ComplexField2D {
        data: fft2_inner(&f.data, true),
        pitch: f.pitch,
        plane: f.plane,
    }
}

/// Unitary centered inverse transform; `ifft2(fft2(f)) == f` to roundoff.
pub fn ifft2(f: &ComplexField2D) -> ComplexField2D {
    ComplexField2D {
        data: fft2_inner(&f.data, false),
        pitch: f.pitch,
        plane: f.plane,
    }
}

/// Unitary centered transform on a raw complex array (square, even side).
pub fn fft2_array(data: &Array2<Complex64>, forward: bool) -> Array2<Complex64> {
    fft2_inner(data, forward)
}

/// Unitary centered transform of a real raster.
pub fn fft2_real(img: &RealImage2D) -> Array2<Complex64> {
    fft2_inner(&img.data.mapv(|v| Complex64::new(v, 0.0)), true)
}

/// Circular convolution on the shared grid. A unit impulse at the grid
/// center is the identity element.
pub fn convolve_circular(a: &RealImage2D, b: &RealImage2D) -> Result<RealImage2D> {
    if a.data.dim() != b.data.dim() {
        return Err(Error::Dimension(format!(
            "convolution operands differ: {:?} vs {:?}",
            a.data.dim(),
            b.data.dim()
        )));
    }
    if !a.is_square() || a.rows() % 2 != 0 {
        return Err(Error::Dimension(
            "convolution requires an even square grid".into(),
        ));
    }
    let fa = fft2_real(a);
    let fb = fft2_real(b);
    let prod = &fa * &fb;
    let n = a.rows() as f64;
    let out = fft2_inner(&prod, false);
    Ok(RealImage2D {
        data: out.mapv(|z| z.re * n),
        pitch: a.pitch,
    })
}

/// Translate a real raster by a (possibly fractional) pixel offset using a
/// Fourier phase ramp: `out(i, j) ≈ in(i - dr, j - dc)`. Exact for
/// band-limited content; the Nyquist bin is attenuated by `cos(π·shift)` to
/// keep the output real.
pub fn fourier_shift(img: &RealImage2D, shift: (f64, f64)) -> Result<RealImage2D> {
    if !img.is_square() || img.rows() % 2 != 0 {
        return Err(Error::Dimension("fourier_shift requires an even square grid".into()));
    }
    let n = img.rows();
    let mut spec = fft2_real(img);
    apply_shift_phase(&mut spec, shift);
    let out = fft2_inner(&spec, false);
    let _ = n;
    Ok(RealImage2D {
        data: out.mapv(|z| z.re),
        pitch: img.pitch,
    })
}

/// Multiply a centered spectrum by the phase ramp of a spatial translation.
pub fn apply_shift_phase(spec: &mut Array2<Complex64>, shift: (f64, f64)) {
    let (rows, cols) = spec.dim();
    let (hr, hc) = (rows as isize / 2, cols as isize / 2);
    for ((i, j), z) in spec.indexed_iter_mut() {
        let kr = i as isize - hr;
        let kc = j as isize - hc;
        let fr = if kr == -hr {
            // Nyquist row: real attenuation instead of a complex ramp
            Complex64::new((std::f64::consts::PI * shift.0).cos(), 0.0)
        } else {
            Complex64::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * kr as f64 * shift.0 / rows as f64,
            )
        };
        let fc = if kc == -hc {
            Complex64::new((std::f64::consts::PI * shift.1).cos(), 0.0)
        } else {
            Complex64::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * kc as f64 * shift.1 / cols as f64,
            )
        };
        *z *= fr * fc;
    }
}

/// Circularly shift by whole pixels.
pub fn roll(img: &RealImage2D, dr: isize, dc: isize) -> RealImage2D {
    let (rows, cols) = img.data.dim();
    let mut out = Array2::zeros((rows, cols));
    for ((i, j), &v) in img.data.indexed_iter() {
        let i2 = (i as isize + dr).rem_euclid(rows as isize) as usize;
        let j2 = (j as isize + dc).rem_euclid(cols as isize) as usize;
        out[(i2, j2)] = v;
    }
    RealImage2D {
        data: out,
        pitch: img.pitch,
    }
}

/// Camera-plane pitch conjugate to a pupil-plane grid:
/// `λ·f / (N · pupil_pitch)`.
pub fn conjugate_pitch(wavelength: f64, focal_length: f64, n: usize, pupil_pitch: f64) -> f64 {
    wavelength * focal_length / (n as f64 * pupil_pitch)
}
