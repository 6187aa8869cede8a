//! Forward imaging model: PSFs and OTFs of masked pupils, noisy
//! aperture-tagged captures of a ground-truth scene, and an independent
//! wave-optics oracle that propagates the full Fresnel chain instead of
//! assuming the shift-invariant intensity-PSF shortcut.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::aperture::{render_mask, ApertureSpec};
use crate::error::{Error, Result};
use crate::field::{
    conjugate_pitch, convolve_circular, fft2_array, ComplexField2D, Plane, RealImage2D,
};
use crate::tile::TileGrid;
use crate::zernike::{circular_support, zernike_phase, ZernikeCoeffs};

/// Physical geometry shared by a capture session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsGeometry {
    /// Wavelength in meters.
    pub wavelength: f64,
    /// Focal length of the unknown lens in meters.
    pub focal_length: f64,
    /// Pupil-plane sample pitch in meters per pixel.
    pub pupil_pitch: f64,
    /// Pupil (NA-limited) support radius in pixels.
    pub pupil_radius_px: f64,
}

impl OpticsGeometry {
    /// Camera pitch conjugate to the pupil grid; the two pitches are linked,
    /// never stored independently.
    pub fn camera_pitch(&self, n: usize) -> f64 {
        conjugate_pitch(self.wavelength, self.focal_length, n, self.pupil_pitch)
    }
}

/// Complex pupil transmission on the NA-limited support.
#[derive(Debug, Clone)]
pub struct PupilFunction {
    pub field: ComplexField2D,
    pub support_radius_px: f64,
    pub wavelength: f64,
    pub focal_length: f64,
}

impl PupilFunction {
    /// Ground-truth pupil: unit modulus on the support, phase from Zernike
    /// coefficients, zero outside.
    pub fn from_zernike(n: usize, optics: &OpticsGeometry, coeffs: &ZernikeCoeffs) -> Result<Self> {
        let phase = zernike_phase(coeffs, optics.pupil_radius_px, n)?;
        let support = circular_support(optics.pupil_radius_px, n)?;
        let data = Array2::from_shape_fn((n, n), |(i, j)| {
            if support.data[(i, j)] > 0.0 {
                Complex64::from_polar(1.0, phase.data[(i, j)])
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Ok(Self {
            field: ComplexField2D::new(data, optics.pupil_pitch, Plane::Pupil)?,
            support_radius_px: optics.pupil_radius_px,
            wavelength: optics.wavelength,
            focal_length: optics.focal_length,
        })
    }

    pub fn n(&self) -> usize {
        self.field.n()
    }

    pub fn camera_pitch(&self) -> f64 {
        conjugate_pitch(
            self.wavelength,
            self.focal_length,
            self.n(),
            self.field.pitch,
        )
    }
}

/// Poisson shot noise + Gaussian read noise + dark offset, per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Expected photons per frame at unit scene intensity; 0 disables the
    /// whole noise chain.
    pub photon_scale: f64,
    pub read_noise_sigma: f64,
    pub dark_offset: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            photon_scale: 0.0,
            read_noise_sigma: 0.0,
            dark_offset: 0.0,
            rng_seed: 0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.photon_scale == 0.0 && self.read_noise_sigma == 0.0 && self.dark_offset == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.photon_scale < 0.0 || self.read_noise_sigma < 0.0 {
            return Err(Error::Parameter(
                "photon_scale and read_noise_sigma must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Photon scale that yields a target SNR on a region whose clean (unit
/// photon scale) mean intensity is `mean_clean`, for Poisson + read noise.
pub fn photon_scale_for_target_snr(mean_clean: f64, target_snr: f64, read_noise_sigma: f64) -> f64 {
    let s = target_snr * target_snr;
    let sigma2 = read_noise_sigma * read_noise_sigma;
    let x = 0.5 * (s + (s * s + 4.0 * s * sigma2).sqrt());
    x / mean_clean
}

/// Ground-truth scene: a sample mosaic with one aberration draw per tile.
#[derive(Debug, Clone)]
pub struct GroundTruthScene {
    pub sample: RealImage2D,
    pub tile_aberrations: Vec<ZernikeCoeffs>,
    pub grid: TileGrid,
}

impl GroundTruthScene {
    pub fn new(
        sample: RealImage2D,
        tile_aberrations: Vec<ZernikeCoeffs>,
        grid: TileGrid,
    ) -> Result<Self> {
        if sample.min() < 0.0 {
            return Err(Error::Parameter("sample intensity must be >= 0".into()));
        }
        if tile_aberrations.len() != grid.tile_count() {
            return Err(Error::Parameter(format!(
                "{} aberration draws for {} tiles",
                tile_aberrations.len(),
                grid.tile_count()
            )));
        }
        Ok(Self {
            sample,
            tile_aberrations,
            grid,
        })
    }
}

/// One aperture-tagged capture.
#[derive(Debug, Clone)]
pub struct CaptureEntry {
    pub spec: ApertureSpec,
    pub image: RealImage2D,
    pub frame_count: u32,
}

/// Acquisition metadata carried alongside a capture stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub optics: OpticsGeometry,
    pub camera_pitch: f64,
    pub noise: NoiseModel,
    pub measured_snr: Option<f64>,
}

/// Aperture-tagged stack of intensity images.
#[derive(Debug, Clone)]
pub struct CaptureSet {
    pub entries: Vec<CaptureEntry>,
    pub meta: CaptureMeta,
}

impl CaptureSet {
    /// Non-negativity of every image.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.image.min() < 0.0 {
                return Err(Error::Parameter(format!(
                    "capture {} has negative samples",
                    e.spec.id
                )));
            }
        }
        let n = self
            .entries
            .first()
            .map(|e| e.image.rows())
            .unwrap_or(0);
        let expect = self.meta.optics.camera_pitch(n.max(1));
        if n > 0 && (self.meta.camera_pitch - expect).abs() > 1e-12 * expect.abs() {
            return Err(Error::Parameter(
                "camera pitch inconsistent with the pupil-grid Fourier relation".into(),
            ));
        }
        Ok(())
    }
}

/// Pupil field with a rendered mask applied.
pub fn masked_pupil(p: &PupilFunction, mask: &RealImage2D) -> Result<ComplexField2D> {
    if mask.data.dim() != p.field.data.dim() {
        return Err(Error::Dimension(format!(
            "mask {:?} vs pupil {:?}",
            mask.data.dim(),
            p.field.data.dim()
        )));
    }
    let data = Array2::from_shape_fn(p.field.data.dim(), |(i, j)| {
        if mask.data[(i, j)] > 0.0 {
            p.field.data[(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    ComplexField2D::new(data, p.field.pitch, Plane::Pupil)
}

/// Intensity PSF of a masked pupil: `h = |F{M·P}|²`. Energy satisfies
/// `Σh = Σ|M·P|²` under the unitary transform.
pub fn psf_from_masked_pupil(p: &PupilFunction, mask: &RealImage2D) -> Result<RealImage2D> {
    let mp = masked_pupil(p, mask)?;
    let field = fft2_array(&mp.data, true);
    Ok(RealImage2D {
        data: field.mapv(|z| z.norm_sqr()),
        pitch: p.camera_pitch(),
    })
}

/// Optical transfer function of an intensity PSF, normalized to 1 at DC.
/// Hermitian-symmetric because `h` is real, with `|H| ≤ 1` everywhere.
pub fn otf(h: &RealImage2D) -> Result<ComplexField2D> {
    if h.sum() <= 0.0 {
        return Err(Error::Degenerate(
            "all-zero PSF has no transfer function (empty aperture)".into(),
        ));
    }
    if !h.is_square() || h.rows() % 2 != 0 {
        return Err(Error::Dimension("OTF requires an even square grid".into()));
    }
    let n = h.rows();
    let mut spec = fft2_array(&h.data.mapv(|v| Complex64::new(v, 0.0)), true);
    let center = spec[(n / 2, n / 2)];
    spec.mapv_inplace(|z| z / center);
    ComplexField2D::new(spec, 1.0 / (n as f64 * h.pitch), Plane::Pupil)
}

/// Simulate one aperture-masked capture of a scene tile: circular
/// convolution with the mask's PSF, then per-frame Poisson shot noise,
/// Gaussian read noise and dark offset, clipped at zero and summed over
/// `frames`.
pub fn capture_image(
    o_tile: &RealImage2D,
    p: &PupilFunction,
    spec: &ApertureSpec,
    noise: &NoiseModel,
    frames: u32,
) -> Result<RealImage2D> {
    if o_tile.min() < 0.0 {
        return Err(Error::Parameter("scene tile must be >= 0".into()));
    }
    noise.validate()?;
    let n = o_tile.rows();
    if o_tile.data.dim() != p.field.data.dim() {
        return Err(Error::Dimension(format!(
            "tile {:?} vs pupil grid {:?}",
            o_tile.data.dim(),
            p.field.data.dim()
        )));
    }
    let mask = render_mask(spec, n, p.support_radius_px)?;
    let h = psf_from_masked_pupil(p, &mask)?;
    let clean = convolve_circular(o_tile, &h)?;

    if noise.is_noiseless() {
        let scale = frames as f64;
        return Ok(RealImage2D {
            data: clean.data.mapv(|v| v.max(0.0) * scale),
            pitch: clean.pitch,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed ^ (spec.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let read = if noise.read_noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise.read_noise_sigma).expect("valid sigma"))
    } else {
        None
    };
    let mut out = Array2::<f64>::zeros(clean.data.dim());
    for _ in 0..frames.max(1) {
        for (o, &c) in out.iter_mut().zip(clean.data.iter()) {
            let lambda = noise.photon_scale * c.max(0.0);
            let mut v = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive lambda").sample(&mut rng)
            } else {
                0.0
            };
            if let Some(d) = &read {
                v += d.sample(&mut rng);
            }
            v += noise.dark_offset;
            *o += v.max(0.0);
        }
    }
    Ok(RealImage2D {
        data: out,
        pitch: clean.pitch,
    })
}

/// Relay geometry for the wave oracle: free-space distance from the
/// Fourier plane to the final tube lens, and that lens's focal length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayGeometry {
    pub distance_m: f64,
    pub focal_length_m: f64,
}

/// Full Fresnel-chain camera field for a point source at `(x0, y0)` meters
/// on the sample plane: tilt-phased pupil, mask, angular-spectrum
/// propagation over the relay distance, and the final lens Fourier
/// transform. Constant factors are dropped; spatial frequencies beyond the
/// evanescent cutoff are zeroed.
pub fn wave_oracle_psf(
    p: &PupilFunction,
    spec: &ApertureSpec,
    point: (f64, f64),
    relay: &RelayGeometry,
) -> Result<ComplexField2D> {
    let n = p.n();
    let mask = render_mask(spec, n, p.support_radius_px)?;
    let du = p.field.pitch;
    let lf = p.wavelength * p.focal_length;
    let c = n as f64 / 2.0;

    // tilt-phased, masked pupil field (point source at (x0, y0))
    let mut field = Array2::from_shape_fn((n, n), |(i, j)| {
        if mask.data[(i, j)] == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let v = (i as f64 - c) * du; // row axis
        let u = (j as f64 - c) * du; // col axis
        let phase = -2.0 * std::f64::consts::PI * (point.0 * u + point.1 * v) / lf;
        p.field.data[(i, j)] * Complex64::from_polar(1.0, phase)
    });

    // angular-spectrum propagation over the relay distance
    if relay.distance_m != 0.0 {
        let mut spec_f = fft2_array(&field, true);
        let df = 1.0 / (n as f64 * du);
        for ((i, j), z) in spec_f.indexed_iter_mut() {
            let fy = (i as f64 - c) * df;
            let fx = (j as f64 - c) * df;
            let arg = 1.0 - (p.wavelength * fx).powi(2) - (p.wavelength * fy).powi(2);
            if arg < 0.0 {
                *z = Complex64::new(0.0, 0.0); // evanescent cutoff
            } else {
                let phase = -2.0 * std::f64::consts::PI * relay.distance_m / p.wavelength
                    * arg.sqrt();
                *z *= Complex64::from_polar(1.0, phase);
            }
        }
        field = fft2_array(&spec_f, false);
    }

    // final lens: Fourier transform onto the camera plane
    let camera = fft2_array(&field, true);
    let pitch = conjugate_pitch(p.wavelength, relay.focal_length_m, n, du);
    ComplexField2D::new(camera, pitch, Plane::Camera)
}

/// PSF translation (rows, cols) in camera-grid pixels predicted for a point
/// source at `(x0, y0)` meters.
pub fn predicted_shift_px(p: &PupilFunction, point: (f64, f64)) -> (f64, f64) {
    let n = p.n() as f64;
    let du = p.field.pitch;
    let lf = p.wavelength * p.focal_length;
    (-point.1 * n * du / lf, -point.0 * n * du / lf)
}

/// Rectangular region of interest, `(row, col)` origin plus size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Mean over standard deviation of a nominally flat region; +∞ for a
/// zero-variance region.
pub fn measure_snr(i: &RealImage2D, flat_region: Rect) -> Result<f64> {
    let (rows, cols) = i.data.dim();
    if flat_region.row + flat_region.height > rows || flat_region.col + flat_region.width > cols {
        return Err(Error::Parameter("flat region outside the image".into()));
    }
    let mut vals = Vec::with_capacity(flat_region.height * flat_region.width);
    for r in flat_region.row..flat_region.row + flat_region.height {
        for c in flat_region.col..flat_region.col + flat_region.width {
            vals.push(i.data[(r, c)]);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mean / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::fourier_shift;
    use crate::metrics::rel_l2;
    use approx::assert_abs_diff_eq;

    fn test_optics(n: usize, pupil_radius: f64) -> OpticsGeometry {
        OpticsGeometry {
            wavelength: 520e-9,
            focal_length: 0.167,
            pupil_pitch: 2.75e-3 / pupil_radius,
            pupil_radius_px: pupil_radius,
        }
    }

    fn flat_pupil(n: usize, r: f64) -> PupilFunction {
        PupilFunction::from_zernike(n, &test_optics(n, r), &ZernikeCoeffs::empty()).unwrap()
    }

    #[test]
    fn unaberrated_psf_peaks_at_center_and_conserves_energy() {
        let n = 128;
        let p = flat_pupil(n, 40.0);
        let mask = render_mask(&ApertureSpec::full(0, 40.0), n, 40.0).unwrap();
        let h = psf_from_masked_pupil(&p, &mask).unwrap();
        let peak = h
            .data
            .indexed_iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(idx, _)| idx)
            .unwrap();
        assert_eq!(peak, (n / 2, n / 2));
        let masked = masked_pupil(&p, &mask).unwrap();
        let rel = (h.sum() - masked.energy()).abs() / masked.energy();
        assert!(rel < 1e-12, "energy mismatch {rel}");
    }

    #[test]
    fn all_zero_mask_gives_zero_psf() {
        let n = 64;
        let p = flat_pupil(n, 20.0);
        let mask = RealImage2D::zeros(n, n, 1.0);
        let h = psf_from_masked_pupil(&p, &mask).unwrap();
        assert_eq!(h.sum(), 0.0);
        assert!(otf(&h).is_err());
    }

    #[test]
    fn tilted_pupil_shifts_the_psf_per_the_shift_theorem() {
        let n = 128;
        let p = flat_pupil(n, 40.0);
        let mask = render_mask(&ApertureSpec::full(0, 40.0), n, 40.0).unwrap();
        let h0 = psf_from_masked_pupil(&p, &mask).unwrap();

        // apply a pure tilt producing a 5.25-px column shift
        let shift_cols = 5.25;
        let du = p.field.pitch;
        let lf = p.wavelength * p.focal_length;
        let x0 = -shift_cols * lf / (n as f64 * du);
        let c = n as f64 / 2.0;
        let mut tilted = p.clone();
        for ((i, j), z) in tilted.field.data.indexed_iter_mut() {
            let _ = i;
            let u = (j as f64 - c) * du;
            *z *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * x0 * u / lf);
        }
        let h1 = psf_from_masked_pupil(&tilted, &mask).unwrap();
        let (pr, pc) = predicted_shift_px(&p, (x0, 0.0));
        assert_abs_diff_eq!(pc, shift_cols, epsilon = 1e-9);
        let expected = fourier_shift(&h0, (pr, pc)).unwrap();
        let err = rel_l2(&h1.data, &expected.data);
        assert!(err < 1e-9, "shifted-PSF error {err}");
    }

    #[test]
    fn otf_is_normalized_hermitian_and_bounded() {
        let n = 128;
        let optics = test_optics(n, 40.0);
        let coeffs = ZernikeCoeffs::new(vec![(4, 2.0), (7, 1.0)]).unwrap();
        let p = PupilFunction::from_zernike(n, &optics, &coeffs).unwrap();
        let mask = render_mask(&ApertureSpec::full(0, 40.0), n, 40.0).unwrap();
        let h = psf_from_masked_pupil(&p, &mask).unwrap();
        let big_h = otf(&h).unwrap();
        assert_abs_diff_eq!(big_h.data[(n / 2, n / 2)].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(big_h.data[(n / 2, n / 2)].im, 0.0, epsilon = 1e-12);
        let mut max_mod: f64 = 0.0;
        let mut max_asym: f64 = 0.0;
        for i in 1..n {
            for j in 1..n {
                let z = big_h.data[(i, j)];
                max_mod = max_mod.max(z.norm());
                let conj = big_h.data[(n - i, n - j)].conj();
                max_asym = max_asym.max((z - conj).norm());
            }
        }
        assert!(max_mod <= 1.0 + 1e-12);
        assert!(max_asym < 1e-10, "Hermitian asymmetry {max_asym}");
    }

    #[test]
    fn otf_matches_disk_autocorrelation_on_axis() {
        let n = 128;
        let r = 30.0;
        let p = flat_pupil(n, r);
        let mask = render_mask(&ApertureSpec::full(0, r), n, r).unwrap();
        let h = psf_from_masked_pupil(&p, &mask).unwrap();
        let big_h = otf(&h).unwrap();
        // discrete autocorrelation of the pixel disk by direct counting
        let area = mask.sum();
        let mut prev = f64::INFINITY;
        for s in [0usize, 5, 10, 20, 30, 40, 50] {
            let mut overlap = 0.0;
            for ((i, j), &v) in mask.data.indexed_iter() {
                if v > 0.0 && j + s < n && mask.data[(i, j + s)] > 0.0 {
                    overlap += 1.0;
                }
            }
            let expect = overlap / area;
            let got = big_h.data[(n / 2, n / 2 + s)].norm();
            assert!(
                (got - expect).abs() < 1e-10,
                "autocorrelation mismatch at shift {s}: {got} vs {expect}"
            );
            assert!(got <= prev + 1e-12, "radial decay violated at {s}");
            prev = got;
        }
    }

    #[test]
    fn capture_of_impulse_is_the_psf_and_dc_response_scales() {
        let n = 64;
        let p = flat_pupil(n, 20.0);
        let spec = ApertureSpec::full(0, 20.0);
        let mask = render_mask(&spec, n, 20.0).unwrap();
        let h = psf_from_masked_pupil(&p, &mask).unwrap();

        let mut impulse = RealImage2D::zeros(n, n, 1.0);
        impulse.data[(n / 2, n / 2)] = 1.0;
        let cap = capture_image(&impulse, &p, &spec, &NoiseModel::noiseless(), 1).unwrap();
        let err = rel_l2(&cap.data, &h.data);
        assert!(err < 1e-12, "impulse response error {err}");

        let constant = RealImage2D::new(Array2::from_elem((n, n), 2.0), 1.0).unwrap();
        let cap2 = capture_image(&constant, &p, &spec, &NoiseModel::noiseless(), 1).unwrap();
        let expect = 2.0 * h.sum();
        for v in cap2.data.iter() {
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-9 * expect);
        }
    }

    #[test]
    fn capture_energy_bookkeeping_noiseless() {
        let n = 64;
        let p = flat_pupil(n, 20.0);
        let spec = ApertureSpec::full(0, 20.0);
        let mask = render_mask(&spec, n, 20.0).unwrap();
        let h = psf_from_masked_pupil(&p, &mask).unwrap();
        let scene = crate::scene::siemens_star(n, 8, 0.3);
        let cap = capture_image(&scene, &p, &spec, &NoiseModel::noiseless(), 1).unwrap();
        let rel = (cap.sum() - scene.sum() * h.sum()).abs() / (scene.sum() * h.sum());
        assert!(rel < 1e-10, "energy bookkeeping error {rel}");
    }

    #[test]
    fn snr_grows_like_sqrt_frames() {
        let n = 64;
        let p = flat_pupil(n, 20.0);
        let spec = ApertureSpec::full(0, 20.0);
        let scene = RealImage2D::new(Array2::from_elem((n, n), 1.0), 1.0).unwrap();
        let region = Rect {
            row: 16,
            col: 16,
            height: 32,
            width: 32,
        };
        let noise = NoiseModel {
            photon_scale: 2e-3, // low photon count so shot noise dominates
            read_noise_sigma: 0.0,
            dark_offset: 0.0,
            rng_seed: 7,
        };
        let mut snrs = Vec::new();
        for frames in [1u32, 4, 16, 64] {
            // average over seeds to tame Monte-Carlo scatter
            let mut acc = 0.0;
            for seed in 0..5u64 {
                let mut nm = noise;
                nm.rng_seed = 7 + seed * 1000 + frames as u64;
                let cap = capture_image(&scene, &p, &spec, &nm, frames).unwrap();
                acc += measure_snr(&cap, region).unwrap();
            }
            snrs.push(acc / 5.0);
        }
        for (k, frames) in [4.0f64, 16.0, 64.0].iter().zip([1, 2, 3]) {
            let gain = snrs[frames] / snrs[0];
            let expect = k.sqrt();
            assert!(
                (gain - expect).abs() / expect < 0.15,
                "√frames scaling violated: gain {gain} vs {expect}"
            );
        }
    }

    #[test]
    fn snr_scales_with_aperture_area() {
        let n = 128;
        let r_pupil = 40.0;
        let p = flat_pupil(n, r_pupil);
        let scene = RealImage2D::new(Array2::from_elem((n, n), 1.0), 1.0).unwrap();
        let region = Rect {
            row: 32,
            col: 32,
            height: 64,
            width: 64,
        };
        let noise = NoiseModel {
            photon_scale: 5e-3,
            read_noise_sigma: 0.0,
            dark_offset: 0.0,
            rng_seed: 3,
        };
        let snr_of = |spec: &ApertureSpec, area: &mut f64| {
            let mask = render_mask(spec, n, r_pupil).unwrap();
            *area = mask.sum();
            let mut acc = 0.0;
            for seed in 0..4u64 {
                let mut nm = noise;
                nm.rng_seed = 11 + seed;
                let cap = capture_image(&scene, &p, spec, &nm, 1).unwrap();
                acc += measure_snr(&cap, region).unwrap();
            }
            acc / 4.0
        };
        let (mut a_full, mut a_small) = (0.0, 0.0);
        let snr_full = snr_of(&ApertureSpec::full(0, r_pupil), &mut a_full);
        let snr_small = snr_of(&ApertureSpec::small(1, (10.0, -8.0), 12.0), &mut a_small);
        let got = snr_small / snr_full;
        let expect = (a_small / a_full).sqrt();
        assert!(
            (got - expect).abs() / expect < 0.2,
            "area scaling violated: {got} vs {expect}"
        );
    }

    #[test]
    fn snr_of_constant_image_is_infinite() {
        let img = RealImage2D::new(Array2::from_elem((64, 64), 5.0), 1.0).unwrap();
        let snr = measure_snr(
            &img,
            Rect {
                row: 0,
                col: 0,
                height: 64,
                width: 64,
            },
        )
        .unwrap();
        assert!(snr.is_infinite());
    }

    #[test]
    fn snr_estimator_matches_known_gaussian_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let normal = Normal::new(100.0, 2.0).unwrap();
        let img = RealImage2D::new(
            Array2::from_shape_fn((64, 64), |_| normal.sample(&mut rng)),
            1.0,
        )
        .unwrap();
        let snr = measure_snr(
            &img,
            Rect {
                row: 0,
                col: 0,
                height: 64,
                width: 64,
            },
        )
        .unwrap();
        assert!((snr - 50.0).abs() < 5.0, "snr {snr}");
    }

    #[test]
    fn oracle_matches_fast_path_on_axis_and_off_axis() {
        let n = 128;
        let optics = test_optics(n, 40.0);
        let coeffs = ZernikeCoeffs::new(vec![(4, 1.5), (8, -1.0)]).unwrap();
        let p = PupilFunction::from_zernike(n, &optics, &coeffs).unwrap();
        let spec = ApertureSpec::full(0, 40.0);
        let mask = render_mask(&spec, n, 40.0).unwrap();
        let h = psf_from_masked_pupil(&p, &mask).unwrap();
        let relay = RelayGeometry {
            distance_m: 0.05,
            focal_length_m: 0.2,
        };

        // on-axis: intensities agree directly
        let u4 = wave_oracle_psf(&p, &spec, (0.0, 0.0), &relay).unwrap();
        let err = rel_l2(&u4.intensity().data, &h.data);
        assert!(err < 1e-6, "on-axis oracle error {err}");

        // off-axis: equals the on-axis PSF translated by the predicted shift
        let du = p.field.pitch;
        let lf = p.wavelength * p.focal_length;
        let point = (
            2.3 * lf / (n as f64 * du),
            -1.6 * lf / (n as f64 * du),
        );
        let u4b = wave_oracle_psf(&p, &spec, point, &relay).unwrap();
        let shift = predicted_shift_px(&p, point);
        let expected = fourier_shift(&h, shift).unwrap();
        let err2 = rel_l2(&u4b.intensity().data, &expected.data);
        assert!(err2 < 1e-3, "off-axis oracle error {err2}");
    }

    #[test]
    fn oracle_with_zero_distance_is_a_plain_fourier_transform() {
        let n = 64;
        let p = flat_pupil(n, 20.0);
        let spec = ApertureSpec::full(0, 20.0);
        let relay = RelayGeometry {
            distance_m: 0.0,
            focal_length_m: 0.2,
        };
        let u4 = wave_oracle_psf(&p, &spec, (0.0, 0.0), &relay).unwrap();
        let mask = render_mask(&spec, n, 20.0).unwrap();
        let direct = fft2_array(&masked_pupil(&p, &mask).unwrap().data, true);
        let max = u4
            .data
            .iter()
            .zip(direct.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max < 1e-12, "zero-distance deviation {max}");
    }
}
