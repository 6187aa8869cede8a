//! Frame registration, sinc-interpolated rotation, two-point radiometric
//! calibration and frame averaging.
//!
//! Rotation uses the three-pass shear decomposition with each shear applied
//! as a per-row/column Fourier phase ramp, so no spatial filter touches the
//! frames' frequency spectra. Translation is recovered by whitened phase
//! correlation with a parabolic subpixel peak fit; rotation by
//! golden-section search on the correlation peak.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::aperture::ApertureSpec;
use crate::error::{Error, Result};
use crate::field::{fft2_array, fourier_shift, plan, RealImage2D};
use crate::simulate::CaptureEntry;

/// Rigid transform mapping a frame onto the reference: rotate about the
/// grid center, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    /// Subpixel (row, col) translation.
    pub translation: (f64, f64),
    /// Rotation in degrees, bounded by the ±10° registration search.
    pub rotation_deg: f64,
}

impl FrameTransform {
    pub fn identity() -> Self {
        Self {
            translation: (0.0, 0.0),
            rotation_deg: 0.0,
        }
    }
}

/// Registration outcome for one frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameRegistration {
    pub transform: FrameTransform,
    pub correlation_peak: f64,
    /// Frames whose correlation peak falls below the floor are excluded
    /// from averaging.
    pub usable: bool,
}

/// Correlation-peak floor below which a frame is declared unregistrable.
pub const CORRELATION_FLOOR: f64 = 0.2;

/// Rotation search bound in degrees.
pub const ROTATION_BOUND_DEG: f64 = 10.0;

/// Dark/reference pair for two-point radiometric calibration.
#[derive(Debug, Clone)]
pub struct CalibrationPair {
    pub dark: RealImage2D,
    pub reference: RealImage2D,
}

fn shift_line(line: &mut [Complex64], shift: f64, forward_plan: &dyn rustfft::Fft<f64>, inverse_plan: &dyn rustfft::Fft<f64>) {
    let n = line.len();
    forward_plan.process(line);
    for (k, z) in line.iter_mut().enumerate() {
        let ks = if k <= n / 2 { k as isize } else { k as isize - n as isize };
        if ks == (n / 2) as isize && n % 2 == 0 {
            // Nyquist bin: real attenuation keeps the output real
            *z *= Complex64::new((std::f64::consts::PI * shift).cos(), 0.0);
        } else {
            let phase = -2.0 * std::f64::consts::PI * ks as f64 * shift / n as f64;
            *z *= Complex64::from_polar(1.0, phase);
        }
    }
    inverse_plan.process(line);
    let scale = 1.0 / n as f64;
    for z in line.iter_mut() {
        *z *= scale;
    }
}

/// Shear pass: translate each row (`axis = 1`) or column (`axis = 0`) by
/// `coeff · (line index − center)` pixels via a pure Fourier phase ramp.
fn shear(img: &mut Array2<f64>, coeff: f64, axis: usize) {
    let (rows, cols) = img.dim();
    let len = if axis == 1 { cols } else { rows };
    let count = if axis == 1 { rows } else { cols };
    let center = count as f64 / 2.0;
    let fwd = plan(len, true);
    let inv = plan(len, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for idx in 0..count {
        let shift = coeff * (idx as f64 - center);
        if axis == 1 {
            for j in 0..len {
                buf[j] = Complex64::new(img[(idx, j)], 0.0);
            }
        } else {
            for i in 0..len {
                buf[i] = Complex64::new(img[(i, idx)], 0.0);
            }
        }
        shift_line(&mut buf, shift, fwd.as_ref(), inv.as_ref());
        if axis == 1 {
            for j in 0..len {
                img[(idx, j)] = buf[j].re;
            }
        } else {
            for i in 0..len {
                img[(i, idx)] = buf[i].re;
            }
        }
    }
}

/// Rotate about the grid center by `theta_deg` using the three-pass shear
/// decomposition (shear–shear–shear), each pass a per-line Fourier phase
/// ramp. `theta == 0` returns the input bit-exactly.
pub fn rotate_image_sinc(image: &RealImage2D, theta_deg: f64) -> Result<RealImage2D> {
    if theta_deg.abs() >= 45.0 {
        return Err(Error::Parameter(format!(
            "rotation {theta_deg}° outside the ±45° shear-decomposition range"
        )));
    }
    if theta_deg == 0.0 {
        return Ok(image.clone());
    }
    if !image.is_square() {
        return Err(Error::Dimension("rotation requires a square frame".into()));
    }
    let theta = theta_deg.to_radians();
    let a = -(theta / 2.0).tan();
    let b = theta.sin();
    let mut data = image.data.clone();
    shear(&mut data, a, 1);
    shear(&mut data, b, 0);
    shear(&mut data, a, 1);
    Ok(RealImage2D {
        data,
        pitch: image.pitch,
    })
}

/// Phase-correlation result: translation aligning `b` onto `a`
/// (`shift(b) ≈ a`) and the normalized correlation peak.
#[derive(Debug, Clone, Copy)]
pub struct PhaseCorrelation {
    pub shift: (f64, f64),
    pub peak: f64,
}

/// Whitened phase correlation with parabolic subpixel refinement.
pub fn phase_correlate(a: &RealImage2D, b: &RealImage2D) -> Result<PhaseCorrelation> {
    if a.data.dim() != b.data.dim() {
        return Err(Error::Dimension("phase correlation operands differ".into()));
    }
    if !a.is_square() || a.rows() % 2 != 0 {
        return Err(Error::Dimension("phase correlation needs an even square grid".into()));
    }
    let n = a.rows();
    let fa = fft2_array(&a.data.mapv(|v| Complex64::new(v, 0.0)), true);
    let fb = fft2_array(&b.data.mapv(|v| Complex64::new(v, 0.0)), true);
    let mut cross = Array2::<Complex64>::zeros((n, n));
    let floor = 1e-12
        * fa.iter()
            .zip(fb.iter())
            .map(|(x, y)| x.norm() * y.norm())
            .fold(0.0, f64::max);
    let mut occupied = 0usize;
    for ((i, j), z) in cross.indexed_iter_mut() {
        let c = fa[(i, j)] * fb[(i, j)].conj();
        let m = c.norm();
        *z = if m > floor.max(1e-300) {
            occupied += 1;
            c / m
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    if occupied == 0 {
        return Ok(PhaseCorrelation {
            shift: (0.0, 0.0),
            peak: 0.0,
        });
    }
    let corr = fft2_array(&cross, false);
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for ((i, j), z) in corr.indexed_iter() {
        if z.re > best_v {
            best_v = z.re;
            best = (i, j);
        }
    }
    // a perfect match concentrates all occupied-bin energy in one sample
    let peak = (best_v * n as f64 / occupied as f64).min(1.0);

    let wrap = |i: isize| -> usize { i.rem_euclid(n as isize) as usize };
    let sub = |m1: f64, z0: f64, p1: f64| -> f64 {
        let den = m1 - 2.0 * z0 + p1;
        if den.abs() < 1e-300 {
            0.0
        } else {
            (0.5 * (m1 - p1) / den).clamp(-0.5, 0.5)
        }
    };
    let dr = sub(
        corr[(wrap(best.0 as isize - 1), best.1)].re,
        corr[best].re,
        corr[(wrap(best.0 as isize + 1), best.1)].re,
    );
    let dc = sub(
        corr[(best.0, wrap(best.1 as isize - 1))].re,
        corr[best].re,
        corr[(best.0, wrap(best.1 as isize + 1))].re,
    );

    let c = n as f64 / 2.0;
    // displacement of b relative to a, measured from the centered origin
    let shift_r = best.0 as f64 + dr - c;
    let shift_c = best.1 as f64 + dc - c;
    Ok(PhaseCorrelation {
        shift: (shift_r, shift_c),
        peak,
    })
}

/// Apply a registration transform: rotate, then translate.
pub fn warp_frame(frame: &RealImage2D, t: &FrameTransform) -> Result<RealImage2D> {
    let rotated = rotate_image_sinc(frame, t.rotation_deg)?;
    fourier_shift(&rotated, t.translation)
}

/// Register every frame onto `frames[reference_index]`: golden-section
/// search for rotation in ±10°, then phase correlation for translation.
/// Frames whose correlation peak stays below [`CORRELATION_FLOOR`] are
/// flagged unusable.
pub fn register_frames(
    frames: &[RealImage2D],
    reference_index: usize,
) -> Result<Vec<FrameRegistration>> {
    if frames.len() < 2 {
        return Err(Error::Parameter("registration needs at least two frames".into()));
    }
    let reference = frames
        .get(reference_index)
        .ok_or_else(|| Error::Parameter("reference index out of range".into()))?;

    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut out = Vec::with_capacity(frames.len());
    for (idx, frame) in frames.iter().enumerate() {
        if idx == reference_index {
            out.push(FrameRegistration {
                transform: FrameTransform::identity(),
                correlation_peak: 1.0,
                usable: true,
            });
            continue;
        }
        let objective = |theta: f64| -> Result<f64> {
            let rotated = rotate_image_sinc(frame, theta)?;
            Ok(phase_correlate(reference, &rotated)?.peak)
        };
        let (mut lo, mut hi) = (-ROTATION_BOUND_DEG, ROTATION_BOUND_DEG);
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let mut fc = objective(c)?;
        let mut fd = objective(d)?;
        while hi - lo > 5e-3 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = objective(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = objective(d)?;
            }
        }
        let theta = 0.5 * (lo + hi);
        let rotated = rotate_image_sinc(frame, theta)?;
        let pc = phase_correlate(reference, &rotated)?;
        out.push(FrameRegistration {
            transform: FrameTransform {
                translation: pc.shift,
                rotation_deg: theta,
            },
            correlation_peak: pc.peak,
            usable: pc.peak >= CORRELATION_FLOOR,
        });
    }
    Ok(out)
}

/// Two-point radiometric calibration `I' = (I − B)/(R − B)`. Dead pixels
/// (`R − B ≤ 0`) are set to 0; their count is returned.
pub fn radiometric_calibrate(
    i: &RealImage2D,
    dark: &RealImage2D,
    reference: &RealImage2D,
) -> Result<(RealImage2D, usize)> {
    if i.data.dim() != dark.data.dim() || i.data.dim() != reference.data.dim() {
        return Err(Error::Dimension("calibration operand shapes differ".into()));
    }
    let mut dead = 0usize;
    let mut out = Array2::zeros(i.data.dim());
    for (idx, o) in out.indexed_iter_mut() {
        let denom = reference.data[idx] - dark.data[idx];
        if denom <= 0.0 {
            dead += 1;
            *o = 0.0;
        } else {
            *o = (i.data[idx] - dark.data[idx]) / denom;
        }
    }
    Ok((RealImage2D { data: out, pitch: i.pitch }, dead))
}

/// Warp each group's usable frames onto the reference and sum them into one
/// capture entry per aperture. Groups with no usable frame are skipped with
/// a warning.
pub fn average_frames(
    frames: &[RealImage2D],
    registrations: &[FrameRegistration],
    groups: &[(ApertureSpec, Vec<usize>)],
) -> Result<Vec<CaptureEntry>> {
    if frames.len() != registrations.len() {
        return Err(Error::Parameter(
            "one registration per frame is required".into(),
        ));
    }
    let mut entries = Vec::with_capacity(groups.len());
    for (spec, members) in groups {
        let usable: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| i < frames.len() && registrations[i].usable)
            .collect();
        if usable.is_empty() {
            log::warn!("aperture {} has no usable frames; entry omitted", spec.id);
            continue;
        }
        let mut acc = Array2::<f64>::zeros(frames[usable[0]].data.dim());
        for &i in &usable {
            let warped = warp_frame(&frames[i], &registrations[i].transform)?;
            acc += &warped.data;
        }
        entries.push(CaptureEntry {
            spec: spec.clone(),
            image: RealImage2D {
                data: acc,
                pitch: frames[usable[0]].pitch,
            },
            frame_count: usable.len() as u32,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth band-limited test image with near-zero borders: random field,
    /// low-passed, then windowed by a tight Gaussian.
    fn band_limited_image(n: usize, seed: u64) -> RealImage2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((n, n), |_| Complex64::new(rng.gen::<f64>() - 0.5, 0.0));
        let mut spec = fft2_array(&raw, true);
        let c = n as f64 / 2.0;
        for ((i, j), z) in spec.indexed_iter_mut() {
            let y = i as f64 - c;
            let x = j as f64 - c;
            if (x * x + y * y).sqrt() > n as f64 / 8.0 {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        let img = fft2_array(&spec, false);
        let sigma = n as f64 / 6.0;
        let data = Array2::from_shape_fn((n, n), |(i, j)| {
            let y = i as f64 - c;
            let x = j as f64 - c;
            let w = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            img[(i, j)].re * w
        });
        RealImage2D::new(data, 1.0).unwrap()
    }

    #[test]
    fn zero_rotation_is_bit_exact_identity() {
        let img = band_limited_image(64, 1);
        let out = rotate_image_sinc(&img, 0.0).unwrap();
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn rotation_round_trip_is_tight_in_the_interior() {
        let n = 128;
        let img = band_limited_image(n, 2);
        let there = rotate_image_sinc(&img, 3.0).unwrap();
        let back = rotate_image_sinc(&there, -3.0).unwrap();
        let b = n / 10;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in b..n - b {
            for j in b..n - b {
                num += (back.data[(i, j)] - img.data[(i, j)]).powi(2);
                den += img.data[(i, j)].powi(2);
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-8, "interior round-trip error {rel}");
    }

    #[test]
    fn rotation_preserves_energy_for_band_limited_input() {
        let img = band_limited_image(128, 3);
        let rot = rotate_image_sinc(&img, 4.0).unwrap();
        let e0: f64 = img.data.iter().map(|v| v * v).sum();
        let e1: f64 = rot.data.iter().map(|v| v * v).sum();
        assert!(
            ((e1 - e0) / e0).abs() < 1e-10,
            "energy drift {}",
            ((e1 - e0) / e0).abs()
        );
    }

    #[test]
    fn rotation_rejects_out_of_range_angles() {
        let img = band_limited_image(64, 4);
        assert!(rotate_image_sinc(&img, 45.0).is_err());
    }

    #[test]
    fn phase_correlation_recovers_subpixel_shifts() {
        let img = band_limited_image(128, 5);
        let shifted = fourier_shift(&img, (3.25, -1.5)).unwrap();
        let pc = phase_correlate(&shifted, &img).unwrap();
        assert!((pc.shift.0 - 3.25).abs() < 0.1, "dr {}", pc.shift.0);
        assert!((pc.shift.1 + 1.5).abs() < 0.1, "dc {}", pc.shift.1);
        assert!(pc.peak > 0.5);
    }

    #[test]
    fn identical_frames_register_to_identity() {
        let img = band_limited_image(64, 6);
        let frames = vec![img.clone(), img.clone(), img];
        let regs = register_frames(&frames, 0).unwrap();
        for r in regs {
            assert!(r.usable);
            assert!(r.transform.rotation_deg.abs() < 0.05);
            assert!(r.transform.translation.0.abs() < 0.05);
            assert!(r.transform.translation.1.abs() < 0.05);
        }
    }

    #[test]
    fn synthetic_transform_is_recovered() {
        let n = 128;
        let base = band_limited_image(n, 7);
        let moved = fourier_shift(&rotate_image_sinc(&base, 1.2).unwrap(), (3.25, -1.5)).unwrap();
        let regs = register_frames(&[base.clone(), moved.clone()], 0).unwrap();
        let t = regs[1].transform;
        assert!(regs[1].usable);
        assert!((t.rotation_deg + 1.2).abs() < 0.05, "theta {}", t.rotation_deg);
        // the recovered warp must bring the frame back onto the reference
        let aligned = warp_frame(&moved, &t).unwrap();
        let b = n / 10;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in b..n - b {
            for j in b..n - b {
                num += (aligned.data[(i, j)] - base.data[(i, j)]).powi(2);
                den += base.data[(i, j)].powi(2);
            }
        }
        assert!((num / den).sqrt() < 1e-2);
        // net residual displacement after the recovered warp stays subpixel
        let residual = phase_correlate(&base, &aligned).unwrap();
        assert!(
            residual.shift.0.abs() < 0.1 && residual.shift.1.abs() < 0.1,
            "residual displacement {:?}",
            residual.shift
        );
    }

    #[test]
    fn pure_noise_frame_is_flagged_unregistrable() {
        let reference = band_limited_image(64, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = RealImage2D::new(
            Array2::from_shape_fn((64, 64), |_| rng.gen::<f64>()),
            1.0,
        )
        .unwrap();
        let regs = register_frames(&[reference, noise], 0).unwrap();
        assert!(!regs[1].usable, "noise frame peak {}", regs[1].correlation_peak);
    }

    #[test]
    fn calibration_exact_arithmetic() {
        let img = |v: f64| RealImage2D::new(Array2::from_elem((8, 8), v), 1.0).unwrap();
        let (out, dead) = radiometric_calibrate(&img(10.0), &img(2.0), &img(6.0)).unwrap();
        assert_eq!(dead, 0);
        for v in out.data.iter() {
            assert_eq!(*v, 2.0);
        }
        let (out, _) = radiometric_calibrate(&img(2.0), &img(2.0), &img(6.0)).unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
        let (out, _) = radiometric_calibrate(&img(6.0), &img(2.0), &img(6.0)).unwrap();
        assert!(out.data.iter().all(|v| *v == 1.0));
        // dead pixels are zeroed and counted
        let (out, dead) = radiometric_calibrate(&img(5.0), &img(2.0), &img(2.0)).unwrap();
        assert_eq!(dead, 64);
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn averaging_is_linear_at_213_frames_and_passes_single_frames_through() {
        let img = band_limited_image(64, 10);
        let frames = vec![img.clone(); 213];
        let regs = vec![
            FrameRegistration {
                transform: FrameTransform::identity(),
                correlation_peak: 1.0,
                usable: true,
            };
            213
        ];
        let groups = vec![(ApertureSpec::full(0, 20.0), (0..213).collect::<Vec<_>>())];
        let entries = average_frames(&frames, &regs, &groups).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].frame_count, 213);
        for (a, b) in entries[0].image.data.iter().zip(img.data.iter()) {
            assert!((a - 213.0 * b).abs() < 1e-9 * a.abs().max(1.0));
        }

        let one = average_frames(&frames[..1], &regs[..1], &[(ApertureSpec::full(0, 20.0), vec![0])])
            .unwrap();
        assert_eq!(one[0].frame_count, 1);
        assert_eq!(one[0].image.data, img.data);
    }
}
