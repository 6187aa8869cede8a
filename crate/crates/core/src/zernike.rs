//! Zernike phase synthesis (Noll single-index convention) and circular
//! support masks.
//!
//! Zernike modes are used only to parameterize synthetic pupils; nothing in
//! the recovery code assumes the basis. Polynomials are normalized so the
//! disk average of `Z_j²` is 1 (piston `Z_1 ≡ 1`).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealImage2D;

/// Sorted, duplicate-free list of `(Noll index, coefficient in radians RMS)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZernikeCoeffs(Vec<(u32, f64)>);

impl ZernikeCoeffs {
    pub fn new(mut terms: Vec<(u32, f64)>) -> Result<Self> {
        terms.sort_by_key(|t| t.0);
        for w in terms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parameter(format!("duplicate Noll index {}", w[0].0)));
            }
        }
        if terms.iter().any(|t| t.0 == 0) {
            return Err(Error::Parameter("Noll indices start at 1".into()));
        }
        Ok(Self(terms))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn terms(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Noll index → (radial order n, azimuthal order m, sign: cos if true).
/// Returns an error for j = 0.
pub fn noll_to_nm(j: u32) -> Result<(u32, u32, bool)> {
    if j == 0 {
        return Err(Error::Parameter("unknown Noll index 0".into()));
    }
    let mut n: u32 = 0;
    let mut rem = j - 1;
    while rem >= n + 1 {
        n += 1;
        rem -= n;
    }
    // rem in 0..=n indexes the mode within radial order n
    let m = if n % 2 == 0 {
        2 * ((rem + 1) / 2)
    } else {
        2 * (rem / 2) + 1
    };
    // Noll: even j pairs with cos(mθ), odd j with sin(mθ)
    let cos = j % 2 == 0;
    Ok((n, m, cos))
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Radial polynomial R_n^m(ρ).
fn radial(n: u32, m: u32, rho: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..=((n - m) / 2) {
        let num = if k % 2 == 0 { 1.0 } else { -1.0 } * factorial(n - k);
        let den = factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k);
        sum += num / den * rho.powi((n - 2 * k) as i32);
    }
    sum
}

/// Evaluate the Noll-indexed Zernike polynomial at polar coordinates.
pub fn zernike_eval(j: u32, rho: f64, theta: f64) -> Result<f64> {
    let (n, m, cos) = noll_to_nm(j)?;
    let norm = if m == 0 {
        ((n + 1) as f64).sqrt()
    } else {
        (2.0 * (n + 1) as f64).sqrt()
    };
    let r = radial(n, m, rho);
    Ok(if m == 0 {
        norm * r
    } else if cos {
        norm * r * (m as f64 * theta).cos()
    } else {
        norm * r * (m as f64 * theta).sin()
    })
}

/// Phase map in radians on the unit disk scaled to `support_radius_px`,
/// zero outside the disk.
pub fn zernike_phase(coeffs: &ZernikeCoeffs, support_radius_px: f64, n: usize) -> Result<RealImage2D> {
    if support_radius_px > n as f64 / 2.0 {
        return Err(Error::Parameter(format!(
            "support radius {support_radius_px} exceeds N/2 = {}",
            n / 2
        )));
    }
    // validate all indices up front so bad input fails before allocation
    for &(j, _) in coeffs.terms() {
        noll_to_nm(j)?;
    }
    let c = n as f64 / 2.0;
    let mut out = Array2::zeros((n, n));
    if coeffs.is_empty() {
        return RealImage2D::new(out, 1.0);
    }
    for ((i, jx), v) in out.indexed_iter_mut() {
        let y = i as f64 - c;
        let x = jx as f64 - c;
        let r = (x * x + y * y).sqrt();
        if r <= support_radius_px && support_radius_px > 0.0 {
            let rho = r / support_radius_px;
            let theta = y.atan2(x);
            let mut phase = 0.0;
            for &(j, a) in coeffs.terms() {
                phase += a * zernike_eval(j, rho, theta)?;
            }
            *v = phase;
        } else if r == 0.0 && support_radius_px == 0.0 {
            // degenerate single-pixel support: only piston contributes
            let mut phase = 0.0;
            for &(j, a) in coeffs.terms() {
                phase += a * zernike_eval(j, 0.0, 0.0)?;
            }
            *v = phase;
        }
    }
    RealImage2D::new(out, 1.0)
}

/// Binary disk of the given radius centered at `(N/2, N/2)`; a pixel is
/// inside iff its center is within the radius (inclusive).
pub fn circular_support(radius_px: f64, n: usize) -> Result<RealImage2D> {
    if radius_px < 0.0 || radius_px > n as f64 / 2.0 {
        return Err(Error::Parameter(format!(
            "support radius {radius_px} outside [0, N/2]"
        )));
    }
    let c = n as f64 / 2.0;
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = i as f64 - c;
        let x = j as f64 - c;
        if (x * x + y * y).sqrt() <= radius_px {
            1.0
        } else {
            0.0
        }
    });
    RealImage2D::new(data, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noll_mapping_matches_convention() {
        // (j, n, m)
        let expect = [
            (1, 0, 0),
            (2, 1, 1),
            (3, 1, 1),
            (4, 2, 0),
            (5, 2, 2),
            (6, 2, 2),
            (7, 3, 1),
            (8, 3, 1),
            (9, 3, 3),
            (10, 3, 3),
            (11, 4, 0),
        ];
        for (j, n, m) in expect {
            let (gn, gm, _) = noll_to_nm(j).unwrap();
            assert_eq!((gn, gm), (n, m), "j={j}");
        }
        assert!(noll_to_nm(0).is_err());
    }

    #[test]
    fn empty_coeffs_give_zero_phase() {
        let p = zernike_phase(&ZernikeCoeffs::empty(), 20.0, 64).unwrap();
        assert_eq!(p.sum(), 0.0);
    }

    #[test]
    fn piston_is_constant_inside_disk() {
        let coeffs = ZernikeCoeffs::new(vec![(1, 1.0)]).unwrap();
        let p = zernike_phase(&coeffs, 20.0, 64).unwrap();
        let disk = circular_support(20.0, 64).unwrap();
        for ((i, j), &m) in disk.data.indexed_iter() {
            if m > 0.0 {
                assert_abs_diff_eq!(p.data[(i, j)], 1.0, epsilon = 1e-12);
            } else {
                assert_eq!(p.data[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn discrete_orthonormality_low_orders() {
        let n = 256;
        let r = 100.0;
        let modes = [4u32, 5, 6, 7];
        let maps: Vec<RealImage2D> = modes
            .iter()
            .map(|&j| zernike_phase(&ZernikeCoeffs::new(vec![(j, 1.0)]).unwrap(), r, n).unwrap())
            .collect();
        let disk = circular_support(r, n).unwrap();
        let count: f64 = disk.sum();
        for (a, &ja) in maps.iter().zip(&modes) {
            for (b, &jb) in maps.iter().zip(&modes) {
                let dot: f64 = a
                    .data
                    .iter()
                    .zip(b.data.iter())
                    .zip(disk.data.iter())
                    .map(|((x, y), m)| x * y * m)
                    .sum::<f64>()
                    / count;
                let expect = if ja == jb { 1.0 } else { 0.0 };
                assert!(
                    (dot - expect).abs() < 0.02,
                    "⟨Z{ja}·Z{jb}⟩ = {dot}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn even_modes_are_point_symmetric() {
        let coeffs = ZernikeCoeffs::new(vec![(4, 1.0), (11, 0.5)]).unwrap();
        let n = 128;
        let p = zernike_phase(&coeffs, 50.0, n).unwrap();
        let c = n / 2;
        let mut max_asym: f64 = 0.0;
        for i in 1..n {
            for j in 1..n {
                let d = (p.data[(i, j)] - p.data[(2 * c - i, 2 * c - j)]).abs();
                max_asym = max_asym.max(d);
            }
        }
        assert!(max_asym < 1e-12, "max asymmetry {max_asym}");
    }

    #[test]
    fn support_radius_zero_is_single_pixel() {
        let m = circular_support(0.0, 64).unwrap();
        assert_eq!(m.sum(), 1.0);
        assert_eq!(m.data[(32, 32)], 1.0);
    }

    #[test]
    fn support_half_grid_pixel_count() {
        let m = circular_support(32.0, 64).unwrap();
        let count = m.sum();
        let expect = std::f64::consts::PI * 32.0 * 32.0;
        assert!((count - expect).abs() < 40.0, "count {count} vs {expect}");
    }

    #[test]
    fn support_is_point_symmetric() {
        let n = 64;
        let m = circular_support(20.0, n).unwrap();
        let c = n / 2;
        for i in 1..n {
            for j in 1..n {
                assert_eq!(m.data[(i, j)], m.data[(2 * c - i, 2 * c - j)]);
            }
        }
    }

    #[test]
    fn rejects_oversized_radius_and_duplicates() {
        assert!(circular_support(33.0, 64).is_err());
        assert!(ZernikeCoeffs::new(vec![(4, 1.0), (4, 2.0)]).is_err());
        assert!(zernike_phase(&ZernikeCoeffs::new(vec![(3, 1.0)]).unwrap(), 40.0, 64).is_err());
    }
}
