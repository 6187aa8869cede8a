//! Fourier-plane mask patterns.
//!
//! Three mask families are generated here: the spiral-out sequence of small
//! circular apertures used for pupil scanning, binary coded apertures found
//! by a genetic search that maximizes the worst in-band OTF modulus, and the
//! plain full circular aperture. All masks render to `{0,1}`-valued rasters
//! on the pupil grid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fft2_array, RealImage2D};
use crate::zernike::{circular_support, zernike_phase, ZernikeCoeffs};
use num_complex::Complex64;

/// Binary cell grid for a coded aperture, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedPattern {
    pub k: usize,
    pub cells: Vec<u8>,
}

impl CodedPattern {
    pub fn new(k: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != k * k {
            return Err(Error::Parameter(format!(
                "pattern needs {}x{} = {} cells, got {}",
                k,
                k,
                k * k,
                cells.len()
            )));
        }
        if !cells.iter().any(|&c| c != 0) {
            return Err(Error::Parameter("coded pattern has no open cell".into()));
        }
        Ok(Self {
            k,
            cells: cells.into_iter().map(|c| u8::from(c != 0)).collect(),
        })
    }

    pub fn all_open(k: usize) -> Self {
        Self {
            k,
            cells: vec![1; k * k],
        }
    }

    pub fn open(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.k + col] != 0
    }

    pub fn open_fraction(&self) -> f64 {
        self.cells.iter().map(|&c| c as usize).sum::<usize>() as f64 / (self.k * self.k) as f64
    }

    /// Exact quarter-turn permutations (counterclockwise).
    pub fn rotate_quarter_turns(&self, turns: usize) -> Self {
        let mut cells = self.cells.clone();
        let k = self.k;
        for _ in 0..(turns % 4) {
            let mut next = vec![0u8; k * k];
            for r in 0..k {
                for c in 0..k {
                    // (r, c) -> (k-1-c, r)
                    next[(k - 1 - c) * k + r] = cells[r * k + c];
                }
            }
            cells = next;
        }
        Self { k, cells }
    }
}

/// Symbolic description of one Fourier-plane mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskShape {
    /// Small circular aperture; `center` is the (row, col) offset of its
    /// center from the pupil center, in pixels.
    SmallCircular { center: (f64, f64), radius_px: f64 },
    /// Binary coded aperture spanning the full pupil diameter.
    Coded {
        pattern: CodedPattern,
        rotation_deg: u32,
        diameter_px: f64,
    },
    FullCircular { radius_px: f64 },
}

/// A mask plus its ordinal within the sequence it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApertureSpec {
    pub shape: MaskShape,
    pub id: usize,
}

impl ApertureSpec {
    pub fn small(id: usize, center: (f64, f64), radius_px: f64) -> Self {
        Self {
            shape: MaskShape::SmallCircular { center, radius_px },
            id,
        }
    }

    pub fn full(id: usize, radius_px: f64) -> Self {
        Self {
            shape: MaskShape::FullCircular { radius_px },
            id,
        }
    }

    pub fn coded(id: usize, pattern: CodedPattern, rotation_deg: u32, diameter_px: f64) -> Self {
        Self {
            shape: MaskShape::Coded {
                pattern,
                rotation_deg,
                diameter_px,
            },
            id,
        }
    }
}

/// Ordered aperture scan with its target consecutive-overlap fraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSequence {
    pub apertures: Vec<ApertureSpec>,
    pub overlap_fraction: f64,
    pub pupil_radius_px: f64,
    pub aperture_radius_px: f64,
}

impl ScanSequence {
    pub fn len(&self) -> usize {
        self.apertures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apertures.is_empty()
    }
}

/// Normalized intersection area of two equal disks whose centers are `d`
/// apart: `area(d) / (π r²)`.
pub fn disk_overlap_fraction(d: f64, r: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    if d <= 0.0 {
        return 1.0;
    }
    let x = d / (2.0 * r);
    (2.0 / std::f64::consts::PI) * (x.acos() - x * (1.0 - x * x).sqrt())
}

/// Center spacing at which two equal disks overlap by the given area
/// fraction (bisection on the exact intersection-area formula).
pub fn spacing_for_overlap(fraction: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 2.0 * r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if disk_overlap_fraction(mid, r) > fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Spiral-out scan of small circular apertures across the pupil.
///
/// The sequence starts with a centered aperture, then walks an Archimedean
/// spiral in steps of the exact center spacing that realizes
/// `overlap_fraction` between consecutive apertures. Once the spiral
/// reaches the largest admissible center radius (`R - r`, keeping every
/// aperture inside the pupil) it finishes with one clamped outer turn so
/// the union of apertures covers the pupil rim.
pub fn spiral_small_apertures(
    pupil_radius_px: f64,
    aperture_radius_px: f64,
    overlap_fraction: f64,
) -> Result<ScanSequence> {
    let (big_r, r) = (pupil_radius_px, aperture_radius_px);
    if !(r > 0.0 && r < big_r) {
        return Err(Error::Parameter(format!(
            "need 0 < aperture radius < pupil radius, got {r} vs {big_r}"
        )));
    }
    if !(0.3..1.0).contains(&overlap_fraction) {
        return Err(Error::Parameter(format!(
            "overlap fraction {overlap_fraction} outside [0.3, 1): insufficient redundancy for phase retrieval"
        )));
    }

    let mut apertures = vec![ApertureSpec::small(0, (0.0, 0.0), r)];
    let rim = big_r - r; // largest admissible center radius
    if rim <= 1.0 {
        // the centered aperture already reaches the pupil edge to within a pixel
        return Ok(ScanSequence {
            apertures,
            overlap_fraction,
            pupil_radius_px,
            aperture_radius_px,
        });
    }

    let d = spacing_for_overlap(overlap_fraction, r);
    // turn-to-turn pitch: 70% of the largest pitch that still covers the
    // annulus between turns given the in-turn spacing d
    let pitch = 0.7 * 2.0 * (r * r - 0.25 * d * d).max(0.0).sqrt();
    let r0 = d.min(rim);
    let radius_at = |theta: f64| -> f64 { (r0 + pitch * theta / (2.0 * std::f64::consts::PI)).min(rim) };
    let pos_at = |theta: f64| -> (f64, f64) {
        let rho = radius_at(theta);
        (rho * theta.sin(), rho * theta.cos()) // (row, col) offsets
    };

    let mut theta = 0.0_f64;
    let mut clamp_start: Option<f64> = None;
    apertures.push(ApertureSpec::small(1, pos_at(theta), r));
    loop {
        // advance along the spiral to the next point at chord distance d
        let cur = pos_at(theta);
        let mut lo = theta;
        let mut hi = theta + 0.1;
        let dist = |t: f64| {
            let p = pos_at(t);
            ((p.0 - cur.0).powi(2) + (p.1 - cur.1).powi(2)).sqrt()
        };
        while dist(hi) < d {
            lo = hi;
            hi += 0.1;
            if hi - theta > 4.0 * std::f64::consts::PI {
                break; // degenerate geometry; bail out of the walk
            }
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if dist(mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        theta = 0.5 * (lo + hi);

        if radius_at(theta) >= rim - 1e-9 && clamp_start.is_none() {
            clamp_start = Some(theta);
        }
        if let Some(t0) = clamp_start {
            if theta - t0 >= 2.0 * std::f64::consts::PI {
                break; // the clamped outer turn has wrapped once
            }
        }
        let id = apertures.len();
        apertures.push(ApertureSpec::small(id, pos_at(theta), r));
    }

    Ok(ScanSequence {
        apertures,
        overlap_fraction,
        pupil_radius_px,
        aperture_radius_px,
    })
}

/// Compose a rotation onto a coded aperture. Only the four supported SLM
/// angles are accepted; multiples of 90° render as exact cell permutations.
pub fn rotate_coded(spec: &ApertureSpec, angle_deg: u32) -> Result<ApertureSpec> {
    if ![0, 45, 90, 135].contains(&angle_deg) {
        return Err(Error::Parameter(format!(
            "unsupported rotation {angle_deg}°, expected one of 0/45/90/135"
        )));
    }
    match &spec.shape {
        MaskShape::Coded {
            pattern,
            rotation_deg,
            diameter_px,
        } => Ok(ApertureSpec {
            shape: MaskShape::Coded {
                pattern: pattern.clone(),
                rotation_deg: (rotation_deg + angle_deg) % 360,
                diameter_px: *diameter_px,
            },
            id: spec.id,
        }),
        _ => Err(Error::Parameter("rotate_coded expects a coded aperture".into())),
    }
}

/// Render a mask to a binary raster on an `N×N` pupil grid whose full
/// aperture has the given radius. Coded and full-circular masks are clipped
/// to the pupil disk.
pub fn render_mask(spec: &ApertureSpec, n: usize, pupil_radius_px: f64) -> Result<RealImage2D> {
    let c = n as f64 / 2.0;
    match &spec.shape {
        MaskShape::SmallCircular { center, radius_px } => {
            let reach = (center.0.powi(2) + center.1.powi(2)).sqrt() + radius_px;
            if reach > n as f64 / 2.0 {
                return Err(Error::Dimension(format!(
                    "small aperture reaches {reach:.1} px from center, grid holds {}",
                    n / 2
                )));
            }
            let data = Array2::from_shape_fn((n, n), |(i, j)| {
                let dy = i as f64 - c - center.0;
                let dx = j as f64 - c - center.1;
                if (dx * dx + dy * dy).sqrt() <= *radius_px {
                    1.0
                } else {
                    0.0
                }
            });
            RealImage2D::new(data, 1.0)
        }
        MaskShape::FullCircular { radius_px } => {
            let r = radius_px.min(pupil_radius_px);
            if r > n as f64 / 2.0 {
                return Err(Error::Dimension(format!(
                    "full aperture radius {r} exceeds grid half-size {}",
                    n / 2
                )));
            }
            circular_support(r, n)
        }
        MaskShape::Coded {
            pattern,
            rotation_deg,
            diameter_px,
        } => {
            if *diameter_px / 2.0 > n as f64 / 2.0 {
                return Err(Error::Dimension(format!(
                    "coded aperture diameter {diameter_px} exceeds grid {n}"
                )));
            }
            let rot = rotation_deg % 360;
            let quarter = (rot / 90) as usize;
            let residual = rot % 90; // 0 or 45 by construction
            let pat = pattern.rotate_quarter_turns(quarter);
            let k = pat.k as f64;
            let half = diameter_px / 2.0;
            let (sin_a, cos_a) = (residual as f64).to_radians().sin_cos();
            let data = Array2::from_shape_fn((n, n), |(i, j)| {
                let y = i as f64 - c;
                let x = j as f64 - c;
                if (x * x + y * y).sqrt() > pupil_radius_px {
                    return 0.0;
                }
                // inverse-rotate the pixel into pattern coordinates
                // (nearest-neighbor sampling of the rendered pattern)
                let xr = cos_a * x + sin_a * y;
                let yr = -sin_a * x + cos_a * y;
                if xr.abs() > half || yr.abs() > half {
                    return 0.0;
                }
                let col = (((xr + half) / diameter_px) * k).floor().min(k - 1.0) as usize;
                let row = (((yr + half) / diameter_px) * k).floor().min(k - 1.0) as usize;
                if pat.open(row, col) {
                    1.0
                } else {
                    0.0
                }
            });
            RealImage2D::new(data, 1.0)
        }
    }
}

/// Tunables for the coded-aperture fitness evaluation.
#[derive(Debug, Clone)]
pub struct CodedSearchParams {
    /// Grid size used to evaluate candidate OTFs.
    pub eval_grid: usize,
    /// Pupil radius on the evaluation grid.
    pub eval_pupil_radius: f64,
    /// Defocus coefficients (Noll j=4, radians RMS) of the evaluation
    /// ensemble; the fitness is the worst case over the ensemble.
    pub defocus_ensemble: Vec<f64>,
    /// Fraction of the incoherent cutoff considered in-band.
    pub band_fraction: f64,
}

impl Default for CodedSearchParams {
    fn default() -> Self {
        Self {
            eval_grid: 128,
            eval_pupil_radius: 30.0,
            defocus_ensemble: vec![2.0, 4.0, 6.0],
            band_fraction: 0.95,
        }
    }
}

/// Precomputed defocus-ensemble pupils for repeated fitness evaluations.
struct FitnessEvaluator {
    pupils: Vec<Array2<Complex64>>,
    n: usize,
    band: f64,
    noise_level: f64,
}

impl FitnessEvaluator {
    fn new(noise_level: f64, params: &CodedSearchParams) -> Self {
        let n = params.eval_grid;
        let support = circular_support(params.eval_pupil_radius, n).expect("support grid");
        let pupils = params
            .defocus_ensemble
            .iter()
            .map(|&z| {
                let coeffs = ZernikeCoeffs::new(vec![(4, z)]).expect("defocus coeffs");
                let phase = zernike_phase(&coeffs, params.eval_pupil_radius, n).expect("phase grid");
                Array2::from_shape_fn((n, n), |(i, j)| {
                    if support.data[(i, j)] > 0.0 {
                        Complex64::from_polar(1.0, phase.data[(i, j)])
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
            })
            .collect();
        Self {
            pupils,
            n,
            band: params.band_fraction * 2.0 * params.eval_pupil_radius,
            noise_level,
        }
    }

    /// Worst in-band OTF modulus over the ensemble, with the noise level as
    /// a soft floor.
    fn eval(&self, mask: &RealImage2D) -> f64 {
        let n = self.n;
        let c = n as f64 / 2.0;
        let mut fitness = f64::INFINITY;
        for pupil in &self.pupils {
            let masked = Array2::from_shape_fn((n, n), |(i, j)| {
                if mask.data[(i, j)] > 0.0 {
                    pupil[(i, j)]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let field = fft2_array(&masked, true);
            let psf = field.mapv(|v| Complex64::new(v.norm_sqr(), 0.0));
            let otf = fft2_array(&psf, true);
            let center = otf[(n / 2, n / 2)].norm();
            if center == 0.0 {
                return 0.0;
            }
            for ((i, j), v) in otf.indexed_iter() {
                let y = i as f64 - c;
                let x = j as f64 - c;
                if (x * x + y * y).sqrt() <= self.band {
                    let m = v.norm() / center;
                    let soft = (m * m + self.noise_level * self.noise_level).sqrt();
                    if soft < fitness {
                        fitness = soft;
                    }
                }
            }
        }
        fitness
    }
}

/// Worst in-band OTF modulus of a rendered mask under the defocus
/// ensemble, with `noise_level` as a soft floor.
pub fn mask_fitness(mask: &RealImage2D, noise_level: f64, params: &CodedSearchParams) -> f64 {
    FitnessEvaluator::new(noise_level, params).eval(mask)
}

/// Fitness of a coded pattern: render at the evaluation geometry, then
/// score with [`mask_fitness`].
pub fn coded_fitness(pattern: &CodedPattern, noise_level: f64, params: &CodedSearchParams) -> f64 {
    let spec = ApertureSpec::coded(0, pattern.clone(), 0, 2.0 * params.eval_pupil_radius);
    let mask = render_mask(&spec, params.eval_grid, params.eval_pupil_radius)
        .expect("evaluation geometry fits the grid");
    mask_fitness(&mask, noise_level, params)
}

/// Genetic search for a binary coded-aperture pattern maximizing the worst
/// in-band OTF modulus under the defocus ensemble. Deterministic for a
/// fixed seed; elitism keeps the best fitness non-decreasing.
pub fn coded_aperture_search(
    cells: usize,
    noise_level: f64,
    generations: usize,
    population: usize,
    rng_seed: u64,
) -> Result<CodedPattern> {
    coded_aperture_search_with(
        cells,
        noise_level,
        generations,
        population,
        rng_seed,
        &CodedSearchParams::default(),
    )
}

pub fn coded_aperture_search_with(
    cells: usize,
    noise_level: f64,
    generations: usize,
    population: usize,
    rng_seed: u64,
    params: &CodedSearchParams,
) -> Result<CodedPattern> {
    if cells < 5 {
        return Err(Error::Parameter(format!("need at least 5x5 cells, got {cells}")));
    }
    if population < 8 {
        return Err(Error::Parameter(format!(
            "population must be >= 8, got {population}"
        )));
    }
    let k = cells;
    let genome = k * k;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ensure_open = |cells: &mut Vec<u8>, rng: &mut ChaCha8Rng| {
        if !cells.iter().any(|&c| c != 0) {
            let idx = rng.gen_range(0..cells.len());
            cells[idx] = 1;
        }
    };

    let mut pop: Vec<Vec<u8>> = (0..population)
        .map(|_| {
            let mut cells: Vec<u8> = (0..genome).map(|_| rng.gen_range(0..2u8)).collect();
            ensure_open(&mut cells, &mut rng);
            cells
        })
        .collect();

    let evaluator = FitnessEvaluator::new(noise_level, params);
    let eval = |cells: &Vec<u8>| -> f64 {
        let pattern = CodedPattern {
            k,
            cells: cells.clone(),
        };
        let spec = ApertureSpec::coded(0, pattern, 0, 2.0 * params.eval_pupil_radius);
        let mask = render_mask(&spec, params.eval_grid, params.eval_pupil_radius)
            .expect("evaluation geometry fits the grid");
        evaluator.eval(&mask)
    };

    let mut scores: Vec<f64> = pop.par_iter().map(eval).collect();
    let mutation_p = 1.0 / (genome as f64);

    for _gen in 0..generations {
        let best_idx = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let elite = pop[best_idx].clone();
        let elite_score = scores[best_idx];

        let mut next = vec![elite];
        while next.len() < population {
            // tournament of 3 per parent
            let mut pick = |rng: &mut ChaCha8Rng| -> usize {
                let mut best = rng.gen_range(0..population);
                for _ in 0..2 {
                    let c = rng.gen_range(0..population);
                    if scores[c] > scores[best] {
                        best = c;
                    }
                }
                best
            };
            let pa = pick(&mut rng);
            let pb = pick(&mut rng);
            let cut = rng.gen_range(1..genome);
            let mut child: Vec<u8> = pop[pa][..cut]
                .iter()
                .chain(pop[pb][cut..].iter())
                .copied()
                .collect();
            for c in child.iter_mut() {
                if rng.gen::<f64>() < mutation_p {
                    *c ^= 1;
                }
            }
            ensure_open(&mut child, &mut rng);
            next.push(child);
        }
        pop = next;
        scores = pop.par_iter().map(eval).collect();
        // elitism guarantee
        if scores[0] < elite_score {
            scores[0] = elite_score;
        }
    }

    let best_idx = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    CodedPattern::new(k, pop[best_idx].clone())
}

/// Pixel-counted area overlap fraction between two rendered masks,
/// normalized by the smaller mask area.
pub fn rendered_overlap_fraction(a: &RealImage2D, b: &RealImage2D) -> f64 {
    let inter: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| x * y)
        .sum();
    let area = a.sum().min(b.sum());
    if area == 0.0 {
        0.0
    } else {
        inter / area
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn overlap_spacing_solves_the_area_equation() {
        let r = 1.0;
        let d = spacing_for_overlap(0.4, r);
        let f = disk_overlap_fraction(d, r);
        assert!((f - 0.4).abs() < 1e-10, "fraction {f}");
        // sanity: 40% overlap needs centers just under one radius apart
        assert!((d / r - 0.987).abs() < 0.01, "d/r = {}", d / r);
    }

    #[test]
    fn spiral_starts_centered_and_counts_match_the_demo_geometry() {
        // full pupil 5.5 mm across scanned with 1 mm apertures
        let seq = spiral_small_apertures(5.5 * 11.0, 1.0 * 11.0, 0.4).unwrap();
        match &seq.apertures[0].shape {
            MaskShape::SmallCircular { center, .. } => {
                assert_eq!(*center, (0.0, 0.0));
            }
            _ => panic!("first aperture must be small circular"),
        }
        assert!(
            (40..=64).contains(&seq.len()),
            "sequence length {} outside the expected ~50 band",
            seq.len()
        );
    }

    #[test]
    fn spiral_consecutive_overlap_and_coverage() {
        let n = 256usize;
        let pupil_r = 60.0;
        let seq = spiral_small_apertures(pupil_r, 13.0, 0.4).unwrap();
        let masks: Vec<RealImage2D> = seq
            .apertures
            .iter()
            .map(|s| render_mask(s, n, pupil_r).unwrap())
            .collect();
        for w in masks.windows(2) {
            let f = rendered_overlap_fraction(&w[0], &w[1]);
            assert!(
                (f - 0.4).abs() <= 0.05,
                "consecutive overlap {f} outside 0.40 ± 0.05"
            );
        }
        // coverage: every pupil pixel inside at least one aperture
        let pupil = circular_support(pupil_r, n).unwrap();
        let mut union = Array2::<f64>::zeros((n, n));
        for m in &masks {
            union.zip_mut_with(&m.data, |u, &v| *u = u.max(v));
        }
        for ((i, j), &p) in pupil.data.indexed_iter() {
            if p > 0.0 {
                assert!(union[(i, j)] > 0.0, "pupil pixel ({i},{j}) uncovered");
            }
        }
        // every aperture stays inside the pupil disk
        for s in &seq.apertures {
            if let MaskShape::SmallCircular { center, radius_px } = &s.shape {
                let reach = (center.0.powi(2) + center.1.powi(2)).sqrt() + radius_px;
                assert!(reach <= pupil_r + 1e-9, "aperture {} leaves pupil", s.id);
            }
        }
    }

    #[test]
    fn spiral_degenerate_single_aperture() {
        let seq = spiral_small_apertures(30.0, 29.0, 0.4).unwrap();
        assert_eq!(seq.len(), 1);
    }

    #[test]
    fn spiral_rejects_low_overlap() {
        assert!(spiral_small_apertures(60.0, 13.0, 0.25).is_err());
    }

    #[test]
    fn full_and_centered_small_masks_match_circular_support() {
        let n = 128;
        let full = render_mask(&ApertureSpec::full(0, 40.0), n, 40.0).unwrap();
        let disk = circular_support(40.0, n).unwrap();
        assert_eq!(full.data, disk.data);

        let small = render_mask(&ApertureSpec::small(0, (0.0, 0.0), 20.0), n, 40.0).unwrap();
        let disk20 = circular_support(20.0, n).unwrap();
        assert_eq!(small.data, disk20.data);
    }

    #[test]
    fn all_open_coded_mask_equals_full_disk() {
        let n = 128;
        let spec = ApertureSpec::coded(0, CodedPattern::all_open(7), 0, 80.0);
        let mask = render_mask(&spec, n, 40.0).unwrap();
        let disk = circular_support(40.0, n).unwrap();
        assert_eq!(mask.data, disk.data);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cells: Vec<u8> = (0..121).map(|_| rng.gen_range(0..2u8)).collect();
        let pat = CodedPattern::new(11, cells).unwrap();
        let spec = ApertureSpec::coded(0, pat.clone(), 0, 100.0);
        let mut rotated = spec.clone();
        for _ in 0..4 {
            rotated = rotate_coded(&rotated, 90).unwrap();
        }
        assert_eq!(spec, rotated);
        assert_eq!(pat.rotate_quarter_turns(4), pat);
        // 0° rotation is the identity
        assert_eq!(rotate_coded(&spec, 0).unwrap(), spec);
        assert!(rotate_coded(&spec, 30).is_err());
    }

    #[test]
    fn open_area_preserved_under_45_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cells: Vec<u8> = (0..121).map(|_| rng.gen_range(0..2u8)).collect();
        let pat = CodedPattern::new(11, cells).unwrap();
        let n = 192;
        let base = render_mask(&ApertureSpec::coded(0, pat.clone(), 0, 128.0), n, 64.0).unwrap();
        let rot = render_mask(&ApertureSpec::coded(0, pat, 45, 128.0), n, 64.0).unwrap();
        let (a, b) = (base.sum(), rot.sum());
        assert!(
            (a - b).abs() / a < 0.05,
            "open area changed by {}",
            (a - b).abs() / a
        );
    }

    #[test]
    fn trivial_single_cell_pattern_scores_like_the_full_aperture() {
        let params = CodedSearchParams {
            eval_grid: 64,
            eval_pupil_radius: 16.0,
            defocus_ensemble: vec![2.0],
            band_fraction: 0.9,
        };
        let open = CodedPattern::all_open(1);
        let f_pattern = coded_fitness(&open, 1e-3, &params);
        let full = render_mask(&ApertureSpec::full(0, 16.0), 64, 16.0).unwrap();
        let f_full = mask_fitness(&full, 1e-3, &params);
        assert_eq!(f_pattern, f_full);
    }

    #[test]
    fn search_is_deterministic_and_beats_the_full_aperture_under_defocus() {
        let params = CodedSearchParams {
            eval_grid: 128,
            eval_pupil_radius: 30.0,
            defocus_ensemble: vec![4.0],
            band_fraction: 0.9,
        };
        let a = coded_aperture_search_with(7, 1e-4, 6, 12, 42, &params).unwrap();
        let b = coded_aperture_search_with(7, 1e-4, 6, 12, 42, &params).unwrap();
        assert_eq!(a, b);

        let full = render_mask(&ApertureSpec::full(0, 30.0), 128, 30.0).unwrap();
        let f_full = mask_fitness(&full, 1e-4, &params);
        let f_best = coded_fitness(&a, 1e-4, &params);
        assert!(
            f_best >= f_full,
            "search fitness {f_best} below full-aperture fitness {f_full}"
        );
    }

    #[test]
    fn rejects_undersized_search_inputs() {
        assert!(coded_aperture_search(4, 1e-3, 2, 12, 0).is_err());
        assert!(coded_aperture_search(5, 1e-3, 2, 4, 0).is_err());
        assert!(CodedPattern::new(3, vec![0; 9]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn prop_rendered_masks_are_binary(seed in 0u64..500, rot in prop::sample::select(vec![0u32, 45, 90, 135])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cells: Vec<u8> = (0..49).map(|_| rng.gen_range(0..2u8)).collect();
            if let Ok(pat) = CodedPattern::new(7, cells) {
                let mask = render_mask(&ApertureSpec::coded(0, pat, rot, 60.0), 96, 30.0).unwrap();
                for v in mask.data.iter() {
                    prop_assert!(*v == 0.0 || *v == 1.0);
                }
            }
        }
    }
}
