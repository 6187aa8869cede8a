//! Synthetic test scenes: Siemens star and tri-bar resolution targets.
//!
//! Scenes are non-negative intensity rasters with a uniform border so that
//! captures always contain a flat region for SNR measurement.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::field::RealImage2D;

/// Scene recipe used by simulation configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    SiemensStar {
        spokes: usize,
        #[serde(default = "default_radius_frac")]
        radius_frac: f64,
    },
    BarTarget {
        #[serde(default = "default_periods")]
        periods_px: Vec<usize>,
    },
    Uniform {
        value: f64,
    },
}

fn default_radius_frac() -> f64 {
    0.32
}

fn default_periods() -> Vec<usize> {
    vec![32, 16, 8, 4]
}

impl SceneSpec {
    pub fn render(&self, n: usize) -> RealImage2D {
        match self {
            SceneSpec::SiemensStar { spokes, radius_frac } => siemens_star(n, *spokes, *radius_frac),
            SceneSpec::BarTarget { periods_px } => bar_target(n, periods_px),
            SceneSpec::Uniform { value } => {
                RealImage2D::new(Array2::from_elem((n, n), value.max(0.0)), 1.0).unwrap()
            }
        }
    }
}

/// Binary Siemens star: alternating bright/dark spokes inside a disk, on a
/// mid-gray surround. The star support radius is `radius_frac · N`.
pub fn siemens_star(n: usize, spokes: usize, radius_frac: f64) -> RealImage2D {
    let c = n as f64 / 2.0;
    let radius = radius_frac * n as f64;
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = i as f64 - c;
        let x = j as f64 - c;
        let r = (x * x + y * y).sqrt();
        if r <= radius {
            let theta = y.atan2(x);
            if (spokes as f64 * theta).cos() >= 0.0 {
                1.0
            } else {
                0.05
            }
        } else {
            0.5
        }
    });
    RealImage2D::new(data, 1.0).unwrap()
}

/// Binary disk marking the star's support (used by artifact metrics).
pub fn star_support(n: usize, radius_frac: f64) -> RealImage2D {
    let c = n as f64 / 2.0;
    let radius = radius_frac * n as f64;
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = i as f64 - c;
        let x = j as f64 - c;
        if (x * x + y * y).sqrt() <= radius {
            1.0
        } else {
            0.0
        }
    });
    RealImage2D::new(data, 1.0).unwrap()
}

/// Stacked horizontal tri-bar groups, one group per requested period, in
/// the style of a resolution test chart.
pub fn bar_target(n: usize, periods_px: &[usize]) -> RealImage2D {
    let mut data = Array2::from_elem((n, n), 0.5);
    let margin = n / 8;
    let usable = n - 2 * margin;
    let groups = periods_px.len().max(1);
    let band_h = usable / groups;
    for (g, &period) in periods_px.iter().enumerate() {
        let period = period.max(2);
        let bar = period / 2;
        let top = margin + g * band_h;
        for i in top..(top + band_h).min(n - margin) {
            for j in margin..(n - margin) {
                data[(i, j)] = 0.05;
            }
        }
        // three bars of width `bar` separated by gaps of the same width
        for b in 0..3 {
            let r0 = top + band_h / 8 + b * 2 * bar;
            let r1 = (r0 + bar).min(n - margin);
            for i in r0..r1.min(top + band_h) {
                for j in margin..(n - margin) {
                    data[(i, j)] = 1.0;
                }
            }
        }
    }
    RealImage2D::new(data, 1.0).unwrap()
}
