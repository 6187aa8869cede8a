//! Isoplanatic-patch tiling: split an image into overlapping square tiles
//! and merge tiles back with feathered (linear-ramp) blending.
//!
//! Merging is written as a chain of lerps, `acc + w·(tile − acc)`, so the
//! effective blend weights form an exact partition of unity and merging
//! untouched tiles reproduces the input bit-exactly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealImage2D;

/// Regular grid of square tiles covering an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_size_px: usize,
    pub overlap_px: usize,
    pub row_origins: Vec<usize>,
    pub col_origins: Vec<usize>,
}

fn origins(extent: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let stride = tile - overlap;
    let mut out = vec![0usize];
    loop {
        let last = *out.last().unwrap();
        if last + tile >= extent {
            break;
        }
        let next = (last + stride).min(extent - tile);
        out.push(next);
    }
    out
}

impl TileGrid {
    /// Build a grid covering a `rows × cols` image. Tiles are clamped so the
    /// last tile in each axis ends exactly at the image edge.
    pub fn new(rows: usize, cols: usize, tile_size_px: usize, overlap_px: usize) -> Result<Self> {
        if tile_size_px == 0 || tile_size_px > rows || tile_size_px > cols {
            return Err(Error::Parameter(format!(
                "tile size {tile_size_px} does not fit a {rows}x{cols} image"
            )));
        }
        if overlap_px >= tile_size_px {
            return Err(Error::Parameter(format!(
                "overlap {overlap_px} must be smaller than the tile size {tile_size_px}"
            )));
        }
        Ok(Self {
            tile_size_px,
            overlap_px,
            row_origins: origins(rows, tile_size_px, overlap_px),
            col_origins: origins(cols, tile_size_px, overlap_px),
        })
    }

    pub fn tile_count(&self) -> usize {
        self.row_origins.len() * self.col_origins.len()
    }

    /// Tile origin by row-major tile index.
    pub fn origin(&self, idx: usize) -> (usize, usize) {
        let cols = self.col_origins.len();
        (self.row_origins[idx / cols], self.col_origins[idx % cols])
    }
}

/// Cut the image into tiles in row-major tile order.
pub fn split_tiles(image: &RealImage2D, grid: &TileGrid) -> Result<Vec<RealImage2D>> {
    let t = grid.tile_size_px;
    let (rows, cols) = image.data.dim();
    if grid.row_origins.iter().any(|&r| r + t > rows)
        || grid.col_origins.iter().any(|&c| c + t > cols)
    {
        return Err(Error::Parameter("tile grid exceeds the image".into()));
    }
    let mut tiles = Vec::with_capacity(grid.tile_count());
    for &r0 in &grid.row_origins {
        for &c0 in &grid.col_origins {
            let mut tile = Array2::zeros((t, t));
            for i in 0..t {
                for j in 0..t {
                    tile[(i, j)] = image.data[(r0 + i, c0 + j)];
                }
            }
            tiles.push(RealImage2D {
                data: tile,
                pitch: image.pitch,
            });
        }
    }
    Ok(tiles)
}

/// Lerp `incoming` onto `acc` along one axis. `filled` is how far `acc` has
/// been written along that axis; the ramp spans the actual overlap
/// `filled - origin`. `axis = 0` blends rows, `axis = 1` blends columns.
fn blend_into(
    acc: &mut Array2<f64>,
    filled: usize,
    incoming: &Array2<f64>,
    origin: usize,
    axis: usize,
) {
    let ov = filled.saturating_sub(origin);
    let len = if axis == 0 { incoming.nrows() } else { incoming.ncols() };
    for t in 0..len {
        let pos = origin + t; // index into acc along the axis
        let w = if t < ov {
            // ramp 0 → 1 across the overlap; beyond it the incoming tile wins
            (t as f64 + 0.5) / ov as f64
        } else {
            1.0
        };
        if axis == 0 {
            for j in 0..incoming.ncols() {
                let a = acc[(pos, j)];
                acc[(pos, j)] = a + w * (incoming[(t, j)] - a);
            }
        } else {
            for i in 0..incoming.nrows() {
                let a = acc[(i, pos)];
                acc[(i, pos)] = a + w * (incoming[(i, t)] - a);
            }
        }
    }
}

/// Reassemble tiles produced by [`split_tiles`] with feathered blending
/// across overlaps. With untouched tiles this is the exact inverse of the
/// split.
pub fn merge_tiles(tiles: &[RealImage2D], grid: &TileGrid) -> Result<RealImage2D> {
    if tiles.len() != grid.tile_count() {
        return Err(Error::Parameter(format!(
            "expected {} tiles, got {}",
            grid.tile_count(),
            tiles.len()
        )));
    }
    let t = grid.tile_size_px;
    let rows = grid.row_origins.last().unwrap() + t;
    let cols = grid.col_origins.last().unwrap() + t;
    let ncols_tiles = grid.col_origins.len();
    let pitch = tiles[0].pitch;

    // merge each tile row into a horizontal strip, then merge strips
    let mut strips: Vec<Array2<f64>> = Vec::with_capacity(grid.row_origins.len());
    for (ri, _r0) in grid.row_origins.iter().enumerate() {
        let mut strip = Array2::zeros((t, cols));
        let first = &tiles[ri * ncols_tiles];
        for i in 0..t {
            for j in 0..t {
                strip[(i, j)] = first.data[(i, j)];
            }
        }
        let mut filled = t;
        for (ci, &c0) in grid.col_origins.iter().enumerate().skip(1) {
            let tile = &tiles[ri * ncols_tiles + ci];
            blend_into(&mut strip, filled, &tile.data, c0, 1);
            filled = filled.max(c0 + t);
        }
        strips.push(strip);
    }

    let mut out = Array2::zeros((rows, cols));
    for i in 0..t {
        for j in 0..cols {
            out[(i, j)] = strips[0][(i, j)];
        }
    }
    let mut filled = t;
    for (ri, &r0) in grid.row_origins.iter().enumerate().skip(1) {
        blend_into(&mut out, filled, &strips[ri], r0, 0);
        filled = filled.max(r0 + t);
    }

    RealImage2D::new(out, pitch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn random_image(rows: usize, cols: usize, seed: u64) -> RealImage2D {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RealImage2D::new(Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>()), 1.0).unwrap()
    }

    #[test]
    fn single_tile_is_identity() {
        let img = random_image(64, 64, 1);
        let grid = TileGrid::new(64, 64, 64, 0).unwrap();
        let tiles = split_tiles(&img, &grid).unwrap();
        assert_eq!(tiles.len(), 1);
        let merged = merge_tiles(&tiles, &grid).unwrap();
        assert_eq!(merged.data, img.data);
    }

    #[test]
    fn quadrants_without_overlap() {
        let img = random_image(64, 64, 2);
        let grid = TileGrid::new(64, 64, 32, 0).unwrap();
        let tiles = split_tiles(&img, &grid).unwrap();
        assert_eq!(tiles.len(), 4);
        assert_eq!(tiles[0].data[(0, 0)], img.data[(0, 0)]);
        assert_eq!(tiles[3].data[(0, 0)], img.data[(32, 32)]);
        let merged = merge_tiles(&tiles, &grid).unwrap();
        assert_eq!(merged.data, img.data);
    }

    #[test]
    fn three_by_three_with_overlap_round_trips_bit_exact() {
        let img = random_image(256, 256, 3);
        let grid = TileGrid::new(256, 256, 96, 16).unwrap();
        assert_eq!(grid.row_origins, vec![0, 80, 160]);
        let tiles = split_tiles(&img, &grid).unwrap();
        assert_eq!(tiles.len(), 9);
        let merged = merge_tiles(&tiles, &grid).unwrap();
        assert_eq!(merged.data, img.data, "merge(split(x)) must be bit-exact");
    }

    #[test]
    fn blend_weights_form_partition_of_unity() {
        // merging all-ones tiles yields exactly 1 everywhere
        let grid = TileGrid::new(200, 200, 96, 24).unwrap();
        let ones = RealImage2D::new(Array2::from_elem((96, 96), 1.0), 1.0).unwrap();
        let tiles = vec![ones; grid.tile_count()];
        let merged = merge_tiles(&tiles, &grid).unwrap();
        for v in merged.data.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_tiles_merge_to_constant() {
        let grid = TileGrid::new(128, 128, 64, 16).unwrap();
        let c = RealImage2D::new(Array2::from_elem((64, 64), 3.25), 1.0).unwrap();
        let tiles = vec![c; grid.tile_count()];
        let merged = merge_tiles(&tiles, &grid).unwrap();
        for v in merged.data.iter() {
            assert_eq!(*v, 3.25);
        }
    }

    #[test]
    fn rejects_bad_grids_and_missing_tiles() {
        assert!(TileGrid::new(64, 64, 128, 0).is_err());
        assert!(TileGrid::new(64, 64, 32, 32).is_err());
        let grid = TileGrid::new(64, 64, 32, 0).unwrap();
        let tiles = vec![RealImage2D::zeros(32, 32, 1.0); 3];
        assert!(merge_tiles(&tiles, &grid).is_err());
    }
}
