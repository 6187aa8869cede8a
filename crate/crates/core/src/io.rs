//! Raster and manifest I/O.
//!
//! Float imagery is stored as grayscale PFM (little-endian float32, rows
//! bottom to top) for exact round-trips; 16-bit PNGs are exported for
//! visualization only. Complex fields are a pair of PFMs plus a JSON
//! sidecar; capture stacks are a directory of PFMs plus `manifest.json`.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::aperture::{ApertureSpec, CodedPattern};
use crate::error::{Error, Result};
use crate::field::{ComplexField2D, Plane, RealImage2D};
use crate::simulate::{CaptureEntry, CaptureMeta, CaptureSet};

/// Write a grayscale little-endian PFM.
pub fn write_pfm(path: &Path, img: &RealImage2D) -> Result<()> {
    let (rows, cols) = img.data.dim();
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", cols, rows)?;
    // bottom-to-top row order per the PFM convention
    for i in (0..rows).rev() {
        for j in 0..cols {
            w.write_all(&(img.data[(i, j)] as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a grayscale PFM written by [`write_pfm`] (or any little-endian
/// single-channel PFM). The pitch is not part of the format; the caller
/// restores it from a sidecar where one exists.
pub fn read_pfm(path: &Path) -> Result<RealImage2D> {
    let file = fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "Pf" {
        return Err(Error::Raster(format!(
            "{}: expected grayscale PFM magic 'Pf', got {:?}",
            path.display(),
            line.trim()
        )));
    }
    line.clear();
    r.read_line(&mut line)?;
    let mut dims = line.split_whitespace();
    let cols: usize = dims
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Raster(format!("{}: bad dimensions", path.display())))?;
    let rows: usize = dims
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Raster(format!("{}: bad dimensions", path.display())))?;
    line.clear();
    r.read_line(&mut line)?;
    let scale: f64 = line
        .trim()
        .parse()
        .map_err(|_| Error::Raster(format!("{}: bad scale", path.display())))?;
    if scale >= 0.0 {
        return Err(Error::Raster(format!(
            "{}: big-endian PFM not supported",
            path.display()
        )));
    }
    let mut buf = vec![0u8; rows * cols * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Raster(format!("{}: truncated payload", path.display())))?;
    let mut data = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let off = ((rows - 1 - i) * cols + j) * 4;
            let v = f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]);
            data[(i, j)] = v as f64;
        }
    }
    RealImage2D::new(data, 1.0)
}

/// Export a normalized 16-bit PNG for inspection.
pub fn write_png16(path: &Path, img: &RealImage2D) -> Result<()> {
    let (rows, cols) = img.data.dim();
    let lo = img.min();
    let hi = img.max();
    let span = (hi - lo).max(1e-300);
    let mut out = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(cols as u32, rows as u32);
    for ((i, j), &v) in img.data.indexed_iter() {
        let t = ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.put_pixel(j as u32, i as u32, image::Luma([t]));
    }
    out.save(path)
        .map_err(|e| Error::Raster(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldSidecar {
    pitch: f64,
    plane: Plane,
    #[serde(skip_serializing_if = "Option::is_none")]
    wavelength: Option<f64>,
}

/// Store a complex field as `<stem>_re.pfm`, `<stem>_im.pfm` and
/// `<stem>.json` (pitch, plane tag, optional wavelength).
pub fn save_complex_field(stem: &Path, field: &ComplexField2D, wavelength: Option<f64>) -> Result<()> {
    let re = RealImage2D {
        data: field.data.mapv(|z| z.re),
        pitch: field.pitch,
    };
    let im = RealImage2D {
        data: field.data.mapv(|z| z.im),
        pitch: field.pitch,
    };
    write_pfm(&stem.with_extension("re.pfm"), &re)?;
    write_pfm(&stem.with_extension("im.pfm"), &im)?;
    let sidecar = FieldSidecar {
        pitch: field.pitch,
        plane: field.plane,
        wavelength,
    };
    fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn load_complex_field(stem: &Path) -> Result<(ComplexField2D, Option<f64>)> {
    let re = read_pfm(&stem.with_extension("re.pfm"))?;
    let im = read_pfm(&stem.with_extension("im.pfm"))?;
    if re.data.dim() != im.data.dim() {
        return Err(Error::Raster("real/imag parts differ in size".into()));
    }
    let sidecar: FieldSidecar = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let data = ndarray::Zip::from(&re.data)
        .and(&im.data)
        .map_collect(|&r, &i| Complex64::new(r, i));
    Ok((
        ComplexField2D::new(data, sidecar.pitch, sidecar.plane)?,
        sidecar.wavelength,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    spec: ApertureSpec,
    file: String,
    frame_count: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureManifest {
    meta: CaptureMeta,
    entries: Vec<ManifestEntry>,
}

/// Persist a capture stack as one PFM per entry plus `manifest.json`.
pub fn save_capture_set(dir: &Path, set: &CaptureSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.entries.len());
    for (i, e) in set.entries.iter().enumerate() {
        let file = format!("capture_{i:04}.pfm");
        write_pfm(&dir.join(&file), &e.image)?;
        entries.push(ManifestEntry {
            spec: e.spec.clone(),
            file,
            frame_count: e.frame_count,
        });
    }
    let manifest = CaptureManifest {
        meta: set.meta.clone(),
        entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_capture_set(dir: &Path) -> Result<CaptureSet> {
    let manifest: CaptureManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let mut image = read_pfm(&dir.join(&e.file))?;
        image.pitch = manifest.meta.camera_pitch;
        entries.push(CaptureEntry {
            spec: e.spec,
            image,
            frame_count: e.frame_count,
        });
    }
    let set = CaptureSet {
        entries,
        meta: manifest.meta,
    };
    set.validate()?;
    Ok(set)
}

/// Provenance of a coded-aperture pattern file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", untagged)]
pub enum PatternProvenance {
    Search { seed: u64, generations: usize },
    UserSupplied(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatternFile {
    pub k: usize,
    pub cells: Vec<u8>,
    pub provenance: PatternProvenance,
}

pub fn save_pattern(path: &Path, pattern: &CodedPattern, provenance: PatternProvenance) -> Result<()> {
    let f = PatternFile {
        k: pattern.k,
        cells: pattern.cells.clone(),
        provenance,
    };
    fs::write(path, serde_json::to_string_pretty(&f)?)?;
    Ok(())
}

pub fn load_pattern(path: &Path) -> Result<(CodedPattern, PatternProvenance)> {
    let f: PatternFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok((CodedPattern::new(f.k, f.cells)?, f.provenance))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KernelSidecar {
    pub aperture_id: usize,
    pub centroid: (f64, f64),
    pub residual: f64,
    pub iterations: usize,
}

/// Export one estimated kernel as PFM plus metadata.
pub fn save_kernel(dir: &Path, idx: usize, est: &crate::blur::BlurEstimate, aperture_id: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = dir.join(format!("kernel_{idx:04}"));
    write_pfm(&stem.with_extension("pfm"), &est.kernel)?;
    let sidecar = KernelSidecar {
        aperture_id,
        centroid: est.centroid,
        residual: est.residual,
        iterations: est.iterations_used,
    };
    fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{NoiseModel, OpticsGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pfm_round_trip_is_exact_for_f32_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // f32-representable values survive the round trip bit-exactly
        let img = RealImage2D::new(
            Array2::from_shape_fn((48, 64), |_| rng.gen::<f32>() as f64),
            1.0,
        )
        .unwrap();
        let path = dir.path().join("x.pfm");
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn complex_field_round_trip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Array2::from_shape_fn((32, 32), |_| {
            Complex64::new(rng.gen::<f32>() as f64, rng.gen::<f32>() as f64)
        });
        let field = ComplexField2D::new(data, 4.5e-5, Plane::Pupil).unwrap();
        let stem = dir.path().join("pupil");
        save_complex_field(&stem, &field, Some(520e-9)).unwrap();
        let (back, wl) = load_complex_field(&stem).unwrap();
        assert_eq!(back.data, field.data);
        assert_eq!(back.pitch, field.pitch);
        assert_eq!(back.plane, Plane::Pupil);
        assert_eq!(wl, Some(520e-9));
    }

    #[test]
    fn capture_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let n = 32;
        let optics = OpticsGeometry {
            wavelength: 520e-9,
            focal_length: 0.167,
            pupil_pitch: 1e-4,
            pupil_radius_px: 10.0,
        };
        let meta = CaptureMeta {
            optics,
            camera_pitch: optics.camera_pitch(n),
            noise: NoiseModel::noiseless(),
            measured_snr: Some(51.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries = vec![
            CaptureEntry {
                spec: ApertureSpec::full(0, 10.0),
                image: RealImage2D::new(
                    Array2::from_shape_fn((n, n), |_| rng.gen::<f32>().abs() as f64),
                    meta.camera_pitch,
                )
                .unwrap(),
                frame_count: 4,
            },
            CaptureEntry {
                spec: ApertureSpec::small(1, (2.0, -3.0), 4.0),
                image: RealImage2D::new(
                    Array2::from_shape_fn((n, n), |_| rng.gen::<f32>().abs() as f64),
                    meta.camera_pitch,
                )
                .unwrap(),
                frame_count: 1,
            },
        ];
        let set = CaptureSet { entries, meta };
        let path = dir.path().join("captures");
        save_capture_set(&path, &set).unwrap();
        let back = load_capture_set(&path).unwrap();
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.entries[0].frame_count, 4);
        assert_eq!(back.entries[0].image.data, set.entries[0].image.data);
        assert_eq!(back.entries[1].spec, set.entries[1].spec);
    }

    #[test]
    fn pattern_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pattern = CodedPattern::new(5, vec![1; 25]).unwrap();
        let path = dir.path().join("pattern.json");
        save_pattern(
            &path,
            &pattern,
            PatternProvenance::Search {
                seed: 7,
                generations: 30,
            },
        )
        .unwrap();
        let (back, prov) = load_pattern(&path).unwrap();
        assert_eq!(back, pattern);
        assert_eq!(
            prov,
            PatternProvenance::Search {
                seed: 7,
                generations: 30
            }
        );
    }
}
