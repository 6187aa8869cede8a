//! Recovery of an unknown lens's aberrations from aperture-scanned images
//! and aberration-corrected latent-image recovery by coded-aperture
//! deconvolution, together with the forward simulator used to validate the
//! whole chain on synthetic ground truth.
//!
//! The crate is organized around the processing pipeline:
//!
//! * [`field`] — grids, unitary FFTs, shifts, convolution.
//! * [`zernike`] — synthetic wavefront parameterization and disk masks.
//! * [`aperture`] — Fourier-plane mask patterns: spiral small-aperture
//!   scans, genetic-search coded apertures, rotations, rendering.
//! * [`simulate`] — forward imaging model (PSF/OTF/noisy captures) plus an
//!   independent Fresnel-chain oracle.
//! * [`blur`] — local PSF estimation from image pairs.
//! * [`synthesis`] — phase retrieval stitching the local PSFs into the
//!   full complex pupil.
//! * [`deconv`] — combined multi-aperture Tikhonov deconvolution.
//! * [`tile`], [`register`], [`pipeline`] — tiling, frame registration and
//!   calibration, end-to-end orchestration and reporting.

pub mod aperture;
pub mod blur;
pub mod deconv;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod register;
pub mod scene;
pub mod simulate;
pub mod synthesis;
pub mod tile;
pub mod zernike;

pub use error::{Error, Result};
pub use field::{ComplexField2D, Plane, RealImage2D};
