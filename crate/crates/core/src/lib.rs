//! Simulation and reconstruction toolkit for imaging under artificial light in
//! scattering media.
//!
//! The crate covers the whole chain:
//!
//! * [`optics`]: attenuation, phase function and the scene-reflected direct term.
//! * [`backscatter`]: single-scattering line integral along a pixel's line of
//!   sight, its infinite-depth limit and saturation analysis.
//! * [`scene`]: synthetic multi-source renderings with noise and quantization.
//! * [`estimator`]: backscatter estimation from images, either from a
//!   calibration capture or automatically from block minima with a constrained
//!   RANSAC quadratic fit.
//! * [`photometric`]: backscatter-compensated photometric stereo and the two
//!   classic baselines.
//! * [`surface`]: normal integration and single-image restoration.
//! * [`harness`]: the batch commands used by the `murk` binary.
//!
//! All radiance values are linear and single-channel. Per-pixel work runs on
//! rayon when the `parallel` feature is enabled (the default); results are
//! identical either way.

pub mod backscatter;
pub mod config;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod image;
pub mod io;
pub mod optics;
pub mod par;
pub mod photometric;
pub mod scene;
pub mod surface;

pub use error::{Error, Result};
pub use image::{HeightMap, NormalMap, RadianceImage};
pub use optics::{LightSource, Medium, Ray, SensorModel, SurfacePatch};

/// 3D vector used for points and directions (metres, camera frame).
pub type Vec3 = nalgebra::Vector3<f64>;
