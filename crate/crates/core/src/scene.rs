//! Synthetic multi-source renderings `E_k = D_k + B_k` with sensor noise and
//! quantization, plus the ground-truth layers needed to score reconstructions.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backscatter::{backscatter_infinity, backscatter_integral, QuadratureSpec};
use crate::image::{NormalMap, RadianceImage};
use crate::optics::{direct_component, LightSource, Medium, Ray, SensorModel, SurfacePatch};
use crate::{par, Error, Result, Vec3};

/// Ordered set of at least three light sources.
#[derive(Debug, Clone, PartialEq)]
pub struct LightRig {
    sources: Vec<LightSource>,
}

/// Where a ring of sources points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aim {
    /// Every beam axis parallel to the optical axis.
    Parallel,
    /// Every beam axis passes through the on-axis point at this depth (m).
    OnAxis(f64),
}

impl LightRig {
    pub fn new(sources: Vec<LightSource>) -> Result<Self> {
        if sources.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "a rig needs at least 3 sources, got {}",
                sources.len()
            )));
        }
        for (i, a) in sources.iter().enumerate() {
            for b in &sources[i + 1..] {
                if (a.position - b.position).norm() < 1e-12 {
                    return Err(Error::InvalidParameter(
                        "source positions must be distinct".into(),
                    ));
                }
            }
        }
        Ok(Self { sources })
    }

    /// `count` sources evenly spaced on a circle of radius `baseline` around
    /// the camera in the `z = 0` plane, the first one at 45°. With four
    /// sources they sit on the corners of a square.
    pub fn ring(
        count: usize,
        baseline: f64,
        half_angle: f64,
        intensity: f64,
        aim: Aim,
    ) -> Result<Self> {
        if !(baseline > 0.0) {
            return Err(Error::InvalidParameter("baseline must be > 0".into()));
        }
        let sources = (0..count)
            .map(|i| {
                let phi = PI / 4.0 + 2.0 * PI * i as f64 / count as f64;
                let pos = Vec3::new(baseline * phi.cos(), baseline * phi.sin(), 0.0);
                match aim {
                    Aim::Parallel => LightSource::new(pos, Vec3::z(), half_angle, intensity),
                    Aim::OnAxis(z) => {
                        LightSource::aimed_at(pos, Vec3::new(0.0, 0.0, z), half_angle, intensity)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sources)
    }

    /// Four sources on the corners of a 0.8 m square around the camera, 45°
    /// half-angle beams converging on the axis 1 m ahead.
    pub fn square_default() -> Self {
        Self::ring(4, 0.4 * 2f64.sqrt(), PI / 4.0, 1.0, Aim::OnAxis(1.0))
            .expect("valid default rig")
    }

    pub fn sources(&self) -> &[LightSource] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneKind {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Infinite plane through `(0, 0, depth)` with the given normal.
    Plane {
        depth: f64,
        normal: Vec3,
    },
    /// Matte black plane used for backscatter calibration.
    Canvas {
        depth: f64,
        normal: Vec3,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub kind: SceneKind,
    pub albedo: f64,
}

impl Scene {
    pub fn sphere(center: Vec3, radius: f64, albedo: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter("sphere radius must be > 0".into()));
        }
        Self::checked(SceneKind::Sphere { center, radius }, albedo)
    }

    pub fn plane(depth: f64, normal: Vec3, albedo: f64) -> Result<Self> {
        Self::checked(
            SceneKind::Plane {
                depth,
                normal: plane_normal(depth, normal)?,
            },
            albedo,
        )
    }

    pub fn canvas(depth: f64) -> Result<Self> {
        Self::checked(
            SceneKind::Canvas {
                depth,
                normal: plane_normal(depth, -Vec3::z())?,
            },
            0.0,
        )
    }

    fn checked(kind: SceneKind, albedo: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&albedo) {
            return Err(Error::InvalidParameter(format!(
                "albedo {albedo} must lie in [0, 1]"
            )));
        }
        Ok(Self { kind, albedo })
    }

    /// Typical depth of the visible surface, used as the calibration distance
    /// for distant-lighting photometric stereo.
    pub fn mean_depth(&self) -> f64 {
        match self.kind {
            // mean of the visible cap height over the silhouette disc
            SceneKind::Sphere { center, radius } => center.norm() - 2.0 * radius / 3.0,
            SceneKind::Plane { depth, .. } | SceneKind::Canvas { depth, .. } => depth,
        }
    }
}

fn plane_normal(depth: f64, normal: Vec3) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::InvalidParameter("plane depth must be > 0".into()));
    }
    let len = normal.norm();
    if !(len > 0.0) {
        return Err(Error::InvalidParameter(
            "plane normal must be non-zero".into(),
        ));
    }
    Ok(normal / len)
}

/// Result of casting one ray into the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Surface { depth: f64, patch: SurfacePatch },
    Background,
}

impl Hit {
    pub fn depth(&self) -> f64 {
        match self {
            Hit::Surface { depth, .. } => *depth,
            Hit::Background => f64::INFINITY,
        }
    }
}

/// Nearest intersection of `ray` with the scene. Normals face the camera and
/// have length equal to the albedo.
pub fn intersect_scene(ray: &Ray, scene: &Scene) -> Hit {
    let d = ray.direction;
    match scene.kind {
        SceneKind::Sphere { center, radius } => {
            let oc = ray.origin - center;
            let half_b = d.dot(&oc);
            let c = oc.norm_squared() - radius * radius;
            let disc = half_b * half_b - c;
            if disc < 0.0 {
                return Hit::Background;
            }
            let sq = disc.sqrt();
            let t = if -half_b - sq > 0.0 {
                -half_b - sq
            } else {
                -half_b + sq
            };
            if !(t > 0.0) {
                return Hit::Background;
            }
            let point = ray.at(t);
            let normal = (point - center) / radius * scene.albedo;
            Hit::Surface {
                depth: t,
                patch: SurfacePatch { point, normal },
            }
        }
        SceneKind::Plane { depth, normal } | SceneKind::Canvas { depth, normal } => {
            let denom = normal.dot(&d);
            if denom.abs() < 1e-15 {
                return Hit::Background;
            }
            let t = normal.dot(&(Vec3::new(0.0, 0.0, depth) - ray.origin)) / denom;
            if !(t > 0.0) {
                return Hit::Background;
            }
            let facing = if denom < 0.0 { normal } else { -normal };
            Hit::Surface {
                depth: t,
                patch: SurfacePatch {
                    point: ray.at(t),
                    normal: facing * scene.albedo,
                },
            }
        }
    }
}

/// Everything needed to render a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub scene: Scene,
    pub rig: LightRig,
    pub sensor: SensorModel,
    pub medium: Medium,
    pub quad: QuadratureSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Round to integer codes. When off, codes are continuous.
    pub quantize: bool,
    /// Radiance mapped to the largest code. `None` picks 1.2x the brightest
    /// noiseless pixel over all sources.
    pub full_scale: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            quantize: true,
            full_scale: None,
        }
    }
}

/// Headroom of the automatic exposure over the brightest noiseless pixel.
pub const EXPOSURE_HEADROOM: f64 = 1.2;

/// One rendered capture per source with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedStack {
    /// Sensor codes in `[0, max_code]`, one image per source.
    pub images: Vec<RadianceImage>,
    pub truth_normals: NormalMap,
    /// Depth along each pixel ray; `INFINITY` on background.
    pub truth_depth: RadianceImage,
    /// Noiseless backscatter radiance per source.
    pub truth_backscatter: Vec<RadianceImage>,
    /// Noiseless direct radiance per source.
    pub truth_direct: Vec<RadianceImage>,
    /// Radiance that maps to `max_code`.
    pub full_scale: f64,
    pub max_code: f64,
    pub seed: u64,
}

impl RenderedStack {
    pub fn source_count(&self) -> usize {
        self.images.len()
    }

    /// Radiance per code.
    pub fn radiance_per_code(&self) -> f64 {
        self.full_scale / self.max_code
    }

    /// Captures converted back to radiance units.
    pub fn radiance_images(&self) -> Vec<RadianceImage> {
        let k = self.radiance_per_code();
        self.images.iter().map(|img| img.map(|x| x * k)).collect()
    }

    /// Pixels that image the scene surface rather than infinity.
    pub fn object_mask(&self) -> Vec<bool> {
        self.truth_depth
            .data()
            .iter()
            .map(|z| z.is_finite())
            .collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw keyed by `(seed, source, pixel)`; independent of the
/// order in which pixels are visited.
pub fn pixel_noise(seed: u64, source: usize, pixel: usize) -> f64 {
    let key = splitmix64(seed ^ splitmix64(((source as u64) << 40) ^ pixel as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    StandardNormal.sample(&mut rng)
}

struct PixelSample {
    depth: f64,
    normal: Option<Vec3>,
    direct: Vec<f64>,
    backscatter: Vec<f64>,
}

fn render_pixel(setup: &SimulationSetup, u: usize, v: usize) -> Result<PixelSample> {
    let ray = setup.sensor.ray(u, v);
    let hit = intersect_scene(&ray, &setup.scene);
    let n = setup.rig.len();
    let mut direct = Vec::with_capacity(n);
    let mut backscatter = Vec::with_capacity(n);
    for src in setup.rig.sources() {
        match hit {
            Hit::Surface { depth, patch } => {
                direct.push(direct_component(&patch, src, &setup.sensor, &setup.medium));
                backscatter.push(backscatter_integral(
                    &ray,
                    depth,
                    src,
                    &setup.sensor,
                    &setup.medium,
                    &setup.quad,
                )?);
            }
            Hit::Background => {
                direct.push(0.0);
                backscatter.push(backscatter_infinity(
                    &ray,
                    src,
                    &setup.sensor,
                    &setup.medium,
                    &setup.quad,
                )?);
            }
        }
    }
    Ok(PixelSample {
        depth: hit.depth(),
        normal: match hit {
            Hit::Surface { patch, .. } => Some(patch.normal),
            Hit::Background => None,
        },
        direct,
        backscatter,
    })
}

/// Renders with default options: automatic exposure and quantization.
pub fn render_stack(setup: &SimulationSetup, seed: u64) -> Result<RenderedStack> {
    render_stack_with(setup, &RenderOptions::default(), seed)
}

pub fn render_stack_with(
    setup: &SimulationSetup,
    options: &RenderOptions,
    seed: u64,
) -> Result<RenderedStack> {
    setup.sensor.validate()?;
    setup.medium.validate()?;
    setup.quad.validate()?;
    let (w, h) = (setup.sensor.width, setup.sensor.height);
    let samples = par::try_map_indexed(w * h, |i| render_pixel(setup, i % w, i / w))?;

    let k_count = setup.rig.len();
    let layer = |f: &dyn Fn(&PixelSample) -> f64| {
        RadianceImage::new(w, h, samples.iter().map(f).collect()).expect("sized by sensor")
    };
    let truth_direct: Vec<_> = (0..k_count).map(|k| layer(&|s| s.direct[k])).collect();
    let truth_backscatter: Vec<_> = (0..k_count).map(|k| layer(&|s| s.backscatter[k])).collect();
    let truth_depth = layer(&|s| s.depth);
    let normals = samples
        .iter()
        .map(|s| s.normal.unwrap_or_else(Vec3::zeros))
        .collect();
    let valid = samples.iter().map(|s| s.normal.is_some()).collect();
    let truth_normals = NormalMap::new(w, h, normals, valid)?;

    let brightest = samples
        .iter()
        .flat_map(|s| s.direct.iter().zip(&s.backscatter).map(|(d, b)| d + b))
        .fold(0.0f64, f64::max);
    let full_scale = match options.full_scale {
        Some(fs) if fs > 0.0 => fs,
        Some(fs) => {
            return Err(Error::InvalidParameter(format!(
                "full scale {fs} must be > 0"
            )))
        }
        None if brightest > 0.0 => EXPOSURE_HEADROOM * brightest,
        None => 1.0,
    };
    let max_code = setup.sensor.max_code();
    let sigma = setup.sensor.noise_sigma * full_scale;

    let images = (0..k_count)
        .map(|k| {
            let data = par::map_indexed(w * h, |i| {
                let clean = truth_direct[k].data()[i] + truth_backscatter[k].data()[i];
                let noisy = if sigma > 0.0 {
                    clean + sigma * pixel_noise(seed, k, i)
                } else {
                    clean
                };
                let code = noisy.clamp(0.0, full_scale) / full_scale * max_code;
                if options.quantize {
                    code.round()
                } else {
                    code
                }
            });
            RadianceImage::new(w, h, data)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RenderedStack {
        images,
        truth_normals,
        truth_depth,
        truth_backscatter,
        truth_direct,
        full_scale,
        max_code,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceExposure {
    /// Fraction of pixels at the largest code.
    pub clipped_fraction: f64,
    /// Fraction of pixels at code zero.
    pub black_fraction: f64,
    /// Summed direct over summed backscatter radiance on the object pixels.
    /// Zero when no object pixel is lit.
    pub direct_to_backscatter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureReport {
    pub sources: Vec<SourceExposure>,
}

impl ExposureReport {
    pub fn worst_clipped_fraction(&self) -> f64 {
        self.sources
            .iter()
            .map(|s| s.clipped_fraction)
            .fold(0.0, f64::max)
    }
}

/// Flags frames that are saturated, or starved because backscatter eats the
/// dynamic range.
pub fn exposure_guard(stack: &RenderedStack) -> ExposureReport {
    let mask = stack.object_mask();
    let sources = (0..stack.source_count())
        .map(|k| {
            let img = stack.images[k].data();
            let n = img.len() as f64;
            let clipped = img.iter().filter(|&&c| c >= stack.max_code).count() as f64 / n;
            let black = img.iter().filter(|&&c| c <= 0.0).count() as f64 / n;
            let (mut d_sum, mut b_sum) = (0.0, 0.0);
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    d_sum += stack.truth_direct[k].data()[i];
                    b_sum += stack.truth_backscatter[k].data()[i];
                }
            }
            let ratio = if b_sum > 0.0 {
                d_sum / b_sum
            } else if d_sum > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            SourceExposure {
                clipped_fraction: clipped,
                black_fraction: black,
                direct_to_backscatter: ratio,
            }
        })
        .collect();
    ExposureReport { sources }
}
