//! Single-scattering backscatter along a pixel's line of sight.
//!
//! For a source `S` and a camera ray `P(t) = O + t d`, the backscatter is
//!
//! ```text
//! B = ∫_{Z_k}^{Z} I (b / 4π)(1 + g cos φ) exp(-c(|S P(t)| + |O P(t)|)) / |S P(t)|² dt
//! ```
//!
//! where `Z_k` is where the ray first enters the source's beam cone and `φ` is
//! the angle between the light's propagation direction and the direction back
//! to the camera. Depths are distances along the (unit) ray.

use crate::image::RadianceImage;
use crate::optics::{phase_from_cos, LightSource, Medium, Ray, SensorModel};
use crate::{par, Error, Result, Vec3};

/// Discretisation of the line integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Width of the first panel along the ray (m); later panels grow with depth.
    pub base_step: f64,
    /// Relative accuracy target.
    pub rel_tol: f64,
    /// Finite depth standing in for infinity (m).
    pub max_depth: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            base_step: 0.02,
            rel_tol: 1e-4,
            max_depth: 50.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_step > 0.0) {
            return Err(Error::InvalidParameter("base_step must be > 0".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidParameter("rel_tol must lie in (0, 1)".into()));
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::InvalidParameter("max_depth must be > 0".into()));
        }
        Ok(())
    }
}

/// Number of samples on the saturation-analysis depth grid.
pub const SATURATION_GRID_LEN: usize = 64;
/// First depth of the saturation-analysis grid (m).
pub const SATURATION_GRID_START: f64 = 0.05;

/// Panels never get wider than this fraction of their starting depth.
const PANEL_GROWTH: f64 = 0.1;
const MAX_REFINE_LEVEL: u32 = 40;

/// Smallest `t >= 0` at which the ray is inside the beam cone of `source`.
pub fn los_fov_intersection(ray: &Ray, source: &LightSource) -> Option<f64> {
    los_fov_interval(ray, source).map(|(entry, _)| entry)
}

/// Depths `[entry, exit]` over which the ray lies inside the beam cone. The
/// cone is convex, so this is a single interval; `exit` is infinite when the
/// ray never leaves it.
pub fn los_fov_interval(ray: &Ray, source: &LightSource) -> Option<(f64, f64)> {
    let d = ray.direction;
    let a = source.axis;
    let co: Vec3 = ray.origin - source.position;
    let da = d.dot(&a);
    let ca = co.dot(&a);

    let mut cuts = vec![0.0];
    if source.half_angle >= std::f64::consts::FRAC_PI_2 - 1e-12 {
        // hemispherical beam: the half-space in front of the source
        if da != 0.0 {
            cuts.push(-ca / da);
        }
    } else {
        // ((co + t d)·a)^2 = cos^2 θ |co + t d|^2
        let k = source.half_angle.cos().powi(2);
        let qa = da * da - k;
        let qb = 2.0 * (da * ca - k * d.dot(&co));
        let qc = ca * ca - k * co.norm_squared();
        let scale = qb.abs().max(qc.abs()).max(1.0);
        if qa.abs() <= 1e-14 * scale {
            if qb != 0.0 {
                cuts.push(-qc / qb);
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // numerically stable pair
                let q = -0.5 * (qb + qb.signum() * sq);
                if q != 0.0 {
                    cuts.push(q / qa);
                    cuts.push(qc / q);
                }
            }
        }
    }
    cuts.retain(|t| t.is_finite() && *t >= 0.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut entry = None;
    for (i, &lo) in cuts.iter().enumerate() {
        let probe = match cuts.get(i + 1) {
            Some(&hi) => 0.5 * (lo + hi),
            None => 2.0 * lo + 1.0,
        };
        let inside = source.illuminates(&ray.at(probe));
        match (entry, inside) {
            (None, true) => entry = Some(lo),
            (Some(start), false) => return Some((start, lo)),
            _ => {}
        }
    }
    entry.map(|start| (start, f64::INFINITY))
}

/// Backscatter integrand at depth `t`.
#[derive(Clone, Copy)]
struct Integrand<'a> {
    ray: &'a Ray,
    camera: Vec3,
    source: &'a LightSource,
    medium: &'a Medium,
}

impl Integrand<'_> {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let p = self.ray.at(t);
        let sp = p - self.source.position;
        let r2 = sp.norm_squared();
        if r2 == 0.0 {
            return 0.0;
        }
        let r = r2.sqrt();
        let to_camera = self.camera - p;
        let dist_op = to_camera.norm();
        // angle between the incoming light direction and the direction to the camera
        let cos_phi = if dist_op > 0.0 {
            sp.dot(&to_camera) / (r * dist_op)
        } else {
            -sp.dot(&self.ray.direction) / r
        };
        self.source.intensity
            * phase_from_cos(cos_phi, self.medium)
            * (-self.medium.c * (r + dist_op)).exp()
            / r2
    }
}

struct Simpson<'a, F: Fn(f64) -> f64> {
    f: &'a F,
    converged: bool,
}

impl<F: Fn(f64) -> f64> Simpson<'_, F> {
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        level: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let h = (b - a) / 12.0;
        let left = h * (fa + 4.0 * flm + fm);
        let right = h * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        if level >= MAX_REFINE_LEVEL {
            self.converged = false;
            return left + right + delta / 15.0;
        }
        self.refine(a, m, fa, flm, fm, left, 0.5 * tol, level + 1)
            + self.refine(m, b, fm, frm, fb, right, 0.5 * tol, level + 1)
    }
}

/// Panel boundaries from `lo` to `hi`: first panel `base_step` wide, later
/// panels growing with depth.
fn panel_edges(lo: f64, hi: f64, base_step: f64) -> Vec<f64> {
    let mut edges = vec![lo];
    let mut t = lo;
    while t < hi {
        let w = base_step.max(PANEL_GROWTH * t);
        t = (t + w).min(hi);
        if hi - t < 0.25 * w {
            t = hi;
        }
        edges.push(t);
    }
    edges
}

/// Adaptive composite Simpson of `f` over `[lo, hi]` to relative accuracy
/// `rel_tol`.
fn integrate_adaptive(
    f: &impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let edges = panel_edges(lo, hi, quad.base_step);
    let mut panels = Vec::with_capacity(edges.len() - 1);
    let mut f_left = f(lo);
    let mut coarse = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let fm = f(0.5 * (a + b));
        let fb = f(b);
        let s = (b - a) / 6.0 * (f_left + 4.0 * fm + fb);
        coarse += s;
        panels.push((a, b, f_left, fm, fb, s));
        f_left = fb;
    }
    if coarse == 0.0 {
        return Ok(0.0);
    }
    let tol_total = quad.rel_tol * coarse.abs();
    let span = hi - lo;
    let mut simpson = Simpson { f, converged: true };
    let total: f64 = panels
        .into_iter()
        .map(|(a, b, fa, fm, fb, s)| {
            let tol = tol_total * (b - a) / span;
            simpson.refine(a, b, fa, fm, fb, s, tol, 0)
        })
        .sum();
    if !simpson.converged {
        return Err(Error::NonConvergence { estimate: total });
    }
    Ok(total)
}

fn integrand<'a>(
    ray: &'a Ray,
    source: &'a LightSource,
    sensor: &SensorModel,
    medium: &'a Medium,
) -> Integrand<'a> {
    Integrand {
        ray,
        camera: sensor.origin(),
        source,
        medium,
    }
}

fn is_dark(source: &LightSource, medium: &Medium) -> bool {
    medium.b == 0.0 || source.intensity == 0.0
}

/// Backscatter of `source` seen through `ray` when the scene sits at depth
/// `scene_depth` along it.
pub fn backscatter_integral(
    ray: &Ray,
    scene_depth: f64,
    source: &LightSource,
    sensor: &SensorModel,
    medium: &Medium,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !(scene_depth > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scene depth {scene_depth} must be > 0"
        )));
    }
    if is_dark(source, medium) {
        return Ok(0.0);
    }
    let Some((zk, exit)) = los_fov_interval(ray, source) else {
        return Ok(0.0);
    };
    let upper = scene_depth.min(exit);
    if upper <= zk {
        return Ok(0.0);
    }
    let f = integrand(ray, source, sensor, medium);
    integrate_adaptive(&|t| f.eval(t), zk, upper, quad)
}

/// Rejects `quad.max_depth` as a stand-in for infinity unless integrating on
/// to twice that depth changes `value` by less than `rel_tol`.
fn check_tail(
    f: &Integrand<'_>,
    (zk, exit): (f64, f64),
    value: f64,
    quad: &QuadratureSpec,
) -> Result<()> {
    let start = zk.max(quad.max_depth);
    let end = exit.min(2.0 * quad.max_depth);
    if end <= start {
        return Ok(());
    }
    let tail = integrate_adaptive(&|t| f.eval(t), start, end, quad)?;
    if tail > quad.rel_tol * (value + tail) {
        return Err(Error::TailNotNegligible {
            max_depth: quad.max_depth,
            estimate: value + tail,
        });
    }
    Ok(())
}

/// Saturated backscatter `B(∞)`, integrated to `quad.max_depth`.
pub fn backscatter_infinity(
    ray: &Ray,
    source: &LightSource,
    sensor: &SensorModel,
    medium: &Medium,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if is_dark(source, medium) {
        return Ok(0.0);
    }
    let Some((zk, exit)) = los_fov_interval(ray, source) else {
        return Ok(0.0);
    };
    let upper = exit.min(quad.max_depth);
    if upper <= zk {
        return Ok(0.0);
    }
    let f = integrand(ray, source, sensor, medium);
    let value = integrate_adaptive(&|t| f.eval(t), zk, upper, quad)?;
    check_tail(&f, (zk, exit), value, quad)?;
    Ok(value)
}

/// `n` depths spaced geometrically from `start` to `end` inclusive.
pub fn geometric_depth_grid(n: usize, start: f64, end: f64) -> Vec<f64> {
    assert!(n >= 2 && start > 0.0 && end > start);
    let ratio = (end / start).powf(1.0 / (n - 1) as f64);
    let mut out: Vec<f64> = (0..n).map(|i| start * ratio.powi(i as i32)).collect();
    out[n - 1] = end;
    out
}

/// Backscatter as a function of scene depth for one pixel and source.
#[derive(Debug, Clone, PartialEq)]
pub struct BackscatterCurve {
    pub depths: Vec<f64>,
    pub values: Vec<f64>,
    /// `None` when `B(∞) = 0`, where saturation is undefined.
    pub saturation_depth: Option<f64>,
    pub saturation_value: f64,
    /// Depth at which the ray enters the beam, if it does.
    pub min_lit_depth: Option<f64>,
}

impl BackscatterCurve {
    /// Samples `B(Z)` on the default geometric grid and computes `Z_sat` for
    /// relative threshold `epsilon`.
    pub fn compute(
        ray: &Ray,
        source: &LightSource,
        sensor: &SensorModel,
        medium: &Medium,
        quad: &QuadratureSpec,
        epsilon: f64,
    ) -> Result<Self> {
        let depths =
            geometric_depth_grid(SATURATION_GRID_LEN, SATURATION_GRID_START, quad.max_depth);
        Self::on_grid(ray, source, sensor, medium, quad, epsilon, depths)
    }

    /// As [`compute`](Self::compute) on a caller-supplied increasing grid whose
    /// last entry is taken as infinity.
    pub fn on_grid(
        ray: &Ray,
        source: &LightSource,
        sensor: &SensorModel,
        medium: &Medium,
        quad: &QuadratureSpec,
        epsilon: f64,
        depths: Vec<f64>,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter("epsilon must lie in (0, 1)".into()));
        }
        if depths.is_empty() || depths.windows(2).any(|w| !(w[1] > w[0])) || !(depths[0] > 0.0) {
            return Err(Error::InvalidParameter(
                "depth grid must be positive and strictly increasing".into(),
            ));
        }
        let lit = los_fov_interval(ray, source);
        let mut values = vec![0.0; depths.len()];
        if let (Some((zk, exit)), false) = (lit, is_dark(source, medium)) {
            let f = integrand(ray, source, sensor, medium);
            let mut acc = 0.0;
            let mut prev = zk;
            for (value, &z) in values.iter_mut().zip(&depths) {
                let upper = z.min(exit);
                if upper > prev {
                    acc += integrate_adaptive(&|t| f.eval(t), prev, upper, quad)?;
                    prev = upper;
                }
                *value = acc;
            }
            let last = *depths.last().unwrap();
            check_tail(
                &f,
                (zk, exit),
                acc,
                &QuadratureSpec {
                    max_depth: last,
                    ..*quad
                },
            )?;
        }
        let saturation_value = *values.last().unwrap();
        let mut curve = Self {
            depths,
            values,
            saturation_depth: None,
            saturation_value,
            min_lit_depth: lit.map(|(zk, _)| zk),
        };
        curve.saturation_depth = curve.saturation_depth(epsilon);
        Ok(curve)
    }

    /// Smallest sampled depth with `(B(∞) - B(Z)) / B(∞) < epsilon`; `None`
    /// when `B(∞) = 0`.
    pub fn saturation_depth(&self, epsilon: f64) -> Option<f64> {
        saturation_depth(&self.depths, &self.values, self.saturation_value, epsilon)
    }
}

/// Smallest sampled depth whose relative shortfall from `b_inf` is below
/// `epsilon`. `None` signals the undefined case `b_inf = 0`.
pub fn saturation_depth(depths: &[f64], values: &[f64], b_inf: f64, epsilon: f64) -> Option<f64> {
    if !(b_inf > 0.0) {
        return None;
    }
    depths
        .iter()
        .zip(values)
        .find(|(_, &b)| (b_inf - b) / b_inf < epsilon)
        .map(|(&z, _)| z)
}

/// Per-pixel backscatter of one source for a depth map (`f64::INFINITY` marks
/// pixels looking at infinity).
pub fn backscatter_image(
    sensor: &SensorModel,
    source: &LightSource,
    medium: &Medium,
    depth_map: &RadianceImage,
    quad: &QuadratureSpec,
) -> Result<RadianceImage> {
    if depth_map.dims() != (sensor.width, sensor.height) {
        return Err(Error::DimensionMismatch {
            expected: (sensor.width, sensor.height),
            found: depth_map.dims(),
        });
    }
    let w = sensor.width;
    let data = par::try_map_indexed(sensor.pixel_count(), |i| {
        let ray = sensor.ray(i % w, i / w);
        let z = depth_map.data()[i];
        if z.is_infinite() {
            backscatter_infinity(&ray, source, sensor, medium, quad)
        } else {
            backscatter_integral(&ray, z, source, sensor, medium, quad)
        }
    })?;
    RadianceImage::new(sensor.width, sensor.height, data)
}
