//! Radiometric and geometric primitives.
//!
//! The camera centre is the world origin and the optical axis is `+Z`. Pixel
//! `(u, v)` looks along `((u - u0) / f, (v - v0) / f, 1)`, normalised.

use std::f64::consts::PI;

use crate::{Error, Result, Vec3};

/// Water volume: total attenuation `c` (1/m), scattering `b` (1/m) and the
/// phase-function anisotropy `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub c: f64,
    pub b: f64,
    pub g: f64,
}

impl Medium {
    pub fn new(c: f64, b: f64, g: f64) -> Result<Self> {
        let m = Self { c, b, g };
        m.validate()?;
        Ok(m)
    }

    /// Non-scattering, non-attenuating medium.
    pub fn clear() -> Self {
        Self {
            c: 0.0,
            b: 0.0,
            g: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c = {} must be >= 0",
                self.c
            )));
        }
        if !(self.b >= 0.0 && self.b <= self.c) {
            return Err(Error::InvalidParameter(format!(
                "b = {} must lie in [0, c = {}]",
                self.b, self.c
            )));
        }
        if !(self.g > -1.0 && self.g < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "g = {} must lie in (-1, 1)",
                self.g
            )));
        }
        Ok(())
    }
}

/// A point source with a hard-edged circular beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightSource {
    pub position: Vec3,
    /// Unit beam axis.
    pub axis: Vec3,
    /// Beam half-angle in radians, in `(0, pi/2]`.
    pub half_angle: f64,
    pub intensity: f64,
}

impl LightSource {
    /// Builds a source; `axis` is normalised and must be non-zero.
    pub fn new(position: Vec3, axis: Vec3, half_angle: f64, intensity: f64) -> Result<Self> {
        let len = axis.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidParameter("beam axis must be non-zero".into()));
        }
        if !(half_angle > 0.0 && half_angle <= PI / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "half-angle {half_angle} rad must lie in (0, pi/2]"
            )));
        }
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "intensity {intensity} must be >= 0"
            )));
        }
        Ok(Self {
            position,
            axis: axis / len,
            half_angle,
            intensity,
        })
    }

    /// Source at `position` whose axis points at `target`.
    pub fn aimed_at(position: Vec3, target: Vec3, half_angle: f64, intensity: f64) -> Result<Self> {
        Self::new(position, target - position, half_angle, intensity)
    }

    /// Whether `point` lies inside the beam cone (boundary included).
    pub fn illuminates(&self, point: &Vec3) -> bool {
        let rel = point - self.position;
        let along = rel.dot(&self.axis);
        if along < 0.0 {
            return false;
        }
        if self.half_angle >= PI / 2.0 {
            return true;
        }
        along >= rel.norm() * self.half_angle.cos()
    }
}

/// Pinhole camera at the origin looking along `+Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub width: usize,
    pub height: usize,
    pub focal_length_px: f64,
    pub principal_point: (f64, f64),
    pub bit_depth: u32,
    /// Gaussian noise standard deviation as a fraction of full scale.
    pub noise_sigma: f64,
}

impl SensorModel {
    /// Sensor with the principal point at the image centre and the focal length
    /// set by the horizontal field of view.
    pub fn with_fov(
        width: usize,
        height: usize,
        fov_deg: f64,
        bit_depth: u32,
        noise_sigma: f64,
    ) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidParameter(format!(
                "fov {fov_deg} deg out of range"
            )));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        let s = Self {
            width,
            height,
            focal_length_px: f,
            principal_point: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            bit_depth,
            noise_sigma,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(
                "sensor must be at least 1x1".into(),
            ));
        }
        if !(self.focal_length_px > 0.0) {
            return Err(Error::InvalidParameter("focal length must be > 0".into()));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidParameter(format!(
                "bit depth {} must lie in 1..=16",
                self.bit_depth
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Camera centre.
    pub fn origin(&self) -> Vec3 {
        Vec3::zeros()
    }

    /// Largest quantized code, `2^bit_depth - 1`.
    pub fn max_code(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Line of sight through the centre of pixel `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> Ray {
        self.ray_at(u as f64, v as f64)
    }

    pub fn ray_at(&self, u: f64, v: f64) -> Ray {
        let (u0, v0) = self.principal_point;
        let d = Vec3::new(
            (u - u0) / self.focal_length_px,
            (v - v0) / self.focal_length_px,
            1.0,
        );
        Ray {
            origin: self.origin(),
            direction: d.normalize(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let len = direction.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidParameter(
                "ray direction must be non-zero".into(),
            ));
        }
        Ok(Self {
            origin,
            direction: direction / len,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Surface point with a non-unit normal whose length is the albedo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePatch {
    pub point: Vec3,
    pub normal: Vec3,
}

/// `I0 * exp(-c d)`, additionally divided by `d^2` for a point source.
pub fn attenuate(
    intensity: f64,
    distance: f64,
    medium: &Medium,
    inverse_square: bool,
) -> Result<f64> {
    if inverse_square && distance <= 0.0 {
        return Err(Error::Domain(format!(
            "inverse-square attenuation is singular at distance {distance}"
        )));
    }
    if distance < 0.0 {
        return Err(Error::Domain(format!("negative distance {distance}")));
    }
    let mut out = intensity * (-medium.c * distance).exp();
    if inverse_square {
        out /= distance * distance;
    }
    Ok(out)
}

/// Anisotropic single-scattering phase term `(b / 4 pi)(1 + g cos phi)`.
#[inline]
pub fn phase_function(phi: f64, medium: &Medium) -> f64 {
    phase_from_cos(phi.cos(), medium)
}

#[inline]
pub(crate) fn phase_from_cos(cos_phi: f64, medium: &Medium) -> f64 {
    medium.b / (4.0 * PI) * (1.0 + medium.g * cos_phi)
}

/// Attenuated illumination vector at `point`: it points toward the source and
/// its length is `I exp(-c(|PS| + |OP|)) / |PS|^2`. Zero outside the beam.
pub fn incident_light_vector(
    point: &Vec3,
    source: &LightSource,
    sensor: &SensorModel,
    medium: &Medium,
) -> Vec3 {
    if !source.illuminates(point) {
        return Vec3::zeros();
    }
    let to_source = source.position - point;
    let dist_ps = to_source.norm();
    if dist_ps == 0.0 {
        return Vec3::zeros();
    }
    let dist_op = (point - sensor.origin()).norm();
    let magnitude =
        source.intensity * (-medium.c * (dist_ps + dist_op)).exp() / (dist_ps * dist_ps);
    to_source * (magnitude / dist_ps)
}

/// Lambertian scene-reflected term with two-way attenuation. Back-facing
/// patches (negative cosine) and points outside the beam receive nothing.
pub fn direct_component(
    patch: &SurfacePatch,
    source: &LightSource,
    sensor: &SensorModel,
    medium: &Medium,
) -> f64 {
    incident_light_vector(&patch.point, source, sensor, medium)
        .dot(&patch.normal)
        .max(0.0)
}
