//! Row-major single-channel grids plus the normal and height maps built on them.

use crate::{Error, Result, Vec3};

/// Per-pixel linear radiance, row-major with `index = v * width + u`.
///
/// Also used for depth maps (metres, `f64::INFINITY` for background) and for
/// backscatter and direct layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RadianceImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image must be at least 1x1".into()));
        }
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Pixelwise `f(self, other)`; errors when the grids differ in size.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// Largest finite sample, or `None` if there is none.
    pub fn max_finite(&self) -> Option<f64> {
        self.data
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(None, |acc, x| Some(acc.map_or(x, |m: f64| m.max(x))))
    }

    /// Mirror about the vertical centre line (`u -> width - 1 - u`).
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |u, v| {
            self.get(self.width - 1 - u, v)
        })
    }

    /// Mirror about the horizontal centre line (`v -> height - 1 - v`).
    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |u, v| {
            self.get(u, self.height - 1 - v)
        })
    }

    /// Population standard deviation of all samples.
    pub fn std_dev(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        (self.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// Per-pixel non-unit normals. The vector length is the albedo; pixels that
/// could not be solved carry `valid = false` and are never silently zeroed
/// into the statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Vec3>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, normals: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if normals.len() != width * height || valid.len() != width * height {
            return Err(Error::InvalidParameter(
                "normal map buffers do not match dimensions".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            normals,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normals: vec![Vec3::zeros(); width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn normal(&self, u: usize, v: usize) -> Vec3 {
        self.normals[v * self.width + u]
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn set(&mut self, u: usize, v: usize, n: Vec3, valid: bool) {
        let i = v * self.width + u;
        self.normals[i] = n;
        self.valid[i] = valid;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Albedo image (`|n|`, zero on invalid pixels).
    pub fn albedo(&self) -> RadianceImage {
        let data = self
            .normals
            .iter()
            .zip(&self.valid)
            .map(|(n, &ok)| if ok { n.norm() } else { 0.0 })
            .collect();
        RadianceImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Restricts validity to `mask` (logical and).
    pub fn restrict(&self, mask: &[bool]) -> Self {
        let mut out = self.clone();
        for (v, &m) in out.valid.iter_mut().zip(mask) {
            *v &= m;
        }
        out
    }
}

/// Height field up to an additive constant, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub width: usize,
    pub height: usize,
    pub heights: Vec<f64>,
    pub mask: Vec<bool>,
}

impl HeightMap {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.heights[v * self.width + u]
    }

    pub fn as_image(&self) -> RadianceImage {
        RadianceImage {
            width: self.width,
            height: self.height,
            data: self.heights.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(RadianceImage::new(3, 2, vec![0.0; 5]).is_err());
        assert!(RadianceImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn flips_are_involutions() {
        let img = RadianceImage::from_fn(5, 3, |u, v| (u * 10 + v) as f64);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().get(0, 0), img.get(0, 2));
    }

    #[test]
    fn zip_map_checks_dims() {
        let a = RadianceImage::filled(4, 4, 1.0);
        let b = RadianceImage::filled(4, 3, 1.0);
        assert!(matches!(
            a.zip_map(&b, |x, y| x - y),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
