//! Height from normals (Frankot–Chellappa) and single-image restoration.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::image::{HeightMap, NormalMap, RadianceImage};
use crate::{par, Error, Result};

/// Smallest `|n_z| / |n|` accepted before a pixel counts as grazing.
pub const GRAZING_NZ: f64 = 1e-6;

/// Lower and upper percentiles mapped to black and full scale by
/// [`restore_image`].
pub const STRETCH_PERCENTILES: (f64, f64) = (0.5, 99.5);

/// Surface gradient `(p, q) = (-n_x/n_z, -n_y/n_z)` per pixel, in units of
/// height per pixel step. Invalid pixels carry zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Valid and not grazing.
    pub mask: Vec<bool>,
}

impl GradientField {
    pub fn from_normals(normals: &NormalMap) -> Self {
        let (w, h) = normals.dims();
        let mut p = vec![0.0; w * h];
        let mut q = vec![0.0; w * h];
        let mut mask = vec![false; w * h];
        for i in 0..w * h {
            if !normals.valid_mask()[i] {
                continue;
            }
            let n = normals.normals()[i];
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let mut nz = n.z;
            let grazing = nz.abs() < GRAZING_NZ * len;
            if grazing {
                nz = if nz < 0.0 {
                    -GRAZING_NZ * len
                } else {
                    GRAZING_NZ * len
                };
            }
            p[i] = -n.x / nz;
            q[i] = -n.y / nz;
            mask[i] = !grazing;
        }
        Self {
            width: w,
            height: h,
            p,
            q,
            mask,
        }
    }

    /// Multiplies both components by `k`, for example a pixel footprint in metres.
    pub fn scaled(mut self, k: f64) -> Self {
        self.p.iter_mut().for_each(|x| *x *= k);
        self.q.iter_mut().for_each(|x| *x *= k);
        self
    }
}

fn frequencies(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if 2 * k == n {
                0.0
            } else if 2 * k < n {
                2.0 * std::f64::consts::PI * k as f64 / n as f64
            } else {
                -2.0 * std::f64::consts::PI * (n - k) as f64 / n as f64
            }
        })
        .collect()
}

fn fft_2d(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::default(); h];
    for u in 0..w {
        for v in 0..h {
            column[v] = data[v * w + u];
        }
        col.process(&mut column);
        for v in 0..h {
            data[v * w + u] = column[v];
        }
    }
}

fn mirror_pad(src: &[f64], w: usize, h: usize, flip_u: bool, flip_v: bool) -> Vec<Complex64> {
    let (pw, ph) = (2 * w, 2 * h);
    let mut out = vec![Complex64::default(); pw * ph];
    for v in 0..ph {
        let (sv, fv) = if v < h {
            (v, 1.0)
        } else {
            (2 * h - 1 - v, if flip_v { -1.0 } else { 1.0 })
        };
        for u in 0..pw {
            let (su, fu) = if u < w {
                (u, 1.0)
            } else {
                (2 * w - 1 - u, if flip_u { -1.0 } else { 1.0 })
            };
            out[v * pw + u] = Complex64::new(fu * fv * src[sv * w + su], 0.0);
        }
    }
    fft_2d(&mut out, pw, ph, false);
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least-squares integrable height for a gradient field.
///
/// The mean gradient is integrated exactly as a plane. The rest is
/// mirror-padded to twice the size and projected in the Fourier domain.
pub fn integrate_gradients(field: &GradientField) -> HeightMap {
    let (w, h) = (field.width, field.height);
    let (pw, ph) = (2 * w, 2 * h);
    let wu = frequencies(pw);
    let wv = frequencies(ph);
    let (mean_p, mean_q) = (mean(&field.p), mean(&field.q));
    let p: Vec<f64> = field.p.iter().map(|x| x - mean_p).collect();
    let q: Vec<f64> = field.q.iter().map(|x| x - mean_q).collect();
    let gp = mirror_pad(&p, w, h, true, false);
    let gq = mirror_pad(&q, w, h, false, true);

    let mut z = par::map_indexed(pw * ph, |i| {
        let (a, b) = (wu[i % pw], wv[i / pw]);
        let d = a * a + b * b;
        if d == 0.0 {
            Complex64::default()
        } else {
            // Z = (-j a P - j b Q) / (a² + b²)
            Complex64::new(0.0, -1.0) * (gp[i] * a + gq[i] * b) / d
        }
    });
    fft_2d(&mut z, pw, ph, true);
    let norm = (pw * ph) as f64;
    let mut heights: Vec<f64> = (0..w * h)
        .map(|i| {
            let (u, v) = (i % w, i / w);
            z[v * pw + u].re / norm + mean_p * u as f64 + mean_q * v as f64
        })
        .collect();
    let offset = mean(&heights);
    heights.iter_mut().for_each(|x| *x -= offset);
    HeightMap {
        width: w,
        height: h,
        heights,
        mask: field.mask.clone(),
    }
}

/// Spectral derivatives of a mirror-padded grid, cropped to the original size.
fn spectral_gradient(src: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let (pw, ph) = (2 * w, 2 * h);
    let wu = frequencies(pw);
    let wv = frequencies(ph);
    let spec = mirror_pad(src, w, h, false, false);
    let j = Complex64::new(0.0, 1.0);
    let mut dp: Vec<Complex64> = spec
        .iter()
        .enumerate()
        .map(|(i, &z)| j * wu[i % pw] * z)
        .collect();
    let mut dq: Vec<Complex64> = spec
        .iter()
        .enumerate()
        .map(|(i, &z)| j * wv[i / pw] * z)
        .collect();
    fft_2d(&mut dp, pw, ph, true);
    fft_2d(&mut dq, pw, ph, true);
    let norm = (pw * ph) as f64;
    let crop = |d: &[Complex64]| {
        (0..w * h)
            .map(|i| d[(i / w) * pw + i % w].re / norm)
            .collect()
    };
    (crop(&dp), crop(&dq))
}

/// The gradient operator [`integrate_gradients`] inverts: the height's best
/// plane contributes its exact slope, the remainder is differentiated
/// spectrally under mirror boundaries.
pub fn height_gradients(height: &HeightMap) -> GradientField {
    let (w, h) = (height.width, height.height);
    let (dp, dq) = spectral_gradient(&height.heights, w, h);
    let ramp_u: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
    let ramp_v: Vec<f64> = (0..w * h).map(|i| (i / w) as f64).collect();
    let (du, _) = spectral_gradient(&ramp_u, w, h);
    let (_, dv) = spectral_gradient(&ramp_v, w, h);
    // slopes that leave the spectral remainder with zero mean
    let a = if w > 1 { mean(&dp) / mean(&du) } else { 0.0 };
    let b = if h > 1 { mean(&dq) / mean(&dv) } else { 0.0 };
    GradientField {
        width: w,
        height: h,
        p: dp.iter().zip(&du).map(|(x, r)| x - a * r + a).collect(),
        q: dq.iter().zip(&dv).map(|(x, r)| x - b * r + b).collect(),
        mask: height.mask.clone(),
    }
}

/// Height in pixel-step units from a normal map.
pub fn integrate_normals(normals: &NormalMap) -> HeightMap {
    integrate_gradients(&GradientField::from_normals(normals))
}

/// Height in metres, given the lateral size of one pixel at the object.
pub fn integrate_normals_scaled(normals: &NormalMap, pixel_footprint: f64) -> HeightMap {
    integrate_gradients(&GradientField::from_normals(normals).scaled(pixel_footprint))
}

/// Linear-interpolated percentile of unsorted data, `pct` in `[0, 100]`.
pub fn percentile(data: &[f64], pct: f64) -> f64 {
    let mut xs = data.to_vec();
    xs.sort_by(f64::total_cmp);
    percentile_sorted(&xs, pct)
}

fn percentile_sorted(xs: &[f64], pct: f64) -> f64 {
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

/// Subtracts the backscatter estimate, clamps at zero and stretches the
/// residual so its 0.5th and 99.5th percentiles land on 0 and `full_scale`.
pub fn restore_image(
    image: &RadianceImage,
    backscatter: &RadianceImage,
    full_scale: f64,
) -> Result<RadianceImage> {
    if !(full_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "full scale {full_scale} must be > 0"
        )));
    }
    let residual = image.zip_map(backscatter, |e, b| (e - b).max(0.0))?;
    let mut sorted = residual.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, STRETCH_PERCENTILES.0);
    let hi = percentile_sorted(&sorted, STRETCH_PERCENTILES.1);
    if !(hi > lo) {
        return Err(Error::ZeroDynamicRange);
    }
    let k = full_scale / (hi - lo);
    Ok(residual.map(|x| ((x - lo) * k).clamp(0.0, full_scale)))
}
