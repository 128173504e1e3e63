//! Backscatter estimation from captured images.
//!
//! Two routes are provided. The calibrated route stores, per source, an image
//! of a scene with no direct component (a black canvas or open water), which is
//! the saturated backscatter of every pixel. The automatic route picks the
//! darkest pixel in each of `N x N` blocks and fits a 2D quadratic
//! `f(u, v) = a0 + a1 u² + a2 v² + a3 uv + a4 u + a5 v` with a RANSAC variant
//! that knows two things about backscatter:
//!
//! * its maximum over the sensor lies on the border nearest the source, so
//!   hypotheses peaking inside the image are discarded;
//! * contamination is additive (`E = B + D`, `D > 0`), so a hypothesis that
//!   leaves candidates far *below* it loses one point per such candidate.
//!
//! Pixel coordinates are mapped to `[-1, 1]` before fitting.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::RadianceImage;
use crate::{par, Error, Result};

/// Quadratic backscatter model over a `width x height` sensor. Coefficients
/// are stored for normalised coordinates `x = 2u/(W-1) - 1`, `y = 2v/(H-1) - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSurface {
    pub alpha: [f64; 6],
    pub width: usize,
    pub height: usize,
}

#[inline]
fn basis(x: f64, y: f64) -> [f64; 6] {
    [1.0, x * x, y * y, x * y, x, y]
}

#[inline]
fn norm_coord(p: f64, n: usize) -> f64 {
    if n > 1 {
        2.0 * p / (n - 1) as f64 - 1.0
    } else {
        0.0
    }
}

impl QuadraticSurface {
    /// Model value at pixel `(u, v)`; may be negative.
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let b = basis(norm_coord(u, self.width), norm_coord(v, self.height));
        self.alpha.iter().zip(b).map(|(a, b)| a * b).sum()
    }

    /// Model value clamped at zero.
    #[inline]
    pub fn eval_clamped(&self, u: f64, v: f64) -> f64 {
        self.eval(u, v).max(0.0)
    }

    /// The fitted backscatter map, clamped at zero.
    pub fn to_image(&self) -> RadianceImage {
        RadianceImage::from_fn(self.width, self.height, |u, v| {
            self.eval_clamped(u as f64, v as f64)
        })
    }

    /// Coefficients for raw pixel coordinates, in the same basis order.
    pub fn pixel_coefficients(&self) -> [f64; 6] {
        let [a0, a1, a2, a3, a4, a5] = self.alpha;
        // x = sx u - 1, y = sy v - 1
        let sx = if self.width > 1 {
            2.0 / (self.width - 1) as f64
        } else {
            0.0
        };
        let sy = if self.height > 1 {
            2.0 / (self.height - 1) as f64
        } else {
            0.0
        };
        [
            a0 + a1 + a2 + a3 - a4 - a5,
            a1 * sx * sx,
            a2 * sy * sy,
            a3 * sx * sy,
            sx * (-2.0 * a1 - a3 + a4),
            sy * (-2.0 * a2 - a3 + a5),
        ]
    }

    /// Largest value over integer `u` in `[lo, hi]` on row `v`.
    fn row_max(&self, v: usize, lo: usize, hi: usize) -> f64 {
        let vf = v as f64;
        let y = norm_coord(vf, self.height);
        let a = self.alpha[1];
        let b = self.alpha[3] * y + self.alpha[4];
        let mut best = self.eval(lo as f64, vf).max(self.eval(hi as f64, vf));
        if a < 0.0 && self.width > 1 {
            let x_star = -b / (2.0 * a);
            let u_star = (x_star + 1.0) * (self.width - 1) as f64 / 2.0;
            for u in [u_star.floor(), u_star.ceil()] {
                if u >= lo as f64 && u <= hi as f64 {
                    best = best.max(self.eval(u, vf));
                }
            }
        }
        best
    }

    /// Largest value over integer `v` in `[lo, hi]` on column `u`.
    fn col_max(&self, u: usize, lo: usize, hi: usize) -> f64 {
        let uf = u as f64;
        let x = norm_coord(uf, self.width);
        let a = self.alpha[2];
        let b = self.alpha[3] * x + self.alpha[5];
        let mut best = self.eval(uf, lo as f64).max(self.eval(uf, hi as f64));
        if a < 0.0 && self.height > 1 {
            let y_star = -b / (2.0 * a);
            let v_star = (y_star + 1.0) * (self.height - 1) as f64 / 2.0;
            for v in [v_star.floor(), v_star.ceil()] {
                if v >= lo as f64 && v <= hi as f64 {
                    best = best.max(self.eval(uf, v));
                }
            }
        }
        best
    }

    /// Whether the maximum over all pixels is attained on the image border.
    /// Exact over the pixel grid: each row is a 1D quadratic, so its integer
    /// maximum is at an end or next to the vertex.
    pub fn max_on_border(&self) -> bool {
        let (w, h) = (self.width, self.height);
        if w <= 2 || h <= 2 {
            return true;
        }
        let border = self
            .row_max(0, 0, w - 1)
            .max(self.row_max(h - 1, 0, w - 1))
            .max(self.col_max(0, 0, h - 1))
            .max(self.col_max(w - 1, 0, h - 1));
        let interior = (1..h - 1)
            .map(|v| self.row_max(v, 1, w - 2))
            .fold(f64::MIN, f64::max);
        border >= interior - 1e-12 * border.abs().max(interior.abs())
    }
}

/// One block-minimum sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub u: usize,
    pub v: usize,
    pub value: f64,
}

/// Presumed backscatter-only samples, at most one per block.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub points: Vec<Candidate>,
    /// Blocks per side.
    pub block_grid: usize,
}

impl CandidateSet {
    /// Pools candidates from several frames of the same source.
    pub fn union(sets: &[CandidateSet]) -> CandidateSet {
        CandidateSet {
            points: sets.iter().flat_map(|s| s.points.iter().copied()).collect(),
            block_grid: sets.first().map_or(0, |s| s.block_grid),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Darkest pixel of each block of an `n x n` partition. Ties go to the
/// smallest `(v, u)`.
pub fn select_block_minima(image: &RadianceImage, n: usize) -> Result<CandidateSet> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 blocks per side, got {n}"
        )));
    }
    let (w, h) = image.dims();
    if w < n || h < n {
        return Err(Error::InvalidParameter(format!(
            "{w}x{h} image cannot hold {n}x{n} non-empty blocks"
        )));
    }
    let mut points = Vec::with_capacity(n * n);
    for by in 0..n {
        let (v0, v1) = (by * h / n, (by + 1) * h / n);
        for bx in 0..n {
            let (u0, u1) = (bx * w / n, (bx + 1) * w / n);
            let mut best = Candidate {
                u: u0,
                v: v0,
                value: image.get(u0, v0),
            };
            for v in v0..v1 {
                for u in u0..u1 {
                    let x = image.get(u, v);
                    if x < best.value {
                        best = Candidate { u, v, value: x };
                    }
                }
            }
            points.push(best);
        }
    }
    Ok(CandidateSet {
        points,
        block_grid: n,
    })
}

/// Least-squares quadratic through `points` on a `width x height` sensor.
/// Exactly interpolates six points in general position.
pub fn fit_quadratic(
    points: &[Candidate],
    width: usize,
    height: usize,
) -> Result<QuadraticSurface> {
    if points.len() < 6 {
        return Err(Error::Degenerate(format!(
            "need at least 6 points, got {}",
            points.len()
        )));
    }
    let rows: Vec<[f64; 6]> = points
        .iter()
        .map(|p| {
            basis(
                norm_coord(p.u as f64, width),
                norm_coord(p.v as f64, height),
            )
        })
        .collect();
    let a = DMatrix::from_fn(points.len(), 6, |i, j| rows[i][j]);
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.value));
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min < 1e-10 * s_max {
        return Err(Error::Degenerate("design matrix is rank deficient".into()));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(QuadraticSurface {
        alpha: [x[0], x[1], x[2], x[3], x[4], x[5]],
        width,
        height,
    })
}

/// Exact 6-point interpolation used inside the RANSAC loop.
fn fit_six(points: &[Candidate; 6], width: usize, height: usize) -> Option<QuadraticSurface> {
    let mut m = Matrix6::zeros();
    let mut rhs = Vector6::zeros();
    for (i, p) in points.iter().enumerate() {
        let b = basis(
            norm_coord(p.u as f64, width),
            norm_coord(p.v as f64, height),
        );
        for j in 0..6 {
            m[(i, j)] = b[j];
        }
        rhs[i] = p.value;
    }
    let lu = m.full_piv_lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..6).map(|i| u[(i, i)].abs()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(dmax > 0.0) || dmin < 1e-10 * dmax {
        return None;
    }
    let x = lu.solve(&rhs)?;
    Some(QuadraticSurface {
        alpha: [x[0], x[1], x[2], x[3], x[4], x[5]],
        width,
        height,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Residual band (radiance) counted as an inlier.
    pub inlier_tol: f64,
    pub min_inliers: usize,
    pub rng_seed: u64,
}

impl RansacConfig {
    pub const DEFAULT_ITERATIONS: usize = 2000;

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "RANSAC needs at least one iteration".into(),
            ));
        }
        if !(self.inlier_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "inlier tolerance must be > 0".into(),
            ));
        }
        if self.min_inliers < 6 {
            return Err(Error::InvalidParameter("min_inliers must be >= 6".into()));
        }
        Ok(())
    }
}

/// Points a hypothesis earns: inliers minus candidates left below the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisScore {
    pub inliers: usize,
    pub below: usize,
    pub inlier_rmse: f64,
}

impl HypothesisScore {
    pub fn value(&self) -> i64 {
        self.inliers as i64 - self.below as i64
    }
}

/// Scores `surface` against `points` with band `tol`.
pub fn score_hypothesis(
    surface: &QuadraticSurface,
    points: &[Candidate],
    tol: f64,
) -> HypothesisScore {
    let (mut inliers, mut below, mut sq) = (0usize, 0usize, 0.0);
    for p in points {
        let r = p.value - surface.eval(p.u as f64, p.v as f64);
        if r.abs() <= tol {
            inliers += 1;
            sq += r * r;
        } else if r < -tol {
            below += 1;
        }
    }
    HypothesisScore {
        inliers,
        below,
        inlier_rmse: if inliers > 0 {
            (sq / inliers as f64).sqrt()
        } else {
            f64::INFINITY
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub surface: QuadraticSurface,
    /// Per candidate: within `inlier_tol` of the final surface.
    pub inliers: Vec<bool>,
    /// Score of the winning hypothesis before refitting.
    pub score: HypothesisScore,
    /// Index of the winning hypothesis in the pre-generated sequence.
    pub hypothesis: usize,
    /// Hypotheses that passed the border-maximum constraint.
    pub accepted: usize,
}

impl RansacFit {
    pub fn outlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&x| !x).count()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The six candidate indices drawn for hypothesis `i`; a pure function of
/// `(seed, i)` so hypotheses can be evaluated in any order.
pub fn hypothesis_sample(seed: u64, i: usize, n: usize) -> [usize; 6] {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
    let idx = sample(&mut rng, n, 6);
    let mut out = [0; 6];
    for (o, k) in out.iter_mut().zip(idx.iter()) {
        *o = k;
    }
    out
}

/// Constrained RANSAC quadratic fit. `dims` is the sensor size `(W, H)`.
pub fn ransac_fit(
    candidates: &CandidateSet,
    config: &RansacConfig,
    dims: (usize, usize),
) -> Result<RansacFit> {
    config.validate()?;
    let pts = &candidates.points;
    if pts.len() < 6 {
        return Err(Error::EstimationFailed(format!(
            "{} candidates, at least 6 required",
            pts.len()
        )));
    }
    let (w, h) = dims;
    let tol = config.inlier_tol;

    struct Best {
        index: usize,
        surface: QuadraticSurface,
        score: HypothesisScore,
    }
    // higher score, then lower inlier RMSE, then earlier index
    let better = |a: &Best, b: &Best| {
        use std::cmp::Ordering::*;
        match a.score.value().cmp(&b.score.value()) {
            Greater => true,
            Less => false,
            Equal => match a.score.inlier_rmse.total_cmp(&b.score.inlier_rmse) {
                Less => true,
                Greater => false,
                Equal => a.index < b.index,
            },
        }
    };
    let evaluate = |i: usize| -> Option<Best> {
        let idx = hypothesis_sample(config.rng_seed, i, pts.len());
        let surface = fit_six(&idx.map(|k| pts[k]), w, h)?;
        if !surface.max_on_border() {
            return None;
        }
        let score = score_hypothesis(&surface, pts, tol);
        Some(Best {
            index: i,
            surface,
            score,
        })
    };
    let (best, accepted) = par::reduce_indexed(
        config.iterations,
        |i| {
            let b = evaluate(i);
            let n = b.is_some() as usize;
            (b, n)
        },
        || (None, 0),
        |(a, na), (b, nb)| {
            let pick = match (a, b) {
                (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
                (a, None) => a,
                (None, b) => b,
            };
            (pick, na + nb)
        },
    );
    let best = best.ok_or_else(|| {
        Error::EstimationFailed("no hypothesis has its maximum on the image border".into())
    })?;
    if best.score.inliers < config.min_inliers {
        return Err(Error::EstimationFailed(format!(
            "best hypothesis has {} inliers, {} required",
            best.score.inliers, config.min_inliers
        )));
    }

    let inlier_pts: Vec<Candidate> = pts
        .iter()
        .copied()
        .filter(|p| (p.value - best.surface.eval(p.u as f64, p.v as f64)).abs() <= tol)
        .collect();
    let surface = match fit_quadratic(&inlier_pts, w, h) {
        Ok(refit) if refit.max_on_border() => refit,
        _ => best.surface,
    };
    let inliers = pts
        .iter()
        .map(|p| (p.value - surface.eval(p.u as f64, p.v as f64)).abs() <= tol)
        .collect();
    Ok(RansacFit {
        surface,
        inliers,
        score: best.score,
        hypothesis: best.index,
        accepted,
    })
}

/// How repeated calibration frames are merged per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameCombine {
    #[default]
    Median,
    Mean,
}

/// Per-source backscatter lookup from captures that contain no direct light.
/// `frames[f][k]` is frame `f` of source `k`.
pub fn calibrate_from_canvas(
    frames: &[Vec<RadianceImage>],
    combine: FrameCombine,
) -> Result<Vec<RadianceImage>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParameter("no calibration frames".into()))?;
    let sources = first.len();
    if sources == 0 {
        return Err(Error::InvalidParameter(
            "calibration frame has no sources".into(),
        ));
    }
    let dims = first[0].dims();
    for frame in frames {
        if frame.len() != sources {
            return Err(Error::InvalidParameter(format!(
                "frames disagree on source count ({} vs {sources})",
                frame.len()
            )));
        }
        for img in frame {
            if img.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: img.dims(),
                });
            }
        }
    }
    (0..sources)
        .map(|k| {
            let data = par::map_indexed(dims.0 * dims.1, |i| {
                let mut xs: Vec<f64> = frames.iter().map(|f| f[k].data()[i]).collect();
                match combine {
                    FrameCombine::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
                    FrameCombine::Median => {
                        xs.sort_by(f64::total_cmp);
                        let n = xs.len();
                        if n % 2 == 1 {
                            xs[n / 2]
                        } else {
                            0.5 * (xs[n / 2 - 1] + xs[n / 2])
                        }
                    }
                }
            });
            RadianceImage::new(dims.0, dims.1, data)
        })
        .collect()
}

/// Settings of the automatic estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoEstimator {
    pub blocks: usize,
    pub iterations: usize,
    /// Explicit inlier band (radiance). Overrides `noise_std`.
    pub inlier_tol: Option<f64>,
    /// Sensor noise standard deviation in radiance, if known. The band
    /// defaults to twice this value.
    pub noise_std: Option<f64>,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for AutoEstimator {
    fn default() -> Self {
        Self {
            blocks: 8,
            iterations: RansacConfig::DEFAULT_ITERATIONS,
            inlier_tol: None,
            noise_std: None,
            min_inliers: 6,
            seed: 0,
        }
    }
}

impl AutoEstimator {
    /// Inlier band for a candidate set.
    pub fn tolerance_for(&self, candidates: &CandidateSet) -> f64 {
        if let Some(t) = self.inlier_tol {
            return t;
        }
        if let Some(s) = self.noise_std.filter(|s| *s > 0.0) {
            return 2.0 * s;
        }
        let (lo, hi) = candidates
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.value), hi.max(p.value))
            });
        let range = hi - lo;
        if range > 0.0 {
            0.01 * range
        } else {
            (1e-9 * hi.abs()).max(f64::MIN_POSITIVE)
        }
    }

    /// RANSAC settings for source `k`; each source draws its own hypotheses.
    pub fn ransac_config(&self, candidates: &CandidateSet, source: usize) -> RansacConfig {
        RansacConfig {
            iterations: self.iterations,
            inlier_tol: self.tolerance_for(candidates),
            min_inliers: self.min_inliers,
            rng_seed: mix(self.seed, source as u64 + 1),
        }
    }

    /// Fits one image (or several frames of the same source pooled together).
    pub fn fit(&self, frames: &[&RadianceImage], source: usize) -> Result<RansacFit> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidParameter("no image to fit".into()))?;
        let sets = frames
            .iter()
            .map(|img| {
                first.check_same_dims(img)?;
                select_block_minima(img, self.blocks)
            })
            .collect::<Result<Vec<_>>>()?;
        let candidates = CandidateSet::union(&sets);
        let config = self.ransac_config(&candidates, source);
        ransac_fit(&candidates, &config, first.dims())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimationMethod<'a> {
    /// Per-source lookup from [`calibrate_from_canvas`].
    Calibrated(&'a [RadianceImage]),
    Automatic(AutoEstimator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackscatterEstimate {
    pub maps: Vec<RadianceImage>,
    /// Automatic method only: the fit behind each map.
    pub fits: Vec<Option<RansacFit>>,
}

/// Full-sensor backscatter estimate for every source image.
pub fn estimate_backscatter_map(
    images: &[RadianceImage],
    method: &EstimationMethod<'_>,
) -> Result<BackscatterEstimate> {
    match method {
        EstimationMethod::Calibrated(lookup) => {
            if lookup.len() != images.len() {
                return Err(Error::InvalidParameter(format!(
                    "lookup has {} sources, stack has {}",
                    lookup.len(),
                    images.len()
                )));
            }
            for (l, img) in lookup.iter().zip(images) {
                img.check_same_dims(l)?;
            }
            Ok(BackscatterEstimate {
                maps: lookup.to_vec(),
                fits: vec![None; images.len()],
            })
        }
        EstimationMethod::Automatic(auto) => {
            let mut maps = Vec::with_capacity(images.len());
            let mut fits = Vec::with_capacity(images.len());
            for (k, img) in images.iter().enumerate() {
                let fit = auto.fit(&[img], k)?;
                maps.push(fit.surface.to_image());
                fits.push(Some(fit));
            }
            Ok(BackscatterEstimate { maps, fits })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn surface(alpha: [f64; 6]) -> QuadraticSurface {
        QuadraticSurface {
            alpha,
            width: 64,
            height: 48,
        }
    }

    #[test]
    fn constant_image_minima() {
        let img = RadianceImage::filled(32, 32, 3.5);
        let c = select_block_minima(&img, 4).unwrap();
        assert_eq!(c.len(), 16);
        assert!(c.points.iter().all(|p| p.value == 3.5));
        // ties resolve to each block's first pixel in (v, u) order
        assert_eq!((c.points[5].u, c.points[5].v), (8, 8));
    }

    #[test]
    fn block_minima_rejects_bad_grids() {
        let img = RadianceImage::filled(5, 5, 1.0);
        assert!(select_block_minima(&img, 2).is_err());
        assert!(select_block_minima(&img, 6).is_err());
        assert_eq!(select_block_minima(&img, 5).unwrap().len(), 25);
    }

    #[test]
    fn block_minima_pick_darkest() {
        let img = RadianceImage::from_fn(30, 30, |u, v| ((u * 7 + v * 13) % 17) as f64 + 1.0);
        let c = select_block_minima(&img, 3).unwrap();
        for p in &c.points {
            let bx = p.u / 10;
            let by = p.v / 10;
            for v in by * 10..by * 10 + 10 {
                for u in bx * 10..bx * 10 + 10 {
                    assert!(img.get(u, v) >= p.value);
                }
            }
        }
    }

    #[test]
    fn six_points_interpolate_exactly() {
        let truth = surface([2.0, -0.3, 0.5, 0.25, 1.0, -0.7]);
        let pts: Vec<Candidate> = [(0, 0), (63, 5), (10, 47), (40, 30), (20, 12), (55, 40)]
            .iter()
            .map(|&(u, v)| Candidate {
                u,
                v,
                value: truth.eval(u as f64, v as f64),
            })
            .collect();
        let fit = fit_quadratic(&pts, 64, 48).unwrap();
        for (a, b) in fit.alpha.iter().zip(truth.alpha) {
            assert_relative_eq!(*a, b, max_relative = 1e-9);
        }
        let six: [Candidate; 6] = pts.clone().try_into().unwrap();
        let fast = fit_six(&six, 64, 48).unwrap();
        for (a, b) in fast.alpha.iter().zip(truth.alpha) {
            assert_relative_eq!(*a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn constant_data_fits_constant() {
        let pts: Vec<Candidate> = (0..20)
            .map(|i| Candidate {
                u: (i * 7) % 64,
                v: (i * 11) % 48,
                value: 4.25,
            })
            .collect();
        let fit = fit_quadratic(&pts, 64, 48).unwrap();
        assert_relative_eq!(fit.alpha[0], 4.25, max_relative = 1e-9);
        for a in &fit.alpha[1..] {
            assert!(a.abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Candidate> = (0..10)
            .map(|i| Candidate {
                u: i * 3,
                v: 7,
                value: i as f64,
            })
            .collect();
        assert!(matches!(
            fit_quadratic(&pts, 64, 48),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            fit_quadratic(&pts[..5], 64, 48),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pixel_coefficients_agree_with_normalised() {
        let s = surface([1.0, -0.4, 0.3, 0.2, 0.6, -0.1]);
        let p = s.pixel_coefficients();
        for (u, v) in [(0.0, 0.0), (13.0, 40.0), (63.0, 47.0)] {
            let raw = p[0] + p[1] * u * u + p[2] * v * v + p[3] * u * v + p[4] * u + p[5] * v;
            assert_relative_eq!(raw, s.eval(u, v), max_relative = 1e-12);
        }
    }

    fn brute_border(s: &QuadraticSurface) -> bool {
        let (w, h) = (s.width, s.height);
        let mut border = f64::MIN;
        let mut interior = f64::MIN;
        for v in 0..h {
            for u in 0..w {
                let x = s.eval(u as f64, v as f64);
                if u == 0 || v == 0 || u == w - 1 || v == h - 1 {
                    border = border.max(x);
                } else {
                    interior = interior.max(x);
                }
            }
        }
        border >= interior - 1e-12 * border.abs().max(interior.abs())
    }

    #[test]
    fn border_constraint_examples() {
        // dome centred in the image
        assert!(!surface([1.0, -1.0, -1.0, 0.0, 0.0, 0.0]).max_on_border());
        // dome centred outside the image, to the right
        assert!(surface([1.0, -0.2, -0.2, 0.0, 1.0, 0.0]).max_on_border());
        // saddle and bowl peak on the border
        assert!(surface([0.0, 1.0, -1.0, 0.0, 0.0, 0.0]).max_on_border());
        assert!(surface([0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).max_on_border());
        // flat
        assert!(surface([2.0, 0.0, 0.0, 0.0, 0.0, 0.0]).max_on_border());
    }

    proptest! {
        #[test]
        fn border_check_matches_brute_force(a in prop::array::uniform6(-2.0f64..2.0), w in 3usize..20, h in 3usize..20) {
            let s = QuadraticSurface { alpha: a, width: w, height: h };
            prop_assert_eq!(s.max_on_border(), brute_border(&s));
        }

        #[test]
        fn fit_is_translation_equivariant(a in prop::array::uniform6(-1.0f64..1.0), shift in -5.0f64..5.0) {
            // adding a constant to the data shifts only a0
            let pts: Vec<Candidate> = (0..12)
                .map(|i| {
                    let (u, v) = ((i * 5) % 32, (i * 9 + i / 3) % 24);
                    let s = QuadraticSurface { alpha: a, width: 32, height: 24 };
                    Candidate { u, v, value: s.eval(u as f64, v as f64) + 0.01 * ((i * 37 % 11) as f64) }
                })
                .collect();
            let base = fit_quadratic(&pts, 32, 24).unwrap();
            let shifted: Vec<Candidate> = pts.iter().map(|p| Candidate { value: p.value + shift, ..*p }).collect();
            let moved = fit_quadratic(&shifted, 32, 24).unwrap();
            prop_assert!((moved.alpha[0] - base.alpha[0] - shift).abs() < 1e-8);
            for j in 1..6 {
                prop_assert!((moved.alpha[j] - base.alpha[j]).abs() < 1e-8);
            }
            // and residuals are unchanged
            for (p, q) in pts.iter().zip(&shifted) {
                let r0 = p.value - base.eval(p.u as f64, p.v as f64);
                let r1 = q.value - moved.eval(q.u as f64, q.v as f64);
                prop_assert!((r0 - r1).abs() < 1e-8);
            }
        }
    }

    fn grid_candidates(s: &QuadraticSurface, n: usize) -> CandidateSet {
        let mut points = Vec::new();
        for by in 0..n {
            for bx in 0..n {
                let u = bx * s.width / n + 2;
                let v = by * s.height / n + 1;
                points.push(Candidate {
                    u,
                    v,
                    value: s.eval(u as f64, v as f64),
                });
            }
        }
        CandidateSet {
            points,
            block_grid: n,
        }
    }

    fn config(tol: f64) -> RansacConfig {
        RansacConfig {
            iterations: 500,
            inlier_tol: tol,
            min_inliers: 6,
            rng_seed: 3,
        }
    }

    #[test]
    fn ransac_recovers_clean_border_peaked_surface() {
        let truth = surface([1.0, -0.1, -0.05, 0.02, 0.4, 0.3]);
        assert!(truth.max_on_border());
        let c = grid_candidates(&truth, 6);
        let fit = ransac_fit(&c, &config(1e-6), (64, 48)).unwrap();
        assert!(fit.inliers.iter().all(|&x| x));
        for (a, b) in fit.surface.alpha.iter().zip(truth.alpha) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ransac_rejects_additive_outliers() {
        let truth = surface([1.0, -0.1, -0.05, 0.02, 0.4, 0.3]);
        let mut c = grid_candidates(&truth, 8);
        // a bright object in the middle adds direct light to 16 candidates
        for p in c.points.iter_mut() {
            if (20..44).contains(&p.u) && (12..36).contains(&p.v) {
                p.value += 0.3 + 0.01 * p.u as f64;
            }
        }
        let fit = ransac_fit(
            &c,
            &RansacConfig {
                iterations: 3000,
                ..config(1e-4)
            },
            (64, 48),
        )
        .unwrap();
        for (p, &inl) in c.points.iter().zip(&fit.inliers) {
            let on_object = (20..44).contains(&p.u) && (12..36).contains(&p.v);
            assert_eq!(inl, !on_object);
        }
        for (a, b) in fit.surface.alpha.iter().zip(truth.alpha) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn below_penalty_is_counted_exactly() {
        let truth = surface([1.0, -0.1, -0.05, 0.02, 0.4, 0.3]);
        let c = grid_candidates(&truth, 6);
        let tol = 1e-3;
        let clean = score_hypothesis(&truth, &c.points, tol);
        assert_eq!(clean.value(), 36);
        let mut dirty = c.clone();
        for p in dirty.points.iter_mut().take(5) {
            p.value -= 5.0 * tol;
        }
        let s = score_hypothesis(&truth, &dirty.points, tol);
        assert_eq!(s.below, 5);
        assert_eq!(s.inliers, 31);
        // each sunken candidate stops being an inlier and costs one more point
        assert_eq!(clean.value() - s.value(), 10);
    }

    #[test]
    fn ransac_fails_without_border_maximum() {
        let dome = surface([1.0, -1.0, -1.0, 0.0, 0.0, 0.0]);
        let c = grid_candidates(&dome, 6);
        let r = ransac_fit(&c, &config(1e-6), (64, 48));
        match r {
            // every exact dome fit violates the constraint; whatever wins must not be the dome
            Ok(fit) => assert!(fit.surface.max_on_border()),
            Err(e) => assert!(matches!(e, Error::EstimationFailed(_))),
        }
    }

    #[test]
    fn ransac_is_deterministic() {
        let truth = surface([1.0, -0.1, -0.05, 0.02, 0.4, 0.3]);
        let mut c = grid_candidates(&truth, 8);
        for (i, p) in c.points.iter_mut().enumerate() {
            if i % 3 == 0 {
                p.value += 0.2;
            }
        }
        let a = ransac_fit(&c, &config(1e-4), (64, 48)).unwrap();
        let b = ransac_fit(&c, &config(1e-4), (64, 48)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ransac_validates_config() {
        let c = grid_candidates(&surface([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 3);
        assert!(ransac_fit(
            &c,
            &RansacConfig {
                min_inliers: 5,
                ..config(1.0)
            },
            (64, 48)
        )
        .is_err());
        assert!(ransac_fit(
            &c,
            &RansacConfig {
                iterations: 0,
                ..config(1.0)
            },
            (64, 48)
        )
        .is_err());
        let few = CandidateSet {
            points: c.points[..5].to_vec(),
            block_grid: 3,
        };
        assert!(matches!(
            ransac_fit(&few, &config(1.0), (64, 48)),
            Err(Error::EstimationFailed(_))
        ));
    }

    #[test]
    fn calibration_median_and_mean() {
        let frames: Vec<Vec<RadianceImage>> = [1.0, 5.0, 2.0]
            .iter()
            .map(|&x| {
                vec![
                    RadianceImage::filled(4, 4, x),
                    RadianceImage::filled(4, 4, 2.0 * x),
                ]
            })
            .collect();
        let med = calibrate_from_canvas(&frames, FrameCombine::Median).unwrap();
        assert_eq!(med[0].get(1, 1), 2.0);
        assert_eq!(med[1].get(3, 2), 4.0);
        let mean = calibrate_from_canvas(&frames, FrameCombine::Mean).unwrap();
        assert_relative_eq!(mean[0].get(0, 0), 8.0 / 3.0);
        let mut bad = frames.clone();
        bad[1][0] = RadianceImage::filled(3, 4, 1.0);
        assert!(matches!(
            calibrate_from_canvas(&bad, FrameCombine::Median),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_tolerance_rules() {
        let c = CandidateSet {
            points: vec![
                Candidate {
                    u: 0,
                    v: 0,
                    value: 1.0,
                },
                Candidate {
                    u: 1,
                    v: 0,
                    value: 3.0,
                },
            ],
            block_grid: 3,
        };
        let auto = AutoEstimator::default();
        assert_relative_eq!(auto.tolerance_for(&c), 0.02);
        let noisy = AutoEstimator {
            noise_std: Some(0.5),
            ..auto
        };
        assert_relative_eq!(noisy.tolerance_for(&c), 1.0);
        let fixed = AutoEstimator {
            inlier_tol: Some(0.1),
            ..noisy
        };
        assert_relative_eq!(fixed.tolerance_for(&c), 0.1);
    }
}
