//! Distant-lighting photometric stereo with and without backscatter removal.
//!
//! Every pixel solves `D_k = l_k · n` in the least-squares sense for the
//! non-unit normal `n` (`|n|` is the albedo). The lighting vectors `l_k` are
//! taken as constant over the sensor.

use nalgebra::{DMatrix, Matrix3};

use crate::estimator::{estimate_backscatter_map, BackscatterEstimate, EstimationMethod};
use crate::image::{NormalMap, RadianceImage};
use crate::optics::{incident_light_vector, Medium, SensorModel};
use crate::scene::LightRig;
use crate::{par, Error, Result, Vec3};

/// Pixels whose every input is at or below this fraction of full scale are
/// left unsolved.
pub const DARK_FRACTION: f64 = 0.01;

/// Per-source illumination vectors and the precomputed normal-equation
/// inverse `(LᵀL)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightingCalibration {
    vectors: Vec<Vec3>,
    gram_inv: Matrix3<f64>,
}

fn rank_checked_gram(rows: &[Vec3], what: &str) -> Result<Matrix3<f64>> {
    if rows.len() < 3 {
        return Err(Error::UnsolvableRig(format!(
            "{what}: {} equations for 3 unknowns",
            rows.len()
        )));
    }
    let m = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
    let s = m.singular_values();
    let (smax, smin) = (s.max(), s.min());
    if !(smax > 0.0) || smin < 1e-9 * smax {
        return Err(Error::UnsolvableRig(format!(
            "{what}: lighting matrix has rank < 3"
        )));
    }
    let gram: Matrix3<f64> = rows.iter().map(|l| l * l.transpose()).sum();
    gram.try_inverse()
        .ok_or_else(|| Error::UnsolvableRig(format!("{what}: singular normal equations")))
}

impl LightingCalibration {
    pub fn from_vectors(vectors: Vec<Vec3>) -> Result<Self> {
        let gram_inv = rank_checked_gram(&vectors, "lighting")?;
        Ok(Self { vectors, gram_inv })
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn solve(&self, d: &[f64]) -> Vec3 {
        let rhs: Vec3 = self.vectors.iter().zip(d).map(|(l, &x)| l * x).sum();
        self.gram_inv * rhs
    }
}

/// Lighting vectors seen by the on-axis point at `reference_depth`.
pub fn calibrate_lighting(
    rig: &LightRig,
    sensor: &SensorModel,
    medium: &Medium,
    reference_depth: f64,
) -> Result<LightingCalibration> {
    if !(reference_depth > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference depth {reference_depth} must be > 0"
        )));
    }
    medium.validate()?;
    let point = sensor.origin() + Vec3::new(0.0, 0.0, reference_depth);
    let vectors = rig
        .sources()
        .iter()
        .map(|s| incident_light_vector(&point, s, sensor, medium))
        .collect();
    LightingCalibration::from_vectors(vectors)
}

fn check_stack(images: &[RadianceImage], expected: usize) -> Result<(usize, usize)> {
    if images.len() != expected {
        return Err(Error::InvalidParameter(format!(
            "{} images for {expected} lighting vectors",
            images.len()
        )));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty image stack".into()))?;
    for img in images {
        first.check_same_dims(img)?;
    }
    Ok(first.dims())
}

/// Per-pixel least-squares normals. Pixels where every input is at or below
/// `dark_threshold` are marked invalid.
pub fn solve_normals(
    images: &[RadianceImage],
    calib: &LightingCalibration,
    dark_threshold: f64,
) -> Result<NormalMap> {
    let (w, h) = check_stack(images, calib.len())?;
    let solved = par::map_indexed(w * h, |i| {
        let d: Vec<f64> = images.iter().map(|img| img.data()[i]).collect();
        if d.iter().all(|&x| x <= dark_threshold) {
            (Vec3::zeros(), false)
        } else {
            (calib.solve(&d), true)
        }
    });
    let (normals, valid) = solved.into_iter().unzip();
    NormalMap::new(w, h, normals, valid)
}

/// Normals from the proposed pipeline, plus the backscatter it removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedResult {
    pub normals: NormalMap,
    pub backscatter: BackscatterEstimate,
}

/// Estimates backscatter per source, subtracts it (clamping at zero) and
/// solves on what remains. `images` are in radiance units.
pub fn ps_proposed(
    images: &[RadianceImage],
    full_scale: f64,
    calib: &LightingCalibration,
    method: &EstimationMethod<'_>,
) -> Result<ProposedResult> {
    check_stack(images, calib.len())?;
    let backscatter = estimate_backscatter_map(images, method)?;
    let direct = images
        .iter()
        .zip(&backscatter.maps)
        .map(|(e, b)| e.zip_map(b, |e, b| (e - b).max(0.0)))
        .collect::<Result<Vec<_>>>()?;
    let normals = solve_normals(&direct, calib, DARK_FRACTION * full_scale)?;
    Ok(ProposedResult {
        normals,
        backscatter,
    })
}

/// Treats the captures as pure direct light.
pub fn ps_no_backscatter(
    images: &[RadianceImage],
    full_scale: f64,
    calib: &LightingCalibration,
) -> Result<NormalMap> {
    solve_normals(images, calib, DARK_FRACTION * full_scale)
}

/// Solves on consecutive differences `E_k - E_{k+1}` with lighting
/// `l_k - l_{k+1}`, which cancels backscatter only if it is the same for
/// every source.
///
/// For a rig that is symmetric about the optical axis the differences span
/// only a plane: the component of `n` along the shared lighting direction is
/// invisible to them. That component is then fitted to the raw captures,
/// after the in-plane part has been fixed by the differences.
pub fn ps_pairwise_difference(
    images: &[RadianceImage],
    full_scale: f64,
    calib: &LightingCalibration,
) -> Result<NormalMap> {
    let (w, h) = check_stack(images, calib.len())?;
    if calib.len() < 4 {
        return Err(Error::UnsolvableRig(format!(
            "pairwise differencing needs at least 4 sources, got {}",
            calib.len()
        )));
    }
    let solver = DifferenceSolver::new(calib)?;
    let threshold = DARK_FRACTION * full_scale;
    let solved = par::map_indexed(w * h, |i| {
        let e: Vec<f64> = images.iter().map(|img| img.data()[i]).collect();
        if e.iter().all(|&x| x <= threshold) {
            (Vec3::zeros(), false)
        } else {
            (solver.solve(&e), true)
        }
    });
    let (normals, valid) = solved.into_iter().unzip();
    NormalMap::new(w, h, normals, valid)
}

struct DifferenceSolver<'a> {
    calib: &'a LightingCalibration,
    diffs: Vec<Vec3>,
    /// Pseudo-inverse of the difference matrix, `3 x (K-1)`.
    pinv: DMatrix<f64>,
    /// Unit direction the differences cannot see, for rank-2 systems.
    blind: Option<Vec3>,
}

impl<'a> DifferenceSolver<'a> {
    fn new(calib: &'a LightingCalibration) -> Result<Self> {
        let diffs: Vec<Vec3> = calib.vectors.windows(2).map(|p| p[0] - p[1]).collect();
        let m = DMatrix::from_fn(diffs.len(), 3, |i, j| diffs[i][j]);
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = 1e-9 * smax;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if !(smax > 0.0) || rank < 2 {
            return Err(Error::UnsolvableRig(format!(
                "pairwise differences have rank {rank}"
            )));
        }
        let pinv = svd
            .clone()
            .pseudo_inverse(tol)
            .map_err(|e| Error::UnsolvableRig(e.to_string()))?;
        let blind = if rank == 2 {
            let v_t = svd.v_t.as_ref().expect("requested");
            let k = svd.singular_values.imin();
            let u = Vec3::new(v_t[(k, 0)], v_t[(k, 1)], v_t[(k, 2)]);
            let along: f64 = calib.vectors.iter().map(|l| l.dot(&u).powi(2)).sum();
            if !(along > tol * tol) {
                return Err(Error::UnsolvableRig(
                    "lighting has no component outside the difference plane".into(),
                ));
            }
            Some(u)
        } else {
            None
        };
        Ok(Self {
            calib,
            diffs,
            pinv,
            blind,
        })
    }

    fn solve(&self, e: &[f64]) -> Vec3 {
        debug_assert_eq!(self.diffs.len() + 1, e.len());
        let d = nalgebra::DVector::from_iterator(e.len() - 1, e.windows(2).map(|p| p[0] - p[1]));
        let x = &self.pinv * d;
        let mut n = Vec3::new(x[0], x[1], x[2]);
        if let Some(u) = self.blind {
            let (mut num, mut den) = (0.0, 0.0);
            for (l, &ek) in self.calib.vectors.iter().zip(e) {
                let lu = l.dot(&u);
                num += (ek - l.dot(&n)) * lu;
                den += lu * lu;
            }
            n += u * (num / den);
        }
        n
    }
}

/// Angle between two vectors in radians, stable near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalError {
    pub mean_deg: f64,
    pub rmse_deg: f64,
    /// Pixels the statistics were taken over.
    pub pixels: usize,
}

/// Angular error over pixels valid in both maps with non-zero normals.
pub fn normal_error(estimated: &NormalMap, truth: &NormalMap) -> Result<NormalError> {
    if estimated.dims() != truth.dims() {
        return Err(Error::DimensionMismatch {
            expected: truth.dims(),
            found: estimated.dims(),
        });
    }
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
    for i in 0..estimated.normals().len() {
        if !(estimated.valid_mask()[i] && truth.valid_mask()[i]) {
            continue;
        }
        let (a, b) = (estimated.normals()[i], truth.normals()[i]);
        if a.norm() == 0.0 || b.norm() == 0.0 {
            continue;
        }
        let deg = angle_between(&a, &b).to_degrees();
        sum += deg;
        sq += deg * deg;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(NormalError {
        mean_deg: sum / n as f64,
        rmse_deg: (sq / n as f64).sqrt(),
        pixels: n,
    })
}
