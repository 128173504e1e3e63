//! Batch commands behind the `murk` binary: simulate, saturation curves,
//! reconstruction sweeps, reconstruction from files and restoration.
//!
//! Stack directory layout written by [`write_simulation`]:
//!
//! ```text
//! stack.txt                     sidecar: config, exposure, lighting
//! frame{f}_source{k}.pgm        captures (16-bit codes)
//! truth_backscatter_{k}.pfm     noiseless B_k at the scene depth
//! truth_direct_{k}.pfm          noiseless D_k
//! backscatter_inf_{k}.pfm       B_k(∞), the saturated backscatter
//! truth_depth.pfm               ray depth, +inf on background
//! truth_normals.pfm             3-channel normals, NaN on background
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::backscatter::{backscatter_image, BackscatterCurve};
use crate::config::ExperimentConfig;
use crate::estimator::{calibrate_from_canvas, AutoEstimator, EstimationMethod};
use crate::image::{NormalMap, RadianceImage};
use crate::io::{read_pfm, read_pfm_image, read_pgm, write_pfm, write_pfm_image, write_pgm, Pfm};
use crate::optics::{direct_component, SurfacePatch};
use crate::photometric::{
    calibrate_lighting, normal_error, ps_no_backscatter, ps_pairwise_difference, ps_proposed,
    LightingCalibration, NormalError,
};
use crate::scene::{render_stack_with, RenderedStack, SimulationSetup};
use crate::surface::{integrate_normals_scaled, restore_image};
use crate::{par, Error, Result, Vec3};

pub const SIDECAR: &str = "stack.txt";

/// Process exit status for an error: 2 bad config, 3 estimation failure,
/// 4 file trouble.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::Domain(_)
        | Error::NonConvergence { .. }
        | Error::TailNotNegligible { .. } => 2,
        Error::EstimationFailed(_)
        | Error::UnsolvableRig(_)
        | Error::EmptyMask
        | Error::ZeroDynamicRange
        | Error::Degenerate(_) => 3,
        Error::Io { .. } | Error::Format { .. } | Error::DimensionMismatch { .. } => 4,
    }
}

fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed of frame `f`; frame 0 uses the config seed itself.
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    if frame == 0 {
        seed
    } else {
        mix(seed, frame as u64)
    }
}

/// Lighting vectors for distant-lighting photometric stereo, calibrated at
/// the scene's mean depth.
pub fn lighting_for(setup: &SimulationSetup) -> Result<LightingCalibration> {
    calibrate_lighting(
        &setup.rig,
        &setup.sensor,
        &setup.medium,
        setup.scene.mean_depth(),
    )
}

/// `B_k(∞)` for every source over the whole sensor.
pub fn backscatter_infinity_maps(setup: &SimulationSetup) -> Result<Vec<RadianceImage>> {
    let far = RadianceImage::filled(setup.sensor.width, setup.sensor.height, f64::INFINITY);
    setup
        .rig
        .sources()
        .iter()
        .map(|s| backscatter_image(&setup.sensor, s, &setup.medium, &far, &setup.quad))
        .collect()
}

/// Rounds through `f32`, matching what a PFM round trip stores.
pub fn as_stored(image: &RadianceImage) -> RadianceImage {
    image.map(|x| x as f32 as f64)
}

fn stored_normals(normals: &NormalMap) -> Result<NormalMap> {
    Pfm::from_normals(normals).to_normals()
}

/// Metadata stored next to a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub full_scale: f64,
    pub max_code: f64,
    pub sources: usize,
    pub frames: usize,
    pub lights: Vec<Vec3>,
}

impl Sidecar {
    pub fn to_text(&self) -> String {
        let mut s = self.config.canonical_text();
        let fmt = |x: f64| format!("{x:?}");
        s.push_str(&format!("stack.config_hash = {:?}\n", self.config_hash));
        s.push_str(&format!("stack.frames = {}\n", self.frames));
        s.push_str(&format!("stack.full_scale = {}\n", fmt(self.full_scale)));
        let lights: Vec<String> = self
            .lights
            .iter()
            .map(|l| format!("[{}, {}, {}]", fmt(l.x), fmt(l.y), fmt(l.z)))
            .collect();
        s.push_str(&format!("stack.lights = [{}]\n", lights.join(", ")));
        s.push_str(&format!("stack.max_code = {}\n", fmt(self.max_code)));
        s.push_str(&format!("stack.sources = {}\n", self.sources));
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::format(path, e.to_string()))?;
        let bad = |why: &str| Error::format(path, why);
        let stack = match table.remove("stack") {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(bad("missing stack.* entries")),
        };
        let body = toml::to_string(&table).map_err(|e| bad(&e.to_string()))?;
        let config = ExperimentConfig::parse(&body)?;
        let num = |k: &str| -> Result<f64> {
            match stack.get(k) {
                Some(toml::Value::Float(x)) => Ok(*x),
                Some(toml::Value::Integer(i)) => Ok(*i as f64),
                _ => Err(bad(&format!("missing stack.{k}"))),
            }
        };
        let lights = match stack.get("lights") {
            Some(toml::Value::Array(rows)) => rows
                .iter()
                .map(|r| match r {
                    toml::Value::Array(xyz) if xyz.len() == 3 => {
                        let c: Vec<f64> = xyz
                            .iter()
                            .filter_map(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
                            .collect();
                        (c.len() == 3)
                            .then(|| Vec3::new(c[0], c[1], c[2]))
                            .ok_or_else(|| bad("bad light vector"))
                    }
                    _ => Err(bad("bad light vector")),
                })
                .collect::<Result<Vec<_>>>()?,
            _ => return Err(bad("missing stack.lights")),
        };
        let config_hash = stack
            .get("config_hash")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("missing stack.config_hash"))?
            .to_owned();
        Ok(Self {
            config,
            config_hash,
            full_scale: num("full_scale")?,
            max_code: num("max_code")?,
            sources: num("sources")? as usize,
            frames: num("frames")? as usize,
            lights,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn lighting(&self) -> Result<LightingCalibration> {
        LightingCalibration::from_vectors(self.lights.clone())
    }
}

/// Frames rendered for one config: one for object scenes, the configured
/// number of calibration frames for a canvas.
pub fn frame_count(cfg: &ExperimentConfig) -> usize {
    match cfg.scene {
        crate::config::SceneShape::Canvas => cfg.calibration_frames,
        _ => 1,
    }
}

/// Renders every frame of a config. All frames share the first frame's
/// exposure.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<RenderedStack>> {
    let setup = cfg.setup()?;
    let first = render_stack_with(&setup, &cfg.render_options(), cfg.seed)?;
    let mut opts = cfg.render_options();
    opts.full_scale = Some(first.full_scale);
    let mut frames = vec![first];
    for f in 1..frame_count(cfg) {
        frames.push(render_stack_with(&setup, &opts, frame_seed(cfg.seed, f))?);
    }
    Ok(frames)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Renders and writes a stack directory; returns its sidecar.
pub fn write_simulation(cfg: &ExperimentConfig, dir: &Path) -> Result<Sidecar> {
    let setup = cfg.setup()?;
    let frames = simulate(cfg)?;
    let calib = lighting_for(&setup)?;
    let b_inf = backscatter_infinity_maps(&setup)?;
    ensure_dir(dir)?;
    let first = &frames[0];
    let maxval = first.max_code as u16;
    for (f, stack) in frames.iter().enumerate() {
        for (k, img) in stack.images.iter().enumerate() {
            write_pgm(&dir.join(format!("frame{f}_source{k}.pgm")), img, maxval)?;
        }
    }
    for k in 0..first.source_count() {
        write_pfm_image(
            &dir.join(format!("truth_backscatter_{k}.pfm")),
            &first.truth_backscatter[k],
        )?;
        write_pfm_image(
            &dir.join(format!("truth_direct_{k}.pfm")),
            &first.truth_direct[k],
        )?;
        write_pfm_image(&dir.join(format!("backscatter_inf_{k}.pfm")), &b_inf[k])?;
    }
    write_pfm_image(&dir.join("truth_depth.pfm"), &first.truth_depth)?;
    write_pfm(
        &dir.join("truth_normals.pfm"),
        &Pfm::from_normals(&first.truth_normals),
    )?;
    let mut stored = cfg.clone();
    stored.output = PathBuf::from(".");
    let sidecar = Sidecar {
        config: stored,
        config_hash: cfg.hash(),
        full_scale: first.full_scale,
        max_code: first.max_code,
        sources: first.source_count(),
        frames: frames.len(),
        lights: calib.vectors().to_vec(),
    };
    let path = dir.join(SIDECAR);
    fs::write(&path, sidecar.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

/// A stack read back from disk, in radiance units.
#[derive(Debug, Clone)]
pub struct LoadedStack {
    pub dir: PathBuf,
    pub sidecar: Sidecar,
    /// `frames[f][k]`.
    pub frames: Vec<Vec<RadianceImage>>,
}

impl LoadedStack {
    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar = Sidecar::load(dir)?;
        let scale = sidecar.full_scale / sidecar.max_code;
        let frames = (0..sidecar.frames)
            .map(|f| {
                (0..sidecar.sources)
                    .map(|k| {
                        let (codes, _) = read_pgm(&dir.join(format!("frame{f}_source{k}.pgm")))?;
                        Ok(codes.map(|x| x * scale))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_owned(),
            sidecar,
            frames,
        })
    }

    fn per_source(&self, stem: &str) -> Result<Vec<RadianceImage>> {
        (0..self.sidecar.sources)
            .map(|k| read_pfm_image(&self.dir.join(format!("{stem}_{k}.pfm"))))
            .collect()
    }

    pub fn truth_backscatter(&self) -> Result<Vec<RadianceImage>> {
        self.per_source("truth_backscatter")
    }

    pub fn backscatter_infinity(&self) -> Result<Vec<RadianceImage>> {
        self.per_source("backscatter_inf")
    }

    pub fn truth_normals(&self) -> Result<NormalMap> {
        read_pfm(&self.dir.join("truth_normals.pfm"))?.to_normals()
    }
}

/// Reconstruction methods compared by the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// Subtract the true `B_k(Z)`.
    OracleTruthB,
    /// Subtract the saturated `B_k(∞)` lookup (a calibration canvas at infinity).
    Proposed,
    /// Subtract the constrained-RANSAC quadratic fitted to block minima.
    ProposedAuto,
    NoBackscatter,
    Pairwise,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::OracleTruthB,
        Method::Proposed,
        Method::ProposedAuto,
        Method::NoBackscatter,
        Method::Pairwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OracleTruthB => "oracle-truth-B",
            Method::Proposed => "proposed",
            Method::ProposedAuto => "proposed-auto",
            Method::NoBackscatter => "no-backscatter",
            Method::Pairwise => "pairwise",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

/// Everything a method needs, all in radiance units.
pub struct MethodInputs<'a> {
    pub images: &'a [RadianceImage],
    pub full_scale: f64,
    pub calib: &'a LightingCalibration,
    /// True backscatter, for the oracle.
    pub truth_backscatter: Option<&'a [RadianceImage]>,
    /// Saturated backscatter lookup.
    pub backscatter_infinity: Option<&'a [RadianceImage]>,
    pub auto: AutoEstimator,
}

pub fn run_method(method: Method, inputs: &MethodInputs<'_>) -> Result<NormalMap> {
    fn lookup<'b>(maps: Option<&'b [RadianceImage]>, what: &str) -> Result<&'b [RadianceImage]> {
        maps.ok_or_else(|| Error::InvalidParameter(format!("{what} not available")))
    }
    match method {
        Method::OracleTruthB => {
            let b = lookup(inputs.truth_backscatter, "true backscatter")?;
            ps_proposed(
                inputs.images,
                inputs.full_scale,
                inputs.calib,
                &EstimationMethod::Calibrated(b),
            )
            .map(|r| r.normals)
        }
        Method::Proposed => {
            let b = lookup(inputs.backscatter_infinity, "saturated backscatter")?;
            ps_proposed(
                inputs.images,
                inputs.full_scale,
                inputs.calib,
                &EstimationMethod::Calibrated(b),
            )
            .map(|r| r.normals)
        }
        Method::ProposedAuto => ps_proposed(
            inputs.images,
            inputs.full_scale,
            inputs.calib,
            &EstimationMethod::Automatic(inputs.auto),
        )
        .map(|r| r.normals),
        Method::NoBackscatter => ps_no_backscatter(inputs.images, inputs.full_scale, inputs.calib),
        Method::Pairwise => ps_pairwise_difference(inputs.images, inputs.full_scale, inputs.calib),
    }
}

/// One CSV row of a sweep or reconstruction report.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub config_hash: String,
    pub coords: Vec<(String, f64)>,
    pub method: Method,
    pub outcome: std::result::Result<NormalError, String>,
}

impl ErrorRow {
    pub fn mean_deg(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|e| e.mean_deg)
    }
}

/// Scores `methods` on one rendered cell.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    methods: &[Method],
) -> Result<Vec<(Method, std::result::Result<NormalError, String>)>> {
    let setup = cfg.setup()?;
    let stack = render_stack_with(&setup, &cfg.render_options(), cfg.seed)?;
    let calib = lighting_for(&setup)?;
    let b_inf: Vec<RadianceImage> = backscatter_infinity_maps(&setup)?
        .iter()
        .map(as_stored)
        .collect();
    let truth_b: Vec<RadianceImage> = stack.truth_backscatter.iter().map(as_stored).collect();
    let truth_n = stored_normals(&stack.truth_normals)?;
    let images = stack.radiance_images();
    let inputs = MethodInputs {
        images: &images,
        full_scale: stack.full_scale,
        calib: &calib,
        truth_backscatter: Some(&truth_b),
        backscatter_infinity: Some(&b_inf),
        auto: cfg.auto_estimator(Some(cfg.noise * stack.full_scale)),
    };
    Ok(methods
        .iter()
        .map(|&m| {
            let outcome = run_method(m, &inputs)
                .and_then(|n| normal_error(&n, &truth_n))
                .map_err(|e| e.to_string());
            (m, outcome)
        })
        .collect())
}

/// Runs every grid cell of the config's sweep (or the default grid when it
/// names no axes). Rows come back in grid order; a failing cell yields
/// error rows rather than aborting.
pub fn sweep(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<ErrorRow>> {
    let mut cfg = cfg.clone();
    if cfg.sweep.is_empty() {
        cfg.sweep = ExperimentConfig::default_sweep_axes();
    }
    let cells = cfg.sweep_cells()?;
    let results = par::map_indexed(cells.len(), |i| evaluate_cell(&cells[i].1, methods));
    let mut rows = Vec::new();
    for ((coords, cell), result) in cells.iter().zip(results) {
        let hash = cell.hash();
        match result {
            Ok(per_method) => {
                rows.extend(per_method.into_iter().map(|(method, outcome)| ErrorRow {
                    config_hash: hash.clone(),
                    coords: coords.clone(),
                    method,
                    outcome,
                }))
            }
            Err(e) => rows.extend(methods.iter().map(|&method| ErrorRow {
                config_hash: hash.clone(),
                coords: coords.clone(),
                method,
                outcome: Err(e.to_string()),
            })),
        }
    }
    Ok(rows)
}

/// CSV with header `config_hash,<axes...>,method,mean_deg,rmse_deg,pixels,status`.
pub fn write_error_csv(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let axes: Vec<String> = rows
        .first()
        .map(|r| r.coords.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["config_hash".to_owned()];
    header.extend(axes);
    header.extend(["method", "mean_deg", "rmse_deg", "pixels", "status"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![r.config_hash.clone()];
        rec.extend(r.coords.iter().map(|(_, x)| x.to_string()));
        rec.push(r.method.name().to_owned());
        match &r.outcome {
            Ok(e) => rec.extend([
                e.mean_deg.to_string(),
                e.rmse_deg.to_string(),
                e.pixels.to_string(),
                "ok".to_owned(),
            ]),
            Err(msg) => rec.extend([String::new(), String::new(), String::new(), msg.clone()]),
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// One depth sample of a saturation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationRow {
    pub source: usize,
    pub u: usize,
    pub v: usize,
    pub depth: f64,
    pub b: f64,
    pub d: f64,
    pub e: f64,
    pub b_inf: f64,
    /// `|B(Z) - B(∞)| / E(Z)`; `None` where nothing reaches the pixel.
    pub epsilon: Option<f64>,
}

/// Per pixel and source summary of a saturation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationSummary {
    pub source: usize,
    pub u: usize,
    pub v: usize,
    pub min_lit_depth: Option<f64>,
    pub saturation_depth: Option<f64>,
    pub b_inf: f64,
}

/// Relative threshold used for the reported `Z_sat`.
pub const SATURATION_EPSILON: f64 = 0.01;

/// `B(Z)`, `D(Z)` and `E(Z)` on the geometric depth grid for each listed
/// pixel and every source. `D` is a Lambertian patch facing back along the
/// ray with the scene albedo.
pub fn saturation_curve(
    cfg: &ExperimentConfig,
    pixels: &[(usize, usize)],
) -> Result<(Vec<SaturationRow>, Vec<SaturationSummary>)> {
    let setup = cfg.setup()?;
    for &(u, v) in pixels {
        if u >= setup.sensor.width || v >= setup.sensor.height {
            return Err(Error::Config(format!(
                "pixel ({u}, {v}) is outside the sensor"
            )));
        }
    }
    let jobs: Vec<(usize, (usize, usize))> = pixels
        .iter()
        .flat_map(|&p| (0..setup.rig.len()).map(move |k| (k, p)))
        .collect();
    let curves = par::try_map_indexed(jobs.len(), |j| {
        let (k, (u, v)) = jobs[j];
        let ray = setup.sensor.ray(u, v);
        let src = &setup.rig.sources()[k];
        BackscatterCurve::compute(
            &ray,
            src,
            &setup.sensor,
            &setup.medium,
            &setup.quad,
            SATURATION_EPSILON,
        )
    })?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (&(k, (u, v)), curve) in jobs.iter().zip(&curves) {
        let ray = setup.sensor.ray(u, v);
        let src = &setup.rig.sources()[k];
        let b_inf = curve.saturation_value;
        for (&z, &b) in curve.depths.iter().zip(&curve.values) {
            let patch = SurfacePatch {
                point: ray.at(z),
                normal: -ray.direction * setup.scene.albedo,
            };
            let d = direct_component(&patch, src, &setup.sensor, &setup.medium);
            let e = b + d;
            rows.push(SaturationRow {
                source: k,
                u,
                v,
                depth: z,
                b,
                d,
                e,
                b_inf,
                epsilon: (e > 0.0).then(|| (b - b_inf).abs() / e),
            });
        }
        summary.push(SaturationSummary {
            source: k,
            u,
            v,
            min_lit_depth: curve.min_lit_depth,
            saturation_depth: curve.saturation_depth,
            b_inf,
        });
    }
    Ok((rows, summary))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |x| x.to_string())
}

pub fn write_saturation_csv(path: &Path, rows: &[SaturationRow], hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "config_hash",
        "source",
        "u",
        "v",
        "Z",
        "B",
        "D",
        "E",
        "B_inf",
        "epsilon",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            hash.to_owned(),
            r.source.to_string(),
            r.u.to_string(),
            r.v.to_string(),
            r.depth.to_string(),
            r.b.to_string(),
            r.d.to_string(),
            r.e.to_string(),
            r.b_inf.to_string(),
            opt(r.epsilon),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_saturation_summary(path: &Path, rows: &[SaturationSummary], hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "config_hash",
        "source",
        "u",
        "v",
        "min_lit_depth",
        "z_sat",
        "B_inf",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            hash.to_owned(),
            r.source.to_string(),
            r.u.to_string(),
            r.v.to_string(),
            opt(r.min_lit_depth),
            opt(r.saturation_depth),
            r.b_inf.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// How `reconstruct` removes backscatter.
#[derive(Debug, Clone, PartialEq)]
pub enum BackscatterSource {
    /// Constrained RANSAC on the stack itself.
    Automatic,
    /// Lookup from a canvas stack directory.
    Canvas(PathBuf),
    /// The stack's own `backscatter_inf_*.pfm` (synthetic stacks).
    Saturated,
    /// The stack's own `truth_backscatter_*.pfm` (synthetic stacks).
    Truth,
    None,
    /// Pairwise differencing, no estimate.
    Pairwise,
}

impl BackscatterSource {
    pub fn method(&self) -> &'static str {
        match self {
            BackscatterSource::Automatic => Method::ProposedAuto.name(),
            BackscatterSource::Canvas(_) => "proposed-calibrated",
            BackscatterSource::Saturated => Method::Proposed.name(),
            BackscatterSource::Truth => Method::OracleTruthB.name(),
            BackscatterSource::None => Method::NoBackscatter.name(),
            BackscatterSource::Pairwise => Method::Pairwise.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructOptions {
    pub backscatter: BackscatterSource,
    pub blocks: Option<usize>,
    pub ransac_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructReport {
    pub config_hash: String,
    pub method: &'static str,
    pub normals: NormalMap,
    /// Present when the stack carries ground truth.
    pub error: Option<NormalError>,
}

/// Reconstructs normals, albedo and height from a stack directory and writes
/// them, with a one-row error report when ground truth is available.
pub fn reconstruct(
    stack_dir: &Path,
    opts: &ReconstructOptions,
    out_dir: &Path,
) -> Result<ReconstructReport> {
    let stack = LoadedStack::load(stack_dir)?;
    let side = &stack.sidecar;
    let calib = side.lighting()?;
    let images = &stack.frames[0];
    let mut auto = side
        .config
        .auto_estimator(Some(side.config.noise * side.full_scale));
    if let Some(b) = opts.blocks {
        auto.blocks = b;
    }
    if let Some(n) = opts.ransac_iters {
        auto.iterations = n;
    }
    let fs = side.full_scale;
    let normals = match &opts.backscatter {
        BackscatterSource::Automatic => run_method(
            Method::ProposedAuto,
            &inputs(images, fs, &calib, None, None, auto),
        )?,
        BackscatterSource::Saturated => {
            let b = stack.backscatter_infinity()?;
            run_method(
                Method::Proposed,
                &inputs(images, fs, &calib, None, Some(&b), auto),
            )?
        }
        BackscatterSource::Truth => {
            let b = stack.truth_backscatter()?;
            run_method(
                Method::OracleTruthB,
                &inputs(images, fs, &calib, Some(&b), None, auto),
            )?
        }
        BackscatterSource::None => run_method(
            Method::NoBackscatter,
            &inputs(images, fs, &calib, None, None, auto),
        )?,
        BackscatterSource::Pairwise => run_method(
            Method::Pairwise,
            &inputs(images, fs, &calib, None, None, auto),
        )?,
        BackscatterSource::Canvas(dir) => {
            let canvas = LoadedStack::load(dir)?;
            if canvas.sidecar.sources != side.sources {
                return Err(Error::InvalidParameter(format!(
                    "canvas has {} sources, stack has {}",
                    canvas.sidecar.sources, side.sources
                )));
            }
            let lookup = calibrate_from_canvas(&canvas.frames, side.config.combine)?;
            ps_proposed(images, fs, &calib, &EstimationMethod::Calibrated(&lookup))?.normals
        }
    };

    ensure_dir(out_dir)?;
    write_pfm(&out_dir.join("normals.pfm"), &Pfm::from_normals(&normals))?;
    write_pfm_image(&out_dir.join("albedo.pfm"), &normals.albedo())?;
    let sensor = side.config.sensor()?;
    let footprint = side.config.scene()?.mean_depth() / sensor.focal_length_px;
    let height = integrate_normals_scaled(&normals, footprint);
    write_pfm_image(&out_dir.join("height.pfm"), &height.as_image())?;

    let error = match stack.truth_normals() {
        Ok(truth) => Some(normal_error(&normals, &truth)?),
        Err(Error::Io { .. }) => None,
        Err(e) => return Err(e),
    };
    let method = opts.backscatter.method();
    let report_path = out_dir.join("report.csv");
    let mut w = csv::Writer::from_path(&report_path).map_err(|e| csv_err(&report_path, e))?;
    w.write_record(["config_hash", "method", "mean_deg", "rmse_deg", "pixels"])
        .map_err(|e| csv_err(&report_path, e))?;
    let (m, r, p) = error.map_or((String::new(), String::new(), String::new()), |e| {
        (
            e.mean_deg.to_string(),
            e.rmse_deg.to_string(),
            e.pixels.to_string(),
        )
    });
    w.write_record([side.config_hash.as_str(), method, &m, &r, &p])
        .map_err(|e| csv_err(&report_path, e))?;
    w.flush().map_err(|e| Error::io(&report_path, e))?;
    Ok(ReconstructReport {
        config_hash: side.config_hash.clone(),
        method,
        normals,
        error,
    })
}

fn inputs<'a>(
    images: &'a [RadianceImage],
    full_scale: f64,
    calib: &'a LightingCalibration,
    truth: Option<&'a [RadianceImage]>,
    b_inf: Option<&'a [RadianceImage]>,
    auto: AutoEstimator,
) -> MethodInputs<'a> {
    MethodInputs {
        images,
        full_scale,
        calib,
        truth_backscatter: truth,
        backscatter_infinity: b_inf,
        auto,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreOutcome {
    pub input_std: f64,
    pub restored_std: f64,
    pub restored: RadianceImage,
    pub backscatter: RadianceImage,
}

/// Automatic backscatter estimate of a single image, subtracted and
/// stretched to the image's own full scale (`maxval` for a PGM).
pub fn restore(
    image: &RadianceImage,
    full_scale: f64,
    estimator: &AutoEstimator,
) -> Result<RestoreOutcome> {
    let fit = estimator.fit(&[image], 0)?;
    let backscatter = fit.surface.to_image();
    let restored = restore_image(image, &backscatter, full_scale)?;
    Ok(RestoreOutcome {
        input_std: image.std_dev(),
        restored_std: restored.std_dev(),
        restored,
        backscatter,
    })
}

/// Restores a PGM file and writes the result as 16-bit PGM.
pub fn restore_file(
    input: &Path,
    output: &Path,
    estimator: &AutoEstimator,
) -> Result<RestoreOutcome> {
    let (image, maxval) = read_pgm(input)?;
    let outcome = restore(&image, maxval as f64, estimator)?;
    let scale = 65535.0 / maxval as f64;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_pgm(output, &outcome.restored.map(|x| x * scale), 65535)?;
    Ok(outcome)
}
