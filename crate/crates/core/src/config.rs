//! Experiment configuration as flat `key = value` text with dotted names.
//!
//! ```text
//! seed = 7
//! medium.c = 1.0
//! scene.kind = "sphere"
//! sweep.medium.c = [0, 0.5, 1, 2]
//! ```
//!
//! Files are parsed as TOML, so nested tables (`[medium]`) are accepted too.
//! Every key has a default; unknown keys are errors. The canonical form lists
//! every key in sorted order, and its SHA-256 prefix is the config hash that
//! ties CSV rows to sidecars.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::Value;

use crate::backscatter::QuadratureSpec;
use crate::estimator::{AutoEstimator, FrameCombine};
use crate::optics::{Medium, SensorModel};
use crate::scene::{Aim, LightRig, RenderOptions, Scene, SimulationSetup};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneShape {
    Sphere,
    Plane,
    Canvas,
}

impl SceneShape {
    fn name(self) -> &'static str {
        match self {
            SceneShape::Sphere => "sphere",
            SceneShape::Plane => "plane",
            SceneShape::Canvas => "canvas",
        }
    }
}

/// One sweep dimension: a config key and the values it takes, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,

    pub sensor_width: usize,
    pub sensor_height: usize,
    pub fov_deg: f64,
    pub bit_depth: u32,
    /// Noise standard deviation as a fraction of full scale.
    pub noise: f64,

    pub c: f64,
    /// Explicit scattering coefficient; otherwise `b_over_c * c`.
    pub b: Option<f64>,
    pub b_over_c: f64,
    pub g: f64,

    pub source_count: usize,
    /// Camera-to-source distance (m).
    pub baseline: f64,
    /// Full beam angle (degrees); the cone half-angle is half of it.
    pub beam_angle_deg: f64,
    pub intensity: f64,
    /// On-axis convergence depth; `None` aims every beam along the optical axis.
    pub aim_depth: Option<f64>,

    pub scene: SceneShape,
    /// Sphere centre or plane depth on the optical axis (m).
    pub distance: f64,
    pub radius: f64,
    pub albedo: f64,
    /// Plane tilt about the vertical axis (degrees).
    pub tilt_deg: f64,

    pub quad: QuadratureSpec,

    pub blocks: usize,
    pub ransac_iters: usize,
    pub inlier_tol: Option<f64>,
    pub min_inliers: usize,
    pub combine: FrameCombine,
    pub calibration_frames: usize,

    pub full_scale: Option<f64>,
    pub quantize: bool,

    pub sweep: Vec<SweepAxis>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("out"),
            sensor_width: 128,
            sensor_height: 128,
            fov_deg: 30.0,
            bit_depth: 16,
            noise: 0.005,
            c: 0.5,
            b: None,
            b_over_c: 0.8,
            g: 0.0,
            source_count: 4,
            baseline: 0.4 * 2f64.sqrt(),
            beam_angle_deg: 90.0,
            intensity: 1.0,
            aim_depth: Some(1.0),
            scene: SceneShape::Sphere,
            distance: 1.0,
            radius: 0.1,
            albedo: 1.0,
            tilt_deg: 0.0,
            quad: QuadratureSpec::default(),
            blocks: 8,
            ransac_iters: 2000,
            inlier_tol: None,
            min_inliers: 6,
            combine: FrameCombine::Median,
            calibration_frames: 5,
            full_scale: None,
            quantize: true,
            sweep: Vec::new(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(cfg_err(format!("{key}: expected a number, found {v}"))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Float(x) if *x >= 0.0 && x.fract() == 0.0 && *x < 2f64.powi(53) => Ok(*x as usize),
        _ => Err(cfg_err(format!(
            "{key}: expected a non-negative integer, found {v}"
        ))),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| cfg_err(format!("{key}: expected a string, found {v}")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| cfg_err(format!("{key}: expected true or false, found {v}")))
}

/// "none" or a number.
fn as_opt_f64(key: &str, v: &Value) -> Result<Option<f64>> {
    match v {
        Value::String(s) if s == "none" => Ok(None),
        _ => as_f64(key, v).map(Some),
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "\"none\"".to_owned(), fmt_f64)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Short names accepted for sweep axes.
fn axis_alias(key: &str) -> &str {
    match key {
        "c" => "medium.c",
        "depth" | "distance" => "scene.distance",
        "baseline" => "rig.baseline",
        "noise" => "sensor.noise",
        "albedo" => "scene.albedo",
        "radius" => "scene.radius",
        "beam_angle" => "rig.beam_angle_deg",
        other => other,
    }
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = Self::default();
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override, the value written as in a config file.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("override `{assignment}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let table: toml::Table = format!("v = {value}")
            .parse()
            .or_else(|_| format!("v = {value:?}").parse())
            .map_err(|e: toml::de::Error| cfg_err(format!("{key}: {e}")))?;
        self.set(key, &table["v"])?;
        self.validate()
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        if let Some(axis) = key.strip_prefix("sweep.") {
            let target = axis_alias(axis).to_owned();
            let values = match v {
                Value::Array(a) => a
                    .iter()
                    .map(|x| as_f64(key, x))
                    .collect::<Result<Vec<_>>>()?,
                _ => return Err(cfg_err(format!("{key}: expected a list of numbers"))),
            };
            if values.is_empty() {
                return Err(cfg_err(format!("{key}: empty sweep axis")));
            }
            // the key must be settable with a number
            self.clone().set(&target, &Value::Float(values[0]))?;
            self.sweep.retain(|a| a.key != target);
            self.sweep.push(SweepAxis {
                key: target,
                values,
            });
            self.sweep.sort_by(|a, b| a.key.cmp(&b.key));
            return Ok(());
        }
        match key {
            "seed" => self.seed = as_usize(key, v)? as u64,
            "output" => self.output = PathBuf::from(as_str(key, v)?),
            "sensor.width" => self.sensor_width = as_usize(key, v)?,
            "sensor.height" => self.sensor_height = as_usize(key, v)?,
            "sensor.fov_deg" => self.fov_deg = as_f64(key, v)?,
            "sensor.bit_depth" => self.bit_depth = as_usize(key, v)? as u32,
            "sensor.noise" => self.noise = as_f64(key, v)?,
            "medium.c" => self.c = as_f64(key, v)?,
            "medium.b" => self.b = as_opt_f64(key, v)?,
            "medium.b_over_c" => self.b_over_c = as_f64(key, v)?,
            "medium.g" => self.g = as_f64(key, v)?,
            "rig.count" => self.source_count = as_usize(key, v)?,
            "rig.baseline" => self.baseline = as_f64(key, v)?,
            "rig.beam_angle_deg" => self.beam_angle_deg = as_f64(key, v)?,
            "rig.intensity" => self.intensity = as_f64(key, v)?,
            "rig.aim_depth" => self.aim_depth = as_opt_f64(key, v)?,
            "scene.kind" => {
                self.scene = match as_str(key, v)? {
                    "sphere" => SceneShape::Sphere,
                    "plane" => SceneShape::Plane,
                    "canvas" => SceneShape::Canvas,
                    other => return Err(cfg_err(format!("scene.kind: unknown shape `{other}`"))),
                }
            }
            "scene.distance" => self.distance = as_f64(key, v)?,
            "scene.radius" => self.radius = as_f64(key, v)?,
            "scene.albedo" => self.albedo = as_f64(key, v)?,
            "scene.tilt_deg" => self.tilt_deg = as_f64(key, v)?,
            "quad.base_step" => self.quad.base_step = as_f64(key, v)?,
            "quad.rel_tol" => self.quad.rel_tol = as_f64(key, v)?,
            "quad.max_depth" => self.quad.max_depth = as_f64(key, v)?,
            "estimator.blocks" => self.blocks = as_usize(key, v)?,
            "estimator.ransac_iters" => self.ransac_iters = as_usize(key, v)?,
            "estimator.inlier_tol" => self.inlier_tol = as_opt_f64(key, v)?,
            "estimator.min_inliers" => self.min_inliers = as_usize(key, v)?,
            "estimator.combine" => {
                self.combine = match as_str(key, v)? {
                    "median" => FrameCombine::Median,
                    "mean" => FrameCombine::Mean,
                    other => return Err(cfg_err(format!("estimator.combine: unknown `{other}`"))),
                }
            }
            "estimator.calibration_frames" => self.calibration_frames = as_usize(key, v)?,
            "render.full_scale" => self.full_scale = as_opt_f64(key, v)?,
            "render.quantize" => self.quantize = as_bool(key, v)?,
            _ => return Err(cfg_err(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Range checks that do not need the built objects.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(cfg_err(msg.to_owned()))
            }
        };
        check(
            self.sensor_width >= 3 && self.sensor_height >= 3,
            "sensor must be at least 3x3",
        )?;
        check(
            self.fov_deg > 0.0 && self.fov_deg < 180.0,
            "sensor.fov_deg must lie in (0, 180)",
        )?;
        check(
            (1..=16).contains(&self.bit_depth),
            "sensor.bit_depth must lie in 1..=16",
        )?;
        check(
            self.noise >= 0.0 && self.noise.is_finite(),
            "sensor.noise must be >= 0",
        )?;
        check(self.c >= 0.0 && self.c.is_finite(), "medium.c must be >= 0")?;
        check(
            self.b_over_c >= 0.0 && self.b_over_c <= 1.0,
            "medium.b_over_c must lie in [0, 1]",
        )?;
        if let Some(b) = self.b {
            check(b >= 0.0 && b <= self.c, "medium.b must lie in [0, c]")?;
        }
        check(
            self.g > -1.0 && self.g < 1.0,
            "medium.g must lie in (-1, 1)",
        )?;
        check(self.source_count >= 3, "rig.count must be >= 3")?;
        check(
            self.baseline > 0.0 && self.baseline.is_finite(),
            "rig.baseline must be > 0",
        )?;
        check(
            self.beam_angle_deg > 0.0 && self.beam_angle_deg <= 180.0,
            "rig.beam_angle_deg must lie in (0, 180]",
        )?;
        check(self.intensity > 0.0, "rig.intensity must be > 0")?;
        if let Some(z) = self.aim_depth {
            check(z > 0.0, "rig.aim_depth must be > 0")?;
        }
        check(
            self.distance > 0.0 && self.distance.is_finite(),
            "scene.distance must be > 0",
        )?;
        check(self.radius > 0.0, "scene.radius must be > 0")?;
        check(
            (0.0..=1.0).contains(&self.albedo),
            "scene.albedo must lie in [0, 1]",
        )?;
        check(
            self.tilt_deg.abs() < 90.0,
            "scene.tilt_deg must lie in (-90, 90)",
        )?;
        self.quad.validate().map_err(|e| cfg_err(e.to_string()))?;
        check(self.blocks >= 3, "estimator.blocks must be >= 3")?;
        check(
            self.ransac_iters >= 1,
            "estimator.ransac_iters must be >= 1",
        )?;
        if let Some(t) = self.inlier_tol {
            check(t > 0.0, "estimator.inlier_tol must be > 0")?;
        }
        check(self.min_inliers >= 6, "estimator.min_inliers must be >= 6")?;
        check(
            self.calibration_frames >= 1,
            "estimator.calibration_frames must be >= 1",
        )?;
        if let Some(fs) = self.full_scale {
            check(fs > 0.0, "render.full_scale must be > 0")?;
        }
        Ok(())
    }

    pub fn medium(&self) -> Result<Medium> {
        Medium::new(self.c, self.b.unwrap_or(self.b_over_c * self.c), self.g)
    }

    pub fn sensor(&self) -> Result<SensorModel> {
        SensorModel::with_fov(
            self.sensor_width,
            self.sensor_height,
            self.fov_deg,
            self.bit_depth,
            self.noise,
        )
    }

    pub fn rig(&self) -> Result<LightRig> {
        let aim = self.aim_depth.map_or(Aim::Parallel, Aim::OnAxis);
        LightRig::ring(
            self.source_count,
            self.baseline,
            self.beam_angle_deg.to_radians() / 2.0,
            self.intensity,
            aim,
        )
    }

    pub fn scene(&self) -> Result<Scene> {
        let tilt = self.tilt_deg.to_radians();
        let facing = Vec3::new(tilt.sin(), 0.0, -tilt.cos());
        match self.scene {
            SceneShape::Sphere => {
                Scene::sphere(Vec3::new(0.0, 0.0, self.distance), self.radius, self.albedo)
            }
            SceneShape::Plane => Scene::plane(self.distance, facing, self.albedo),
            SceneShape::Canvas => Scene::canvas(self.distance),
        }
    }

    pub fn setup(&self) -> Result<SimulationSetup> {
        Ok(SimulationSetup {
            scene: self.scene()?,
            rig: self.rig()?,
            sensor: self.sensor()?,
            medium: self.medium()?,
            quad: self.quad,
        })
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            quantize: self.quantize,
            full_scale: self.full_scale,
        }
    }

    /// Automatic estimator settings; `noise_std` is in radiance.
    pub fn auto_estimator(&self, noise_std: Option<f64>) -> AutoEstimator {
        AutoEstimator {
            blocks: self.blocks,
            iterations: self.ransac_iters,
            inlier_tol: self.inlier_tol,
            noise_std,
            min_inliers: self.min_inliers,
            seed: self.seed,
        }
    }

    /// Every key with its value, as config-file literals.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("seed", self.seed.to_string());
        put("output", format!("{:?}", self.output.display().to_string()));
        put("sensor.width", self.sensor_width.to_string());
        put("sensor.height", self.sensor_height.to_string());
        put("sensor.fov_deg", fmt_f64(self.fov_deg));
        put("sensor.bit_depth", self.bit_depth.to_string());
        put("sensor.noise", fmt_f64(self.noise));
        put("medium.c", fmt_f64(self.c));
        put("medium.b", fmt_opt(self.b));
        put("medium.b_over_c", fmt_f64(self.b_over_c));
        put("medium.g", fmt_f64(self.g));
        put("rig.count", self.source_count.to_string());
        put("rig.baseline", fmt_f64(self.baseline));
        put("rig.beam_angle_deg", fmt_f64(self.beam_angle_deg));
        put("rig.intensity", fmt_f64(self.intensity));
        put("rig.aim_depth", fmt_opt(self.aim_depth));
        put("scene.kind", format!("{:?}", self.scene.name()));
        put("scene.distance", fmt_f64(self.distance));
        put("scene.radius", fmt_f64(self.radius));
        put("scene.albedo", fmt_f64(self.albedo));
        put("scene.tilt_deg", fmt_f64(self.tilt_deg));
        put("quad.base_step", fmt_f64(self.quad.base_step));
        put("quad.rel_tol", fmt_f64(self.quad.rel_tol));
        put("quad.max_depth", fmt_f64(self.quad.max_depth));
        put("estimator.blocks", self.blocks.to_string());
        put("estimator.ransac_iters", self.ransac_iters.to_string());
        put("estimator.inlier_tol", fmt_opt(self.inlier_tol));
        put("estimator.min_inliers", self.min_inliers.to_string());
        put(
            "estimator.combine",
            match self.combine {
                FrameCombine::Median => "\"median\"",
                FrameCombine::Mean => "\"mean\"",
            }
            .to_owned(),
        );
        put(
            "estimator.calibration_frames",
            self.calibration_frames.to_string(),
        );
        put("render.full_scale", fmt_opt(self.full_scale));
        put("render.quantize", self.quantize.to_string());
        for axis in &self.sweep {
            let vals: Vec<String> = axis.values.iter().map(|&x| fmt_f64(x)).collect();
            put(
                &format!("sweep.{}", axis.key),
                format!("[{}]", vals.join(", ")),
            );
        }
        m
    }

    /// Sorted `key = value` lines; parses back to an equal config.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_flat() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 12 hex digits of the SHA-256 of [`canonical_text`](Self::canonical_text).
    /// The output directory is left out so relocating results keeps the hash.
    pub fn hash(&self) -> String {
        let mut probe = self.clone();
        probe.output = PathBuf::new();
        let digest = Sha256::digest(probe.canonical_text().as_bytes());
        hex::encode(&digest[..6])
    }

    /// Cartesian product of the sweep axes in row-major order (last axis
    /// fastest). Each cell is this config with the axis values applied and no
    /// sweep of its own.
    pub fn sweep_cells(&self) -> Result<Vec<(Vec<(String, f64)>, ExperimentConfig)>> {
        let mut cells = vec![(Vec::new(), {
            let mut base = self.clone();
            base.sweep.clear();
            base
        })];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(cells.len() * axis.values.len());
            for (coords, cfg) in &cells {
                for &x in &axis.values {
                    let mut c = cfg.clone();
                    c.set(&axis.key, &Value::Float(x))?;
                    c.validate()?;
                    let mut coords = coords.clone();
                    coords.push((axis.key.clone(), x));
                    next.push((coords, c));
                }
            }
            cells = next;
        }
        Ok(cells)
    }

    /// The simulation grid used when a sweep config names no axes.
    pub fn default_sweep_axes() -> Vec<SweepAxis> {
        vec![
            SweepAxis {
                key: "medium.c".into(),
                values: vec![0.0, 0.5, 1.0, 2.0],
            },
            SweepAxis {
                key: "rig.baseline".into(),
                values: vec![0.4, 1.0],
            },
            SweepAxis {
                key: "scene.distance".into(),
                values: vec![2.0, 1.5, 1.2, 0.8, 0.5, 0.3],
            },
        ]
    }

    /// Half-angle of the beam cone in radians.
    pub fn half_angle(&self) -> f64 {
        (self.beam_angle_deg / 2.0).to_radians().min(PI / 2.0)
    }
}
