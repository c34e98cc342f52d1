//! Line-oriented `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Grid;
use crate::error::{Error, Result};
use crate::model::LsNetConfig;
use crate::physics::DepthKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Images are resized to `(height, width)` on load.
    pub resolution: (usize, usize),
    /// Validate every this many epochs (and after the last one).
    pub val_interval: usize,
    pub model: LsNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, lr: 3e-4, batch_size: 8, seed: 0, resolution: (256, 256), val_interval: 10, model: LsNetConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.val_interval == 0 {
            return Err(Error::Config("batch_size and val_interval must be at least 1".into()));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::Config("resolution must be non-empty".into()));
        }
        self.model.validate()
    }
}

/// Parameters of the synthetic paired dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub count: usize,
    pub size: usize,
    pub eta: [f64; 3],
    pub ambient: [f64; 3],
    pub depth_near: f64,
    pub depth_far: f64,
    pub depth_kind: DepthKind,
    pub fs_gain: f64,
    /// Entries at the end of the set reserved for validation.
    pub val_count: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            count: 20,
            size: 64,
            eta: [0.8, 0.2, 0.4],
            ambient: [0.1, 0.6, 0.7],
            depth_near: 0.5,
            depth_far: 2.5,
            depth_kind: DepthKind::Ramp,
            fs_gain: 0.0,
            val_count: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub scene: SceneConfig,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_triple(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("`{key}` needs three comma-separated values, got `{v}`")));
    }
    Ok([parse_num(key, parts[0])?, parse_num(key, parts[1])?, parse_num(key, parts[2])?])
}

/// `64` or `64x48` (height x width).
fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match v.split_once('x') {
        Some((a, b)) => Ok((parse_num(key, a.trim())?, parse_num(key, b.trim())?)),
        None => {
            let n = parse_num(key, v)?;
            Ok((n, n))
        }
    }
}

fn fmt_triple(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (t, s) = (&mut self.train, &mut self.scene);
        match key {
            "epochs" => t.epochs = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "resolution" => t.resolution = parse_pair(key, v)?,
            "val_interval" => t.val_interval = parse_num(key, v)?,
            "lift_channels" => t.model.lift_channels = parse_num(key, v)?,
            "grid" => {
                let (r, c) = parse_pair(key, v)?;
                t.model.grid = Grid::new(r, c);
            }
            "topk" => t.model.topk = parse_num(key, v)?,
            "ablation" => t.model.ablation = v.parse()?,
            "input_size" => t.model.input_size = parse_pair(key, v)?,
            "scene_count" => s.count = parse_num(key, v)?,
            "scene_size" => s.size = parse_num(key, v)?,
            "eta" => s.eta = parse_triple(key, v)?,
            "ambient" => s.ambient = parse_triple(key, v)?,
            "depth_near" => s.depth_near = parse_num(key, v)?,
            "depth_far" => s.depth_far = parse_num(key, v)?,
            "depth_kind" => {
                s.depth_kind = match v {
                    "ramp" => DepthKind::Ramp,
                    "radial" => DepthKind::Radial,
                    _ => return Err(Error::Config(format!("`depth_kind` must be ramp or radial, got `{v}`"))),
                }
            }
            "fs_gain" => s.fs_gain = parse_num(key, v)?,
            "val_count" => s.val_count = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Model section only, in the form stored inside checkpoints.
pub fn model_config_text(m: &LsNetConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "lift_channels = {}", m.lift_channels);
    let _ = writeln!(out, "grid = {}x{}", m.grid.rows, m.grid.cols);
    let _ = writeln!(out, "topk = {}", m.topk);
    let _ = writeln!(out, "ablation = {}", m.ablation);
    let _ = writeln!(out, "input_size = {}x{}", m.input_size.0, m.input_size.1);
    out
}

pub fn parse_model_config(text: &str) -> Result<LsNetConfig> {
    let cfg = PipelineConfig::parse(text)?;
    Ok(cfg.train.model)
}

/// Full configuration as text that [`PipelineConfig::parse`] accepts.
pub fn config_text(cfg: &PipelineConfig) -> String {
    let (t, s) = (&cfg.train, &cfg.scene);
    let mut out = String::new();
    let _ = writeln!(out, "epochs = {}", t.epochs);
    let _ = writeln!(out, "lr = {}", t.lr);
    let _ = writeln!(out, "batch_size = {}", t.batch_size);
    let _ = writeln!(out, "seed = {}", t.seed);
    let _ = writeln!(out, "resolution = {}x{}", t.resolution.0, t.resolution.1);
    let _ = writeln!(out, "val_interval = {}", t.val_interval);
    out.push_str(&model_config_text(&t.model));
    let _ = writeln!(out, "scene_count = {}", s.count);
    let _ = writeln!(out, "scene_size = {}", s.size);
    let _ = writeln!(out, "eta = {}", fmt_triple(s.eta));
    let _ = writeln!(out, "ambient = {}", fmt_triple(s.ambient));
    let _ = writeln!(out, "depth_near = {}", s.depth_near);
    let _ = writeln!(out, "depth_far = {}", s.depth_far);
    let _ = writeln!(out, "depth_kind = {}", if s.depth_kind == DepthKind::Ramp { "ramp" } else { "radial" });
    let _ = writeln!(out, "fs_gain = {}", s.fs_gain);
    let _ = writeln!(out, "val_count = {}", s.val_count);
    out
}
