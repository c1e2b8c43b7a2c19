//! Flat `key = value` run configuration.
//!
//! `#` starts a comment. `profile = desk` (or `toy`) selects a base profile
//! before any other key is applied, wherever it appears in the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::gcn::CombineMode;
use crate::model::{DistanceKind, ModelConfig};
use crate::train::TrainSettings;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub profile: Option<String>,
    pub model: ModelConfig,
    pub train: TrainSettings,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Error::Config(format!("{key}: unknown value {v:?}")))
}

fn enum_name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

pub fn profile(name: &str) -> Result<ModelConfig> {
    match name {
        "full" | "default" => Ok(ModelConfig::default()),
        "desk" => Ok(ModelConfig::desk()),
        "toy" => Ok(ModelConfig::toy()),
        _ => Err(Error::Config(format!("unknown profile {name:?}"))),
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some(p) = entries.remove("profile") {
            cfg.model = profile(&p)?;
            cfg.profile = Some(p);
        }
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Applies one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "profile" => {
                self.model = profile(v)?;
                self.profile = Some(v.to_string());
            }
            "num_joints" => m.num_joints = parse(key, v)?,
            "dim" | "D" => m.dim = parse(key, v)?,
            "heads" | "H" => m.heads = parse(key, v)?,
            "layers" | "L" => m.layers = parse(key, v)?,
            "cross_layers" | "K" => m.cross_layers = parse(key, v)?,
            "gcn_depth" => m.gcn_depth = parse(key, v)?,
            "mu" => m.mu = parse(key, v)?,
            "w" => m.w = parse(key, v)?,
            "beta" => m.beta = parse(key, v)?,
            "combine_mode" => m.combine_mode = parse_enum::<CombineMode>(key, v)?,
            "ffn_width" => m.ffn_width = parse(key, v)?,
            "enable_bone_gcn" => m.enable_bone_gcn = parse_bool(key, v)?,
            "fusion_mode" => m.fusion_mode = parse_enum::<FusionMode>(key, v)?,
            "layer_norm" => m.layer_norm = parse_bool(key, v)?,
            "distance_matrix" => m.distance_matrix = parse_enum::<DistanceKind>(key, v)?,
            "image_size_px" => m.image_size_px = parse(key, v)?,
            "output_scale_mm" => m.output_scale_mm = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "gamma" => t.gamma = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "flip_augment" => t.flip_augment = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every effective setting as `key = value`, parseable by `parse_str`.
    pub fn to_key_values(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("num_joints", m.num_joints.to_string());
        kv("dim", m.dim.to_string());
        kv("heads", m.heads.to_string());
        kv("layers", m.layers.to_string());
        kv("cross_layers", m.cross_layers.to_string());
        kv("gcn_depth", m.gcn_depth.to_string());
        kv("mu", m.mu.to_string());
        kv("w", format!("{:?}", m.w));
        kv("beta", format!("{:?}", m.beta));
        kv("combine_mode", enum_name(&m.combine_mode));
        kv("ffn_width", m.ffn_width.to_string());
        kv("enable_bone_gcn", m.enable_bone_gcn.to_string());
        kv("fusion_mode", enum_name(&m.fusion_mode));
        kv("layer_norm", m.layer_norm.to_string());
        kv("distance_matrix", enum_name(&m.distance_matrix));
        kv("image_size_px", format!("{:?}", m.image_size_px));
        kv("output_scale_mm", format!("{:?}", m.output_scale_mm));
        kv("lr", format!("{:?}", t.lr));
        kv("gamma", format!("{:?}", t.gamma));
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("seed", t.seed.to_string());
        kv("flip_augment", t.flip_augment.to_string());
        s
    }
}
