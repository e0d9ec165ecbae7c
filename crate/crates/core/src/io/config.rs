//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use
//! underscores; dashes are accepted as aliases so `batch-size` and
//! `batch_size` name the same setting. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::FrontendConfig;
use crate::cluster::TrainingConfig;
use crate::error::{Error, IoContext, Result};

/// Every key understood by [`RunConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "beta",
    "lr",
    "batch_size",
    "pretrain_iters",
    "max_iters",
    "epsilon",
    "target_update_interval",
    "num_clusters",
    "kmeans_restarts",
    "alpha",
    "seed",
    "beta_grid",
    "sample_rate",
    "frame_ms",
    "hop_ms",
    "f_min",
    "f_max",
    "manifest",
    "features",
    "out",
    "checkpoint",
    "assignments",
    "embeddings",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub frontend: FrontendConfig,
    pub beta_grid: Vec<f64>,
    pub manifest: Option<PathBuf>,
    /// Feature store; defaults to `<out>/features.dstf`.
    pub features: Option<PathBuf>,
    pub out: PathBuf,
    /// Defaults to `<out>/model.dsckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<out>/assignments.csv`.
    pub assignments: Option<PathBuf>,
    /// Defaults to `<out>/embeddings.dstf`.
    pub embeddings: Option<PathBuf>,
}

pub fn default_beta_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            training: TrainingConfig::default(),
            frontend: FrontendConfig::default(),
            beta_grid: default_beta_grid(),
            manifest: None,
            features: None,
            out: PathBuf::from("dscan-out"),
            checkpoint: None,
            assignments: None,
            embeddings: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let t = &mut self.training;
        let f = &mut self.frontend;
        match key.as_str() {
            "beta" => t.beta = parse(&key, value)?,
            "lr" => t.lr = parse(&key, value)?,
            "batch_size" => t.batch_size = parse(&key, value)?,
            "pretrain_iters" => t.pretrain_iters = parse(&key, value)?,
            "max_iters" => t.max_iters = parse(&key, value)?,
            "epsilon" => t.epsilon = parse(&key, value)?,
            "target_update_interval" => t.target_update_interval = parse(&key, value)?,
            "num_clusters" | "k" => t.num_clusters = parse(&key, value)?,
            "kmeans_restarts" => t.kmeans_restarts = parse(&key, value)?,
            "alpha" => t.alpha = parse(&key, value)?,
            "seed" => t.seed = parse(&key, value)?,
            "beta_grid" => {
                self.beta_grid = value
                    .split(',')
                    .map(|v| parse(&key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "sample_rate" => f.sample_rate = parse(&key, value)?,
            "frame_ms" => f.frame_ms = parse(&key, value)?,
            "hop_ms" => f.hop_ms = parse(&key, value)?,
            "f_min" => f.f_min = parse(&key, value)?,
            "f_max" => {
                f.f_max = match value {
                    "" | "nyquist" => None,
                    v => Some(parse(&key, v)?),
                }
            }
            "manifest" => self.manifest = opt_path(value),
            "features" => self.features = opt_path(value),
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "assignments" => self.assignments = opt_path(value),
            "embeddings" => self.embeddings = opt_path(value),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.beta_grid.is_empty() {
            return Err(Error::Config("beta_grid must not be empty".into()));
        }
        if let Some(b) = self
            .beta_grid
            .iter()
            .find(|b| !(**b >= 0.0 && b.is_finite()))
        {
            return Err(Error::Config(format!("beta_grid entry {b} must be >= 0")));
        }
        let f = &self.frontend;
        if f.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if f.frame_samples() < 2 || f.hop_samples() == 0 {
            return Err(Error::Config(format!(
                "frame_ms={} and hop_ms={} give an empty frame or hop",
                f.frame_ms, f.hop_ms
            )));
        }
        let (lo, hi) = f.f_range();
        if !(lo >= 0.0 && lo < hi && hi <= f.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "mel range [{lo}, {hi}] must satisfy 0 <= f_min < f_max <= sample_rate/2"
            )));
        }
        Ok(())
    }

    pub fn features_path(&self) -> PathBuf {
        self.features
            .clone()
            .unwrap_or_else(|| self.out.join("features.dstf"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.dsckpt"))
    }

    pub fn assignments_path(&self) -> PathBuf {
        self.assignments
            .clone()
            .unwrap_or_else(|| self.out.join("assignments.csv"))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.embeddings
            .clone()
            .unwrap_or_else(|| self.out.join("embeddings.dstf"))
    }

    /// The configuration in the same `key = value` form [`RunConfig::load`]
    /// reads. Unset optional paths are written empty.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        let f = &self.frontend;
        let p = |v: &Option<PathBuf>| {
            v.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let grid: Vec<String> = self.beta_grid.iter().map(f64::to_string).collect();
        let values = [
            t.beta.to_string(),
            t.lr.to_string(),
            t.batch_size.to_string(),
            t.pretrain_iters.to_string(),
            t.max_iters.to_string(),
            t.epsilon.to_string(),
            t.target_update_interval.to_string(),
            t.num_clusters.to_string(),
            t.kmeans_restarts.to_string(),
            t.alpha.to_string(),
            t.seed.to_string(),
            grid.join(","),
            f.sample_rate.to_string(),
            f.frame_ms.to_string(),
            f.hop_ms.to_string(),
            f.f_min.to_string(),
            f.f_max.map_or(String::new(), |v| v.to_string()),
            p(&self.manifest),
            p(&self.features),
            self.out.display().to_string(),
            p(&self.checkpoint),
            p(&self.assignments),
            p(&self.embeddings),
        ];
        let mut s = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.beta_grid.len(), 9);
        assert_eq!(c.training.num_clusters, 9);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("beta", "0.7").unwrap();
        c.set("batch-size", "8").unwrap();
        c.set("f_max", "6000").unwrap();
        c.set("manifest", "data/m.csv").unwrap();
        c.set("beta_grid", "0, 0.5").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.training.batch_size, 8);
    }

    #[test]
    fn parser_skips_comments_and_reports_lines() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\n\nseed = 5\n").unwrap();
        assert_eq!(c.training.seed, 5);
        let e = c.apply_text("seed = 1\nwat = 2\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(c.apply_text("lr 0.1").is_err());
        assert!(c.set("lr", "fast").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        for k in CONFIG_KEYS {
            let mut c = RunConfig::default();
            let v = match *k {
                "beta_grid" => "0.2",
                "f_max" => "4000",
                "seed"
                | "batch_size"
                | "pretrain_iters"
                | "max_iters"
                | "num_clusters"
                | "kmeans_restarts"
                | "target_update_interval"
                | "sample_rate" => "3",
                _ if [
                    "manifest",
                    "features",
                    "out",
                    "checkpoint",
                    "assignments",
                    "embeddings",
                ]
                .contains(k) =>
                {
                    "p"
                }
                _ => "0.25",
            };
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
            assert_ne!(c, RunConfig::default(), "{k} had no effect");
        }
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.beta_grid.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.frontend.f_max = Some(9000.0);
        assert!(c.validate().is_err());
    }
}
