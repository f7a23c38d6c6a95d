//! Plain-text `key=value` run configuration.

use std::fmt::Write as _;

use super::IoError;
use crate::deform::DeformKind;
use crate::trainer::TrainConfig;

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const CONFIG_KEYS: [&str; 26] = [
    "preset",
    "iterations",
    "lambda",
    "lambda_t",
    "densify_interval",
    "densify_grad_threshold",
    "densify_subvoxels",
    "prune_opacity_threshold",
    "densify_start",
    "densify_stop",
    "lr_features",
    "lr_offsets",
    "lr_scales",
    "lr_heads",
    "lr_mask",
    "lr_deform",
    "lr_decay_ratio",
    "seed",
    "deform",
    "rbf_sigma",
    "knn_k",
    "time_mask",
    "voxel_size",
    "offsets",
    "feature_dim",
    "view_dependent",
];

/// Training configuration plus the synthetic preset used when no scene
/// directory is given.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "blobs-v1".into(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Value of `key` as written in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let v = match key {
            "preset" => self.preset.clone(),
            "iterations" => t.iterations.to_string(),
            "lambda" => t.lambda.to_string(),
            "lambda_t" => t.lambda_t.to_string(),
            "densify_interval" => t.densify_interval.to_string(),
            "densify_grad_threshold" => t.densify_grad_threshold.to_string(),
            "densify_subvoxels" => t.densify_subvoxels.to_string(),
            "prune_opacity_threshold" => t.prune_opacity_threshold.to_string(),
            "densify_start" => t.densify_start.to_string(),
            "densify_stop" => t.densify_stop.to_string(),
            "lr_features" => t.lr.features.to_string(),
            "lr_offsets" => t.lr.offsets.to_string(),
            "lr_scales" => t.lr.scales.to_string(),
            "lr_heads" => t.lr.heads.to_string(),
            "lr_mask" => t.lr.mask.to_string(),
            "lr_deform" => t.lr.deform.to_string(),
            "lr_decay_ratio" => t.lr.decay_ratio.to_string(),
            "seed" => t.seed.to_string(),
            "deform" => t.deform.kind.to_string(),
            "rbf_sigma" => t.deform.sigma.to_string(),
            "knn_k" => t.deform.knn_k.to_string(),
            "time_mask" => t.time_mask.to_string(),
            "voxel_size" => t.voxel_size.to_string(),
            "offsets" => t.offsets.to_string(),
            "feature_dim" => t.feature_dim.to_string(),
            "view_dependent" => t.view_dependent.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{v:?} is not a valid number"))
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(format!("{v:?} is not a boolean")),
            }
        }
        let t = &mut self.train;
        match key {
            "preset" => self.preset = value.to_string(),
            "iterations" => t.iterations = num(value)?,
            "lambda" => t.lambda = num(value)?,
            "lambda_t" => t.lambda_t = num(value)?,
            "densify_interval" => t.densify_interval = num(value)?,
            "densify_grad_threshold" => t.densify_grad_threshold = num(value)?,
            "densify_subvoxels" => t.densify_subvoxels = num(value)?,
            "prune_opacity_threshold" => t.prune_opacity_threshold = num(value)?,
            "densify_start" => t.densify_start = num(value)?,
            "densify_stop" => t.densify_stop = num(value)?,
            "lr_features" => t.lr.features = num(value)?,
            "lr_offsets" => t.lr.offsets = num(value)?,
            "lr_scales" => t.lr.scales = num(value)?,
            "lr_heads" => t.lr.heads = num(value)?,
            "lr_mask" => t.lr.mask = num(value)?,
            "lr_deform" => t.lr.deform = num(value)?,
            "lr_decay_ratio" => t.lr.decay_ratio = num(value)?,
            "seed" => t.seed = num(value)?,
            "deform" => t.deform.kind = value.parse::<DeformKind>().map_err(|e| e.to_string())?,
            "rbf_sigma" => t.deform.sigma = num(value)?,
            "knn_k" => t.deform.knn_k = num(value)?,
            "time_mask" => t.time_mask = flag(value)?,
            "voxel_size" => t.voxel_size = num(value)?,
            "offsets" => t.offsets = num(value)?,
            "feature_dim" => t.feature_dim = num(value)?,
            "view_dependent" => t.view_dependent = flag(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).expect("listed key"));
        }
        s
    }

    /// Overlays `key=value` lines on the defaults. Blank lines and `#`
    /// comments are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| IoError::Config { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("key {k:?} given twice")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        cfg.train.validate().map_err(|e| IoError::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
        for key in CONFIG_KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = RunConfig::parse("# run\niterations = 50\ndeform=knn\ntime_mask=off\nlambda_t=0.1\n").unwrap();
        assert_eq!(cfg.train.iterations, 50);
        assert_eq!(cfg.train.deform.kind, DeformKind::Knn);
        assert!(!cfg.train.time_mask);
        assert_eq!(cfg.train.lambda_t, 0.1);
        for bad in [
            "colour=red",
            "iterations",
            "iterations=ten",
            "deform=warp",
            "lambda=3",
            "seed=1\nseed=2",
        ] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
        match RunConfig::parse("\n\nbogus=1") {
            Err(IoError::Config { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
