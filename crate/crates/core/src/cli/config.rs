use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CliError, CliResult, GenDataArgs, TrainOverrides};
use crate::data::SyntheticConfig;
use crate::pipeline::{parse_components, TrainConfig};

/// `{"train": {...}, "synthetic": {...}}`; absent keys take defaults and
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn parse_ids(list: &str) -> CliResult<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("not a non-negative integer: {s:?}"))))
        .collect()
}

pub fn train_config(o: &TrainOverrides) -> CliResult<TrainConfig> {
    let mut cfg = ConfigFile::load(o.config.as_deref())?.train;
    set(&mut cfg.seed, o.seed);
    set(&mut cfg.epochs_ss, o.epochs_ss);
    set(&mut cfg.epochs_as, o.epochs_as);
    set(&mut cfg.batch_size, o.batch_size);
    set(&mut cfg.lr, o.lr);
    set(&mut cfg.lambda, o.lambda);
    set(&mut cfg.alpha, o.alpha);
    set(&mut cfg.hidden_dim, o.hidden_dim);
    set(&mut cfg.feature_dim, o.feature_dim);
    set(&mut cfg.noise_variance, o.noise_variance);
    cfg.equal_weights |= o.equal_weights;
    if let Some(list) = &o.disable {
        let mut all = cfg.disable.clone();
        all.extend(parse_components(list).map_err(|e| CliError::Usage(e.to_string()))?);
        all.sort();
        all.dedup();
        cfg.disable = all;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn synthetic_config(a: &GenDataArgs) -> CliResult<SyntheticConfig> {
    let mut cfg = ConfigFile::load(a.config.as_deref())?.synthetic;
    set(&mut cfg.num_domains, a.domains);
    set(&mut cfg.num_classes, a.classes);
    set(&mut cfg.dim, a.dim);
    set(&mut cfg.samples_per_class, a.samples_per_class);
    set(&mut cfg.class_separation, a.separation);
    set(&mut cfg.domain_shift_scale, a.shift);
    set(&mut cfg.corrupt_shift_multiplier, a.corrupt_mult);
    set(&mut cfg.label_noise_rate, a.label_noise);
    set(&mut cfg.seed, a.seed);
    if let Some(list) = &a.corrupt {
        cfg.corrupt_domain_ids = parse_ids(list)?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}
