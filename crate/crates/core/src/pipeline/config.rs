use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, StageOptions};

/// Method components that an ablation can switch off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Mdc,
    Mmd,
    Adversarial,
    Ss,
    Noise,
}

impl Component {
    pub const ALL: [Component; 5] =
        [Component::Mdc, Component::Mmd, Component::Adversarial, Component::Ss, Component::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Component::Mdc => "mdc",
            Component::Mmd => "mmd",
            Component::Adversarial => "adversarial",
            Component::Ss => "ss",
            Component::Noise => "noise",
        }
    }

    /// Row label in ablation tables.
    pub fn ablation_label(self) -> &'static str {
        match self {
            Component::Mdc => "w/o MDC loss",
            Component::Mmd => "w/o MMD loss",
            Component::Adversarial => "w/o Adversarial",
            Component::Ss => "w/o SS",
            Component::Noise => "w/o Noise",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL.into_iter().find(|c| c.name() == s.trim()).ok_or_else(|| {
            Error::InvalidConfig(format!("unknown component {s:?}; expected one of mdc, mmd, adversarial, ss, noise"))
        })
    }
}

/// Parses a comma-separated component list; the empty string is the empty set.
pub fn parse_components(list: &str) -> Result<Vec<Component>> {
    let mut out: Vec<Component> =
        list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs_ss: usize,
    pub epochs_as: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub radius: f64,
    pub noise_variance: f64,
    pub seed: u64,
    pub equal_weights: bool,
    pub conditional_mmd: bool,
    pub mdc_detach_features: bool,
    pub warm_start_encoder: bool,
    pub disable: Vec<Component>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.005,
            epochs_ss: 20,
            epochs_as: 30,
            lambda: 1.0,
            alpha: 0.5,
            feature_dim: 128,
            hidden_dim: 256,
            radius: 1.0,
            noise_variance: 0.01,
            seed: 0,
            equal_weights: false,
            conditional_mmd: false,
            mdc_detach_features: false,
            warm_start_encoder: false,
            disable: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0");
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("feature_dim and hidden_dim must be positive");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive");
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return bad("noise_variance must be >= 0");
        }
        Ok(())
    }

    pub fn disabled(&self, c: Component) -> bool {
        self.disable.contains(&c)
    }

    /// Returns a copy with `c` added to the disabled set.
    pub fn without(&self, c: Component) -> Self {
        let mut cfg = self.clone();
        if !cfg.disable.contains(&c) {
            cfg.disable.push(c);
            cfg.disable.sort();
        }
        cfg
    }

    /// Whether AS runs without SS output: equal weights and an
    /// initialisation-copy discrepancy reference.
    pub fn skips_ss(&self) -> bool {
        self.equal_weights || self.disabled(Component::Ss)
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.disabled(Component::Adversarial) {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn effective_noise_variance(&self) -> f64 {
        if self.disabled(Component::Noise) {
            0.0
        } else {
            self.noise_variance
        }
    }

    pub fn stage_options(&self) -> StageOptions {
        StageOptions {
            alpha: self.alpha,
            use_mmd: !self.disabled(Component::Mmd),
            use_mdc: !self.disabled(Component::Mdc),
            mdc_detach_features: self.mdc_detach_features,
            conditional_mmd: self.conditional_mmd,
        }
    }

    /// The plain source-supervised baseline.
    pub fn is_nontransfer(&self) -> bool {
        self.disabled(Component::Adversarial)
            && self.disabled(Component::Mmd)
            && self.disabled(Component::Mdc)
            && self.skips_ss()
    }

    pub fn run_label(&self) -> &'static str {
        if self.is_nontransfer() {
            "Nontransfer"
        } else if self.skips_ss() {
            "Equal-weights"
        } else {
            "SSAS"
        }
    }

    pub fn network(&self, input_dim: usize, num_classes: usize, source_ids: Vec<usize>, seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: self.feature_dim,
            num_classes,
            source_ids,
            radius: self.radius,
            noise_variance: self.effective_noise_variance(),
            seed,
        }
    }
}
