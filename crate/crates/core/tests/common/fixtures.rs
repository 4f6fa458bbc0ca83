//! Fixed-seed bundles and the corrupted-source comparison run on them.

use ssas::data::{generate_synthetic, MultiDomainBundle, SyntheticConfig};
use ssas::pipeline::{run_fold, Component, TrainConfig};

pub const CORRUPTED: usize = 5;
pub const TARGET: usize = 0;
pub const SEEDS: u64 = 10;

/// Six domains, three classes, twenty features, 150 samples per class,
/// shift 0.5, domain 5 corrupted (multiplier 10, label noise 0.4).
pub fn corrupted_bundle() -> MultiDomainBundle {
    generate_synthetic(&SyntheticConfig {
        num_domains: 6,
        num_classes: 3,
        dim: 20,
        samples_per_class: 150,
        domain_shift_scale: 0.5,
        corrupt_domain_ids: vec![CORRUPTED],
        corrupt_shift_multiplier: 10.0,
        label_noise_rate: 0.4,
        seed: 2024,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

/// Published optimizer and loss settings with a narrower network.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig { hidden_dim: 64, feature_dim: 32, seed, ..TrainConfig::default() }
}

pub fn nontransfer(cfg: &TrainConfig) -> TrainConfig {
    [Component::Adversarial, Component::Mmd, Component::Mdc, Component::Ss]
        .iter()
        .fold(cfg.clone(), |c, &k| c.without(k))
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
    /// The corrupted source has strictly the smallest weight.
    pub corrupted_strict_min: bool,
    pub ssas: f64,
    pub equal_weights: f64,
    pub nontransfer: f64,
}

pub fn run_seed(bundle: &MultiDomainBundle, seed: u64) -> SeedOutcome {
    let cfg = desk_config(seed);
    let full = run_fold(bundle, TARGET, &cfg, seed).unwrap();
    let eq = run_fold(bundle, TARGET, &TrainConfig { equal_weights: true, ..cfg.clone() }, seed).unwrap();
    let nt = run_fold(bundle, TARGET, &nontransfer(&cfg), seed).unwrap();
    let w = &full.report.source_weights;
    let ci = w.source_ids.iter().position(|&i| i == CORRUPTED).unwrap();
    let corrupted_strict_min = w.weights.iter().enumerate().all(|(i, &x)| i == ci || x > w.weights[ci]);
    SeedOutcome {
        seed,
        counts: w.counts.clone(),
        weights: w.weights.clone(),
        corrupted_strict_min,
        ssas: full.report.metrics.accuracy,
        equal_weights: eq.report.metrics.accuracy,
        nontransfer: nt.report.metrics.accuracy,
    }
}

pub fn run_all_seeds() -> Vec<SeedOutcome> {
    let bundle = corrupted_bundle();
    (0..SEEDS).map(|s| run_seed(&bundle, s)).collect()
}

/// Three strongly shifted domains; any two are well-separated sources.
pub fn separated_bundle() -> MultiDomainBundle {
    generate_synthetic(&SyntheticConfig {
        num_domains: 3,
        samples_per_class: 60,
        domain_shift_scale: 6.0,
        seed: 31,
        ..SyntheticConfig::default()
    })
    .unwrap()
}
