//! Gaussian class clusters per domain. Every domain sees the same class
//! prototypes through its own rotation and translation; corrupted domains get
//! a larger perturbation and noisy labels.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DomainDataset, MultiDomainBundle};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Standard deviation of every cluster coordinate.
pub const CLUSTER_STD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_domains: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Distance between any two class prototypes.
    pub class_separation: f64,
    /// Translation norm of each domain; also drives its rotation strength.
    pub domain_shift_scale: f64,
    pub corrupt_domain_ids: Vec<usize>,
    pub corrupt_shift_multiplier: f64,
    pub label_noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_domains: 6,
            num_classes: 3,
            dim: 20,
            samples_per_class: 150,
            class_separation: 4.0,
            domain_shift_scale: 0.5,
            corrupt_domain_ids: Vec::new(),
            corrupt_shift_multiplier: 10.0,
            label_noise_rate: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_domains == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return bad("num_domains, dim and samples_per_class must be positive".into());
        }
        if self.num_classes < 2 || self.num_classes > self.dim {
            return bad(format!("num_classes must lie in [2, dim], got {}", self.num_classes));
        }
        if self.num_classes * self.samples_per_class < 2 {
            return bad("each domain needs at least 2 samples".into());
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be finite and >= 0".into());
        }
        if !(self.domain_shift_scale >= 0.0 && self.domain_shift_scale.is_finite()) {
            return bad("domain_shift_scale must be finite and >= 0".into());
        }
        if !(self.corrupt_shift_multiplier >= 0.0 && self.corrupt_shift_multiplier.is_finite()) {
            return bad("corrupt_shift_multiplier must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise_rate) {
            return bad(format!("label_noise_rate must lie in [0, 1], got {}", self.label_noise_rate));
        }
        if let Some(&id) = self.corrupt_domain_ids.iter().find(|&&id| id >= self.num_domains) {
            return bad(format!("corrupt domain {id} outside 0..{}", self.num_domains));
        }
        Ok(())
    }
}

/// Orthonormalizes the columns of a row-major `[rows x cols]` matrix by
/// modified Gram-Schmidt. The implied R factor has a positive diagonal.
fn orthonormal_columns(mut m: Vec<f64>, rows: usize, cols: usize) -> Vec<f64> {
    for j in 0..cols {
        for p in 0..j {
            let dot: f64 = (0..rows).map(|i| m[i * cols + j] * m[i * cols + p]).sum();
            for i in 0..rows {
                m[i * cols + j] -= dot * m[i * cols + p];
            }
        }
        let norm: f64 = (0..rows).map(|i| m[i * cols + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            m[i * cols + j] /= norm;
        }
    }
    m
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `[K x D]` class means: scaled orthonormal directions, so every pair sits
/// exactly `class_separation` apart.
pub fn class_prototypes(cfg: &SyntheticConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (k, d) = (cfg.num_classes, cfg.dim);
    let mut rng = rng::stream_rng(cfg.seed, Stream::Synthetic, u64::MAX, 0);
    let q = orthonormal_columns(gaussian(&mut rng, d * k), d, k);
    let scale = cfg.class_separation / std::f64::consts::SQRT_2;
    let mut out = vec![0.0; k * d];
    for c in 0..k {
        for i in 0..d {
            out[c * d + i] = scale * q[i * k + c];
        }
    }
    Tensor::matrix(k, d, out)
}

/// Rotation `Q` from the QR factorization of `I + s G / sqrt(D)`; `s = 0`
/// gives the identity and large `s` approaches a uniformly random rotation.
fn perturbed_rotation(rng: &mut ChaCha8Rng, d: usize, s: f64) -> Vec<f64> {
    let g = gaussian(rng, d * d);
    if s == 0.0 {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        return eye;
    }
    let mut m: Vec<f64> = g.iter().map(|x| s * x / (d as f64).sqrt()).collect();
    for i in 0..d {
        m[i * d + i] += 1.0;
    }
    orthonormal_columns(m, d, d)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<MultiDomainBundle> {
    let protos = class_prototypes(cfg)?;
    let (k, d, n) = (cfg.num_classes, cfg.dim, cfg.samples_per_class);
    let mut domains = Vec::with_capacity(cfg.num_domains);
    for id in 0..cfg.num_domains {
        let corrupt = cfg.corrupt_domain_ids.contains(&id);
        let s = cfg.domain_shift_scale * if corrupt { cfg.corrupt_shift_multiplier } else { 1.0 };
        let mut rng = rng::stream_rng(cfg.seed, Stream::Synthetic, id as u64, 0);
        let rot = perturbed_rotation(&mut rng, d, s);
        let dir = gaussian(&mut rng, d);
        let dir_norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let shift: Vec<f64> = dir.iter().map(|x| s * x / dir_norm).collect();

        let mut features = Vec::with_capacity(k * n * d);
        let mut labels = Vec::with_capacity(k * n);
        let mut point = vec![0.0; d];
        for c in 0..k {
            let mu = protos.row(c);
            for _ in 0..n {
                for (p, m) in point.iter_mut().zip(mu) {
                    *p = m + CLUSTER_STD * rng.sample::<f64, _>(StandardNormal);
                }
                for i in 0..d {
                    let r: f64 = (0..d).map(|j| rot[i * d + j] * point[j]).sum();
                    features.push(r + shift[i]);
                }
                labels.push(c);
            }
        }
        if corrupt && cfg.label_noise_rate > 0.0 {
            let total = labels.len();
            let flips = (cfg.label_noise_rate * total as f64).round() as usize;
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..flips] {
                labels[i] = rng.random_range(0..k);
            }
        }
        domains.push(DomainDataset {
            domain_id: id,
            name: format!("subject_{id}"),
            features: Tensor::matrix(k * n, d, features)?,
            labels,
        });
    }
    MultiDomainBundle::new(d, k, domains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_gap(a: &DomainDataset, b: &DomainDataset) -> f64 {
        let mean = |t: &Tensor| -> Vec<f64> {
            (0..t.cols()).map(|j| (0..t.rows()).map(|i| t.get(i, j)).sum::<f64>() / t.rows() as f64).collect()
        };
        mean(&a.features).iter().zip(mean(&b.features)).map(|(x, y)| (x - y).powi(2)).sum()
    }

    #[test]
    fn prototypes_are_equidistant() {
        let cfg = SyntheticConfig { num_classes: 4, class_separation: 3.0, ..SyntheticConfig::default() };
        let p = class_prototypes(&cfg).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                let dist: f64 = p.row(a).iter().zip(p.row(b)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!((dist - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = rng::stream_rng(1, Stream::Synthetic, 0, 0);
        let d = 7;
        let q = perturbed_rotation(&mut rng, d, 0.8);
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|i| q[i * d + a] * q[i * d + b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig { samples_per_class: 10, ..SyntheticConfig::default() };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        assert_eq!(a.num_domains(), 6);
        assert_eq!(a.domains[0].features.shape(), &[30, 20]);
    }

    #[test]
    fn corrupted_domain_is_far_from_clean_ones() {
        let cfg = SyntheticConfig { corrupt_domain_ids: vec![2], label_noise_rate: 0.4, ..SyntheticConfig::default() };
        let b = generate_synthetic(&cfg).unwrap();
        let clean: Vec<&DomainDataset> = b.domains.iter().filter(|d| d.domain_id != 2).collect();
        let mut max_clean: f64 = 0.0;
        for i in 0..clean.len() {
            for j in i + 1..clean.len() {
                max_clean = max_clean.max(mean_gap(clean[i], clean[j]));
            }
        }
        for c in &clean {
            assert!(mean_gap(&b.domains[2], c) > max_clean);
        }
        let noisy = b.domains[2].labels.iter().enumerate().filter(|&(i, &y)| y != i / 150).count();
        // 180 resampled, about two thirds of them land on another class
        assert!(noisy > 90 && noisy <= 180, "{noisy}");
    }

    #[test]
    fn no_shift_gives_identical_mixtures() {
        let cfg = SyntheticConfig { domain_shift_scale: 0.0, num_domains: 3, ..SyntheticConfig::default() };
        let b = generate_synthetic(&cfg).unwrap();
        // squared mean gap of two independent samples: about 2 D / M
        let expect = 2.0 * 20.0 / 450.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let gap = mean_gap(&b.domains[i], &b.domains[j]);
            assert!(gap < 3.0 * expect, "{gap}");
        }
    }

    #[test]
    fn unshifted_class_means_match_prototypes() {
        let (n, k) = (400, 3);
        // four standard errors of a per-class mean
        let tol = 4.0 * CLUSTER_STD / (n as f64).sqrt();
        for seed in 0..3 {
            let cfg = SyntheticConfig {
                domain_shift_scale: 0.0,
                num_domains: 1,
                samples_per_class: n,
                seed,
                ..SyntheticConfig::default()
            };
            let protos = class_prototypes(&cfg).unwrap();
            let b = generate_synthetic(&cfg).unwrap();
            let d = &b.domains[0];
            for c in 0..k {
                for j in 0..cfg.dim {
                    let m = (c * n..(c + 1) * n).map(|i| d.features.get(i, j)).sum::<f64>() / n as f64;
                    assert!((m - protos.get(c, j)).abs() < tol, "seed {seed} class {c} coord {j}");
                }
            }
        }
    }

    #[test]
    fn shift_moves_domain_mean() {
        let cfg = SyntheticConfig {
            num_domains: 1,
            samples_per_class: 2000,
            domain_shift_scale: 0.5,
            ..SyntheticConfig::default()
        };
        let b = generate_synthetic(&cfg).unwrap();
        let s0 = generate_synthetic(&SyntheticConfig { domain_shift_scale: 0.0, ..cfg.clone() }).unwrap();
        let gap = mean_gap(&b.domains[0], &s0.domains[0]).sqrt();
        assert!(gap > 0.1 && gap < 2.0, "{gap}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = SyntheticConfig::default();
        for cfg in [
            SyntheticConfig { corrupt_domain_ids: vec![6], ..base.clone() },
            SyntheticConfig { label_noise_rate: 1.5, ..base.clone() },
            SyntheticConfig { num_classes: 21, ..base.clone() },
            SyntheticConfig { domain_shift_scale: -1.0, ..base.clone() },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }
}
