//! Proxy A-distance: how well a linear classifier separates two samples.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const MIN_PROXY_SAMPLES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig { seed: 0, epochs: 300, learning_rate: 0.5, l2: 1e-3 }
    }
}

/// Shuffled row indices of one side, split in half: (train, test).
fn halves(n: usize, seed: u64, side: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream_rng(seed, Stream::ProxySplit, side, 0));
    let test = idx.split_off(n / 2);
    (idx, test)
}

/// `2 (1 - 2 eps)` clamped to `[0, 2]`, where `eps` is the held-out error of a
/// logistic regression trained to tell `a` (label 0) from `b` (label 1).
pub fn proxy_a_distance(a: &Tensor, b: &Tensor, cfg: &ProxyConfig) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::shape("proxy_a_distance", a.shape(), b.shape()));
    }
    if a.rows() < MIN_PROXY_SAMPLES || b.rows() < MIN_PROXY_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "proxy_a_distance needs at least {MIN_PROXY_SAMPLES} samples per side, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    if !(a.all_finite() && b.all_finite()) {
        return Err(Error::NonFinite("proxy_a_distance input".into()));
    }
    let d = a.cols();
    let (a_train, a_test) = halves(a.rows(), cfg.seed, 0);
    let (b_train, b_test) = halves(b.rows(), cfg.seed, 1);
    let train: Vec<(&[f64], f64)> =
        a_train.iter().map(|&i| (a.row(i), 0.0)).chain(b_train.iter().map(|&i| (b.row(i), 1.0))).collect();
    let test: Vec<(&[f64], f64)> =
        a_test.iter().map(|&i| (a.row(i), 0.0)).chain(b_test.iter().map(|&i| (b.row(i), 1.0))).collect();

    // standardize with training statistics
    let m = train.len() as f64;
    let mut mean = vec![0.0; d];
    for (x, _) in &train {
        for (mu, v) in mean.iter_mut().zip(*x) {
            *mu += v / m;
        }
    }
    let mut scale = vec![0.0; d];
    for (x, _) in &train {
        for j in 0..d {
            scale[j] += (x[j] - mean[j]).powi(2) / m;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 };
    }
    let standardize = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - mean[j]) * scale[j]).collect() };
    let train: Vec<(Vec<f64>, f64)> = train.iter().map(|(x, y)| (standardize(x), *y)).collect();

    let mut w = vec![0.0; d];
    let mut bias = 0.0;
    let sigmoid = |t: f64| 1.0 / (1.0 + (-t).exp());
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in &train {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias;
            let r = sigmoid(z) - y;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v / m;
            }
            gb += r / m;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= cfg.learning_rate * (g + cfg.l2 * *wj);
        }
        bias -= cfg.learning_rate * gb;
    }

    let wrong = test
        .iter()
        .filter(|(x, y)| {
            let z: f64 = standardize(x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias;
            (z > 0.0) != (*y > 0.5)
        })
        .count();
    let eps = wrong as f64 / test.len() as f64;
    Ok((2.0 * (1.0 - 2.0 * eps)).clamp(0.0, 2.0))
}
