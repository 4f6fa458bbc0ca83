//! Central finite-difference gradient checking.
//!
//! The finite-difference estimate cannot see gradient reversal: a GRL is the
//! identity in the forward pass, so for a parameter upstream of exactly one
//! GRL the analytic gradient must equal `-lambda` times the estimate. Callers
//! express this with a per-parameter `reversal` multiplier.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Lower bound of the relative-error denominator, so that gradient
    /// entries near zero are compared on an absolute scale.
    pub denom_floor: f64,
    /// When the forward and backward one-sided differences disagree by more
    /// than this (relative), the probe straddles a kink and is skipped.
    pub kink_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-6, tol: 1e-5, denom_floor: 1e-3, kink_tol: 1e-2 }
    }
}

/// Coordinates to probe: `(parameter index, flat element index)`.
pub type Probe = (usize, usize);

#[derive(Clone, Debug, Default)]
pub struct NumericGradient {
    pub grads: Vec<Tensor>,
    /// Probes whose one-sided differences disagreed (non-differentiable point).
    pub kinks: Vec<Probe>,
    pub probes: Vec<Probe>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<Probe>,
    pub probes: usize,
    pub skipped_kinks: usize,
    pub passed: bool,
}

/// Every coordinate of every parameter.
pub fn all_probes(params: &[Tensor]) -> Vec<Probe> {
    params.iter().enumerate().flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i))).collect()
}

/// Central differences of `f` at `params`, restricted to `probes`.
/// Unprobed coordinates are left at zero.
pub fn numeric_gradient<F>(
    mut f: F,
    params: &[Tensor],
    probes: &[Probe],
    cfg: &GradCheckConfig,
) -> Result<NumericGradient>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut eval = |ps: &[Tensor]| -> Result<f64> {
        let v = f(ps)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };
    let base = eval(params)?;
    let mut work = params.to_vec();
    let mut grads: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut kinks = Vec::new();
    for &(p, i) in probes {
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = orig + cfg.eps;
        let plus = eval(&work)?;
        work[p].data_mut()[i] = orig - cfg.eps;
        let minus = eval(&work)?;
        work[p].data_mut()[i] = orig;

        let central = (plus - minus) / (2.0 * cfg.eps);
        let forward = (plus - base) / cfg.eps;
        let backward = (base - minus) / cfg.eps;
        if (forward - backward).abs() > cfg.kink_tol * central.abs().max(1.0) {
            kinks.push((p, i));
        }
        grads[p].data_mut()[i] = central;
    }
    Ok(NumericGradient { grads, kinks, probes: probes.to_vec() })
}

/// Compares analytic gradients against a (possibly combined) numeric estimate
/// on the probed coordinates.
pub fn compare_gradients(analytic: &[Tensor], numeric: &NumericGradient, cfg: &GradCheckConfig) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for &(p, i) in &numeric.probes {
        if numeric.kinks.contains(&(p, i)) {
            continue;
        }
        checked += 1;
        let a = analytic[p].data()[i];
        let n = numeric.grads[p].data()[i];
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(cfg.denom_floor);
        max_abs = max_abs.max(abs);
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((p, i));
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        worst,
        probes: checked,
        skipped_kinks: numeric.kinks.len(),
        passed: max_rel < cfg.tol,
    }
}

/// Checks `analytic` against central differences of `f`, with the numeric
/// estimate for parameter `p` multiplied by `reversal[p]` (use `-lambda` for
/// parameters upstream of a single GRL, `1.0` otherwise).
pub fn finite_difference_check<F>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    reversal: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if analytic.len() != params.len() || reversal.len() != params.len() {
        return Err(Error::InvalidInput("analytic gradients and reversal factors must align with params".into()));
    }
    let probes = all_probes(params);
    let mut numeric = numeric_gradient(f, params, &probes, cfg)?;
    for (g, &r) in numeric.grads.iter_mut().zip(reversal) {
        *g = g.map(|v| v * r);
    }
    Ok(compare_gradients(analytic, &numeric, cfg))
}
