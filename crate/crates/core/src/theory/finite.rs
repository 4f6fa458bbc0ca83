//! Exact divergences and error bounds over a finite input space with a finite
//! set of binary hypotheses. Everything here is enumeration, no sampling.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used by every `holds` comparison.
pub const TOLERANCE: f64 = 1e-12;

pub type Hypothesis = Vec<bool>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    /// Size of the input space.
    pub points: usize,
    pub hypotheses: Vec<Hypothesis>,
    pub truth: Hypothesis,
    /// Source distributions `S_1..S_L`.
    pub sources: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// Mixture coefficients `phi` over the sources.
    pub mixture: Vec<f64>,
}

fn check_distribution(name: &str, d: &[f64], n: usize) -> Result<()> {
    if d.len() != n {
        return Err(Error::InvalidInput(format!("{name} has {} entries for {n} points", d.len())));
    }
    if d.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} has a negative or non-finite mass")));
    }
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > TOLERANCE {
        return Err(Error::InvalidInput(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// Nonnegative weights summing to 1, one per source.
pub fn check_coefficients(name: &str, c: &[f64], sources: usize) -> Result<()> {
    if c.len() != sources {
        return Err(Error::InvalidInput(format!("{name} has {} coefficients for {sources} sources", c.len())));
    }
    check_distribution(name, c, sources)
}

impl FiniteInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.points;
        if n == 0 {
            return Err(Error::InvalidInput("empty input space".into()));
        }
        if self.hypotheses.is_empty() {
            return Err(Error::InvalidInput("empty hypothesis class".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::InvalidInput("no source distributions".into()));
        }
        if let Some(h) = self.hypotheses.iter().chain([&self.truth]).find(|h| h.len() != n) {
            return Err(Error::InvalidInput(format!("labelling of length {} over {n} points", h.len())));
        }
        for (i, s) in self.sources.iter().enumerate() {
            check_distribution(&format!("source {i}"), s, n)?;
        }
        check_distribution("target", &self.target, n)?;
        check_coefficients("mixture", &self.mixture, self.sources.len())
    }

    /// `sum_i phi_i S_i`.
    pub fn source_mixture(&self) -> Vec<f64> {
        mix(&self.sources, &self.mixture)
    }
}

/// Pointwise `sum_i c_i d_i`.
pub fn mix(dists: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
    let n = dists.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (d, &c) in dists.iter().zip(coeffs) {
        for (o, &p) in out.iter_mut().zip(d) {
            *o += c * p;
        }
    }
    out
}

/// `sum_x dist(x) |h(x) - f(x)|`.
pub fn expected_error(h: &[bool], f: &[bool], dist: &[f64]) -> Result<f64> {
    if h.len() != f.len() || h.len() != dist.len() {
        return Err(Error::InvalidInput(format!("expected_error: lengths {}, {}, {}", h.len(), f.len(), dist.len())));
    }
    Ok(h.iter().zip(f).zip(dist).filter(|((a, b), _)| a != b).map(|(_, &p)| p).sum())
}

fn mass(h: &[bool], dist: &[f64]) -> f64 {
    h.iter().zip(dist).filter(|(&on, _)| on).map(|(_, &p)| p).sum()
}

/// `2 max_h |Pr_S[h = 1] - Pr_T[h = 1]|`.
pub fn h_divergence(hypotheses: &[Hypothesis], s: &[f64], t: &[f64]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidInput("h_divergence: empty hypothesis class".into()));
    }
    if s.len() != t.len() || hypotheses.iter().any(|h| h.len() != s.len()) {
        return Err(Error::InvalidInput("h_divergence: misaligned lengths".into()));
    }
    Ok(2.0 * hypotheses.iter().map(|h| (mass(h, s) - mass(h, t)).abs()).fold(0.0, f64::max))
}

/// `{h xor h' : h, h' in H}` without duplicates, in lexicographic order.
pub fn symmetric_difference_class(hypotheses: &[Hypothesis]) -> Vec<Hypothesis> {
    let mut set = BTreeSet::new();
    for a in hypotheses {
        for b in hypotheses {
            set.insert(a.iter().zip(b).map(|(x, y)| x ^ y).collect::<Hypothesis>());
        }
    }
    set.into_iter().collect()
}

pub fn hdh_divergence(hypotheses: &[Hypothesis], s: &[f64], t: &[f64]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidInput("hdh_divergence: empty hypothesis class".into()));
    }
    h_divergence(&symmetric_difference_class(hypotheses), s, t)
}

fn max_pairwise_hdh(hypotheses: &[Hypothesis], sources: &[Vec<f64>]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (j, a) in sources.iter().enumerate() {
        for b in &sources[j + 1..] {
            best = best.max(hdh_divergence(hypotheses, a, b)?);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `d(sum phi_i S_i, sum psi_i S_i)` against the largest pairwise
/// source divergence.
pub fn check_mixture_inequality(
    hypotheses: &[Hypothesis],
    sources: &[Vec<f64>],
    phi: &[f64],
    psi: &[f64],
) -> Result<MixtureCheck> {
    check_coefficients("phi", phi, sources.len())?;
    check_coefficients("psi", psi, sources.len())?;
    let lhs = hdh_divergence(hypotheses, &mix(sources, phi), &mix(sources, psi))?;
    let rhs = max_pairwise_hdh(hypotheses, sources)?;
    Ok(MixtureCheck { lhs, rhs, holds: lhs <= rhs + TOLERANCE })
}

/// The same comparison for an arbitrary candidate distribution. Outside the
/// source hull the inequality is not guaranteed, so this only reports.
pub fn mixture_condition_report(
    hypotheses: &[Hypothesis],
    sources: &[Vec<f64>],
    phi: &[f64],
    candidate: &[f64],
) -> Result<MixtureCheck> {
    check_coefficients("phi", phi, sources.len())?;
    let n = sources.first().map_or(0, Vec::len);
    check_distribution("candidate", candidate, n)?;
    let lhs = hdh_divergence(hypotheses, &mix(sources, phi), candidate)?;
    let rhs = max_pairwise_hdh(hypotheses, sources)?;
    Ok(MixtureCheck { lhs, rhs, holds: lhs <= rhs + TOLERANCE })
}

/// Largest `|eps_mixture(h) - sum_i phi_i eps_{S_i}(h)|` over `H`.
pub fn error_linearity_check(hypotheses: &[Hypothesis], sources: &[Vec<f64>], phi: &[f64], f: &[bool]) -> Result<f64> {
    check_coefficients("phi", phi, sources.len())?;
    let mixture = mix(sources, phi);
    let mut worst: f64 = 0.0;
    for h in hypotheses {
        let direct = expected_error(h, f, &mixture)?;
        let mut weighted = 0.0;
        for (s, &w) in sources.iter().zip(phi) {
            weighted += w * expected_error(h, f, s)?;
        }
        worst = worst.max((direct - weighted).abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub weighted_source_error: f64,
    /// `d_HdH(S, T)` for the candidate `S`.
    pub divergence_to_target: f64,
    pub max_pairwise_source_divergence: f64,
    /// `min_h' [sum_i phi_i eps_{S_i}(h') + eps_T(h')]`.
    pub lambda_e: f64,
    /// Informational split: `min_h' [eps_S(h') + eps_T(h')]` and
    /// `min_h' [eps_mixture(h') + eps_S(h')]`.
    pub lambda_candidate_target: f64,
    pub lambda_mixture_candidate: f64,
    pub bound_rhs: f64,
    pub target_error_lhs: f64,
    pub holds: bool,
}

/// Evaluates both sides of the multi-source target-error bound for
/// hypothesis `h` and the candidate `S = sum_i psi_i S_i`.
pub fn bound_report(inst: &FiniteInstance, h: &[bool], psi: &[f64]) -> Result<BoundReport> {
    inst.validate()?;
    check_coefficients("psi", psi, inst.sources.len())?;
    if h.len() != inst.points {
        return Err(Error::InvalidInput(format!("hypothesis of length {} over {} points", h.len(), inst.points)));
    }
    let f = &inst.truth;
    let mixture = inst.source_mixture();
    let candidate = mix(&inst.sources, psi);
    let weighted = |g: &[bool]| -> Result<f64> {
        let mut acc = 0.0;
        for (s, &w) in inst.sources.iter().zip(&inst.mixture) {
            acc += w * expected_error(g, f, s)?;
        }
        Ok(acc)
    };

    let mut lambda_e = f64::INFINITY;
    let mut lambda_ct = f64::INFINITY;
    let mut lambda_mc = f64::INFINITY;
    for g in &inst.hypotheses {
        let on_target = expected_error(g, f, &inst.target)?;
        let on_candidate = expected_error(g, f, &candidate)?;
        lambda_e = lambda_e.min(weighted(g)? + on_target);
        lambda_ct = lambda_ct.min(on_candidate + on_target);
        lambda_mc = lambda_mc.min(expected_error(g, f, &mixture)? + on_candidate);
    }

    let weighted_source_error = weighted(h)?;
    let divergence_to_target = hdh_divergence(&inst.hypotheses, &candidate, &inst.target)?;
    let max_pairwise_source_divergence = max_pairwise_hdh(&inst.hypotheses, &inst.sources)?;
    let bound_rhs =
        weighted_source_error + 0.5 * divergence_to_target + 0.5 * max_pairwise_source_divergence + lambda_e;
    let target_error_lhs = expected_error(h, f, &inst.target)?;
    Ok(BoundReport {
        weighted_source_error,
        divergence_to_target,
        max_pairwise_source_divergence,
        lambda_e,
        lambda_candidate_target: lambda_ct,
        lambda_mixture_candidate: lambda_mc,
        bound_rhs,
        target_error_lhs,
        holds: target_error_lhs <= bound_rhs + TOLERANCE,
    })
}
