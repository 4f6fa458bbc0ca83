//! Randomized verification over many small finite instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::finite::{self, FiniteInstance, Hypothesis, TOLERANCE};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub instances: usize,
    pub max_points: usize,
    pub max_hypotheses: usize,
    pub max_sources: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { instances: 1000, max_points: 6, max_hypotheses: 16, max_sources: 4, seed: 0 }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_points == 0 || self.max_points > 12 {
            return Err(Error::InvalidConfig(format!("max_points must lie in [1, 12], got {}", self.max_points)));
        }
        if self.max_hypotheses == 0 || self.max_hypotheses > 64 {
            return Err(Error::InvalidConfig(format!(
                "max_hypotheses must lie in [1, 64], got {}",
                self.max_hypotheses
            )));
        }
        if self.max_sources == 0 {
            return Err(Error::InvalidConfig("max_sources must be positive".into()));
        }
        Ok(())
    }
}

/// Probability vector with occasional exact zeros.
fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { -rng.random::<f64>().max(1e-300).ln() }).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return raw.iter().map(|x| x / total).collect();
        }
    }
}

fn random_labelling(rng: &mut ChaCha8Rng, n: usize) -> Hypothesis {
    (0..n).map(|_| rng.random_bool(0.5)).collect()
}

/// A random instance plus the hypothesis and candidate mixture it is checked with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub index: usize,
    pub instance: FiniteInstance,
    pub hypothesis: Hypothesis,
    pub psi: Vec<f64>,
}

pub fn random_case(cfg: &SuiteConfig, index: usize) -> Case {
    let mut rng = rng::stream_rng(cfg.seed, Stream::Theory, index as u64, 0);
    let n = rng.random_range(1..=cfg.max_points);
    let h_count = rng.random_range(1..=cfg.max_hypotheses);
    let l = rng.random_range(1..=cfg.max_sources);
    let hypotheses: Vec<Hypothesis> = (0..h_count).map(|_| random_labelling(&mut rng, n)).collect();
    let truth = random_labelling(&mut rng, n);
    let sources: Vec<Vec<f64>> = (0..l).map(|_| random_distribution(&mut rng, n)).collect();
    let target = random_distribution(&mut rng, n);
    let mixture = random_distribution(&mut rng, l);
    let psi = random_distribution(&mut rng, l);
    let hypothesis = hypotheses[rng.random_range(0..h_count)].clone();
    Case { index, instance: FiniteInstance { points: n, hypotheses, truth, sources, target, mixture }, hypothesis, psi }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckStats {
    pub runs: usize,
    pub failures: usize,
    /// Largest deviation (linearity) or largest `lhs - rhs` (inequalities).
    pub worst: f64,
}

impl CheckStats {
    fn record(&mut self, value: f64, failed: bool) {
        if self.runs == 0 || value > self.worst {
            self.worst = value;
        }
        self.runs += 1;
        self.failures += failed as usize;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub check: String,
    pub detail: String,
    pub case: Case,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub format_version: u32,
    pub config: SuiteConfig,
    pub instances: usize,
    pub failures: usize,
    pub max_deviation: f64,
    pub error_linearity: CheckStats,
    pub mixture_inequality: CheckStats,
    pub bound: CheckStats,
    /// Reported, not asserted: the mixture condition with the target itself
    /// as the candidate, which need not lie in the source hull. Its
    /// failures do not count towards `failures`.
    pub target_candidate_condition: CheckStats,
    pub counterexamples: Vec<Counterexample>,
}

impl TheorySummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct CaseOutcome {
    linearity: f64,
    mixture: finite::MixtureCheck,
    bound: finite::BoundReport,
    target_condition: finite::MixtureCheck,
}

fn evaluate(case: &Case) -> Result<CaseOutcome> {
    let inst = &case.instance;
    inst.validate()?;
    Ok(CaseOutcome {
        linearity: finite::error_linearity_check(&inst.hypotheses, &inst.sources, &inst.mixture, &inst.truth)?,
        mixture: finite::check_mixture_inequality(&inst.hypotheses, &inst.sources, &inst.mixture, &case.psi)?,
        bound: finite::bound_report(inst, &case.hypothesis, &case.psi)?,
        target_condition: finite::mixture_condition_report(
            &inst.hypotheses,
            &inst.sources,
            &inst.mixture,
            &inst.target,
        )?,
    })
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<TheorySummary> {
    cfg.validate()?;
    let results: Vec<(Case, Result<CaseOutcome>)> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let case = random_case(cfg, i);
            let out = evaluate(&case);
            (case, out)
        })
        .collect();

    let mut lin = CheckStats::default();
    let mut mix = CheckStats::default();
    let mut bound = CheckStats::default();
    let mut cond = CheckStats::default();
    let mut counterexamples = Vec::new();
    for (case, out) in results {
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                counterexamples.push(Counterexample { check: "evaluation".into(), detail: e.to_string(), case });
                continue;
            }
        };
        let lin_fail = out.linearity > TOLERANCE;
        lin.record(out.linearity, lin_fail);
        mix.record(out.mixture.lhs - out.mixture.rhs, !out.mixture.holds);
        bound.record(out.bound.target_error_lhs - out.bound.bound_rhs, !out.bound.holds);
        cond.record(out.target_condition.lhs - out.target_condition.rhs, !out.target_condition.holds);
        if lin_fail {
            counterexamples.push(Counterexample {
                check: "error_linearity".into(),
                detail: format!("deviation {}", out.linearity),
                case: case.clone(),
            });
        }
        if !out.mixture.holds {
            counterexamples.push(Counterexample {
                check: "mixture_inequality".into(),
                detail: format!("lhs {} > rhs {}", out.mixture.lhs, out.mixture.rhs),
                case: case.clone(),
            });
        }
        if !out.bound.holds {
            counterexamples.push(Counterexample {
                check: "bound".into(),
                detail: format!("target error {} > bound {}", out.bound.target_error_lhs, out.bound.bound_rhs),
                case,
            });
        }
    }
    Ok(TheorySummary {
        format_version: SUMMARY_FORMAT_VERSION,
        config: cfg.clone(),
        instances: cfg.instances,
        failures: counterexamples.len(),
        max_deviation: lin.worst,
        error_linearity: lin,
        mixture_inequality: mix,
        bound,
        target_candidate_condition: cond,
        counterexamples,
    })
}
