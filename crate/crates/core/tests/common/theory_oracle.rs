//! Independent enumeration of the bound terms, written without the library's
//! helpers so the suite can be cross-checked against it.

use ssas::theory::{Case, FiniteInstance};

fn err(h: &[bool], f: &[bool], d: &[f64]) -> f64 {
    (0..d.len()).filter(|&x| h[x] != f[x]).map(|x| d[x]).sum()
}

fn combine(dists: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    (0..dists[0].len()).map(|x| dists.iter().zip(c).map(|(d, w)| w * d[x]).sum()).collect()
}

/// `d_HdH` over every ordered pair of hypotheses, duplicates included.
pub fn hdh_double_loop(hs: &[Vec<bool>], s: &[f64], t: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for a in hs {
        for b in hs {
            let mut gap = 0.0;
            for x in 0..s.len() {
                if a[x] != b[x] {
                    gap += s[x] - t[x];
                }
            }
            best = best.max(gap.abs());
        }
    }
    2.0 * best
}

pub struct OracleBound {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn bound(inst: &FiniteInstance, h: &[bool], psi: &[f64]) -> OracleBound {
    let f = &inst.truth;
    let phi = &inst.mixture;
    let weighted = |g: &[bool]| inst.sources.iter().zip(phi).map(|(s, w)| w * err(g, f, s)).sum::<f64>();
    let candidate = combine(&inst.sources, psi);
    let mut pairwise = 0.0f64;
    for j in 0..inst.sources.len() {
        for k in 0..inst.sources.len() {
            pairwise = pairwise.max(hdh_double_loop(&inst.hypotheses, &inst.sources[j], &inst.sources[k]));
        }
    }
    let lambda = inst.hypotheses.iter().map(|g| weighted(g) + err(g, f, &inst.target)).fold(f64::INFINITY, f64::min);
    OracleBound {
        lhs: err(h, f, &inst.target),
        rhs: weighted(h) + 0.5 * hdh_double_loop(&inst.hypotheses, &candidate, &inst.target) + 0.5 * pairwise + lambda,
    }
}

pub fn mixture_gap(case: &Case) -> f64 {
    let inst = &case.instance;
    let a = combine(&inst.sources, &inst.mixture);
    let b = combine(&inst.sources, &case.psi);
    let mut pairwise = 0.0f64;
    for s in &inst.sources {
        for t in &inst.sources {
            pairwise = pairwise.max(hdh_double_loop(&inst.hypotheses, s, t));
        }
    }
    hdh_double_loop(&inst.hypotheses, &a, &b) - pairwise
}
