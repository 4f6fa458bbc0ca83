//! Cross-entropy, mean-embedding MMD, discriminator discrepancy, and the two
//! composite stage objectives.
//!
//! The composite objectives take already-wired branch outputs (see
//! [`crate::model`]); where a gradient-reversal layer sits is decided by the
//! wiring, not here.

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to probabilities before the logarithm in [`cross_entropy`].
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    alpha: f64,
}

impl LossWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(LossWeights { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Weighted mean of `-log p[label]` over the batch. Weights are normalised by
/// their sum; `None` means uniform.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize], sample_weights: Option<&[f64]>) -> Result<Var> {
    let p = tape.value(probs);
    if p.shape().len() != 2 {
        return Err(Error::shape("cross_entropy", p.shape(), &[labels.len(), 0]));
    }
    let (batch, classes) = (p.rows(), p.cols());
    if labels.is_empty() {
        return Err(Error::InvalidInput("cross_entropy: empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::shape("cross_entropy", p.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!("cross_entropy: label {bad} outside [0, {classes})")));
    }
    let weights = normalized_weights(sample_weights, batch)?;
    let mut onehot = Tensor::zeros(&[batch, classes]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * classes + l] = 1.0;
    }
    let floored = tape.clamp_min(probs, LOG_FLOOR)?;
    let logp = tape.log(floored)?;
    let mask = tape.constant(onehot);
    let picked = tape.mul(logp, mask)?;
    let per_sample = tape.row_sum(picked)?;
    let w = tape.constant(Tensor::vector(weights));
    let weighted = tape.mul(per_sample, w)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0)
}

fn normalized_weights(weights: Option<&[f64]>, batch: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / batch as f64; batch]),
        Some(w) => {
            if w.len() != batch {
                return Err(Error::InvalidInput(format!("{} sample weights for a batch of {batch}", w.len())));
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput("sample weights must be positive".into()));
            }
            let total: f64 = w.iter().sum();
            Ok(w.iter().map(|x| x / total).collect())
        }
    }
}

/// Squared Euclidean distance between the batch means of `source` and `target`.
pub fn mmd_loss(tape: &mut Tape, source: Var, target: Var) -> Result<Var> {
    let (s, t) = (tape.value(source), tape.value(target));
    if s.shape().len() != 2 || t.shape().len() != 2 || s.cols() != t.cols() {
        return Err(Error::shape("mmd", s.shape(), t.shape()));
    }
    let ms = tape.mean_rows(source)?;
    let mt = tape.mean_rows(target)?;
    let diff = tape.sub(ms, mt)?;
    tape.squared_norm(diff)
}

/// Class-conditional variant: mean of per-class [`mmd_loss`] between the
/// source rows of class `c` and the target rows pseudo-labelled `c`, over the
/// classes present on both sides. `None` when no class is shared.
pub fn conditional_mmd_loss(
    tape: &mut Tape,
    source: Var,
    source_labels: &[usize],
    target: Var,
    target_pseudo: &[usize],
) -> Result<Option<Var>> {
    let classes = source_labels.iter().chain(target_pseudo).max().map_or(0, |m| m + 1);
    let mut terms = Vec::new();
    for c in 0..classes {
        let si: Vec<usize> = (0..source_labels.len()).filter(|&i| source_labels[i] == c).collect();
        let ti: Vec<usize> = (0..target_pseudo.len()).filter(|&i| target_pseudo[i] == c).collect();
        if si.is_empty() || ti.is_empty() {
            continue;
        }
        let s = tape.gather_rows(source, si)?;
        let t = tape.gather_rows(target, ti)?;
        terms.push(mmd_loss(tape, s, t)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let count = terms.len() as f64;
    let stacked = sum_scalars(tape, &terms)?;
    Ok(Some(tape.scale(stacked, 1.0 / count)?))
}

/// Mean over the batch of `(1/L) sum_i |p_d[i] - p_f[i]|`. `p_f` must be a
/// constant node (the frozen discriminator's output).
pub fn mdc_loss(tape: &mut Tape, p_d: Var, p_f: Var) -> Result<Var> {
    let (a, b) = (tape.value(p_d), tape.value(p_f));
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::shape("mdc", a.shape(), b.shape()));
    }
    if tape.requires_grad(p_f) {
        return Err(Error::InvalidInput("mdc: reference probabilities must come from a frozen discriminator".into()));
    }
    let diff = tape.sub(p_d, p_f)?;
    let abs = tape.abs(diff)?;
    tape.mean(abs)
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Component nodes of a composite objective, kept for logging.
#[derive(Clone, Debug)]
pub struct ObjectiveTerms {
    pub total: Var,
    pub dcls: Var,
    pub ecls: Var,
    /// Sum of the per-source MMD terms, before scaling by alpha.
    pub mmd: Option<Var>,
    pub mdc: Option<Var>,
}

/// Values of an [`ObjectiveTerms`] read off the tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TermValues {
    pub total: f64,
    pub dcls: f64,
    pub ecls: f64,
    pub mmd: f64,
    pub mdc: f64,
}

impl ObjectiveTerms {
    pub fn values(&self, tape: &Tape) -> TermValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
        TermValues {
            total: tape.value(self.total).item(),
            dcls: tape.value(self.dcls).item(),
            ecls: tape.value(self.ecls).item(),
            mmd: get(self.mmd),
            mdc: get(self.mdc),
        }
    }
}

/// Branch outputs of the source-selection graph.
pub struct SsBranches<'a> {
    /// Domain-head probabilities over the source rows (no reversal upstream).
    pub domain_probs: Var,
    pub domain_labels: &'a [usize],
    /// Emotion-head probabilities over the source rows (reversed upstream).
    pub emotion_probs: Var,
    pub emotion_labels: &'a [usize],
    /// Per-source features as read by the MMD branch (reversed upstream).
    pub mmd_sources: Vec<Var>,
    pub mmd_target: Var,
}

/// `L_dcls + alpha * sum_i L_mmd(S_i, T) + L_ecls`.
pub fn ss_objective(
    tape: &mut Tape,
    branches: &SsBranches<'_>,
    weights: &LossWeights,
    use_mmd: bool,
) -> Result<ObjectiveTerms> {
    if branches.mmd_sources.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "source selection needs at least 2 source domains, got {}",
            branches.mmd_sources.len()
        )));
    }
    let dcls = cross_entropy(tape, branches.domain_probs, branches.domain_labels, None)?;
    let ecls = cross_entropy(tape, branches.emotion_probs, branches.emotion_labels, None)?;
    let mut total = tape.add(dcls, ecls)?;
    let mut mmd = None;
    if use_mmd {
        let mut terms = Vec::with_capacity(branches.mmd_sources.len());
        for &s in &branches.mmd_sources {
            terms.push(mmd_loss(tape, s, branches.mmd_target)?);
        }
        let summed = sum_scalars(tape, &terms)?;
        let scaled = tape.scale(summed, weights.alpha())?;
        total = tape.add(total, scaled)?;
        mmd = Some(summed);
    }
    Ok(ObjectiveTerms { total, dcls, ecls, mmd, mdc: None })
}

/// Conditional-MMD inputs for one source: its emotion labels.
pub struct ConditionalMmd<'a> {
    pub source_labels: Vec<&'a [usize]>,
    pub target_pseudo: &'a [usize],
}

/// Branch outputs of the adversarial-adaptation graph.
pub struct AsBranches<'a> {
    /// Live discriminator probabilities over the source rows (reversed upstream).
    pub domain_probs: Var,
    pub domain_labels: &'a [usize],
    pub emotion_probs: Var,
    pub emotion_labels: &'a [usize],
    /// Per-row weights of the source batch (the weight of each row's domain).
    pub sample_weights: &'a [f64],
    pub mmd_sources: Vec<Var>,
    pub mmd_target: Var,
    /// Per-source weights for the MMD terms.
    pub source_weights: &'a [f64],
    /// `(p_d, p_f)` for the discrepancy term; `p_f` must be constant.
    pub discrepancy: Option<(Var, Var)>,
    pub conditional: Option<ConditionalMmd<'a>>,
}

/// `L_dcls + L_ecls + alpha * sum_i w_i L_mmd(S_i, T) + L_mdc`, with the
/// source-domain weights applied to the per-sample classification losses and
/// renormalised to mean 1 over the sources for the MMD terms.
pub fn as_objective(
    tape: &mut Tape,
    branches: &AsBranches<'_>,
    weights: &LossWeights,
    use_mmd: bool,
) -> Result<ObjectiveTerms> {
    let sources = branches.mmd_sources.len();
    if branches.source_weights.len() != sources {
        return Err(Error::InvalidInput(format!(
            "{} source weights for {sources} sources",
            branches.source_weights.len()
        )));
    }
    let dcls = cross_entropy(tape, branches.domain_probs, branches.domain_labels, Some(branches.sample_weights))?;
    let ecls = cross_entropy(tape, branches.emotion_probs, branches.emotion_labels, Some(branches.sample_weights))?;
    let mut total = tape.add(dcls, ecls)?;

    let mut mmd = None;
    if use_mmd && sources > 0 {
        let total_w: f64 = branches.source_weights.iter().sum();
        if !(total_w > 0.0) {
            return Err(Error::InvalidInput("source weights must sum to a positive value".into()));
        }
        let mut terms = Vec::with_capacity(sources);
        for (i, &s) in branches.mmd_sources.iter().enumerate() {
            let term = match &branches.conditional {
                Some(c) => conditional_mmd_loss(tape, s, c.source_labels[i], branches.mmd_target, c.target_pseudo)?,
                None => Some(mmd_loss(tape, s, branches.mmd_target)?),
            };
            if let Some(term) = term {
                let w = branches.source_weights[i] * sources as f64 / total_w;
                terms.push(tape.scale(term, w)?);
            }
        }
        if !terms.is_empty() {
            let summed = sum_scalars(tape, &terms)?;
            let scaled = tape.scale(summed, weights.alpha())?;
            total = tape.add(total, scaled)?;
            mmd = Some(summed);
        }
    }

    let mut mdc = None;
    if let Some((p_d, p_f)) = branches.discrepancy {
        let term = mdc_loss(tape, p_d, p_f)?;
        total = tape.add(total, term)?;
        mdc = Some(term);
    }
    Ok(ObjectiveTerms { total, dcls, ecls, mmd, mdc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.leaf(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn cross_entropy_of_correct_one_hot_is_zero() {
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[vec![1., 0., 0.], vec![0., 0., 1.]]);
        let l = cross_entropy(&mut tape, p, &[0, 2], None).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::new();
        let third = 1.0 / 3.0;
        let p = probs(&mut tape, &[vec![third; 3], vec![third; 3]]);
        let l = cross_entropy(&mut tape, p, &[1, 2], None).unwrap();
        assert!((tape.value(l).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_weighted_mean() {
        let (pa, pb) = (0.7f64, 0.2f64);
        let (a, b) = (-pa.ln(), -pb.ln());
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[vec![pa, 1. - pa], vec![1. - pb, pb]]);
        let l = cross_entropy(&mut tape, p, &[0, 1], Some(&[2.0, 1.0])).unwrap();
        assert!((tape.value(l).item() - (2. * a + b) / 3.).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_errors() {
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[vec![0.5, 0.5]]);
        assert!(cross_entropy(&mut tape, p, &[2], None).is_err());
        assert!(cross_entropy(&mut tape, p, &[], None).is_err());
        assert!(cross_entropy(&mut tape, p, &[0], Some(&[0.0])).is_err());
    }

    #[test]
    fn cross_entropy_floor_keeps_zero_probability_finite() {
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[vec![0.0, 1.0]]);
        let l = cross_entropy(&mut tape, p, &[0], None).unwrap();
        assert!((tape.value(l).item() + LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn mmd_examples() {
        let mut tape = Tape::new();
        let s = probs(&mut tape, &[vec![0., 0.], vec![2., 0.]]);
        let t = probs(&mut tape, &[vec![0., 0.], vec![0., 2.]]);
        let l = mmd_loss(&mut tape, s, t).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let same = mmd_loss(&mut tape, s, s).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        let w = probs(&mut tape, &[vec![0., 0., 1.]]);
        assert!(mmd_loss(&mut tape, s, w).is_err());
    }

    #[test]
    fn mdc_examples() {
        let mut tape = Tape::new();
        let pd = probs(&mut tape, &[vec![1., 0.]]);
        let pf = tape.constant(Tensor::from_rows(&[vec![0., 1.]]).unwrap());
        let l = mdc_loss(&mut tape, pd, pf).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let pf_same = tape.constant(Tensor::from_rows(&[vec![1., 0.]]).unwrap());
        let z = mdc_loss(&mut tape, pd, pf_same).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);
    }

    #[test]
    fn mdc_rejects_trainable_reference_and_shape_mismatch() {
        let mut tape = Tape::new();
        let pd = probs(&mut tape, &[vec![1., 0.]]);
        let live = probs(&mut tape, &[vec![0., 1.]]);
        assert!(mdc_loss(&mut tape, pd, live).is_err());
        let wide = tape.constant(Tensor::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap());
        assert!(mdc_loss(&mut tape, pd, wide).is_err());
    }

    #[test]
    fn mdc_gradient_reaches_live_side_only() {
        let mut tape = Tape::new();
        let pd = probs(&mut tape, &[vec![0.7, 0.3]]);
        let pf = tape.constant(Tensor::from_rows(&[vec![0.4, 0.6]]).unwrap());
        let l = mdc_loss(&mut tape, pd, pf).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(pd).unwrap().data(), &[0.5, -0.5]);
        assert!(g.get(pf).is_none());
    }

    #[test]
    fn negative_alpha_rejected() {
        assert!(LossWeights::new(-1.0).is_err());
        assert_eq!(LossWeights::new(0.5).unwrap().alpha(), 0.5);
    }

    #[test]
    fn ss_objective_rejects_single_source() {
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[vec![0.5, 0.5]]);
        let f = probs(&mut tape, &[vec![1., 0.]]);
        let b = SsBranches {
            domain_probs: p,
            domain_labels: &[0],
            emotion_probs: p,
            emotion_labels: &[1],
            mmd_sources: vec![f],
            mmd_target: f,
        };
        assert!(ss_objective(&mut tape, &b, &LossWeights::new(0.5).unwrap(), true).is_err());
    }
}
