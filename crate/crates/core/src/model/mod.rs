//! Network assemblies: the shared encoder and the classification heads, wired
//! for the source-selection (SS) and adversarial-adaptation (AS) stages.
//!
//! SS graph: the domain head reads the features directly; the emotion head
//! and the MMD terms read them through gradient-reversal layers.
//!
//! AS graph: the emotion head and the MMD terms read the features directly;
//! the live domain discriminator reads them through a gradient-reversal layer
//! and is tied to the frozen SS discriminator by the discrepancy loss.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::autograd::{GrlConfig, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{self, AsBranches, ConditionalMmd, LossWeights, ObjectiveTerms, SsBranches};
use crate::nn::{
    sphere_project, BatchNormLayer, BatchNormVars, GaussianNoiseLayer, LinearLayer, LinearVars, Mode, SlrHead,
};
use crate::rng::{self, Stream};

/// Shapes and seeds that fully determine a freshly initialised network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Domain ids of the sources, in head-row order.
    pub source_ids: Vec<usize>,
    pub radius: f64,
    pub noise_variance: f64,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn num_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("num_classes", self.num_classes),
            ("num_sources", self.source_ids.len()),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig("radius must be positive".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidConfig("noise variance must be >= 0".into()));
        }
        Ok(())
    }
}

/// `linear -> batchnorm -> relu -> noise -> linear -> batchnorm -> relu -> sphere`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub block1: LinearLayer,
    pub norm1: BatchNormLayer,
    pub noise: GaussianNoiseLayer,
    pub block2: LinearLayer,
    pub norm2: BatchNormLayer,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub block1: LinearVars,
    pub norm1: BatchNormVars,
    pub block2: LinearVars,
    pub norm2: BatchNormVars,
}

impl EncoderVars {
    pub fn flat(&self) -> [Var; 8] {
        [
            self.block1.weight,
            self.block1.bias,
            self.norm1.gamma,
            self.norm1.beta,
            self.block2.weight,
            self.block2.bias,
            self.norm2.gamma,
            self.norm2.beta,
        ]
    }
}

impl Encoder {
    pub fn init(cfg: &NetworkConfig, noise_seed: u64) -> Result<Self> {
        let mut rng = rng::stream_rng(cfg.seed, Stream::EncoderInit, 0, 0);
        Ok(Encoder {
            block1: LinearLayer::glorot(cfg.input_dim, cfg.hidden_dim, &mut rng),
            norm1: BatchNormLayer::new(cfg.hidden_dim),
            noise: GaussianNoiseLayer::new(cfg.noise_variance, noise_seed)?,
            block2: LinearLayer::glorot(cfg.hidden_dim, cfg.feature_dim, &mut rng),
            norm2: BatchNormLayer::new(cfg.feature_dim),
            radius: cfg.radius,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.block1.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.block2.output_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            block1: self.block1.bind(tape),
            norm1: self.norm1.bind(tape),
            block2: self.block2.bind(tape),
            norm2: self.norm2.bind(tape),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, vars: &EncoderVars, x: Var, mode: Mode) -> Result<Var> {
        let h = self.block1.forward(tape, &vars.block1, x)?;
        let h = self.norm1.forward(tape, &vars.norm1, h, mode)?;
        let h = tape.relu(h)?;
        let h = self.noise.forward(tape, h, mode)?;
        let h = self.block2.forward(tape, &vars.block2, h)?;
        let h = self.norm2.forward(tape, &vars.norm2, h, mode)?;
        let h = tape.relu(h)?;
        let h = fill_dead_rows(tape, h)?;
        sphere_project(tape, h, self.radius)
    }

    /// Eval-mode features without gradients.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut enc = self.clone();
        let mut tape = Tape::new();
        let vars = enc.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let z = enc.forward(&mut tape, &vars, xv, Mode::Eval)?;
        Ok(tape.value(z).clone())
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("encoder.block1.weight", &self.block1.weight),
            ("encoder.block1.bias", &self.block1.bias),
            ("encoder.norm1.gamma", &self.norm1.gamma),
            ("encoder.norm1.beta", &self.norm1.beta),
            ("encoder.block2.weight", &self.block2.weight),
            ("encoder.block2.bias", &self.block2.bias),
            ("encoder.norm2.gamma", &self.norm2.gamma),
            ("encoder.norm2.beta", &self.norm2.beta),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let [w1, b1] = self.block1.params_mut();
        let [g1, be1] = self.norm1.params_mut();
        let [w2, b2] = self.block2.params_mut();
        let [g2, be2] = self.norm2.params_mut();
        vec![w1, b1, g1, be1, w2, b2, g2, be2]
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("encoder.norm1.running_mean", &self.norm1.running_mean),
            ("encoder.norm1.running_var", &self.norm1.running_var),
            ("encoder.norm2.running_mean", &self.norm2.running_mean),
            ("encoder.norm2.running_var", &self.norm2.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.norm1.running_mean,
            &mut self.norm1.running_var,
            &mut self.norm2.running_mean,
            &mut self.norm2.running_var,
        ]
    }
}

/// Rows that the final relu zeroed entirely cannot be projected. They are
/// shifted to the all-ones direction by a constant; the relu already blocks
/// their gradient, so this only picks a point on the sphere for them.
fn fill_dead_rows(tape: &mut Tape, h: Var) -> Result<Var> {
    let value = tape.value(h);
    let cols = value.cols();
    let dead: Vec<usize> = (0..value.rows()).filter(|&i| value.row(i).iter().all(|&x| x == 0.0)).collect();
    if dead.is_empty() {
        return Ok(h);
    }
    let mut fill = Tensor::zeros(value.shape());
    for i in dead {
        fill.data_mut()[i * cols..(i + 1) * cols].fill(1.0);
    }
    let fill = tape.constant(fill);
    tape.add(h, fill)
}

/// Domain discriminator whose class rows are drawn from streams keyed by the
/// domain id, so the initialisation does not depend on source ordering.
fn domain_head(cfg: &NetworkConfig, tag: u64) -> Result<SlrHead> {
    let n = cfg.feature_dim;
    let mut omega = Vec::with_capacity(cfg.num_sources() * n);
    for &id in &cfg.source_ids {
        let mut rng = rng::stream_rng(cfg.seed, Stream::DomainHeadRow, tag, id as u64);
        let row = SlrHead::random(1, n, cfg.radius, &mut rng)?;
        omega.extend_from_slice(row.omega.data());
    }
    SlrHead::new(Tensor::new(vec![cfg.num_sources(), n], omega)?, Tensor::zeros(&[cfg.num_sources()]), cfg.radius)
}

fn emotion_head(cfg: &NetworkConfig, tag: u64) -> Result<SlrHead> {
    let mut rng = rng::stream_rng(cfg.seed, Stream::HeadInit, tag, 0);
    SlrHead::random(cfg.num_classes, cfg.feature_dim, cfg.radius, &mut rng)
}

/// One minibatch of labelled source rows per source plus a target batch.
#[derive(Clone, Debug)]
pub struct StageBatch {
    pub sources: Vec<SourceBatch>,
    pub target: Tensor,
}

#[derive(Clone, Debug)]
pub struct SourceBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl StageBatch {
    fn validate(&self, input_dim: usize, num_sources: usize) -> Result<()> {
        if self.sources.len() != num_sources {
            return Err(Error::InvalidInput(format!(
                "batch has {} sources, network expects {num_sources}",
                self.sources.len()
            )));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.features.cols() != input_dim || s.features.shape().len() != 2 {
                return Err(Error::shape("batch", s.features.shape(), &[0, input_dim]));
            }
            if s.labels.len() != s.features.rows() {
                return Err(Error::InvalidInput(format!(
                    "source {i}: {} labels for {} rows",
                    s.labels.len(),
                    s.features.rows()
                )));
            }
        }
        if self.target.cols() != input_dim {
            return Err(Error::shape("batch", self.target.shape(), &[0, input_dim]));
        }
        Ok(())
    }

    /// Row offsets of each source in the stacked source block, plus the total.
    fn offsets(&self) -> (Vec<(usize, usize)>, usize) {
        let mut spans = Vec::with_capacity(self.sources.len());
        let mut at = 0;
        for s in &self.sources {
            spans.push((at, at + s.features.rows()));
            at += s.features.rows();
        }
        (spans, at)
    }

    /// Sources in order, then the target rows when `with_target` is set.
    fn stacked_inputs(&self, with_target: bool) -> Result<Tensor> {
        let cols = self.target.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for s in &self.sources {
            data.extend_from_slice(s.features.data());
            rows += s.features.rows();
        }
        if with_target {
            data.extend_from_slice(self.target.data());
            rows += self.target.rows();
        }
        Tensor::matrix(rows, cols, data)
    }

    fn domain_labels(&self) -> Vec<usize> {
        self.sources.iter().enumerate().flat_map(|(i, s)| std::iter::repeat_n(i, s.labels.len())).collect()
    }

    fn emotion_labels(&self) -> Vec<usize> {
        self.sources.iter().flat_map(|s| s.labels.iter().copied()).collect()
    }
}

/// A recorded forward pass: the tape plus handles to everything of interest.
pub struct ForwardPass {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub terms: ObjectiveTerms,
    pub domain_probs: Var,
    pub emotion_probs: Var,
    /// Frozen-discriminator probabilities (AS only).
    pub frozen_probs: Option<Var>,
    /// Target pseudo-labels from the emotion head (AS only).
    pub pseudo_labels: Vec<usize>,
}

impl ForwardPass {
    /// Backpropagates the composite loss and returns one gradient per
    /// trainable parameter, in declaration order.
    pub fn gradients(self) -> Result<Vec<Tensor>> {
        let shapes: Vec<Vec<usize>> = self.params.iter().map(|&v| self.tape.value(v).shape().to_vec()).collect();
        let params = self.params;
        let grads = self.tape.backward(self.terms.total)?;
        Ok(params.iter().zip(&shapes).map(|(&v, s)| grads.get_or_zeros(v, s)).collect())
    }
}

/// Loss-term switches shared by both stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageOptions {
    pub alpha: f64,
    pub use_mmd: bool,
    pub use_mdc: bool,
    /// Feed the discrepancy term features that bypass the reversal layer.
    pub mdc_detach_features: bool,
    pub conditional_mmd: bool,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions { alpha: 0.5, use_mmd: true, use_mdc: true, mdc_detach_features: false, conditional_mmd: false }
    }
}

/// Source-selection network: encoder, domain head `G_f`, emotion head `G_c`.
#[derive(Clone, Debug)]
pub struct SsNetwork {
    pub config: NetworkConfig,
    pub encoder: Encoder,
    pub domain_head: SlrHead,
    pub emotion_head: SlrHead,
    pub grl_mmd: GrlConfig,
    pub grl_ecls: GrlConfig,
}

impl SsNetwork {
    pub fn init(cfg: &NetworkConfig, lambda: f64) -> Result<Self> {
        cfg.validate()?;
        let grl = GrlConfig::new(lambda)?;
        Ok(SsNetwork {
            config: cfg.clone(),
            encoder: Encoder::init(cfg, rng::derive(cfg.seed, Stream::Noise, 0, 0))?,
            domain_head: domain_head(cfg, 0)?,
            emotion_head: emotion_head(cfg, 0)?,
            grl_mmd: grl,
            grl_ecls: grl,
        })
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut p = self.encoder.params();
        p.push(("domain_head.omega", &self.domain_head.omega));
        p.push(("domain_head.bias", &self.domain_head.bias));
        p.push(("emotion_head.omega", &self.emotion_head.omega));
        p.push(("emotion_head.bias", &self.emotion_head.bias));
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.domain_head.params_mut());
        p.extend(self.emotion_head.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn renormalize_heads(&mut self) -> Result<()> {
        self.domain_head.renormalize()?;
        self.emotion_head.renormalize()
    }

    /// Records the SS graph and composite objective on a fresh tape.
    pub fn forward(&mut self, batch: &StageBatch, mode: Mode, opts: &StageOptions) -> Result<ForwardPass> {
        batch.validate(self.encoder.input_dim(), self.config.num_sources())?;
        let weights = LossWeights::new(opts.alpha)?;
        let mut tape = Tape::new();
        let enc = self.encoder.bind(&mut tape);
        let f = self.domain_head.bind(&mut tape);
        let c = self.emotion_head.bind(&mut tape);
        let mut params = enc.flat().to_vec();
        params.extend([f.omega, f.bias, c.omega, c.bias]);

        // Without MMD nothing reads the target, so it stays out of the batch
        // statistics as well.
        let x = tape.constant(batch.stacked_inputs(opts.use_mmd)?);
        let z = self.encoder.forward(&mut tape, &enc, x, mode)?;
        let (spans, n_src) = batch.offsets();
        let n_all = if opts.use_mmd { n_src + batch.target.rows() } else { n_src };

        let z_src = tape.slice_rows(z, 0, n_src)?;
        let domain_probs = self.domain_head.forward(&mut tape, &f, z_src)?;

        let z_rev = tape.grl(z, self.grl_ecls)?;
        let z_rev_src = tape.slice_rows(z_rev, 0, n_src)?;
        let emotion_probs = self.emotion_head.forward(&mut tape, &c, z_rev_src)?;

        let z_mmd = tape.grl(z, self.grl_mmd)?;
        let mut mmd_sources = Vec::with_capacity(spans.len());
        for &(a, b) in &spans {
            mmd_sources.push(tape.slice_rows(z_mmd, a, b)?);
        }
        let mmd_target = if opts.use_mmd { tape.slice_rows(z_mmd, n_src, n_all)? } else { z_mmd };

        let domain_labels = batch.domain_labels();
        let emotion_labels = batch.emotion_labels();
        let branches = SsBranches {
            domain_probs,
            domain_labels: &domain_labels,
            emotion_probs,
            emotion_labels: &emotion_labels,
            mmd_sources,
            mmd_target,
        };
        let terms = losses::ss_objective(&mut tape, &branches, &weights, opts.use_mmd)?;
        Ok(ForwardPass {
            tape,
            params,
            terms,
            domain_probs,
            emotion_probs,
            frozen_probs: None,
            pseudo_labels: Vec::new(),
        })
    }

    /// Eval-mode domain probabilities for `x`.
    pub fn domain_probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encoder.embed(x)?;
        self.domain_head.predict(&z)
    }
}

/// Adversarial-adaptation network: encoder, emotion head `G_c`, live
/// discriminator `G_d`, and the frozen SS discriminator `G_f`.
#[derive(Clone, Debug)]
pub struct AsNetwork {
    pub config: NetworkConfig,
    pub encoder: Encoder,
    pub emotion_head: SlrHead,
    pub domain_head: SlrHead,
    pub grl_dcls: GrlConfig,
    frozen: SlrHead,
}

impl AsNetwork {
    /// `frozen = None` uses a frozen copy of the live discriminator's
    /// initialisation as the discrepancy reference.
    pub fn init(cfg: &NetworkConfig, lambda: f64, frozen: Option<SlrHead>) -> Result<Self> {
        cfg.validate()?;
        let domain_head = domain_head(cfg, 1)?;
        let frozen = match frozen {
            Some(f) => {
                if f.classes() != cfg.num_sources() || f.dim() != cfg.feature_dim {
                    return Err(Error::shape("frozen discriminator", f.omega.shape(), domain_head.omega.shape()));
                }
                f
            }
            None => domain_head.clone(),
        };
        Ok(AsNetwork {
            config: cfg.clone(),
            encoder: Encoder::init(cfg, rng::derive(cfg.seed, Stream::Noise, 1, 0))?,
            emotion_head: emotion_head(cfg, 1)?,
            domain_head,
            grl_dcls: GrlConfig::new(lambda)?,
            frozen,
        })
    }

    pub fn frozen(&self) -> &SlrHead {
        &self.frozen
    }

    pub(crate) fn set_frozen(&mut self, head: SlrHead) {
        self.frozen = head;
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut p = self.encoder.params();
        p.push(("emotion_head.omega", &self.emotion_head.omega));
        p.push(("emotion_head.bias", &self.emotion_head.bias));
        p.push(("domain_head.omega", &self.domain_head.omega));
        p.push(("domain_head.bias", &self.domain_head.bias));
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.emotion_head.params_mut());
        p.extend(self.domain_head.params_mut());
        p
    }

    /// Trainable parameter count (the frozen discriminator is excluded).
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable parameters plus the frozen discriminator.
    pub fn total_param_count(&self) -> usize {
        self.param_count() + self.frozen.omega.numel() + self.frozen.bias.numel()
    }

    pub fn renormalize_heads(&mut self) -> Result<()> {
        self.emotion_head.renormalize()?;
        self.domain_head.renormalize()
    }

    pub fn forward(
        &mut self,
        batch: &StageBatch,
        source_weights: &[f64],
        mode: Mode,
        opts: &StageOptions,
    ) -> Result<ForwardPass> {
        self.forward_inner(batch, source_weights, mode, opts, None)
    }

    /// As [`forward`](Self::forward), optionally replacing the frozen
    /// discriminator's output with fixed probabilities. Used by gradient
    /// checks, where perturbed encoder parameters must not move the reference.
    pub fn forward_with_reference(
        &mut self,
        batch: &StageBatch,
        source_weights: &[f64],
        mode: Mode,
        opts: &StageOptions,
        reference: Option<&Tensor>,
    ) -> Result<ForwardPass> {
        self.forward_inner(batch, source_weights, mode, opts, reference)
    }

    fn forward_inner(
        &mut self,
        batch: &StageBatch,
        source_weights: &[f64],
        mode: Mode,
        opts: &StageOptions,
        reference: Option<&Tensor>,
    ) -> Result<ForwardPass> {
        batch.validate(self.encoder.input_dim(), self.config.num_sources())?;
        if source_weights.len() != self.config.num_sources() {
            return Err(Error::InvalidInput(format!(
                "{} source weights for {} sources",
                source_weights.len(),
                self.config.num_sources()
            )));
        }
        let weights = LossWeights::new(opts.alpha)?;
        let mut tape = Tape::new();
        let enc = self.encoder.bind(&mut tape);
        let c = self.emotion_head.bind(&mut tape);
        let d = self.domain_head.bind(&mut tape);
        let mut params = enc.flat().to_vec();
        params.extend([c.omega, c.bias, d.omega, d.bias]);

        let x = tape.constant(batch.stacked_inputs(opts.use_mmd)?);
        let z = self.encoder.forward(&mut tape, &enc, x, mode)?;
        let (spans, n_src) = batch.offsets();
        let n_all = if opts.use_mmd { n_src + batch.target.rows() } else { n_src };

        let z_src = tape.slice_rows(z, 0, n_src)?;
        let emotion_probs = self.emotion_head.forward(&mut tape, &c, z_src)?;

        let z_rev = tape.grl(z_src, self.grl_dcls)?;
        let domain_probs = self.domain_head.forward(&mut tape, &d, z_rev)?;

        let frozen_value = match reference {
            Some(r) => r.clone(),
            None => self.frozen.predict(tape.value(z_src))?,
        };
        let frozen_probs = tape.constant(frozen_value);
        let discrepancy = if opts.use_mdc {
            let live = if opts.mdc_detach_features {
                let frozen_z = tape.constant(tape.value(z_src).clone());
                self.domain_head.forward(&mut tape, &d, frozen_z)?
            } else {
                domain_probs
            };
            Some((live, frozen_probs))
        } else {
            None
        };

        let (z_tgt, pseudo_labels) = if opts.use_mmd {
            let z_tgt = tape.slice_rows(z, n_src, n_all)?;
            let pseudo = self.emotion_head.predict(tape.value(z_tgt))?.argmax_rows();
            (z_tgt, pseudo)
        } else {
            (z, Vec::new())
        };
        let mut mmd_sources = Vec::with_capacity(spans.len());
        for &(a, b) in &spans {
            mmd_sources.push(tape.slice_rows(z, a, b)?);
        }

        let domain_labels = batch.domain_labels();
        let emotion_labels = batch.emotion_labels();
        let sample_weights: Vec<f64> = batch
            .sources
            .iter()
            .zip(source_weights)
            .flat_map(|(s, &w)| std::iter::repeat_n(w, s.labels.len()))
            .collect();
        let conditional = opts.conditional_mmd.then(|| ConditionalMmd {
            source_labels: batch.sources.iter().map(|s| s.labels.as_slice()).collect(),
            target_pseudo: &pseudo_labels,
        });
        let branches = AsBranches {
            domain_probs,
            domain_labels: &domain_labels,
            emotion_probs,
            emotion_labels: &emotion_labels,
            sample_weights: &sample_weights,
            mmd_sources,
            mmd_target: z_tgt,
            source_weights,
            discrepancy,
            conditional,
        };
        let terms = losses::as_objective(&mut tape, &branches, &weights, opts.use_mmd)?;
        Ok(ForwardPass {
            tape,
            params,
            terms,
            domain_probs,
            emotion_probs,
            frozen_probs: Some(frozen_probs),
            pseudo_labels,
        })
    }

    /// Eval-mode emotion probabilities for `x`.
    pub fn emotion_probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encoder.embed(x)?;
        self.emotion_head.predict(&z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_dim: 4,
            hidden_dim: 6,
            feature_dim: 5,
            num_classes: 3,
            source_ids: vec![0, 1, 3],
            radius: 1.0,
            noise_variance: 0.0,
            seed: 11,
        }
    }

    fn batch(seed: u64) -> StageBatch {
        use rand::Rng;
        let mut rng = rng::stream_rng(seed, Stream::Synthetic, 0, 0);
        let mut m = |rows: usize| {
            Tensor::new(vec![rows, 4], (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        StageBatch {
            sources: vec![
                SourceBatch { features: m(3), labels: vec![0, 1, 2] },
                SourceBatch { features: m(4), labels: vec![2, 2, 1, 0] },
                SourceBatch { features: m(3), labels: vec![1, 0, 0] },
            ],
            target: m(5),
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = SsNetwork::init(&tiny_config(), 1.0).unwrap();
        let b = SsNetwork::init(&tiny_config(), 1.0).unwrap();
        assert_eq!(a.named_params(), b.named_params());
        let mut other = tiny_config();
        other.seed = 12;
        let c = SsNetwork::init(&other, 1.0).unwrap();
        assert_ne!(a.named_params(), c.named_params());
    }

    #[test]
    fn heads_are_unit_norm_at_init() {
        let net = AsNetwork::init(&tiny_config(), 1.0, None).unwrap();
        for head in [&net.emotion_head, &net.domain_head, net.frozen()] {
            for k in 0..head.classes() {
                let n: f64 = head.omega.row(k).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut cfg = tiny_config();
        cfg.hidden_dim = 0;
        assert!(SsNetwork::init(&cfg, 1.0).is_err());
    }

    #[test]
    fn encoder_output_on_sphere_and_eval_deterministic() {
        let mut cfg = tiny_config();
        cfg.radius = 2.5;
        let net = SsNetwork::init(&cfg, 1.0).unwrap();
        let x = batch(1).target;
        let z1 = net.encoder.embed(&x).unwrap();
        let z2 = net.encoder.embed(&x).unwrap();
        assert_eq!(z1, z2);
        for i in 0..z1.rows() {
            let n: f64 = z1.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn dead_rows_land_on_the_sphere() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap());
        let filled = fill_dead_rows(&mut tape, h).unwrap();
        let z = sphere_project(&mut tape, filled, 2.0).unwrap();
        let s = std::f64::consts::SQRT_2;
        let got = tape.value(z).data();
        for (g, e) in got.iter().zip([s, s, 1.2, 1.6]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_noise_is_reproducible() {
        let mut cfg = tiny_config();
        cfg.noise_variance = 0.1;
        let run = || {
            let mut net = SsNetwork::init(&cfg, 1.0).unwrap();
            let pass = net.forward(&batch(2), Mode::Train, &StageOptions::default()).unwrap();
            pass.tape.value(pass.terms.total).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn ss_forward_shapes_and_additivity() {
        let mut net = SsNetwork::init(&tiny_config(), 1.0).unwrap();
        let pass = net.forward(&batch(3), Mode::Train, &StageOptions::default()).unwrap();
        assert_eq!(pass.tape.value(pass.domain_probs).shape(), &[10, 3]);
        assert_eq!(pass.tape.value(pass.emotion_probs).shape(), &[10, 3]);
        let v = pass.terms.values(&pass.tape);
        assert!((v.total - (v.dcls + 0.5 * v.mmd + v.ecls)).abs() < 1e-12);
    }

    #[test]
    fn ss_forward_value_independent_of_lambda() {
        let values: Vec<f64> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&l| {
                let mut net = SsNetwork::init(&tiny_config(), l).unwrap();
                let pass = net.forward(&batch(4), Mode::Train, &StageOptions::default()).unwrap();
                pass.tape.value(pass.terms.total).item()
            })
            .collect();
        assert_eq!(values[0].to_bits(), values[1].to_bits());
        assert_eq!(values[1].to_bits(), values[2].to_bits());
    }

    #[test]
    fn target_rows_do_not_enter_classification_terms() {
        let opts = StageOptions { use_mmd: false, ..StageOptions::default() };
        let mut b = batch(5);
        let mut net = SsNetwork::init(&tiny_config(), 1.0).unwrap();
        // eval mode so the target rows cannot influence batch statistics
        let p1 = net.forward(&b, Mode::Eval, &opts).unwrap();
        b.target = b.target.map(|x| 3.0 * x + 1.0);
        let p2 = net.forward(&b, Mode::Eval, &opts).unwrap();
        let (v1, v2) = (p1.terms.values(&p1.tape), p2.terms.values(&p2.tape));
        assert_eq!(v1.dcls, v2.dcls);
        assert_eq!(v1.ecls, v2.ecls);
    }

    #[test]
    fn as_forward_copy_of_discriminator_has_zero_discrepancy() {
        let mut net = AsNetwork::init(&tiny_config(), 1.0, None).unwrap();
        let pass = net.forward(&batch(6), &[1.0; 3], Mode::Train, &StageOptions::default()).unwrap();
        let v = pass.terms.values(&pass.tape);
        assert_eq!(v.mdc, 0.0);
        let pd = pass.tape.value(pass.domain_probs).shape().to_vec();
        let pf = pass.tape.value(pass.frozen_probs.unwrap()).shape().to_vec();
        assert_eq!(pd, pf);
    }

    #[test]
    fn as_forward_rejects_missing_weights() {
        let mut net = AsNetwork::init(&tiny_config(), 1.0, None).unwrap();
        assert!(net.forward(&batch(6), &[1.0; 2], Mode::Train, &StageOptions::default()).is_err());
    }

    #[test]
    fn neutral_weights_match_unweighted_objective() {
        let b = batch(7);
        let mut net = AsNetwork::init(&tiny_config(), 1.0, None).unwrap();
        let ones = net.forward(&b, &[1.0; 3], Mode::Eval, &StageOptions::default()).unwrap();
        let scaled = net.forward(&b, &[3.0; 3], Mode::Eval, &StageOptions::default()).unwrap();
        let (a, c) = (ones.terms.values(&ones.tape), scaled.terms.values(&scaled.tape));
        assert!((a.total - c.total).abs() < 1e-12);
    }

    #[test]
    fn frozen_discriminator_gets_no_gradient_and_stays_fixed() {
        let mut ss = SsNetwork::init(&tiny_config(), 1.0).unwrap();
        ss.domain_head.bias = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let frozen = ss.domain_head.clone();
        let mut net = AsNetwork::init(&tiny_config(), 1.0, Some(frozen.clone())).unwrap();
        let pass = net.forward(&batch(8), &[1.0, 0.5, 2.0], Mode::Train, &StageOptions::default()).unwrap();
        let n_params = pass.params.len();
        let grads = pass.gradients().unwrap();
        assert_eq!(grads.len(), n_params);
        assert_eq!(net.frozen(), &frozen);
    }

    #[test]
    fn param_count_matches_shapes() {
        let cfg = tiny_config();
        let ss = SsNetwork::init(&cfg, 1.0).unwrap();
        let expected = (4 * 6 + 6) + 12 + (6 * 5 + 5) + 10 + (3 * 5 + 3) + (3 * 5 + 3);
        assert_eq!(ss.param_count(), expected);
    }
}
