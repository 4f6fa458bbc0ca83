use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autograd::Tensor;
use crate::data::{epoch_batches, DomainDataset, MultiDomainBundle};
use crate::error::{Error, Result};
use crate::losses::TermValues;
use crate::model::{AsNetwork, Encoder, ForwardPass, SourceBatch, SsNetwork, StageBatch};
use crate::nn::{Mode, SgdOptimizer, SlrHead};
use crate::rng::{self, Stream};

pub const MIN_WEIGHT: f64 = 0.5;
pub const MAX_WEIGHT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceWeightVector {
    /// Domain ids of the sources, aligned with `counts` and `weights`.
    pub source_ids: Vec<usize>,
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
    pub min_w: f64,
    pub max_w: f64,
}

impl SourceWeightVector {
    pub fn from_counts(source_ids: Vec<usize>, counts: Vec<usize>) -> Result<Self> {
        if source_ids.len() != counts.len() || counts.is_empty() {
            return Err(Error::InvalidInput("counts must be nonempty and align with source ids".into()));
        }
        let weights = count_weights(&counts, MIN_WEIGHT, MAX_WEIGHT);
        Ok(SourceWeightVector { source_ids, counts, weights, min_w: MIN_WEIGHT, max_w: MAX_WEIGHT })
    }

    pub fn uniform(source_ids: Vec<usize>) -> Self {
        let n = source_ids.len();
        SourceWeightVector {
            source_ids,
            counts: vec![0; n],
            weights: vec![1.0; n],
            min_w: MIN_WEIGHT,
            max_w: MAX_WEIGHT,
        }
    }
}

/// Min-max rescaling of counts into `[min_w, max_w]`; equal counts map to 1.
pub fn count_weights(counts: &[usize], min_w: f64, max_w: f64) -> Vec<f64> {
    let lo = counts.iter().copied().min().unwrap_or(0);
    let hi = counts.iter().copied().max().unwrap_or(0);
    if lo == hi {
        return vec![1.0; counts.len()];
    }
    let span = (hi - lo) as f64;
    counts.iter().map(|&c| min_w + (max_w - min_w) * (c - lo) as f64 / span).collect()
}

/// One logged optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub terms: TermValues,
}

/// Endless per-domain batch stream: a fresh seeded permutation each pass.
struct BatchStream<'a> {
    domain: &'a DomainDataset,
    batch_size: usize,
    base_seed: u64,
    stage: u64,
    pass: u64,
    queue: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchStream<'a> {
    fn new(domain: &'a DomainDataset, batch_size: usize, base_seed: u64, stage: u64) -> Self {
        BatchStream { domain, batch_size, base_seed, stage, pass: 0, queue: Vec::new().into_iter() }
    }

    fn next_batch(&mut self) -> Result<(Tensor, Vec<usize>)> {
        loop {
            if let Some(idx) = self.queue.next() {
                return Ok(self.domain.select(&idx));
            }
            let seed = rng::derive(self.base_seed, Stream::Shuffle, self.stage, self.pass);
            self.pass += 1;
            self.queue = epoch_batches(self.domain.domain_id, self.domain.len(), self.batch_size, seed)?.into_iter();
        }
    }
}

/// Steps per epoch: one pass over the smallest source.
pub fn steps_per_epoch(sources: &[&DomainDataset], batch_size: usize) -> usize {
    let min = sources.iter().map(|d| d.len()).min().unwrap_or(0);
    min.div_ceil(batch_size)
}

struct Loop<'a> {
    sources: Vec<BatchStream<'a>>,
    target: BatchStream<'a>,
}

impl<'a> Loop<'a> {
    fn new(sources: &[&'a DomainDataset], target: &'a DomainDataset, cfg: &TrainConfig, seed: u64, stage: u64) -> Self {
        Loop {
            sources: sources.iter().map(|d| BatchStream::new(d, cfg.batch_size, seed, stage)).collect(),
            target: BatchStream::new(target, cfg.batch_size, seed, stage),
        }
    }

    fn next(&mut self) -> Result<StageBatch> {
        let mut sources = Vec::with_capacity(self.sources.len());
        for s in &mut self.sources {
            let (features, labels) = s.next_batch()?;
            sources.push(SourceBatch { features, labels });
        }
        let (target, _) = self.target.next_batch()?;
        Ok(StageBatch { sources, target })
    }
}

/// One adaptation problem: sources sorted by domain id and a target.
#[derive(Clone, Debug)]
pub struct FoldData<'a> {
    pub sources: Vec<&'a DomainDataset>,
    pub target: &'a DomainDataset,
    pub num_classes: usize,
}

impl<'a> FoldData<'a> {
    /// Every domain except `target_id` becomes a source.
    pub fn leave_out(bundle: &'a MultiDomainBundle, target_id: usize) -> Result<Self> {
        let (sources, target) = bundle.split(target_id)?;
        Ok(FoldData { sources, target, num_classes: bundle.num_classes })
    }

    /// Restricts the sources to `ids` (kept in id order).
    pub fn with_sources(&self, ids: &[usize]) -> Result<Self> {
        let sources: Vec<_> = self.sources.iter().copied().filter(|d| ids.contains(&d.domain_id)).collect();
        if sources.len() != ids.len() {
            return Err(Error::InvalidInput(format!("unknown source ids in {ids:?}")));
        }
        Ok(FoldData { sources, target: self.target, num_classes: self.num_classes })
    }

    pub fn source_ids(&self) -> Vec<usize> {
        self.sources.iter().map(|d| d.domain_id).collect()
    }

    fn check(&self) -> Result<()> {
        if self.sources.iter().any(|s| s.domain_id == self.target.domain_id) {
            return Err(Error::InvalidInput("target domain listed among the sources".into()));
        }
        if self.sources.windows(2).any(|w| w[0].domain_id >= w[1].domain_id) {
            return Err(Error::InvalidInput("sources must be sorted by domain id".into()));
        }
        Ok(())
    }

    fn network(&self, cfg: &TrainConfig, seed: u64) -> crate::model::NetworkConfig {
        cfg.network(self.target.features.cols(), self.num_classes, self.source_ids(), seed)
    }
}

fn step_error(stage: &str, step: usize, epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{stage} step {step} (epoch {epoch}): {m}")),
        other => other,
    }
}

fn apply_step(pass: ForwardPass, opt: &mut SgdOptimizer, params: Vec<&mut Tensor>) -> Result<TermValues> {
    let values = pass.terms.values(&pass.tape);
    if !values.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", values.total)));
    }
    let grads = pass.gradients()?;
    let mut params = params;
    opt.step(&mut params, &grads)?;
    Ok(values)
}

pub struct SsOutcome {
    pub network: SsNetwork,
    pub curve: Vec<CurvePoint>,
}

/// Trains the source-selection network.
pub fn train_ss(data: &FoldData<'_>, cfg: &TrainConfig, seed: u64) -> Result<SsOutcome> {
    cfg.validate()?;
    data.check()?;
    let (sources, target) = (&data.sources[..], data.target);
    if sources.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "source selection needs at least 2 source domains, got {}",
            sources.len()
        )));
    }
    let mut net = SsNetwork::init(&data.network(cfg, seed), cfg.effective_lambda())?;
    let mut opt = SgdOptimizer::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let opts = cfg.stage_options();
    let steps = steps_per_epoch(sources, cfg.batch_size);
    let mut batches = Loop::new(sources, target, cfg, seed, 0);
    let mut curve = Vec::with_capacity(steps * cfg.epochs_ss);
    for epoch in 0..cfg.epochs_ss {
        for _ in 0..steps {
            let step = curve.len();
            let batch = batches.next()?;
            let terms = net
                .forward(&batch, Mode::Train, &opts)
                .and_then(|pass| apply_step(pass, &mut opt, net.params_mut()))
                .and_then(|t| net.renormalize_heads().map(|_| t))
                .map_err(|e| step_error("SS", step, epoch, e))?;
            curve.push(CurvePoint { step, epoch, terms });
        }
    }
    Ok(SsOutcome { network: net, curve })
}

/// Counts the target samples that the SS domain head assigns to each source
/// and turns the counts into weights.
pub fn compute_source_weights(ss: &SsNetwork, target: &Tensor) -> Result<SourceWeightVector> {
    if target.rows() == 0 {
        return Err(Error::InvalidInput("empty target".into()));
    }
    let probs = ss.domain_probabilities(target)?;
    let mut counts = vec![0usize; ss.config.num_sources()];
    for c in probs.argmax_rows() {
        counts[c] += 1;
    }
    SourceWeightVector::from_counts(ss.config.source_ids.clone(), counts)
}

pub struct AsOutcome {
    pub network: AsNetwork,
    pub curve: Vec<CurvePoint>,
}

/// Inputs AS takes over from SS.
pub struct Handover<'a> {
    pub weights: &'a SourceWeightVector,
    pub frozen: Option<SlrHead>,
    pub encoder: Option<&'a Encoder>,
}

/// Trains the adaptation network on weighted sources.
pub fn train_as(data: &FoldData<'_>, handover: Handover<'_>, cfg: &TrainConfig, seed: u64) -> Result<AsOutcome> {
    cfg.validate()?;
    data.check()?;
    let (sources, target) = (&data.sources[..], data.target);
    if sources.is_empty() {
        return Err(Error::InvalidInput("adaptation needs at least one source domain".into()));
    }
    let ids = data.source_ids();
    if handover.weights.source_ids != ids {
        return Err(Error::InvalidInput(format!(
            "weights are for sources {:?}, training sources are {ids:?}",
            handover.weights.source_ids
        )));
    }
    let mut net = AsNetwork::init(&data.network(cfg, seed), cfg.effective_lambda(), handover.frozen)?;
    if let Some(enc) = handover.encoder {
        let noise = net.encoder.noise.clone();
        net.encoder = enc.clone();
        net.encoder.noise = noise;
    }
    let weights = handover.weights.weights.clone();
    let frozen_before = net.frozen().clone();

    let mut opt = SgdOptimizer::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let opts = cfg.stage_options();
    let steps = steps_per_epoch(sources, cfg.batch_size);
    let mut batches = Loop::new(sources, target, cfg, seed, 1);
    let mut curve = Vec::with_capacity(steps * cfg.epochs_as);
    for epoch in 0..cfg.epochs_as {
        for _ in 0..steps {
            let step = curve.len();
            let batch = batches.next()?;
            let terms = net
                .forward(&batch, &weights, Mode::Train, &opts)
                .and_then(|pass| apply_step(pass, &mut opt, net.params_mut()))
                .and_then(|t| net.renormalize_heads().map(|_| t))
                .map_err(|e| step_error("AS", step, epoch, e))?;
            curve.push(CurvePoint { step, epoch, terms });
        }
    }
    debug_assert_eq!(net.frozen(), &frozen_before);
    Ok(AsOutcome { network: net, curve })
}

/// Eval-mode predictions (ties to the lowest class) and probabilities.
pub fn predict_target(net: &AsNetwork, x: &Tensor) -> Result<(Vec<usize>, Tensor)> {
    let probs = net.emotion_probabilities(x)?;
    Ok((probs.argmax_rows(), probs))
}
