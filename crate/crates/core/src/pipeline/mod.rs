//! Stage orchestration: SS training and source weighting, AS training,
//! evaluation, leave-one-domain-out cross-validation, ablations, and the
//! source-count comparison.

mod config;
mod metrics;
mod report;
mod train;

pub use config::{parse_components, Component, TrainConfig};
pub use metrics::{binary_auc, compute_metrics, Metrics};
pub use report::{
    curve_csv, versions, Aggregate, FoldFailure, FoldSummary, MeanStd, ParamCounts, RunReport, REPORT_FORMAT_VERSION,
};
pub use train::{
    compute_source_weights, count_weights, predict_target, steps_per_epoch, train_as, train_ss, AsOutcome, CurvePoint,
    FoldData, Handover, SourceWeightVector, SsOutcome, MAX_WEIGHT, MIN_WEIGHT,
};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::MultiDomainBundle;
use crate::error::{Error, Result};
use crate::model::{AsNetwork, SsNetwork};
use crate::nn::SlrHead;
use crate::rng::{self, Stream};

/// Networks and report of one completed run.
pub struct FoldArtifacts {
    pub report: RunReport,
    pub ss: Option<SsOutcome>,
    pub adapted: AsOutcome,
}

impl FoldArtifacts {
    pub fn as_network(&self) -> &AsNetwork {
        &self.adapted.network
    }

    pub fn ss_network(&self) -> Option<&SsNetwork> {
        self.ss.as_ref().map(|s| &s.network)
    }
}

/// SS, then weights, then AS, then evaluation on the target.
pub fn run_pipeline(data: &FoldData<'_>, cfg: &TrainConfig, seed: u64) -> Result<FoldArtifacts> {
    cfg.validate()?;
    let ss = if cfg.skips_ss() { None } else { Some(train_ss(data, cfg, seed)?) };
    let weights = match &ss {
        Some(s) => compute_source_weights(&s.network, &data.target.features)?,
        None => SourceWeightVector::uniform(data.source_ids()),
    };
    adapt_and_evaluate(data, cfg, seed, ss, weights)
}

/// AS on `weights`, then evaluation. The SS outcome, when present, supplies
/// the frozen discriminator (and the encoder for a warm start).
pub fn adapt_and_evaluate(
    data: &FoldData<'_>,
    cfg: &TrainConfig,
    seed: u64,
    ss: Option<SsOutcome>,
    weights: SourceWeightVector,
) -> Result<FoldArtifacts> {
    cfg.validate()?;
    let handover = Handover {
        weights: &weights,
        frozen: ss.as_ref().map(|s| s.network.domain_head.clone()),
        encoder: ss.as_ref().filter(|_| cfg.warm_start_encoder).map(|s| &s.network.encoder),
    };
    let adapted = train_as(data, handover, cfg, seed)?;
    let report = evaluate(data, cfg, seed, ss.as_ref(), &adapted, weights)?;
    Ok(FoldArtifacts { report, ss, adapted })
}

fn evaluate(
    data: &FoldData<'_>,
    cfg: &TrainConfig,
    seed: u64,
    ss: Option<&SsOutcome>,
    adapted: &AsOutcome,
    weights: SourceWeightVector,
) -> Result<RunReport> {
    let (pred, probs) = predict_target(&adapted.network, &data.target.features)?;
    let metrics = compute_metrics(&pred, &probs, &data.target.labels, data.num_classes)?;
    let mut config = cfg.clone();
    config.seed = seed;
    Ok(RunReport {
        format_version: REPORT_FORMAT_VERSION,
        label: cfg.run_label().to_string(),
        target_id: data.target.domain_id,
        seed,
        config,
        metrics,
        source_weights: weights,
        param_counts: ParamCounts { ss: ss.map(|s| s.network.param_count()), as_: adapted.network.param_count() },
        ss_curve: ss.map(|s| s.curve.clone()).unwrap_or_default(),
        as_curve: adapted.curve.clone(),
        versions: versions(),
    })
}

/// Runs the pipeline with `target_id` held out and every other domain as a source.
pub fn run_fold(bundle: &MultiDomainBundle, target_id: usize, cfg: &TrainConfig, seed: u64) -> Result<FoldArtifacts> {
    run_pipeline(&FoldData::leave_out(bundle, target_id)?, cfg, seed)
}

/// Runs `f` on a pool of `threads` workers (serially when `threads <= 1`).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub struct LosocvOutcome {
    /// One entry per domain, in domain-id order.
    pub folds: Vec<(usize, Result<FoldArtifacts>)>,
    pub aggregate: Aggregate,
}

/// Leave-one-domain-out cross-validation; fold `d` uses seed `cfg.seed + d`.
/// A failing fold is reported and does not stop the others.
pub fn run_losocv(bundle: &MultiDomainBundle, cfg: &TrainConfig, threads: usize) -> Result<LosocvOutcome> {
    cfg.validate()?;
    if bundle.num_domains() < 3 {
        return Err(Error::InvalidInput(format!(
            "cross-validation needs at least 3 domains, got {}",
            bundle.num_domains()
        )));
    }
    let ids: Vec<usize> = (0..bundle.num_domains()).collect();
    let run = |&d: &usize| (d, run_fold(bundle, d, cfg, cfg.seed.wrapping_add(d as u64)));
    let folds: Vec<(usize, Result<FoldArtifacts>)> = if threads <= 1 {
        ids.iter().map(run).collect()
    } else {
        with_threads(threads, || ids.par_iter().map(run).collect())?
    };
    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (d, r) in &folds {
        match r {
            Ok(a) => summaries.push(FoldSummary::from(&a.report)),
            Err(e) => failed.push(FoldFailure { target_id: *d, error: e.to_string() }),
        }
    }
    let aggregate = Aggregate::new(cfg, summaries, failed);
    Ok(LosocvOutcome { folds, aggregate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub component: Component,
    pub label: String,
    pub accuracy: Option<MeanStd>,
    /// Ablated minus full mean accuracy.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub format_version: u32,
    pub full: Option<MeanStd>,
    pub rows: Vec<AblationRow>,
    pub failed: Vec<String>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,accuracy_mean,accuracy_std,delta\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!("SSAS,{},{},0\n", cell(self.full.map(|m| m.mean)), cell(self.full.map(|m| m.std))));
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.label,
                cell(r.accuracy.map(|m| m.mean)),
                cell(r.accuracy.map(|m| m.std)),
                cell(r.delta)
            ));
        }
        out
    }
}

/// Cross-validates the full method and each single-component removal.
pub fn run_ablation(
    bundle: &MultiDomainBundle,
    cfg: &TrainConfig,
    toggles: &[Component],
    threads: usize,
) -> Result<(AblationTable, Vec<Aggregate>)> {
    let full = run_losocv(bundle, cfg, threads)?.aggregate;
    let mut rows = Vec::with_capacity(toggles.len());
    let mut failed: Vec<String> = full.failed.iter().map(|f| format!("full/{}: {}", f.target_id, f.error)).collect();
    let mut aggregates = vec![full.clone()];
    for &c in toggles {
        let agg = run_losocv(bundle, &cfg.without(c), threads)?.aggregate;
        failed.extend(agg.failed.iter().map(|f| format!("{}/{}: {}", c, f.target_id, f.error)));
        let delta = match (agg.accuracy, full.accuracy) {
            (Some(a), Some(f)) => Some(a.mean - f.mean),
            _ => None,
        };
        rows.push(AblationRow { component: c, label: c.ablation_label().to_string(), accuracy: agg.accuracy, delta });
        aggregates.push(agg);
    }
    let table = AblationTable { format_version: REPORT_FORMAT_VERSION, full: full.accuracy, rows, failed };
    Ok((table, aggregates))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceCountRow {
    pub num_sources: usize,
    /// Randomly drawn sources trained with equal weights.
    pub random: Option<MeanStd>,
    /// Highest-count sources under SS, trained with their SS weights.
    pub top: Option<MeanStd>,
    /// Mean paired difference `top - random` over folds.
    pub delta: Option<f64>,
}

/// Restricts a discriminator to the rows of `keep` (positions into its classes).
fn restrict_head(head: &SlrHead, keep: &[usize]) -> Result<SlrHead> {
    let omega = head.omega.select_rows(keep);
    let bias = Tensor::vector(keep.iter().map(|&i| head.bias.data()[i]).collect());
    SlrHead::new(omega, bias, head.radius)
}

/// For each fold and each `S` in `sizes`, compares AS on `S` random sources
/// (equal weights) against AS on the top-`S` sources ranked by SS counts.
pub fn run_source_count(
    bundle: &MultiDomainBundle,
    cfg: &TrainConfig,
    sizes: &[usize],
    threads: usize,
) -> Result<Vec<SourceCountRow>> {
    cfg.validate()?;
    let max_sources = bundle.num_domains().saturating_sub(1);
    if let Some(&s) = sizes.iter().find(|&&s| s < 1 || s > max_sources) {
        return Err(Error::InvalidConfig(format!("source count {s} outside 1..={max_sources}")));
    }
    let ids: Vec<usize> = (0..bundle.num_domains()).collect();
    let fold = |&d: &usize| -> Result<Vec<(f64, f64)>> {
        let seed = cfg.seed.wrapping_add(d as u64);
        let data = FoldData::leave_out(bundle, d)?;
        let ss = train_ss(&data, cfg, seed)?;
        let weights = compute_source_weights(&ss.network, &data.target.features)?;
        let mut ranked: Vec<usize> = (0..weights.counts.len()).collect();
        ranked.sort_by(|&a, &b| weights.counts[b].cmp(&weights.counts[a]).then(a.cmp(&b)));
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            let mut top: Vec<usize> = ranked[..s].to_vec();
            top.sort();
            let top_ids: Vec<usize> = top.iter().map(|&i| weights.source_ids[i]).collect();
            let top_weights = SourceWeightVector {
                source_ids: top_ids.clone(),
                counts: top.iter().map(|&i| weights.counts[i]).collect(),
                weights: top.iter().map(|&i| weights.weights[i]).collect(),
                min_w: weights.min_w,
                max_w: weights.max_w,
            };
            let top_data = data.with_sources(&top_ids)?;
            let handover = Handover {
                weights: &top_weights,
                frozen: Some(restrict_head(&ss.network.domain_head, &top)?),
                encoder: None,
            };
            let top_net = train_as(&top_data, handover, cfg, seed)?;

            let mut pool = data.source_ids();
            pool.shuffle(&mut rng::stream_rng(seed, Stream::SourceSubset, s as u64, 0));
            let mut random_ids = pool[..s].to_vec();
            random_ids.sort();
            let random_data = data.with_sources(&random_ids)?;
            let uniform = SourceWeightVector::uniform(random_ids);
            let handover = Handover { weights: &uniform, frozen: None, encoder: None };
            let random_net = train_as(&random_data, handover, cfg, seed)?;

            let acc = |net: &AsNetwork| -> Result<f64> {
                let (pred, _) = predict_target(net, &data.target.features)?;
                let hits = pred.iter().zip(&data.target.labels).filter(|(p, t)| p == t).count();
                Ok(hits as f64 / pred.len() as f64)
            };
            out.push((acc(&random_net.network)?, acc(&top_net.network)?));
        }
        Ok(out)
    };
    let results: Vec<Result<Vec<(f64, f64)>>> = if threads <= 1 {
        ids.iter().map(fold).collect()
    } else {
        with_threads(threads, || ids.par_iter().map(fold).collect())?
    };
    let results: Vec<Vec<(f64, f64)>> = results.into_iter().collect::<Result<_>>()?;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let random: Vec<f64> = results.iter().map(|r| r[j].0).collect();
            let top: Vec<f64> = results.iter().map(|r| r[j].1).collect();
            let deltas: Vec<f64> = results.iter().map(|r| r[j].1 - r[j].0).collect();
            SourceCountRow {
                num_sources: s,
                random: MeanStd::of(&random),
                top: MeanStd::of(&top),
                delta: MeanStd::of(&deltas).map(|m| m.mean),
            }
        })
        .collect())
}
