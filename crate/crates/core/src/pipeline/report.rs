use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::Metrics;
use super::train::{CurvePoint, SourceWeightVector};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub ss: Option<usize>,
    #[serde(rename = "as")]
    pub as_: usize,
}

/// Everything a single train/evaluate run produced, minus wall time (kept
/// separately so that reports are byte-reproducible).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    /// `SSAS`, `Equal-weights` or `Nontransfer`.
    pub label: String,
    pub target_id: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub metrics: Metrics,
    pub source_weights: SourceWeightVector,
    pub param_counts: ParamCounts,
    pub ss_curve: Vec<CurvePoint>,
    pub as_curve: Vec<CurvePoint>,
    pub versions: BTreeMap<String, String>,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([("ssas".to_string(), env!("CARGO_PKG_VERSION").to_string())])
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub target_id: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub target_id: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub format_version: u32,
    pub label: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub folds: Vec<FoldSummary>,
    pub failed: Vec<FoldFailure>,
    pub accuracy: Option<MeanStd>,
    pub macro_f1: Option<MeanStd>,
    pub macro_auc: Option<MeanStd>,
    pub versions: BTreeMap<String, String>,
}

impl Aggregate {
    pub fn new(cfg: &TrainConfig, folds: Vec<FoldSummary>, failed: Vec<FoldFailure>) -> Self {
        let pick = |f: fn(&FoldSummary) -> Option<f64>| -> Option<MeanStd> {
            MeanStd::of(&folds.iter().filter_map(f).collect::<Vec<_>>())
        };
        Aggregate {
            format_version: REPORT_FORMAT_VERSION,
            label: cfg.run_label().to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            accuracy: pick(|f| Some(f.accuracy)),
            macro_f1: pick(|f| Some(f.macro_f1)),
            macro_auc: pick(|f| f.macro_auc),
            folds,
            failed,
            versions: versions(),
        }
    }
}

impl From<&RunReport> for FoldSummary {
    fn from(r: &RunReport) -> Self {
        FoldSummary {
            target_id: r.target_id,
            accuracy: r.metrics.accuracy,
            macro_f1: r.metrics.macro_f1,
            macro_auc: r.metrics.macro_auc,
            weights: r.source_weights.weights.clone(),
        }
    }
}

/// `step,epoch,total,dcls,ecls,mmd,mdc` rows.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,epoch,total,dcls,ecls,mmd,mdc\n");
    for p in curve {
        let t = &p.terms;
        writeln!(out, "{},{},{},{},{},{},{}", p.step, p.epoch, t.total, t.dcls, t.ecls, t.mmd, t.mdc).unwrap();
    }
    out
}
