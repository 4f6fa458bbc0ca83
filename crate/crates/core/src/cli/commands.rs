use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{parse_ids, synthetic_config, train_config};
use super::*;
use crate::data::{generate_synthetic, load_bundle, save_bundle, MultiDomainBundle};
use crate::model::checkpoint::Checkpoint;
use crate::model::SsNetwork;
use crate::pipeline::{
    self, adapt_and_evaluate, compute_source_weights, curve_csv, parse_components, train_ss, FoldArtifacts, FoldData,
    MeanStd, RunReport, SourceWeightVector, SsOutcome, REPORT_FORMAT_VERSION,
};
use crate::theory::{run_suite, SuiteConfig};

pub const REPORT_FILE: &str = "report.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const SS_CHECKPOINT: &str = "ss_checkpoint.bin";
pub const AS_CHECKPOINT: &str = "as_checkpoint.bin";

fn io_failure(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failure(format!("{}: {e}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_bytes(path, to_json(value)?.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_failure(path, e))
}

fn load_data(dir: &Path) -> CliResult<MultiDomainBundle> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("data directory {} does not exist", dir.display())));
    }
    Ok(load_bundle(dir)?)
}

/// `--parallel`, capped by the thread environment variable when set.
fn worker_count(requested: usize) -> CliResult<usize> {
    let requested = requested.max(1);
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            Ok(requested.min(cap.max(1)))
        }
        Err(_) => Ok(requested),
    }
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let cfg = synthetic_config(a)?;
    let bundle = generate_synthetic(&cfg)?;
    save_bundle(&bundle, &a.out)?;
    println!("{}", a.out.join(crate::data::MANIFEST_FILE).display());
    Ok(())
}

/// Per-sample embeddings of every domain under the adapted encoder.
fn embeddings_csv(art: &FoldArtifacts, bundle: &MultiDomainBundle) -> CliResult<String> {
    let enc = &art.as_network().encoder;
    let mut out = String::from("domain,role,label");
    for j in 0..enc.feature_dim() {
        write!(out, ",z{j}").unwrap();
    }
    out.push('\n');
    let mut domains: Vec<_> = bundle.domains.iter().collect();
    domains.sort_by_key(|d| d.domain_id);
    for d in domains {
        let z = enc.embed(&d.features)?;
        let role = if d.domain_id == art.report.target_id { "target" } else { "source" };
        for (i, &y) in d.labels.iter().enumerate() {
            write!(out, "{},{role},{y}", d.domain_id).unwrap();
            for v in z.row(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn write_ss(dir: &Path, ss: &SsOutcome, weights: &SourceWeightVector) -> CliResult<()> {
    write_json(&dir.join(WEIGHTS_FILE), weights)?;
    write_bytes(&dir.join(SS_CHECKPOINT), &ss.network.checkpoint().to_bytes()?)?;
    if !ss.curve.is_empty() {
        write_bytes(&dir.join("ss_curve.csv"), curve_csv(&ss.curve).as_bytes())?;
    }
    Ok(())
}

/// Everything a completed fold leaves behind.
fn write_fold(dir: &Path, art: &FoldArtifacts, bundle: &MultiDomainBundle) -> CliResult<()> {
    if let Some(ss) = &art.ss {
        write_ss(dir, ss, &art.report.source_weights)?;
    } else {
        write_json(&dir.join(WEIGHTS_FILE), &art.report.source_weights)?;
    }
    write_bytes(&dir.join(AS_CHECKPOINT), &art.as_network().checkpoint().to_bytes()?)?;
    write_bytes(&dir.join("as_curve.csv"), curve_csv(&art.adapted.curve).as_bytes())?;
    write_bytes(&dir.join("embeddings.csv"), embeddings_csv(art, bundle)?.as_bytes())?;
    write_json(&dir.join(REPORT_FILE), &art.report)
}

#[derive(Serialize)]
struct Timing {
    ss_seconds: Option<f64>,
    as_seconds: Option<f64>,
}

/// Rebuilds the SS outcome and weights from an earlier `--stage ss` run.
fn load_ss_run(dir: &Path, data: &FoldData<'_>) -> CliResult<(SsOutcome, SourceWeightVector)> {
    let ckpt = Checkpoint::load(&dir.join(SS_CHECKPOINT))?;
    let network = SsNetwork::from_checkpoint(&ckpt)?;
    let weights: SourceWeightVector = read_json(&dir.join(WEIGHTS_FILE))?;
    let ids = data.source_ids();
    if network.config.source_ids != ids || weights.source_ids != ids {
        return Err(CliError::Usage(format!(
            "SS run in {} was trained on sources {:?}, this fold has {ids:?}",
            dir.display(),
            network.config.source_ids
        )));
    }
    Ok((SsOutcome { network, curve: Vec::new() }, weights))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = train_config(&a.train)?;
    let bundle = load_data(&a.data)?;
    if a.target >= bundle.num_domains() {
        return Err(CliError::Usage(format!("target {} outside 0..{}", a.target, bundle.num_domains())));
    }
    let data = FoldData::leave_out(&bundle, a.target)?;
    let seed = cfg.seed;
    let mut timing = Timing { ss_seconds: None, as_seconds: None };

    let (ss, weights) = match a.stage {
        Stage::Ss | Stage::Full if !cfg.skips_ss() => {
            let t = Instant::now();
            let ss = train_ss(&data, &cfg, seed)?;
            let weights = compute_source_weights(&ss.network, &data.target.features)?;
            timing.ss_seconds = Some(t.elapsed().as_secs_f64());
            (Some(ss), weights)
        }
        Stage::Ss => {
            return Err(CliError::Usage("--stage ss with SS disabled (disable ss or equal weights)".into()));
        }
        Stage::As => match &a.ss_run {
            Some(dir) if !cfg.skips_ss() => {
                let (ss, w) = load_ss_run(dir, &data)?;
                (Some(ss), w)
            }
            None if cfg.skips_ss() => (None, SourceWeightVector::uniform(data.source_ids())),
            Some(_) => return Err(CliError::Usage("--ss-run given but SS is disabled".into())),
            None => return Err(CliError::Usage("--stage as needs --ss-run unless SS is disabled".into())),
        },
        Stage::Full => (None, SourceWeightVector::uniform(data.source_ids())),
    };

    if a.stage == Stage::Ss {
        let ss = ss.expect("ss stage trains SS");
        write_ss(&a.out, &ss, &weights)?;
    } else {
        let t = Instant::now();
        let art = adapt_and_evaluate(&data, &cfg, seed, ss, weights)?;
        timing.as_seconds = Some(t.elapsed().as_secs_f64());
        write_fold(&a.out, &art, &bundle)?;
        let m = &art.report.metrics;
        println!("{} target {}: accuracy {:.4} macro-F1 {:.4}", art.report.label, a.target, m.accuracy, m.macro_f1);
    }
    if a.timing {
        write_json(&a.out.join("timing.json"), &timing)?;
    }
    Ok(())
}

fn partial_or_failure(failed: &[String], total: usize) -> CliResult<()> {
    if failed.is_empty() {
        Ok(())
    } else if failed.len() >= total {
        Err(CliError::Failure(format!("every run failed:\n{}", failed.join("\n"))))
    } else {
        Err(CliError::Partial(format!("{} of {total} folds failed:\n{}", failed.len(), failed.join("\n"))))
    }
}

pub fn fold_dir(out: &Path, target: usize) -> PathBuf {
    out.join(format!("fold_{target}"))
}

pub fn losocv(a: &LosocvArgs) -> CliResult<()> {
    let cfg = train_config(&a.train)?;
    let bundle = load_data(&a.data)?;
    let threads = worker_count(a.parallel)?;
    let outcome = pipeline::run_losocv(&bundle, &cfg, threads)?;
    let mut failed = Vec::new();
    for (d, r) in &outcome.folds {
        match r {
            Ok(art) => write_fold(&fold_dir(&a.out, *d), art, &bundle)?,
            Err(e) => {
                write_bytes(&fold_dir(&a.out, *d).join("error.txt"), format!("{e}\n").as_bytes())?;
                failed.push(format!("fold {d}: {e}"));
            }
        }
    }
    write_json(&a.out.join("aggregate.json"), &outcome.aggregate)?;
    if let Some(acc) = outcome.aggregate.accuracy {
        println!(
            "{}: accuracy {:.4} +/- {:.4} over {} folds",
            outcome.aggregate.label,
            acc.mean,
            acc.std,
            outcome.aggregate.folds.len()
        );
    }
    partial_or_failure(&failed, outcome.folds.len())
}

pub fn ablate(a: &AblateArgs) -> CliResult<()> {
    let toggles = parse_components(&a.toggles).map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = train_config(&a.train)?;
    let bundle = load_data(&a.data)?;
    let threads = worker_count(a.parallel)?;
    let (table, aggregates) = pipeline::run_ablation(&bundle, &cfg, &toggles, threads)?;
    write_bytes(&a.out.join("ablation.csv"), table.to_csv().as_bytes())?;
    #[derive(Serialize)]
    struct Doc<'a> {
        table: &'a pipeline::AblationTable,
        aggregates: &'a [pipeline::Aggregate],
    }
    write_json(&a.out.join("ablation.json"), &Doc { table: &table, aggregates: &aggregates })?;
    print!("{}", table.to_csv());
    let runs = aggregates.len() * bundle.num_domains();
    partial_or_failure(&table.failed, runs)
}

pub fn source_count(a: &SourceCountArgs) -> CliResult<()> {
    let sizes = parse_ids(&a.sizes)?;
    if sizes.is_empty() {
        return Err(CliError::Usage("--sizes is empty".into()));
    }
    let cfg = train_config(&a.train)?;
    let bundle = load_data(&a.data)?;
    let threads = worker_count(a.parallel)?;
    let rows = pipeline::run_source_count(&bundle, &cfg, &sizes, threads)?;
    let mut csv = String::from("num_sources,random_mean,random_std,top_mean,top_std,delta\n");
    let cell =
        |m: Option<MeanStd>| m.map_or((String::new(), String::new()), |m| (m.mean.to_string(), m.std.to_string()));
    for r in &rows {
        let (rm, rs) = cell(r.random);
        let (tm, ts) = cell(r.top);
        let delta = r.delta.map(|d| d.to_string()).unwrap_or_default();
        writeln!(csv, "{},{rm},{rs},{tm},{ts},{delta}", r.num_sources).unwrap();
    }
    write_bytes(&a.out.join("source_count.csv"), csv.as_bytes())?;
    write_json(&a.out.join("source_count.json"), &rows)?;
    print!("{csv}");
    Ok(())
}

pub fn verify_theory(a: &VerifyTheoryArgs) -> CliResult<()> {
    let cfg = SuiteConfig {
        instances: a.trials,
        max_points: a.max_points,
        max_hypotheses: a.max_hypotheses,
        max_sources: a.max_sources,
        seed: a.seed,
    };
    let summary = run_suite(&cfg)?;
    let text = to_json(&summary)?;
    if let Some(out) = &a.out {
        write_bytes(&out.join("summary.json"), text.as_bytes())?;
    }
    print!("{text}");
    if summary.passed() {
        Ok(())
    } else {
        let first = to_json(&summary.counterexamples[0])?;
        Err(CliError::Failure(format!("{} check failures; first counterexample:\n{first}", summary.failures)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub target_id: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub format_version: u32,
    pub rows: Vec<ReportRow>,
    pub accuracy: Option<MeanStd>,
    pub macro_f1: Option<MeanStd>,
    pub macro_auc: Option<MeanStd>,
}

/// `DIR/report.json` and every `DIR/*/report.json`, ordered by target id.
fn collect_reports(dir: &Path) -> CliResult<Vec<RunReport>> {
    let mut paths = Vec::new();
    let top = dir.join(REPORT_FILE);
    if top.is_file() {
        paths.push(top);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| io_failure(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_failure(dir, e))?;
        let p = entry.path().join(REPORT_FILE);
        if p.is_file() {
            paths.push(p);
        }
    }
    let mut reports = paths.iter().map(|p| read_json::<RunReport>(p)).collect::<CliResult<Vec<_>>>()?;
    reports.sort_by(|a, b| a.target_id.cmp(&b.target_id).then(a.label.cmp(&b.label)));
    Ok(reports)
}

pub fn build_table(reports: &[RunReport]) -> ReportTable {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            label: r.label.clone(),
            target_id: r.target_id,
            seed: r.seed,
            accuracy: r.metrics.accuracy,
            macro_f1: r.metrics.macro_f1,
            macro_auc: r.metrics.macro_auc,
            weights: r.source_weights.weights.clone(),
        })
        .collect();
    let stat = |f: fn(&ReportRow) -> Option<f64>| MeanStd::of(&rows.iter().filter_map(f).collect::<Vec<_>>());
    ReportTable {
        format_version: REPORT_FORMAT_VERSION,
        accuracy: stat(|r| Some(r.accuracy)),
        macro_f1: stat(|r| Some(r.macro_f1)),
        macro_auc: stat(|r| r.macro_auc),
        rows,
    }
}

pub fn table_csv(t: &ReportTable) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("label,target_id,seed,accuracy,macro_f1,macro_auc,weights\n");
    for r in &t.rows {
        let w: Vec<String> = r.weights.iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label,
            r.target_id,
            r.seed,
            r.accuracy,
            r.macro_f1,
            opt(r.macro_auc),
            w.join(";")
        )
        .unwrap();
    }
    let part = |m: Option<MeanStd>, pick: fn(MeanStd) -> f64| opt(m.map(pick));
    for (name, pick) in [("mean", (|m: MeanStd| m.mean) as fn(MeanStd) -> f64), ("std", |m: MeanStd| m.std)] {
        writeln!(out, "{name},,,{},{},{},", part(t.accuracy, pick), part(t.macro_f1, pick), part(t.macro_auc, pick))
            .unwrap();
    }
    out
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    if !a.run.is_dir() {
        return Err(CliError::Usage(format!("run directory {} does not exist", a.run.display())));
    }
    let reports = collect_reports(&a.run)?;
    if reports.is_empty() {
        return Err(CliError::Failure(format!("no {REPORT_FILE} under {}", a.run.display())));
    }
    let table = build_table(&reports);
    match a.format {
        ReportFormat::Json => print!("{}", to_json(&table)?),
        ReportFormat::Csv => print!("{}", table_csv(&table)),
    }
    Ok(())
}
