//! Metric commands, sweeps and report comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use remia_core::baselines::{self, DcrResult};
use remia_core::generators::{self, GeneratorSpec};
use remia_core::quality::{self, EfficacyResult};
use remia_core::remia::{leaky_ceiling, remia_score, SIGNIFICANCE_LEVEL};
use remia_core::{derive_seed, seeded_rng, stats, tabular, MlpConfig, RemiaConfig, Schema, Table};
use serde::Serialize;
use serde_json::json;

use crate::args::{CommonArgs, CompareArgs, DcrArgs, DomiasArgs, QualityArgs, RemiaArgs, SweepArgs, SweepMetric};
use crate::genflag::{Family, GeneratorFlag};
use crate::report::{
    fingerprint, AuditReport, CliError, ConfigEcho, Fingerprint, Significance, COMPARE_FORMAT_VERSION,
    REPORT_FORMAT_VERSION, SWEEP_FORMAT_VERSION,
};

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn read_csv(path: &Path, schema: &Arc<Schema>) -> Result<Table, CliError> {
    let file = File::open(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    tabular::read_table(file, schema.clone()).map_err(|e| validation(format!("{}: {e}", path.display())))
}

/// Disjoint seeded random subsets of the given sizes; row ids are kept.
fn carve(t: &Table, sizes: &[usize], seed: u64) -> Result<Vec<Table>, CliError> {
    let needed: usize = sizes.iter().sum();
    if needed > t.len() || sizes.contains(&0) {
        return Err(validation(format!(
            "cannot carve parts of sizes {sizes:?} from {} rows",
            t.len()
        )));
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let part = t.select(&order[start..start + s]);
            start += s;
            part
        })
        .collect())
}

/// Loaded inputs shared by every metric command.
struct Inputs {
    schema: Arc<Schema>,
    /// Rows available to the metric (after setting aside a leak pool).
    data: Table,
    fingerprint: Fingerprint,
    generator: GeneratorSpec,
    mlp: MlpConfig,
}

fn load_inputs(c: &CommonArgs) -> Result<Inputs, CliError> {
    if c.reps == 0 {
        return Err(validation("--reps must be at least 1"));
    }
    if c.max_epochs == Some(0) {
        return Err(validation("--max-epochs must be at least 1"));
    }
    let flag = GeneratorFlag::parse(&c.generator).map_err(validation)?;
    let schema = Arc::new(Schema::load(&c.schema).map_err(|e| validation(format!("{}: {e}", c.schema.display())))?);
    let full = read_csv(&c.data, &schema)?;
    let fingerprint = fingerprint(&full);
    let (data, pool) = if !flag.needs_pool() {
        (full, None)
    } else if let Some(path) = &c.leak_pool {
        let next_id = full.row_ids().iter().max().map_or(0, |m| m + 1);
        let pool = read_csv(path, &schema)?.with_fresh_ids(next_id);
        (full, Some(pool))
    } else {
        let half = full.len() / 2;
        let mut parts = carve(&full, &[full.len() - half, half], derive_seed(c.seed, 900))?;
        let pool = parts.pop();
        (parts.pop().expect("two parts"), pool)
    };
    let generator = flag
        .resolve(pool.as_ref(), Duration::from_secs(c.timeout_secs))
        .map_err(validation)?;
    let mut mlp = MlpConfig::default();
    if let Some(e) = c.max_epochs {
        mlp.max_epochs = e;
    }
    Ok(Inputs {
        schema,
        data,
        fingerprint,
        generator,
        mlp,
    })
}

fn repetition_seeds(c: &CommonArgs) -> Vec<u64> {
    (0..c.reps as u64).map(|r| c.seed + r).collect()
}

struct Outcome {
    scores: Vec<f64>,
    significance: Option<Significance>,
    records_used: Option<usize>,
    flags: Vec<String>,
    details: serde_json::Value,
    resolved: serde_json::Value,
}

fn finish<A: Serialize>(
    command: &str,
    args: &A,
    inputs: &Inputs,
    seeds: Vec<u64>,
    outcome: Outcome,
    started: Instant,
) -> AuditReport {
    let (mean, std) = stats::mean_std(&outcome.scores);
    AuditReport {
        format_version: REPORT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        metric: command.to_string(),
        generator: inputs.generator.to_string(),
        dataset: inputs.fingerprint.clone(),
        config: ConfigEcho {
            command: command.to_string(),
            args: serde_json::to_value(args).expect("args serialize"),
            resolved: outcome.resolved,
        },
        seeds,
        scores: outcome.scores,
        mean,
        std,
        significance: outcome.significance,
        records_used: outcome.records_used,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        flags: outcome.flags,
        details: outcome.details,
    }
}

fn significance(successes: u64, total: u64) -> Result<Significance, CliError> {
    let p_value = stats::binomial_test_upper(successes, total).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(Significance {
        p_value,
        level: SIGNIFICANCE_LEVEL,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}

pub fn cmd_remia(args: &RemiaArgs) -> Result<AuditReport, CliError> {
    let started = Instant::now();
    let inputs = load_inputs(&args.common)?;
    let cfg = RemiaConfig {
        target_fraction: args.target_fraction,
        repetitions: args.common.reps,
        discriminator: inputs.mlp.clone(),
        base_seed: args.common.seed,
        ..RemiaConfig::default()
    };
    cfg.validate()?;
    let res = remia_score(&inputs.data, &inputs.generator, &cfg)?;
    let mut flags = Vec::new();
    if res.threshold_not_reached {
        flags.push("threshold_not_reached".to_string());
    }
    let details: Vec<_> = res
        .repetitions
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "score": r.score,
                "selected_iteration": r.selected_iteration,
                "threshold_reached": r.threshold_reached,
                "max_smoothed_target": r.max_smoothed_target,
                "correct": r.correct,
                "total": r.total,
                "epochs_run": r.epochs_run,
            })
        })
        .collect();
    let outcome = Outcome {
        scores: res.scores.clone(),
        significance: Some(Significance {
            p_value: res.p_value,
            level: SIGNIFICANCE_LEVEL,
            significant: res.significant,
        }),
        records_used: Some(res.records_used),
        flags,
        details: json!({ "correct": res.correct, "total": res.total, "repetitions": details }),
        resolved: serde_json::to_value(&cfg).expect("config serializes"),
    };
    Ok(finish("remia", args, &inputs, cfg.repetition_seeds(), outcome, started))
}

pub fn cmd_dcr(args: &DcrArgs) -> Result<AuditReport, CliError> {
    let started = Instant::now();
    let inputs = load_inputs(&args.common)?;
    let holdout = args.holdout.as_ref().map(|p| read_csv(p, &inputs.schema)).transpose()?;
    let seeds = repetition_seeds(&args.common);
    let runs: Vec<(DcrResult, usize)> = seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let (train, holdout) = match &holdout {
                Some(h) => (inputs.data.clone(), h.clone()),
                None => {
                    let half = inputs.data.len() / 2;
                    let mut parts = carve(&inputs.data, &[half, half], derive_seed(seed, 20))?;
                    let h = parts.pop().expect("two parts");
                    (parts.pop().expect("two parts"), h)
                }
            };
            let synth = generators::generate(&inputs.generator, &train, train.len(), derive_seed(seed, 21))?;
            Ok((baselines::dcr_score(&train, &synth, &holdout)?, train.len() + holdout.len()))
        })
        .collect::<Result<_, _>>()?;
    let successes = runs.iter().map(|r| r.0.successes).sum();
    let total = runs.iter().map(|r| r.0.total).sum();
    let outcome = Outcome {
        scores: runs.iter().map(|r| r.0.fraction).collect(),
        significance: Some(significance(successes, total)?),
        records_used: Some(runs[0].1),
        flags: Vec::new(),
        details: json!({
            "successes": successes,
            "total": total,
            "repetitions": runs.iter().zip(&seeds).map(|(r, s)| json!({ "seed": s, "result": r.0 })).collect::<Vec<_>>(),
        }),
        resolved: json!({ "distance": "cosine", "comparison": "strict", "holdout": if holdout.is_some() { "file" } else { "half of data" } }),
    };
    Ok(finish("dcr", args, &inputs, seeds, outcome, started))
}

pub fn cmd_domias(args: &DomiasArgs) -> Result<AuditReport, CliError> {
    let started = Instant::now();
    for (name, r) in [("--reference-ratio", args.reference_ratio), ("--control-ratio", args.control_ratio)] {
        if !(r > 0.0 && r.is_finite()) {
            return Err(validation(format!("{name} must be positive")));
        }
    }
    let inputs = load_inputs(&args.common)?;
    let reference = args.reference.as_ref().map(|p| read_csv(p, &inputs.schema)).transpose()?;
    let control = args.control.as_ref().map(|p| read_csv(p, &inputs.schema)).transpose()?;
    let ref_ratio = if reference.is_some() { 0.0 } else { args.reference_ratio };
    let ctl_ratio = if control.is_some() { 0.0 } else { args.control_ratio };
    let n_train = (inputs.data.len() as f64 / (1.0 + ref_ratio + ctl_ratio)).floor() as usize;
    let n_ref = (ref_ratio * n_train as f64).floor() as usize;
    let n_ctl = (ctl_ratio * n_train as f64).floor() as usize;
    let seeds = repetition_seeds(&args.common);
    let runs: Vec<(f64, usize)> = seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let sizes: Vec<usize> = [n_train, n_ref, n_ctl].into_iter().filter(|&s| s > 0).collect();
            let mut parts = carve(&inputs.data, &sizes, derive_seed(seed, 30))?.into_iter();
            let train = parts.next().expect("train part");
            let reference = match &reference {
                Some(r) => r.clone(),
                None => parts.next().expect("reference part"),
            };
            let control = match &control {
                Some(c) => c.clone(),
                None => parts.next().expect("control part"),
            };
            let synth = generators::generate(&inputs.generator, &train, train.len(), derive_seed(seed, 31))?;
            let used = train.len() + reference.len() + control.len();
            Ok((baselines::domias_score(&train, &synth, &reference, &control)?, used))
        })
        .collect::<Result<_, _>>()?;
    let outcome = Outcome {
        scores: runs.iter().map(|r| r.0).collect(),
        significance: None,
        records_used: Some(runs[0].1),
        flags: Vec::new(),
        details: json!({ "train_size": n_train }),
        resolved: json!({
            "variance_keep": baselines::DOMIAS_VARIANCE_KEEP,
            "kernel": "gaussian",
            "bandwidth": "scott",
        }),
    };
    Ok(finish("domias", args, &inputs, seeds, outcome, started))
}

pub fn cmd_quality(args: &QualityArgs) -> Result<AuditReport, CliError> {
    let started = Instant::now();
    let target = match (&args.target_column, args.task) {
        (Some(c), Some(t)) => Some((c.clone(), t)),
        (None, None) => None,
        _ => return Err(validation("--target-column and --task go together")),
    };
    if args.folds == 0 {
        return Err(validation("--folds must be at least 1"));
    }
    let inputs = load_inputs(&args.common)?;
    let holdout = args.holdout.as_ref().map(|p| read_csv(p, &inputs.schema)).transpose()?;
    let seeds = repetition_seeds(&args.common);
    let runs: Vec<(quality::DetectionResult, Option<EfficacyResult>)> = seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let (real_train, real_test) = match &holdout {
                Some(h) => (inputs.data.clone(), h.clone()),
                None => {
                    let n_test = (inputs.data.len() as f64 * 0.2).round() as usize;
                    let mut parts = carve(&inputs.data, &[inputs.data.len() - n_test, n_test], derive_seed(seed, 40))?;
                    let test = parts.pop().expect("two parts");
                    (parts.pop().expect("two parts"), test)
                }
            };
            let synth = generators::generate(&inputs.generator, &real_train, real_train.len(), derive_seed(seed, 41))?;
            let det = quality::detection(&real_train, &synth, args.folds, seed, &inputs.mlp)?;
            let eff = match &target {
                Some((column, task)) => Some(quality::ml_efficacy(
                    &real_train, &synth, &real_test, column, *task, seed, &inputs.mlp,
                )?),
                None => None,
            };
            Ok((det, eff))
        })
        .collect::<Result<_, _>>()?;
    let efficacy: Vec<f64> = runs.iter().filter_map(|r| r.1.as_ref().map(|e| e.difference)).collect();
    let outcome = Outcome {
        scores: runs.iter().map(|r| r.0.mean_auroc).collect(),
        significance: None,
        records_used: None,
        flags: Vec::new(),
        details: json!({
            "score": "detection_auroc",
            "efficacy_mean_difference": if efficacy.is_empty() { None } else { Some(stats::mean_std(&efficacy).0) },
            "repetitions": runs.iter().zip(&seeds).map(|(r, s)| json!({ "seed": s, "detection": r.0, "efficacy": r.1 })).collect::<Vec<_>>(),
        }),
        resolved: json!({ "folds": args.folds, "model": quality::MODEL_ID, "discriminator": inputs.mlp }),
    };
    Ok(finish("quality", args, &inputs, seeds, outcome, started))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub leaky_ceiling: Option<f64>,
    pub status: String,
}

/// Runs the metric at every grid point; a failing point is recorded with its
/// error and the sweep continues.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    let family = Family::parse(&args.common.generator).map_err(validation)?;
    if args.grid.is_empty() {
        return Err(validation("--grid is empty"));
    }
    if let Some(v) = args.grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(validation(format!("grid value {v} outside [0, 1]")));
    }
    let rows = args
        .grid
        .par_iter()
        .map(|&value| {
            let mut common = args.common.clone();
            common.generator = family.at(value);
            let report = match args.metric {
                SweepMetric::Remia => cmd_remia(&RemiaArgs {
                    common,
                    target_fraction: args.target_fraction,
                    out: Default::default(),
                }),
                SweepMetric::Dcr => cmd_dcr(&DcrArgs {
                    common,
                    holdout: args.holdout.clone(),
                    out: Default::default(),
                }),
                SweepMetric::Domias => cmd_domias(&DomiasArgs {
                    common,
                    reference: args.reference.clone(),
                    control: args.control.clone(),
                    reference_ratio: 5.0,
                    control_ratio: 1.0,
                    out: Default::default(),
                }),
            };
            let ceiling = (family == Family::Leaky).then(|| leaky_ceiling(value));
            match report {
                Ok(r) => SweepRow {
                    param: value,
                    metric: args.metric.name().to_string(),
                    mean: Some(r.mean),
                    std: Some(r.std),
                    leaky_ceiling: ceiling,
                    status: "ok".to_string(),
                },
                Err(e) => SweepRow {
                    param: value,
                    metric: args.metric.name().to_string(),
                    mean: None,
                    std: None,
                    leaky_ceiling: ceiling,
                    status: format!("failed: {e}"),
                },
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["format_version", "param", "metric", "mean", "std", "leaky_ceiling", "status"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            SWEEP_FORMAT_VERSION.to_string(),
            r.param.to_string(),
            r.metric.clone(),
            opt(r.mean),
            opt(r.std),
            opt(r.leaky_ceiling),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCorrelation {
    pub a: String,
    pub b: String,
    pub n: usize,
    pub spearman: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub format_version: u32,
    pub clipping: &'static str,
    pub floor: f64,
    pub metrics: Vec<String>,
    /// `(dataset hash, generator)` keys, in the order used for every vector.
    pub keys: Vec<(String, String)>,
    /// Symmetric matrix in `metrics` order; null where undefined.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub pairs: Vec<PairCorrelation>,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Comparison, CliError> {
    let mut by_metric: BTreeMap<String, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for path in &args.reports {
        let r = AuditReport::load(path)?;
        let value = if args.clip_before_average {
            let clipped = stats::clip_scores(&r.scores, args.floor);
            clipped.iter().sum::<f64>() / clipped.len().max(1) as f64
        } else {
            r.mean.max(args.floor)
        };
        let key = (r.dataset.hash.clone(), r.generator.clone());
        if by_metric.entry(r.metric.clone()).or_default().insert(key.clone(), value).is_some() {
            return Err(validation(format!(
                "duplicate report for metric {} on {:?}",
                r.metric, key
            )));
        }
    }
    let metrics: Vec<String> = by_metric.keys().cloned().collect();
    if metrics.len() < 2 {
        return Err(validation("comparison needs reports from at least 2 metrics"));
    }
    let keys: BTreeSet<(String, String)> = by_metric[&metrics[0]].keys().cloned().collect();
    for m in &metrics {
        let other: BTreeSet<_> = by_metric[m].keys().cloned().collect();
        if other != keys {
            return Err(validation(format!(
                "key-set mismatch: metric {m} covers {} (dataset, generator) pairs, {} covers {}",
                other.len(),
                metrics[0],
                keys.len()
            )));
        }
    }
    if keys.len() < 3 {
        return Err(validation(format!(
            "each metric needs at least 3 (dataset, generator) pairs, found {}",
            keys.len()
        )));
    }
    let vector = |m: &str| -> Vec<f64> { keys.iter().map(|k| by_metric[m][k]).collect() };
    let mut matrix = vec![vec![None; metrics.len()]; metrics.len()];
    let mut pairs = Vec::new();
    for i in 0..metrics.len() {
        for j in i..metrics.len() {
            let result = stats::spearman(&vector(&metrics[i]), &vector(&metrics[j]));
            if let Ok(r) = result {
                matrix[i][j] = Some(r);
                matrix[j][i] = Some(r);
            }
            if i < j {
                pairs.push(PairCorrelation {
                    a: metrics[i].clone(),
                    b: metrics[j].clone(),
                    n: keys.len(),
                    spearman: result.as_ref().ok().copied(),
                    error: result.err().map(|e| e.to_string()),
                });
            }
        }
    }
    Ok(Comparison {
        format_version: COMPARE_FORMAT_VERSION,
        clipping: if args.clip_before_average { "clip_then_average" } else { "average_then_clip" },
        floor: args.floor,
        metrics,
        keys: keys.into_iter().collect(),
        matrix,
        pairs,
    })
}
