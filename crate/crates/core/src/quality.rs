//! Fidelity (real-vs-synthetic detection) and utility (downstream efficacy)
//! metrics. Both train the discriminator module's MLP.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::{self, MlpConfig, TrainError};
use crate::stats::{self, StatsError};
use crate::tabular::{self, ColumnKind, Table, TableError};
use crate::{derive_seed, seeded_rng};

/// Identifier of the downstream model recorded in reports.
pub const MODEL_ID: &str = "mlp";

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("{0}")]
    Empty(String),
    #[error("invalid fold count {0}")]
    Folds(usize),
    #[error("unknown target column '{0}'")]
    UnknownTarget(String),
    #[error("task {task} does not fit target column '{column}' ({kind})")]
    TaskMismatch {
        task: Task,
        column: String,
        kind: &'static str,
    },
    #[error("binary target '{column}' needs exactly 2 classes, found {found}")]
    BinaryClasses { column: String, found: usize },
    #[error("target column is the only column; no features left")]
    NoFeatures,
    #[error("training table has a single class in the target")]
    SingleClass,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, QualityError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub mean_auroc: f64,
    pub fold_aurocs: Vec<f64>,
}

/// Mean held-out AUROC of a real (0) vs synthetic (1) discriminator over
/// `folds` seeded 80/20 splits. Lower means higher fidelity.
pub fn detection(real: &Table, synth: &Table, folds: usize, seed: u64, mlp: &MlpConfig) -> Result<DetectionResult> {
    detection_impl(real, synth, folds, seed, mlp, false)
}

/// [`detection`] with the labels exchanged (real 1, synth 0) and the network
/// mirrored at initialization. Training then produces exactly negated logits,
/// so each fold's AUROC equals the unswapped one; measured against the
/// unswapped labels it is the complement.
pub fn detection_swapped(real: &Table, synth: &Table, folds: usize, seed: u64, mlp: &MlpConfig) -> Result<DetectionResult> {
    detection_impl(real, synth, folds, seed, mlp, true)
}

fn detection_impl(
    real: &Table,
    synth: &Table,
    folds: usize,
    seed: u64,
    mlp: &MlpConfig,
    swap: bool,
) -> Result<DetectionResult> {
    if real.is_empty() || synth.is_empty() {
        return Err(QualityError::Empty("real and synth must be non-empty".into()));
    }
    if folds == 0 {
        return Err(QualityError::Folds(folds));
    }
    let pool = Table::stack(&[real, synth])?;
    let labels: Vec<bool> = (0..pool.len()).map(|i| (i >= real.len()) != swap).collect();
    let n_train = (pool.len() as f64 * 0.8).round() as usize;
    if n_train == 0 || n_train == pool.len() {
        return Err(QualityError::Empty("pool too small for an 80/20 split".into()));
    }
    let mut fold_aurocs = Vec::with_capacity(folds);
    for fold in 0..folds {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(seed, fold as u64)));
        let (fit_idx, eval_idx) = order.split_at(n_train);
        let fit_part = pool.select(fit_idx);
        let eval_part = pool.select(eval_idx);
        let pick = |idx: &[usize]| -> Vec<bool> { idx.iter().map(|&i| labels[i]).collect() };
        let (fit_y, eval_y) = (pick(fit_idx), pick(eval_idx));
        let enc = tabular::fit_encoder(&fit_part)?;
        let fit_x = tabular::encode(&fit_part, &enc)?;
        let eval_x = tabular::encode(&eval_part, &enc)?;
        let cfg = mlp.clone().with_seed(derive_seed(seed, 100 + fold as u64));
        let mut init = discriminator::mlp_init(fit_x.ncols(), &cfg)?;
        if swap {
            init = init.with_output_negated();
        }
        let out = discriminator::train_classifier_from(init, &fit_x, &fit_y, None, &cfg, None)?;
        let scores = out.state.predict_raw(&eval_x)?;
        fold_aurocs.push(stats::auroc(scores.as_slice().expect("contiguous"), &eval_y)?);
    }
    Ok(DetectionResult {
        mean_auroc: fold_aurocs.iter().sum::<f64>() / folds as f64,
        fold_aurocs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
    Regression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
            Task::Regression => "regression",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            "regression" => Ok(Task::Regression),
            other => Err(format!("unknown task '{other}' (binary, multiclass, regression)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyResult {
    pub task: Task,
    pub model: String,
    /// AUROC (binary), accuracy (multiclass) or negative RMSE (regression).
    pub synth_score: f64,
    pub real_score: f64,
    /// `synth_score - real_score`; negative means utility loss.
    pub difference: f64,
}

/// Downstream score of a model trained on `synth` minus the same model
/// trained on `real_train`, both evaluated on `real_test`.
pub fn ml_efficacy(
    real_train: &Table,
    synth: &Table,
    real_test: &Table,
    target_column: &str,
    task: Task,
    seed: u64,
    mlp: &MlpConfig,
) -> Result<EfficacyResult> {
    for (name, t) in [("real_train", real_train), ("synth", synth), ("real_test", real_test)] {
        if t.is_empty() {
            return Err(QualityError::Empty(format!("{name} table is empty")));
        }
    }
    let schema = real_train.schema();
    let target = schema
        .index_of(target_column)
        .ok_or_else(|| QualityError::UnknownTarget(target_column.to_string()))?;
    let column = &schema.columns()[target];
    let kind_ok = match task {
        Task::Regression => column.kind == ColumnKind::Numerical,
        Task::Binary | Task::Multiclass => column.kind == ColumnKind::Categorical,
    };
    if !kind_ok {
        return Err(QualityError::TaskMismatch {
            task,
            column: column.name.clone(),
            kind: match column.kind {
                ColumnKind::Numerical => "numerical",
                ColumnKind::Categorical => "categorical",
            },
        });
    }
    let features: Vec<usize> = (0..schema.len()).filter(|&j| j != target).collect();
    if features.is_empty() {
        return Err(QualityError::NoFeatures);
    }
    let classes = match task {
        Task::Regression => Vec::new(),
        _ => class_order(column.categories.as_deref(), target, &[real_train, synth, real_test]),
    };
    if task == Task::Binary && classes.len() != 2 {
        return Err(QualityError::BinaryClasses {
            column: column.name.clone(),
            found: classes.len(),
        });
    }
    let model = Downstream {
        target,
        features: &features,
        classes: &classes,
        task,
        cfg: mlp.clone().with_seed(seed),
    };
    let synth_score = model.score(synth, real_test)?;
    let real_score = model.score(real_train, real_test)?;
    Ok(EfficacyResult {
        task,
        model: MODEL_ID.to_string(),
        synth_score,
        real_score,
        difference: synth_score - real_score,
    })
}

/// Declared categories first, then the remaining observed values sorted, so
/// class indices do not depend on which table is the training side.
fn class_order(declared: Option<&[String]>, target: usize, tables: &[&Table]) -> Vec<String> {
    let mut classes: Vec<String> = declared.map(<[String]>::to_vec).unwrap_or_default();
    let observed: BTreeSet<&str> = tables
        .iter()
        .flat_map(|t| t.rows().iter().map(move |r| r[target].as_cat().expect("categorical")))
        .collect();
    for v in observed {
        if !classes.iter().any(|c| c == v) {
            classes.push(v.to_string());
        }
    }
    classes
}

struct Downstream<'a> {
    target: usize,
    features: &'a [usize],
    classes: &'a [String],
    task: Task,
    cfg: MlpConfig,
}

impl Downstream<'_> {
    fn class_index(&self, t: &Table) -> Vec<usize> {
        t.rows()
            .iter()
            .map(|r| {
                let v = r[self.target].as_cat().expect("categorical");
                self.classes.iter().position(|c| c == v).expect("class collected")
            })
            .collect()
    }

    fn score(&self, fit: &Table, test: &Table) -> Result<f64> {
        let fit_features = fit.project(self.features)?;
        let enc = tabular::fit_encoder(&fit_features)?;
        let fit_x = tabular::encode(&fit_features, &enc)?;
        let test_x = tabular::encode(&test.project(self.features)?, &enc)?;
        match self.task {
            Task::Binary => {
                let y: Vec<bool> = self.class_index(fit).iter().map(|&c| c == 1).collect();
                let logits = self.fit_binary(&fit_x, &y)?.predict_raw(&test_x)?;
                let truth: Vec<bool> = self.class_index(test).iter().map(|&c| c == 1).collect();
                Ok(stats::auroc(logits.as_slice().expect("contiguous"), &truth)?)
            }
            Task::Multiclass => {
                let fit_c = self.class_index(fit);
                let mut best = vec![(f64::NEG_INFINITY, usize::MAX); test.len()];
                let present: BTreeSet<usize> = fit_c.iter().copied().collect();
                if present.len() < 2 {
                    return Err(QualityError::SingleClass);
                }
                for &k in &present {
                    let y: Vec<bool> = fit_c.iter().map(|&c| c == k).collect();
                    let logits = self.fit_binary(&fit_x, &y)?.predict_raw(&test_x)?;
                    for (b, &z) in best.iter_mut().zip(&logits) {
                        if z > b.0 {
                            *b = (z, k);
                        }
                    }
                }
                let truth = self.class_index(test);
                let hits = best.iter().zip(&truth).filter(|(b, &t)| b.1 == t).count();
                Ok(hits as f64 / test.len() as f64)
            }
            Task::Regression => {
                let y = fit.numeric_column(self.target);
                let (mean, std) = population_moments(&y);
                let scaled: Vec<f64> = y.iter().map(|v| (v - mean) / std).collect();
                let state = discriminator::train_regression(&fit_x, &scaled, &self.cfg)?;
                let pred = state.predict_raw(&test_x)?;
                let truth = test.numeric_column(self.target);
                let mse = pred
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| (p * std + mean - t).powi(2))
                    .sum::<f64>()
                    / truth.len() as f64;
                Ok(-mse.sqrt())
            }
        }
    }

    fn fit_binary(&self, x: &Array2<f64>, y: &[bool]) -> Result<discriminator::MlpState> {
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            return Err(QualityError::SingleClass);
        }
        Ok(discriminator::train_classifier(x, y, None, &self.cfg, None)?.state)
    }
}

fn population_moments(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Cell, Column, Schema};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn quick() -> MlpConfig {
        MlpConfig {
            hidden_sizes: vec![16],
            max_epochs: 60,
            batch_size: 64,
            ..MlpConfig::default()
        }
    }

    /// Two numerical features; `label` is "yes" iff x0 + x1 > 0, `level` is a
    /// three-way bucket of x0 and `y` is a noisy linear response.
    fn dataset(n: usize, seed: u64) -> Table {
        let schema = Arc::new(
            Schema::new(vec![
                Column::numerical("x0"),
                Column::numerical("x1"),
                Column::categorical("label"),
                Column::categorical("level"),
                Column::numerical("y"),
            ])
            .unwrap(),
        );
        let mut rng = crate::seeded_rng(seed);
        let rows = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                let level = if a < -0.5 { "lo" } else if a < 0.5 { "mid" } else { "hi" };
                vec![
                    Cell::Num(a),
                    Cell::Num(b),
                    Cell::cat(if a + b > 0.0 { "yes" } else { "no" }),
                    Cell::cat(level),
                    Cell::Num(3.0 * a - b + 0.1 * rng.random_range(-1.0..1.0)),
                ]
            })
            .collect();
        Table::from_rows(schema, rows).unwrap()
    }

    #[test]
    fn swapped_detection_is_symmetric() {
        let real = dataset(150, 1);
        let synth = dataset(150, 2);
        let a = detection(&real, &synth, 3, 9, &quick()).unwrap();
        let b = detection_swapped(&real, &synth, 3, 9, &quick()).unwrap();
        for (x, y) in a.fold_aurocs.iter().zip(&b.fold_aurocs) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let real = dataset(100, 1);
        let synth = dataset(100, 2);
        assert_eq!(
            detection(&real, &synth, 2, 4, &quick()).unwrap(),
            detection(&real, &synth, 2, 4, &quick()).unwrap()
        );
        assert!(matches!(detection(&real, &synth, 0, 4, &quick()), Err(QualityError::Folds(0))));
    }

    #[test]
    fn self_efficacy_is_exactly_zero() {
        let train = dataset(200, 1);
        let test = dataset(100, 2);
        for (col, task) in [("label", Task::Binary), ("level", Task::Multiclass), ("y", Task::Regression)] {
            let r = ml_efficacy(&train, &train, &test, col, task, 5, &quick()).unwrap();
            assert_eq!(r.difference, 0.0, "{task}");
        }
    }

    #[test]
    fn learnable_tasks_score_well_on_real_data() {
        let train = dataset(400, 1);
        let test = dataset(200, 2);
        let cfg = MlpConfig { max_epochs: 150, ..quick() };
        let bin = ml_efficacy(&train, &train, &test, "label", Task::Binary, 1, &cfg).unwrap();
        assert!(bin.real_score > 0.95, "{bin:?}");
        let multi = ml_efficacy(&train, &train, &test, "level", Task::Multiclass, 1, &cfg).unwrap();
        assert!(multi.real_score > 0.8, "{multi:?}");
        let reg = ml_efficacy(&train, &train, &test, "y", Task::Regression, 1, &cfg).unwrap();
        assert!(reg.real_score < 0.0 && reg.real_score > -1.0, "{reg:?}");
    }

    #[test]
    fn task_must_fit_target() {
        let t = dataset(20, 1);
        assert!(matches!(
            ml_efficacy(&t, &t, &t, "y", Task::Binary, 0, &quick()),
            Err(QualityError::TaskMismatch { .. })
        ));
        assert!(matches!(
            ml_efficacy(&t, &t, &t, "level", Task::Binary, 0, &quick()),
            Err(QualityError::BinaryClasses { found: 3, .. })
        ));
        assert!(matches!(
            ml_efficacy(&t, &t, &t, "nope", Task::Regression, 0, &quick()),
            Err(QualityError::UnknownTarget(_))
        ));
        assert_eq!("multiclass".parse::<Task>().unwrap(), Task::Multiclass);
    }
}
