//! Relative membership-inference score.
//!
//! Each repetition splits the data into disjoint target sets `T1`, `T2` and a
//! shared set `R`, runs the generator on `X1 = T1 ∪ R` and `X2 = T2 ∪ R`,
//! trains a discriminator to separate the two synthetic outputs, and scores
//! how well that discriminator assigns the target records to their source.
//! The score is the smoothed target AUROC at the first recording where the
//! discriminator's training AUROC reaches the threshold.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminator::{self, MlpConfig, MlpState, ScoreTrace};
use crate::generators::{self, GeneratorSpec};
use crate::stats::{self, StatsError};
use crate::tabular::{self, Table};
use crate::{derive_seed, Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemiaConfig {
    pub target_fraction: f64,
    pub train_auroc_threshold: f64,
    pub repetitions: usize,
    pub discriminator: MlpConfig,
    pub base_seed: u64,
}

impl Default for RemiaConfig {
    fn default() -> Self {
        RemiaConfig {
            target_fraction: 1.0,
            train_auroc_threshold: 0.99,
            repetitions: 4,
            discriminator: MlpConfig::default(),
            base_seed: 0,
        }
    }
}

impl RemiaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "target fraction {} outside the valid range (0, 1]",
                self.target_fraction
            )));
        }
        if !(self.train_auroc_threshold > 0.5 && self.train_auroc_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "training AUROC threshold {} outside (0.5, 1]",
                self.train_auroc_threshold
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("at least one repetition is required".into()));
        }
        self.discriminator.validate()?;
        Ok(())
    }

    pub fn repetition_seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|r| self.base_seed.wrapping_add(r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub score: f64,
    pub iteration: usize,
    pub threshold_reached: bool,
}

/// Smoothed target AUROC at the first recording whose raw training AUROC
/// reaches `threshold`; the last recording (flagged) if none does.
pub fn select_score(trace: &ScoreTrace, threshold: f64) -> Result<Selection> {
    let train = trace.train_series.points();
    let smoothed = trace.smoothed_target.points();
    if train.is_empty() || smoothed.is_empty() {
        return Err(StatsError::Empty.into());
    }
    let (iteration, threshold_reached) = match train.iter().find(|p| p.1 >= threshold) {
        Some(p) => (p.0, true),
        None => (train.last().unwrap().0, false),
    };
    let score = smoothed
        .iter()
        .find(|p| p.0 == iteration)
        .map(|p| p.1)
        .ok_or_else(|| Error::Config(format!("no target value recorded at iteration {iteration}")))?;
    Ok(Selection {
        score,
        iteration,
        threshold_reached,
    })
}

/// Largest attack accuracy against the leaky model: `(1 + p) / 2`.
pub fn leaky_ceiling(p: f64) -> f64 {
    (1.0 + p) / 2.0
}

/// What the attacker produced on one pair of synthetic sets.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub trace: ScoreTrace,
    pub selection: Selection,
    pub max_smoothed_target: f64,
    /// Accuracy counts on the targets for the model at the selected iteration.
    pub correct: u64,
    pub total: u64,
    pub epochs_run: usize,
    pub final_state: MlpState,
}

/// Trains the discriminator on `(synth_x, synth_y)` only; the targets are
/// scored along the way but never enter an update.
pub fn attack_encoded(
    synth_x: &Array2<f64>,
    synth_y: &[bool],
    target_x: &Array2<f64>,
    target_y: &[bool],
    mlp: &MlpConfig,
    threshold: f64,
) -> Result<AttackOutcome> {
    let out = discriminator::train_classifier(
        synth_x,
        synth_y,
        Some((target_x, target_y)),
        mlp,
        Some(threshold),
    )?;
    let selection = select_score(&out.trace, threshold)?;
    let chosen = match &out.snapshot {
        Some((k, s)) if *k == selection.iteration => s,
        _ => match &out.last_recorded {
            Some((k, s)) if *k == selection.iteration => s,
            _ => &out.state,
        },
    };
    let probs = discriminator::mlp_forward(chosen, target_x)?;
    let (correct, total) = stats::accuracy_at_half(probs.as_slice().unwrap(), target_y)?;
    let max_smoothed_target = out
        .trace
        .smoothed_target
        .values()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AttackOutcome {
        trace: out.trace,
        selection,
        max_smoothed_target,
        correct,
        total,
        epochs_run: out.epochs_run,
        final_state: out.state,
    })
}

/// Labels source 1 as `false`, source 2 as `true`; encoder fitted on the
/// synthetic union.
pub fn attack(
    s1: &Table,
    s2: &Table,
    t1: &Table,
    t2: &Table,
    mlp: &MlpConfig,
    threshold: f64,
) -> Result<AttackOutcome> {
    let synth = Table::stack(&[s1, s2])?;
    let enc = tabular::fit_encoder(&synth)?;
    let synth_x = tabular::encode(&synth, &enc)?;
    let synth_y = source_labels(s1.len(), s2.len());
    let target_x = concatenate(
        Axis(0),
        &[tabular::encode(t1, &enc)?.view(), tabular::encode(t2, &enc)?.view()],
    )
    .expect("same feature width");
    let target_y = source_labels(t1.len(), t2.len());
    attack_encoded(&synth_x, &synth_y, &target_x, &target_y, mlp, threshold)
}

fn source_labels(first: usize, second: usize) -> Vec<bool> {
    let mut y = vec![false; first];
    y.resize(first + second, true);
    y
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub seed: u64,
    pub score: f64,
    pub selected_iteration: usize,
    pub threshold_reached: bool,
    /// Diagnostic only: the best smoothed target AUROC over the whole run.
    pub max_smoothed_target: f64,
    pub correct: u64,
    pub total: u64,
    pub epochs_run: usize,
    pub records_used: usize,
    pub trace: ScoreTrace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemiaResult {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub correct: u64,
    pub total: u64,
    pub p_value: f64,
    pub significant: bool,
    pub records_used: usize,
    pub threshold_not_reached: bool,
    pub repetitions: Vec<RepetitionResult>,
}

fn run_repetition(data: &Table, generator: &GeneratorSpec, cfg: &RemiaConfig, seed: u64) -> Result<RepetitionResult> {
    let split = tabular::split_remia(data, cfg.target_fraction, derive_seed(seed, 10))?;
    let (s1, s2) = rayon::join(
        || generators::generate(generator, &split.x1, split.x1.len(), derive_seed(seed, 11)),
        || generators::generate(generator, &split.x2, split.x2.len(), derive_seed(seed, 12)),
    );
    let (s1, s2) = (s1?, s2?);
    let mlp = cfg.discriminator.clone().with_seed(derive_seed(seed, 13));
    let out = attack(&s1, &s2, &split.t1, &split.t2, &mlp, cfg.train_auroc_threshold)?;
    Ok(RepetitionResult {
        seed,
        score: out.selection.score,
        selected_iteration: out.selection.iteration,
        threshold_reached: out.selection.threshold_reached,
        max_smoothed_target: out.max_smoothed_target,
        correct: out.correct,
        total: out.total,
        epochs_run: out.epochs_run,
        records_used: split.records_used(),
        trace: out.trace,
    })
}

/// Runs all repetitions (in parallel) and aggregates their accuracy counts
/// into one one-sided binomial test.
pub fn remia_score(data: &Table, generator: &GeneratorSpec, cfg: &RemiaConfig) -> Result<RemiaResult> {
    cfg.validate()?;
    // fail fast on an unusable split before spawning work
    tabular::split_remia(data, cfg.target_fraction, 0)?;
    let repetitions = cfg
        .repetition_seeds()
        .into_par_iter()
        .map(|seed| run_repetition(data, generator, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = repetitions.iter().map(|r| r.score).collect();
    let (mean, std) = stats::mean_std(&scores);
    let correct = repetitions.iter().map(|r| r.correct).sum();
    let total = repetitions.iter().map(|r| r.total).sum();
    let p_value = stats::binomial_test_upper(correct, total)?;
    Ok(RemiaResult {
        mean,
        std,
        correct,
        total,
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
        records_used: repetitions[0].records_used,
        threshold_not_reached: repetitions.iter().any(|r| !r.threshold_reached),
        scores,
        repetitions,
    })
}

/// Records needed for a training-set size `s` at target fraction `f`.
pub fn records_needed(s: f64, f: f64) -> f64 {
    s * (1.0 + f)
}
