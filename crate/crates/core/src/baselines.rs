//! Non-shadow privacy baselines: distance to closest record (DCR) and the
//! density-ratio attack DOMIAS over a Gaussian kernel density estimate.

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, cosine_distance_unchecked, StatsError};
use crate::tabular::{self, EncoderState, PcaState, Table, TableError};

/// Fraction of variance kept by the DOMIAS projection.
pub const DOMIAS_VARIANCE_KEEP: f64 = 0.99;
const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{0}")]
    Empty(String),
    #[error("holdout has {holdout} rows but train has {train}; they must match")]
    HoldoutSize { train: usize, holdout: usize },
    #[error("KDE needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("query has dimension {found}, model has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite point in KDE input")]
    NonFinite,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcrResult {
    /// Share of training rows strictly closer to synth than to holdout.
    pub fraction: f64,
    pub successes: u64,
    pub total: u64,
    pub p_value: f64,
}

fn nearest(row: ArrayView1<'_, f64>, pool: &Array2<f64>) -> f64 {
    let u = row.as_slice().expect("standard layout");
    pool.rows()
        .into_iter()
        .map(|p| cosine_distance_unchecked(u, p.as_slice().expect("standard layout")))
        .fold(f64::INFINITY, f64::min)
}

/// DCR with cosine distance on the train-fitted encoding. Ties count as
/// failures.
pub fn dcr_score(train: &Table, synth: &Table, holdout: &Table) -> Result<DcrResult> {
    for (name, t) in [("train", train), ("synth", synth), ("holdout", holdout)] {
        if t.is_empty() {
            return Err(BaselineError::Empty(format!("{name} table is empty")));
        }
    }
    if holdout.len() != train.len() {
        return Err(BaselineError::HoldoutSize {
            train: train.len(),
            holdout: holdout.len(),
        });
    }
    let enc = tabular::fit_encoder(train)?;
    let xt = tabular::encode(train, &enc)?;
    let xs = tabular::encode(synth, &enc)?;
    let xh = tabular::encode(holdout, &enc)?;
    let successes = (0..xt.nrows())
        .into_par_iter()
        .filter(|&i| {
            let row = xt.row(i);
            nearest(row, &xs) < nearest(row, &xh)
        })
        .count() as u64;
    let total = train.len() as u64;
    Ok(DcrResult {
        fraction: successes as f64 / total as f64,
        successes,
        total,
        p_value: stats::binomial_test_upper(successes, total)?,
    })
}

/// Isotropic Gaussian KDE.
#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Array2<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }
}

/// Scott's factor `n^(-1/(k+4))` times the root-mean per-dimension sample
/// variance, floored at 1e-6. The root-mean form is rotation invariant.
pub fn kde_fit(points: &Array2<f64>) -> Result<KdeModel> {
    let n = points.nrows();
    if n < 2 {
        return Err(BaselineError::TooFewPoints(n));
    }
    let k = points.ncols();
    if k == 0 {
        return Err(BaselineError::Dimension { expected: 1, found: 0 });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    let mean_var = points.var_axis(Axis(0), 1.0).sum() / k as f64;
    let scott = (n as f64).powf(-1.0 / (k as f64 + 4.0));
    Ok(KdeModel {
        points: points.to_owned(),
        bandwidth: (scott * mean_var.sqrt()).max(MIN_BANDWIDTH),
    })
}

/// Log of the mean Gaussian kernel at `x`, via log-sum-exp.
pub fn kde_logpdf(model: &KdeModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(BaselineError::Dimension {
            expected: model.dim(),
            found: x.len(),
        });
    }
    let h2 = model.bandwidth * model.bandwidth;
    let exponents: Vec<f64> = model
        .points
        .rows()
        .into_iter()
        .map(|p| {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            -0.5 * d2 / h2
        })
        .collect();
    let m = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
    let k = model.dim() as f64;
    let log_norm = 0.5 * k * (2.0 * std::f64::consts::PI * h2).ln();
    Ok(m + sum.ln() - (model.n_points() as f64).ln() - log_norm)
}

/// [`kde_logpdf`] for each row of `x`.
pub fn kde_logpdf_rows(model: &KdeModel, x: &Array2<f64>) -> Result<Vec<f64>> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| kde_logpdf(model, &x.row(i).to_vec()))
        .collect()
}

/// Fitted DOMIAS densities: synthetic and reference KDEs in a shared
/// encoded-and-projected space.
#[derive(Debug, Clone)]
pub struct DomiasModel {
    encoder: EncoderState,
    pca: PcaState,
    synth: KdeModel,
    reference: KdeModel,
}

impl DomiasModel {
    /// Fits the encoder and projection on `reference ∪ synth`, then one KDE
    /// per side.
    pub fn fit(synth: &Table, reference: &Table) -> Result<Self> {
        if synth.is_empty() || reference.is_empty() {
            return Err(BaselineError::Empty("synth and reference must be non-empty".into()));
        }
        let union = Table::stack(&[reference, synth])?;
        let encoder = tabular::fit_encoder(&union)?;
        let pca = tabular::pca_fit(&tabular::encode(&union, &encoder)?, DOMIAS_VARIANCE_KEEP)?;
        let project = |t: &Table| -> Result<Array2<f64>> {
            Ok(tabular::pca_transform(&tabular::encode(t, &encoder)?, &pca))
        };
        let synth = kde_fit(&project(synth)?)?;
        let reference = kde_fit(&project(reference)?)?;
        Ok(DomiasModel {
            encoder,
            pca,
            synth,
            reference,
        })
    }

    /// The same model with the two densities exchanged.
    pub fn swapped(&self) -> Self {
        DomiasModel {
            synth: self.reference.clone(),
            reference: self.synth.clone(),
            ..self.clone()
        }
    }

    pub fn n_components(&self) -> usize {
        self.pca.n_components()
    }

    /// `log p_synth(x) - log p_reference(x)` per row.
    pub fn membership_scores(&self, records: &Table) -> Result<Vec<f64>> {
        let x = tabular::pca_transform(&tabular::encode(records, &self.encoder)?, &self.pca);
        let syn = kde_logpdf_rows(&self.synth, &x)?;
        let reference = kde_logpdf_rows(&self.reference, &x)?;
        Ok(syn.iter().zip(&reference).map(|(s, r)| s - r).collect())
    }

    /// AUROC of the membership scores, train rows positive, control negative.
    pub fn attack_auroc(&self, train: &Table, control: &Table) -> Result<f64> {
        if train.is_empty() || control.is_empty() {
            return Err(BaselineError::Empty("train and control must be non-empty".into()));
        }
        let mut scores = self.membership_scores(train)?;
        scores.extend(self.membership_scores(control)?);
        let labels: Vec<bool> = (0..scores.len()).map(|i| i < train.len()).collect();
        Ok(stats::auroc(&scores, &labels)?)
    }
}

pub fn domias_score(train: &Table, synth: &Table, reference: &Table, control: &Table) -> Result<f64> {
    DomiasModel::fit(synth, reference)?.attack_auroc(train, control)
}
