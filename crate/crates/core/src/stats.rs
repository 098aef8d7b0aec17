//! Statistical kernels shared by the metrics: AUROC, accuracy counts, the
//! one-sided binomial test, rank correlation, trace smoothing and distances.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("both classes must be present")]
    SingleClass,
    #[error("empty input")]
    Empty,
    #[error("invalid counts: {successes} successes out of {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("iteration indices must be strictly increasing")]
    NonIncreasing,
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// `(iteration, value)` pairs with strictly increasing iterations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSeries {
    points: Vec<(usize, f64)>,
}

impl ScoreSeries {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(StatsError::NonIncreasing);
        }
        Ok(ScoreSeries { points })
    }

    pub fn push(&mut self, iteration: usize, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if iteration <= last {
                return Err(StatsError::NonIncreasing);
            }
        }
        self.points.push((iteration, value));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// 1-based average ranks (ties share the mean of their positions).
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean((i+1)..=(j+1))
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StatsError::SingleClass);
    }
    Ok((pos, neg))
}

/// Normalized Mann-Whitney U: P(score of a positive > score of a negative),
/// ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// `(correct, total)` for the rule "score >= 0.5 predicts class 1".
pub fn accuracy_at_half(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == l)
        .count();
    Ok((correct as u64, scores.len() as u64))
}

/// `P(X >= successes)` for `X ~ Binomial(trials, 1/2)`, summed in log space.
pub fn binomial_test_upper(successes: u64, trials: u64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(StatsError::InvalidCounts { successes, trials });
    }
    if successes == 0 {
        return Ok(1.0);
    }
    let n = trials;
    let log_half = -(n as f64) * std::f64::consts::LN_2;
    let terms: Vec<f64> = (successes..=n)
        .map(|k| ln_binomial(n, k) + log_half)
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    Ok((m + s.ln()).exp().min(1.0))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::Degenerate("need at least 3 paired values".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| StatsError::Degenerate("an input has no variance".into()))
}

pub fn clip_scores(x: &[f64], floor: f64) -> Vec<f64> {
    x.iter().map(|&v| v.max(floor)).collect()
}

/// Centered rolling mean, window `max(1, round(fraction * len))`, truncated at
/// both ends. Output keeps the input's iteration indices.
pub fn smooth_centered(series: &ScoreSeries, window_fraction: f64) -> Result<ScoreSeries> {
    if series.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(StatsError::InvalidParameter(format!(
            "window fraction {window_fraction} outside (0, 1]"
        )));
    }
    let n = series.len();
    let w = ((window_fraction * n as f64).round() as usize).max(1);
    let before = w / 2;
    let after = w - before - 1;
    let vals = series.values();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in &vals {
        prefix.push(prefix.last().unwrap() + v);
    }
    let points = series
        .points()
        .iter()
        .enumerate()
        .map(|(i, &(it, _))| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            let mean = if hi == lo {
                vals[lo]
            } else {
                vals[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            };
            (it, mean)
        })
        .collect();
    Ok(ScoreSeries { points })
}

/// `1 - cos(u, v)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(StatsError::LengthMismatch(u.len(), v.len()));
    }
    Ok(cosine_distance_unchecked(u, v))
}

#[inline]
pub(crate) fn cosine_distance_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = match a[i].total_cmp(&b[j]) {
            Ordering::Greater => b[j],
            _ => a[i],
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Total variation distance between the empirical category frequencies.
pub fn total_variation<S: AsRef<str>>(a: &[S], b: &[S]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut freq: HashMap<&str, (f64, f64)> = HashMap::new();
    for s in a {
        freq.entry(s.as_ref()).or_default().0 += 1.0;
    }
    for s in b {
        freq.entry(s.as_ref()).or_default().1 += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(0.5 * freq.values().map(|(x, y)| (x / na - y / nb).abs()).sum::<f64>())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() == 1 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
