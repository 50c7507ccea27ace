//! Maximum-entropy-rate feature selection.
//!
//! Two training runs give each feature a discrepancy share `d_j` (its
//! trajectory distance over the sum of all trajectory distances). The
//! complement `d̄_j = (1 - d_j) / Σ(1 - d_k)` ranks features by cross-run
//! consistency. Sorting `d̄` gives `p`, and the selection trims `p` from the
//! tail while the tail element still carries enough entropy.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{FeatureSeries, FEATURE_COUNT};

#[derive(Clone, Debug, PartialEq)]
pub enum DistanceMetric {
    Euclidean,
    /// Euclidean distance with each feature scaled by its own variance.
    MahalanobisDiag(Vec<f64>),
}

impl DistanceMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::MahalanobisDiag(_) => "mahalanobis-diag",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discrepancy {
    pub d: Vec<f64>,
    /// Set when every trajectory distance was zero and `d` fell back to uniform.
    pub uniform_fallback: bool,
}

/// Normalises per-feature trajectory distances into a probability vector.
pub fn discrepancy_from_distances(distances: &[f64]) -> Result<Discrepancy> {
    if distances.is_empty() {
        return Err(Error::Arity("no features".into()));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::Invalid("distances must be finite and non-negative".into()));
    }
    let total: f64 = distances.iter().sum();
    if total == 0.0 {
        warn!("training runs are identical in every feature, using uniform discrepancies");
        let n = distances.len();
        return Ok(Discrepancy {
            d: vec![1.0 / n as f64; n],
            uniform_fallback: true,
        });
    }
    Ok(Discrepancy {
        d: distances.iter().map(|x| x / total).collect(),
        uniform_fallback: false,
    })
}

/// Per-feature distance between the trajectories of two runs.
pub fn discrepancy(u: &FeatureSeries, v: &FeatureSeries, metric: &DistanceMetric) -> Result<Discrepancy> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            expected: u.len(),
            got: v.len(),
        });
    }
    if let DistanceMetric::MahalanobisDiag(var) = metric {
        if var.len() != FEATURE_COUNT {
            return Err(Error::Shape {
                expected: FEATURE_COUNT,
                got: var.len(),
            });
        }
        if var.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invalid("metric variances must be positive".into()));
        }
    }
    let distances: Vec<f64> = (0..FEATURE_COUNT)
        .map(|j| {
            let ss: f64 = u
                .rows
                .iter()
                .zip(&v.rows)
                .map(|(a, b)| (a.values[j] - b.values[j]).powi(2))
                .sum();
            match metric {
                DistanceMetric::Euclidean => ss.sqrt(),
                DistanceMetric::MahalanobisDiag(var) => (ss / var[j]).sqrt(),
            }
        })
        .collect();
    discrepancy_from_distances(&distances)
}

/// `d̄_j = (1 - d_j) / Σ_k (1 - d_k)`.
pub fn nearness(d: &[f64]) -> Result<Vec<f64>> {
    if d.len() < 2 {
        return Err(Error::Arity(format!(
            "nearness needs at least 2 features, got {}",
            d.len()
        )));
    }
    let denom: f64 = d.iter().map(|x| 1.0 - x).sum();
    if !(denom > 0.0) {
        return Err(Error::Invalid("discrepancies must form a probability vector".into()));
    }
    Ok(d.iter().map(|x| (1.0 - x) / denom).collect())
}

/// Sorts into non-increasing order; `p[i] = d_bar[perm[i]]`, ties keep the
/// lower original index first.
pub fn sort_probabilities(d_bar: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..d_bar.len()).collect();
    perm.sort_by(|&a, &b| d_bar[b].total_cmp(&d_bar[a]));
    let p = perm.iter().map(|&i| d_bar[i]).collect();
    (p, perm)
}

/// `H_L = -(1/L) Σ_{i<L} p_i ln p_i`; zero for an empty prefix.
pub fn entropy_rate(p: &[f64], l: usize) -> Result<f64> {
    if l > p.len() {
        return Err(Error::Arity(format!("prefix {l} longer than distribution {}", p.len())));
    }
    if l == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (index, &value) in p[..l].iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::Domain { index, value });
        }
        sum += value * value.ln();
    }
    Ok(-sum / l as f64)
}

/// `x ln x` with the limit value 0 at 0.
fn plogp(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn renormalized_prefix(sorted: &[f64], l: usize) -> Vec<f64> {
    let total: f64 = sorted[..l].iter().sum();
    sorted[..l].iter().map(|x| x / total).collect()
}

fn prefix_entropy_rate(p: &[f64]) -> f64 {
    -p.iter().map(|&x| plogp(x)).sum::<f64>() / p.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Procedure1,
    Argmax,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procedure1" => Ok(SelectionMode::Procedure1),
            "argmax" => Ok(SelectionMode::Argmax),
            other => Err(Error::Config(format!("unknown selection mode {other:?}"))),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Procedure1 => "procedure1",
            SelectionMode::Argmax => "argmax",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyStep {
    pub l: usize,
    pub entropy_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// `perm[i]` is the original (0-based) feature index at sorted position `i`.
    pub perm: Vec<usize>,
    pub p: Vec<f64>,
    pub count: usize,
    pub p_selected: Vec<f64>,
    pub trace: Vec<EntropyStep>,
}

impl Selection {
    pub fn features(&self) -> &[usize] {
        &self.perm[..self.count]
    }
}

/// Iterative trimming: start from all `n` features and stop at `L = 2` or as
/// soon as the mean `p ln p` over the first `L - 1` entries falls strictly
/// below `p_L ln p_L`; otherwise drop the last entry and renormalise the top
/// `L - 1` entries of `d̄`.
pub fn select_features(d_bar: &[f64]) -> Result<Selection> {
    if d_bar.len() < 2 {
        return Err(Error::Arity(format!(
            "selection needs at least 2 features, got {}",
            d_bar.len()
        )));
    }
    let (sorted, perm) = sort_probabilities(d_bar);
    let mut l = sorted.len();
    let mut p = sorted.clone();
    let mut trace = Vec::new();
    loop {
        trace.push(EntropyStep {
            l,
            entropy_rate: prefix_entropy_rate(&p[..l]),
        });
        // mean_{i<L-1}(f(p_i)) < f(p_L), written as a sum of differences so
        // that equal entries compare as exactly equal
        let tail = plogp(p[l - 1]);
        let excess: f64 = p[..l - 1].iter().map(|&x| plogp(x) - tail).sum();
        if l == 2 || excess < 0.0 {
            break;
        }
        l -= 1;
        p = renormalized_prefix(&sorted, l);
    }
    Ok(Selection {
        perm,
        p: sorted,
        count: l,
        p_selected: p[..l].to_vec(),
        trace,
    })
}

/// Evaluates the entropy rate of every renormalised top-`L` prefix,
/// `L` in `[2, n]`, and keeps the maximiser (smallest `L` on ties).
pub fn select_by_argmax(d_bar: &[f64]) -> Result<Selection> {
    if d_bar.len() < 2 {
        return Err(Error::Arity(format!(
            "selection needs at least 2 features, got {}",
            d_bar.len()
        )));
    }
    let (sorted, perm) = sort_probabilities(d_bar);
    let mut trace = Vec::new();
    let mut best = (f64::NEG_INFINITY, 2);
    for l in 2..=sorted.len() {
        let h = prefix_entropy_rate(&renormalized_prefix(&sorted, l));
        trace.push(EntropyStep { l, entropy_rate: h });
        if h > best.0 {
            best = (h, l);
        }
    }
    let count = best.1;
    Ok(Selection {
        p_selected: renormalized_prefix(&sorted, count),
        perm,
        p: sorted,
        count,
        trace,
    })
}

pub fn argmax_entropy_rate(d_bar: &[f64]) -> Result<usize> {
    Ok(select_by_argmax(d_bar)?.count)
}

/// Everything the classifier and the selection report need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceDistribution {
    pub mode: SelectionMode,
    pub metric: String,
    pub uniform_fallback: bool,
    pub d: Vec<f64>,
    pub d_bar: Vec<f64>,
    pub perm: Vec<usize>,
    pub p: Vec<f64>,
    pub selected_count: usize,
    pub p_selected: Vec<f64>,
    pub trace: Vec<EntropyStep>,
}

impl RelevanceDistribution {
    pub fn from_discrepancy(disc: Discrepancy, metric: &DistanceMetric, mode: SelectionMode) -> Result<Self> {
        let d_bar = nearness(&disc.d)?;
        let sel = match mode {
            SelectionMode::Procedure1 => select_features(&d_bar)?,
            SelectionMode::Argmax => select_by_argmax(&d_bar)?,
        };
        Ok(Self {
            mode,
            metric: metric.name().to_string(),
            uniform_fallback: disc.uniform_fallback,
            d: disc.d,
            d_bar,
            perm: sel.perm,
            p: sel.p,
            selected_count: sel.count,
            p_selected: sel.p_selected,
            trace: sel.trace,
        })
    }

    /// Original 0-based indices of the selected features, most relevant first.
    pub fn selected_features(&self) -> &[usize] {
        &self.perm[..self.selected_count]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.d.len();
        if self.d_bar.len() != n || self.perm.len() != n || self.p.len() != n {
            return Err(Error::Invalid("relevance vectors differ in length".into()));
        }
        let mut seen = vec![false; n];
        for &i in &self.perm {
            if i >= n || seen[i] {
                return Err(Error::Invalid("permutation is not a bijection".into()));
            }
            seen[i] = true;
        }
        if self.selected_count < 2 || self.selected_count > n || self.p_selected.len() != self.selected_count {
            return Err(Error::Invalid(format!(
                "selected feature count {} outside [2, {n}]",
                self.selected_count
            )));
        }
        Ok(())
    }
}
