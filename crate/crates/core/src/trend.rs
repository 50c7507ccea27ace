//! Unit-variance normalisation and least-squares trend lines over `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{FeatureSeries, FEATURE_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_variance: f64,
}

impl LineFit {
    pub fn at(&self, k: usize) -> f64 {
        self.slope * k as f64 + self.intercept
    }
}

/// Ordinary least squares of `values[i]` against `k = i + 1`.
/// `residual_variance` divides by the number of points.
pub fn fit_line(values: &[f64]) -> Result<LineFit> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Arity(format!("a line needs at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let k_mean = (nf + 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dk = (i + 1) as f64 - k_mean;
        sxy += dk * (y - y_mean);
        sxx += dk * dk;
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * k_mean;
    let fit = LineFit {
        slope,
        intercept,
        residual_variance: 0.0,
    };
    let residual_variance = values
        .iter()
        .enumerate()
        .map(|(i, y)| (y - fit.at(i + 1)).powi(2))
        .sum::<f64>()
        / nf;
    Ok(LineFit {
        residual_variance,
        ..fit
    })
}

/// Reciprocal population standard deviation of each column, pooled over all
/// given series.
pub fn fit_normalization(runs: &[&FeatureSeries]) -> Result<[f64; FEATURE_COUNT]> {
    let count: usize = runs.iter().map(|s| s.len()).sum();
    if count < 2 {
        return Err(Error::Arity("normalisation needs at least 2 rows".into()));
    }
    let mut scales = [0.0; FEATURE_COUNT];
    for (j, scale) in scales.iter_mut().enumerate() {
        let values = || runs.iter().flat_map(|s| s.rows.iter().map(move |r| r.values[j]));
        let mean = values().sum::<f64>() / count as f64;
        let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::Degenerate(format!(
                "feature {} has zero variance over the training runs",
                crate::moments::feature_name(j)
            )));
        }
        *scale = 1.0 / var.sqrt();
    }
    Ok(scales)
}

pub fn normalize(series: &FeatureSeries, scales: &[f64; FEATURE_COUNT]) -> FeatureSeries {
    let mut out = series.clone();
    for row in &mut out.rows {
        for (v, s) in row.values.iter_mut().zip(scales) {
            *v *= s;
        }
    }
    out
}

/// Per-feature normalisation scale and fitted line, in normalised units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrend {
    pub scale: f64,
    pub slope: f64,
    pub intercept: f64,
    pub residual_variance: f64,
}

impl FeatureTrend {
    pub fn at(&self, k: usize) -> f64 {
        self.slope * k as f64 + self.intercept
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    pub segments: usize,
    pub features: Vec<FeatureTrend>,
}

impl TrendModel {
    /// Normalises the training runs with pooled scales, fits each feature's
    /// line to the per-`k` mean of the runs and pools the residual variance
    /// over every run.
    pub fn fit(runs: &[FeatureSeries]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Arity("no training runs".into()))?;
        let n = first.len();
        if let Some(bad) = runs.iter().find(|r| r.len() != n) {
            return Err(Error::Shape {
                expected: n,
                got: bad.len(),
            });
        }
        let refs: Vec<&FeatureSeries> = runs.iter().collect();
        let scales = fit_normalization(&refs)?;
        let normalized: Vec<FeatureSeries> = runs.iter().map(|r| normalize(r, &scales)).collect();

        let mut features = Vec::with_capacity(FEATURE_COUNT);
        for (j, &scale) in scales.iter().enumerate() {
            let columns: Vec<Vec<f64>> = normalized.iter().map(|s| s.column(j)).collect();
            let mean: Vec<f64> = (0..n)
                .map(|k| columns.iter().map(|c| c[k]).sum::<f64>() / columns.len() as f64)
                .collect();
            let line = fit_line(&mean)?;
            let residual_variance = columns
                .iter()
                .flat_map(|c| c.iter().enumerate().map(|(i, v)| (v - line.at(i + 1)).powi(2)))
                .sum::<f64>()
                / (n * columns.len()) as f64;
            features.push(FeatureTrend {
                scale,
                slope: line.slope,
                intercept: line.intercept,
                residual_variance,
            });
        }
        Ok(Self {
            segments: n,
            features,
        })
    }

    pub fn scales(&self) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = f.scale;
        }
        out
    }

    /// Fitted value of every feature at `k`.
    pub fn predict(&self, k: usize) -> Result<Vec<f64>> {
        self.check_k(k)?;
        Ok(self.features.iter().map(|f| f.at(k)).collect())
    }

    /// Fitted values of the listed features at `k`.
    pub fn predict_selected(&self, k: usize, features: &[usize]) -> Result<Vec<f64>> {
        self.check_k(k)?;
        features
            .iter()
            .map(|&j| {
                self.features
                    .get(j)
                    .map(|f| f.at(k))
                    .ok_or(Error::Range { k: j + 1, n: self.features.len() })
            })
            .collect()
    }

    /// Value of the feature's line at the centre of the index range, which is
    /// also the mean of the series the line was fitted to.
    pub fn centre(&self, j: usize) -> f64 {
        let f = &self.features[j];
        f.slope * (self.segments as f64 + 1.0) / 2.0 + f.intercept
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.segments {
            Err(Error::Range { k, n: self.segments })
        } else {
            Ok(())
        }
    }
}

/// Value of a single fitted line at `k`, restricted to `[1, n]`.
pub fn predict_line(line: &LineFit, k: usize, n: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Range { k, n });
    }
    Ok(line.at(k))
}
