//! Weighted minimum-distance subinterval classification and the energy /
//! fatigue bookkeeping derived from the estimated index.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterParams, ScalarFilter};
use crate::ingest::RunnerProfile;
use crate::moments::{FeatureVector, FEATURE_COUNT};
use crate::select::RelevanceDistribution;
use crate::trend::TrendModel;

/// Filter configuration of one selected feature. Filtering runs on the
/// normalised observation minus `centre`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedFilter {
    pub feature: usize,
    pub centre: f64,
    #[serde(flatten)]
    pub params: FilterParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub profile: RunnerProfile,
    #[serde(rename = "N")]
    pub segments: usize,
    pub trend: TrendModel,
    pub relevance: RelevanceDistribution,
    pub filter_params: Vec<SelectedFilter>,
    /// Mean training speed per subinterval, m/s.
    pub speeds: Vec<f64>,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.relevance.validate()?;
        let n = self.segments;
        if self.trend.segments != n || self.profile.segments != n {
            return Err(Error::Invalid("segment counts disagree".into()));
        }
        if self.trend.features.len() != FEATURE_COUNT || self.relevance.d.len() != FEATURE_COUNT {
            return Err(Error::Invalid(format!("model must describe {FEATURE_COUNT} features")));
        }
        if self.speeds.len() != n || self.speeds.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid("speeds must hold N positive values".into()));
        }
        let selected = self.relevance.selected_features();
        if self.filter_params.len() != selected.len()
            || self.filter_params.iter().zip(selected).any(|(f, &j)| f.feature != j)
        {
            return Err(Error::Invalid("filter parameters do not match the selected features".into()));
        }
        for f in &self.filter_params {
            f.params.validate()?;
            if !f.centre.is_finite() {
                return Err(Error::Invalid(format!("filter centre of feature {} is not finite", f.feature)));
            }
        }
        Ok(())
    }

    pub fn template(&self) -> Result<Template> {
        Template::new(&self.trend, self.relevance.selected_features(), &self.relevance.p_selected)
    }
}

/// Fitted rows `x̄_k` of the selected features with their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub weights: Vec<f64>,
    /// `rows[k - 1]` is the fitted selected-feature vector at index `k`.
    pub rows: Vec<Vec<f64>>,
}

impl Template {
    pub fn new(trend: &TrendModel, features: &[usize], weights: &[f64]) -> Result<Self> {
        if features.len() != weights.len() {
            return Err(Error::Shape {
                expected: features.len(),
                got: weights.len(),
            });
        }
        let rows = (1..=trend.segments)
            .map(|k| trend.predict_selected(k, features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights: weights.to_vec(),
            rows,
        })
    }

    pub fn segments(&self) -> usize {
        self.rows.len()
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::Shape {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn weighted_sq(x: &[f64], row: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(row)
        .zip(w)
        .map(|((a, b), p)| {
            let d = p * a - p * b;
            d * d
        })
        .sum()
}

/// `argmin_k |p ⊗ x - p ⊗ x̄_k|`, smallest `k` on ties.
pub fn classify_single(x: &[f64], template: &Template) -> Result<usize> {
    template.check_dim(x)?;
    let mut best = (f64::INFINITY, 1);
    for (i, row) in template.rows.iter().enumerate() {
        let d = weighted_sq(x, row, &template.weights);
        if d < best.0 {
            best = (d, i + 1);
        }
    }
    Ok(best.1)
}

/// Window variant: `window` holds `lag + 1` consecutive observations, oldest
/// first, and is matched against `[x̄_{k-lag}, ..., x̄_k]` for
/// `k` in `[lag + 1, N]`. The block distance sums squared weighted
/// differences over every entry.
pub fn classify_lagged(window: &[Vec<f64>], template: &Template, lag: usize) -> Result<usize> {
    let n = template.segments();
    if lag >= n {
        return Err(Error::Lag { lag, n });
    }
    if window.len() != lag + 1 {
        return Err(Error::Shape {
            expected: lag + 1,
            got: window.len(),
        });
    }
    for x in window {
        template.check_dim(x)?;
    }
    let mut best = (f64::INFINITY, lag + 1);
    for k in lag + 1..=n {
        let mut d = 0.0;
        for (m, x) in window.iter().enumerate() {
            d += weighted_sq(x, &template.rows[k - 1 - lag + m], &template.weights);
        }
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best.1)
}

/// `100 * sqrt(mean((k_hat - k)^2)) / N`.
pub fn rms_index_error(k_hat: &[usize], truth: &[usize], n: usize) -> Result<f64> {
    if k_hat.is_empty() {
        return Err(Error::Arity("no estimates".into()));
    }
    if k_hat.len() != truth.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            got: k_hat.len(),
        });
    }
    if n == 0 {
        return Err(Error::Arity("segment count is zero".into()));
    }
    let mse = k_hat
        .iter()
        .zip(truth)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / k_hat.len() as f64;
    Ok(100.0 * mse.sqrt() / n as f64)
}

fn check_index(k: usize, speeds: &[f64]) -> Result<()> {
    if k == 0 || k > speeds.len() {
        return Err(Error::Range { k, n: speeds.len() });
    }
    Ok(())
}

/// Accumulated kinetic energy `Σ_{i<=k} m v_i^2 / 2`, joules.
pub fn kinetic_energy(profile: &RunnerProfile, speeds: &[f64], k: usize) -> Result<f64> {
    check_index(k, speeds)?;
    Ok(speeds[..k].iter().map(|v| 0.5 * profile.mass * v * v).sum())
}

/// Share of the whole run's kinetic energy spent by the end of subinterval
/// `k`, in percent. The mass cancels, so it is left out of the ratio.
pub fn fatigue_index(profile: &RunnerProfile, speeds: &[f64], k: usize) -> Result<f64> {
    check_index(k, speeds)?;
    if !(profile.mass > 0.0) {
        return Err(Error::Invalid(format!("mass must be positive, got {}", profile.mass)));
    }
    let total: f64 = speeds.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("total kinetic energy is zero".into()));
    }
    let partial: f64 = speeds[..k].iter().map(|v| v * v).sum();
    // divide first so that k = N gives exactly 100
    Ok(100.0 * (partial / total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub k_true: Option<usize>,
    pub k_hat: usize,
    pub distance_m: f64,
    pub energy_j: f64,
    pub fatigue_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub lag: usize,
    pub steps: Vec<StepResult>,
    pub rms_error_pct: Option<f64>,
}

impl ClassificationResult {
    pub fn k_hat(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.k_hat).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,k_true,k_hat,distance_m,energy_J,fatigue_pct")?;
        for s in &self.steps {
            let truth = s.k_true.map(|k| k.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step, truth, s.k_hat, s.distance_m, s.energy_j, s.fatigue_pct
            )?;
        }
        Ok(())
    }
}

/// Streaming classifier for one run: normalises, filters and windows each
/// incoming feature vector. Before `lag + 1` observations have arrived the
/// window (and thus the lag) is shorter.
#[derive(Debug)]
pub struct OnlineClassifier<'m> {
    model: &'m TrainedModel,
    template: Template,
    lag: usize,
    filters: Vec<ScalarFilter>,
    window: VecDeque<Vec<f64>>,
}

impl<'m> OnlineClassifier<'m> {
    pub fn new(model: &'m TrainedModel, lag: usize) -> Result<Self> {
        let template = model.template()?;
        if lag >= template.segments() {
            return Err(Error::Lag {
                lag,
                n: template.segments(),
            });
        }
        Ok(Self {
            model,
            template,
            lag,
            filters: Vec::new(),
            window: VecDeque::with_capacity(lag + 1),
        })
    }

    /// Normalised, filtered selected-feature observation.
    fn observe(&mut self, fv: &FeatureVector) -> Result<Vec<f64>> {
        let centred: Vec<f64> = self
            .model
            .filter_params
            .iter()
            .map(|f| fv.values[f.feature] * self.model.trend.features[f.feature].scale - f.centre)
            .collect();
        if self.filters.is_empty() {
            self.filters = self
                .model
                .filter_params
                .iter()
                .zip(&centred)
                .map(|(f, &z0)| ScalarFilter::new(&f.params, z0))
                .collect::<Result<_>>()?;
        }
        Ok(self
            .filters
            .iter_mut()
            .zip(&centred)
            .zip(&self.model.filter_params)
            .map(|((filter, &z), f)| filter.step(z) + f.centre)
            .collect())
    }

    pub fn push(&mut self, fv: &FeatureVector) -> Result<usize> {
        let x = self.observe(fv)?;
        self.window.push_back(x);
        if self.window.len() > self.lag + 1 {
            self.window.pop_front();
        }
        let window: Vec<Vec<f64>> = self.window.iter().cloned().collect();
        classify_lagged(&window, &self.template, window.len() - 1)
    }
}

/// Classifies a run's feature vectors in order. `truth`, when given, holds
/// the true index of each vector and enables the RMS summary.
pub fn classify_run(
    model: &TrainedModel,
    rows: &[FeatureVector],
    lag: usize,
    truth: Option<&[usize]>,
) -> Result<ClassificationResult> {
    if let Some(t) = truth {
        if t.len() != rows.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                got: t.len(),
            });
        }
    }
    let mut online = OnlineClassifier::new(model, lag)?;
    let mut steps = Vec::with_capacity(rows.len());
    for (i, fv) in rows.iter().enumerate() {
        let k_hat = online.push(fv)?;
        steps.push(StepResult {
            step: i + 1,
            k_true: truth.map(|t| t[i]),
            k_hat,
            distance_m: k_hat as f64 * model.profile.subinterval_distance,
            energy_j: kinetic_energy(&model.profile, &model.speeds, k_hat)?,
            fatigue_pct: fatigue_index(&model.profile, &model.speeds, k_hat)?,
        });
    }
    let rms_error_pct = match truth {
        Some(t) if !steps.is_empty() => {
            let k_hat: Vec<usize> = steps.iter().map(|s| s.k_hat).collect();
            Some(rms_index_error(&k_hat, t, model.segments)?)
        }
        _ => None,
    };
    Ok(ClassificationResult {
        lag,
        steps,
        rms_error_pct,
    })
}
