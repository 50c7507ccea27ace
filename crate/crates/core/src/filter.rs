//! Steady-state scalar Kalman filtering of feature observations.
//!
//! Each feature is modelled as `s[k+1] = A s[k] + w[k]`, observed as
//! `z[k] = s[k] + v[k]` with `var(w) = Q`, `var(v) = R`. The stationary gain
//! `L = P / (P + R)` follows from the positive root of the scalar Riccati
//! equation, and the filter runs the one-step recursion
//! `x[k] = (1 - L) A x[k-1] + L z[k]`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the Riccati residual `|P - A(P - LP)A - Q|` in `validate`.
pub const RICCATI_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "L")]
    pub gain: f64,
}

impl FilterParams {
    /// Solves the Riccati equation for `(A, Q, R)` and packs the result.
    pub fn from_model(a: f64, q: f64, r: f64) -> Result<Self> {
        let (p, gain) = solve_riccati(a, q, r)?;
        Ok(Self { a, r, q, p, gain })
    }

    pub fn riccati_residual(&self) -> f64 {
        (self.p - self.a * (self.p - self.gain * self.p) * self.a - self.q).abs()
    }

    /// Checks the full set of invariants a solved parameter record satisfies.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.r, self.q, self.p, self.gain]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.r <= 0.0 || self.q < 0.0 || self.p < 0.0 {
            return Err(Error::Invalid(format!("filter parameters out of range: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.gain) {
            return Err(Error::Invalid(format!("filter gain {} outside [0, 1)", self.gain)));
        }
        let expected_gain = self.p / (self.p + self.r);
        let residual = self.riccati_residual();
        if (expected_gain - self.gain).abs() > RICCATI_TOLERANCE || residual > RICCATI_TOLERANCE {
            return Err(Error::Invalid(format!(
                "filter parameters do not solve the Riccati equation (residual {residual:e})"
            )));
        }
        Ok(())
    }
}

/// Positive root of `P^2 + P (R (1 - A^2) - Q) - Q R = 0` and the matching gain.
pub fn solve_riccati(a: f64, q: f64, r: f64) -> Result<(f64, f64)> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Invalid(format!("measurement noise variance must be positive, got {r}")));
    }
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::Invalid(format!("input variance must be non-negative, got {q}")));
    }
    if !a.is_finite() || a.abs() > 1.0 || (a.abs() == 1.0 && q > 0.0) {
        return Err(Error::Unstable { a: a.abs(), q });
    }
    let b = r * (1.0 - a * a) - q;
    let c = q * r;
    let disc = (b * b + 4.0 * c).sqrt();
    // pick the form of the root that avoids cancellation
    let p = if b >= 0.0 {
        if c == 0.0 {
            0.0
        } else {
            2.0 * c / (b + disc)
        }
    } else {
        (disc - b) / 2.0
    };
    Ok((p, p / (p + r)))
}

/// Sample second moments of a centred series.
fn second_moments(runs: &[&[f64]]) -> (f64, f64) {
    let (mut zz, mut n_zz) = (0.0, 0usize);
    let (mut lag, mut n_lag) = (0.0, 0usize);
    for run in runs {
        zz += run.iter().map(|z| z * z).sum::<f64>();
        n_zz += run.len();
        lag += run.windows(2).map(|w| w[1] * w[0]).sum::<f64>();
        n_lag += run.len().saturating_sub(1);
    }
    (zz / n_zz as f64, lag / n_lag as f64)
}

/// Estimates `A` and `Q` for one feature series given the noise variance `R`.
pub fn estimate_params(z: &[f64], r: f64) -> Result<FilterParams> {
    estimate_params_pooled(&[z], r)
}

/// Like [`estimate_params`], pooling the expectations over several
/// realisations of the same feature.
pub fn estimate_params_pooled(runs: &[&[f64]], r: f64) -> Result<FilterParams> {
    if runs.is_empty() || runs.iter().any(|z| z.len() < 3) {
        return Err(Error::Arity("each series needs at least 3 observations".into()));
    }
    if runs.iter().flat_map(|z| z.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite observation".into()));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Invalid(format!("measurement noise variance must be positive, got {r}")));
    }
    let (zz, lag) = second_moments(runs);
    let signal = zz - r;
    if signal <= 0.0 {
        return Err(Error::NoiseDominates { second_moment: zz, r });
    }
    let a = lag / signal;
    let mut q = signal - a * signal * a;
    if q < 0.0 {
        warn!("input variance estimate {q:e} is negative, clamping to 0");
        q = 0.0;
    }
    FilterParams::from_model(a, q, r)
}

/// One feature's filter state.
#[derive(Clone, Debug)]
pub struct ScalarFilter {
    a: f64,
    gain: f64,
    state: f64,
}

impl ScalarFilter {
    pub fn new(params: &FilterParams, x0: f64) -> Result<Self> {
        if !params.a.is_finite() || !(0.0..=1.0).contains(&params.gain) {
            return Err(Error::Invalid(format!(
                "filter needs finite A and a gain in [0, 1], got A = {}, L = {}",
                params.a, params.gain
            )));
        }
        Ok(Self {
            a: params.a,
            gain: params.gain,
            state: x0,
        })
    }

    pub fn step(&mut self, z: f64) -> f64 {
        self.state = (1.0 - self.gain) * self.a * self.state + self.gain * z;
        self.state
    }

    pub fn state(&self) -> f64 {
        self.state
    }
}

/// Filters a whole series from the initial state `x0`; `x[1]` already
/// incorporates `z[1]`.
pub fn filter_series(z: &[f64], params: &FilterParams, x0: f64) -> Result<Vec<f64>> {
    let mut filter = ScalarFilter::new(params, x0)?;
    Ok(z.iter().map(|&zk| filter.step(zk)).collect())
}
