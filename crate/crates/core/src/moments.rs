//! Per-segment sample moments and the 18-element feature vector.
//!
//! Layout of a feature vector, 0-based positions:
//!
//! | positions | content                         |
//! |-----------|---------------------------------|
//! | 0..3      | knee variance, axes X, Y, Z     |
//! | 3..6      | knee skewness, axes X, Y, Z     |
//! | 6..9      | knee kurtosis, axes X, Y, Z     |
//! | 9..18     | ankle, same order               |

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SampleStream, Segment, Sensor, MIN_SEGMENT_FRAMES};

pub const FEATURE_COUNT: usize = 18;

/// Population (divide-by-count) variance, skewness and kurtosis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Two-pass moments: the mean first, then central sums of orders 2 to 4.
pub fn sample_moments(samples: &[f64]) -> Result<Moments> {
    if samples.len() < MIN_SEGMENT_FRAMES {
        return Err(Error::Arity(format!(
            "need at least {MIN_SEGMENT_FRAMES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    // rounding in the mean leaves a residue of order eps * |x| on constant input
    let scale = samples.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if m2 <= (4.0 * f64::EPSILON * scale).powi(2) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok(Moments {
        variance: m2,
        skewness: m3 / (m2 * m2.sqrt()),
        kurtosis: m4 / (m2 * m2),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MomentKind {
    Variance,
    Skewness,
    Kurtosis,
}

impl MomentKind {
    fn prefix(self) -> &'static str {
        match self {
            MomentKind::Variance => "var",
            MomentKind::Skewness => "skew",
            MomentKind::Kurtosis => "kurt",
        }
    }
}

/// Which sensor, moment and axis a feature position refers to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureId {
    pub sensor: Sensor,
    pub moment: MomentKind,
    /// 0-based axis: 0 = X, 1 = Y, 2 = Z.
    pub axis: usize,
}

impl FeatureId {
    pub fn from_position(pos: usize) -> Self {
        assert!(pos < FEATURE_COUNT, "feature position {pos} out of range");
        let sensor = if pos < 9 { Sensor::Knee } else { Sensor::Ankle };
        let moment = match (pos % 9) / 3 {
            0 => MomentKind::Variance,
            1 => MomentKind::Skewness,
            _ => MomentKind::Kurtosis,
        };
        Self {
            sensor,
            moment,
            axis: pos % 3,
        }
    }

    pub fn position(self) -> usize {
        let block = match self.moment {
            MomentKind::Variance => 0,
            MomentKind::Skewness => 1,
            MomentKind::Kurtosis => 2,
        };
        (self.sensor.number() - 1) * 9 + block * 3 + self.axis
    }

    /// Column name such as `var_s1_a1` or `kurt_s2_a3`.
    pub fn name(self) -> String {
        format!(
            "{}_s{}_a{}",
            self.moment.prefix(),
            self.sensor.number(),
            self.axis + 1
        )
    }
}

pub fn feature_name(pos: usize) -> String {
    FeatureId::from_position(pos).name()
}

pub fn feature_names() -> Vec<String> {
    (0..FEATURE_COUNT).map(feature_name).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// 1-based subinterval index.
    pub k: usize,
    pub values: [f64; FEATURE_COUNT],
}

/// Assembles the feature vector from the three axes of each sensor.
pub fn feature_vector(knee: [&[f64]; 3], ankle: [&[f64]; 3], k: usize) -> Result<FeatureVector> {
    let mut values = [0.0; FEATURE_COUNT];
    for (sensor, axes) in [(Sensor::Knee, knee), (Sensor::Ankle, ankle)] {
        let base = (sensor.number() - 1) * 9;
        for (axis, samples) in axes.iter().enumerate() {
            let m = sample_moments(samples).map_err(|e| match e {
                Error::Degenerate(msg) => Error::Degenerate(format!(
                    "{sensor} axis {} in segment {k}: {msg}",
                    axis + 1
                )),
                other => other,
            })?;
            values[base + axis] = m.variance;
            values[base + 3 + axis] = m.skewness;
            values[base + 6 + axis] = m.kurtosis;
        }
    }
    Ok(FeatureVector { k, values })
}

/// One feature vector per subinterval, ordered by `k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub rows: Vec<FeatureVector>,
}

impl FeatureSeries {
    pub fn new(rows: Vec<FeatureVector>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.k != i + 1 {
                return Err(Error::Invalid(format!("row {} carries k = {}", i + 1, row.k)));
            }
        }
        Ok(Self { rows })
    }

    /// Builds a series from bare value rows, numbering them 1..=N.
    pub fn from_values(rows: Vec<[f64; FEATURE_COUNT]>) -> Self {
        Self {
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, values)| FeatureVector { k: i + 1, values })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of feature `j` across all `k`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,{}", feature_names().join(","))?;
        for row in &self.rows {
            write!(out, "{}", row.k)?;
            for v in row.values {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn feature_series(
    segments: &[Segment],
    knee: &SampleStream,
    ankle: &SampleStream,
) -> Result<FeatureSeries> {
    let rows = segments
        .iter()
        .map(|seg| {
            let kr = seg.knee.clone();
            let ar = seg.ankle.clone();
            feature_vector(
                [
                    knee.axis(0, kr.clone()),
                    knee.axis(1, kr.clone()),
                    knee.axis(2, kr),
                ],
                [
                    ankle.axis(0, ar.clone()),
                    ankle.axis(1, ar.clone()),
                    ankle.axis(2, ar),
                ],
                seg.k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSeries::new(rows)
}
