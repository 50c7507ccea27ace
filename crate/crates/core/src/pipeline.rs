//! End-to-end wiring: files to feature series, training, classification,
//! evaluation and simulation.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_run, ClassificationResult, SelectedFilter, TrainedModel};
use crate::error::{Error, Result};
use crate::filter::{estimate_params_pooled, FilterParams};
use crate::ingest::{
    average_speed, parse_markers, parse_stream, segment_equal_count, segment_with_markers,
    RunnerProfile, Sensor,
};
use crate::model::{digest_input, InputDigest};
use crate::moments::{feature_name, feature_series, FeatureSeries, FEATURE_COUNT};
use crate::select::{discrepancy, Discrepancy, DistanceMetric, RelevanceDistribution, SelectionMode};
use crate::synth::{generate_raw_run, write_truth, SimulationPlan};
use crate::trend::{normalize, TrendModel};

/// Floor on `R`, in normalised units, keeping the gain strictly below 1.
const MIN_NOISE_VARIANCE: f64 = 1e-12;
/// Largest |A| kept when the estimate lands outside the stable range.
const MAX_STABLE_A: f64 = 0.999;
/// Lags reported by evaluation, matching the usual lag-0..4 table.
pub const REPORT_LAGS: [usize; 5] = [0, 1, 2, 3, 4];

/// Knee file, ankle file and optional marker file of one run, written on
/// the command line as `knee.csv,ankle.csv[,markers.csv]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFiles {
    pub knee: PathBuf,
    pub ankle: PathBuf,
    pub markers: Option<PathBuf>,
}

impl FromStr for RunFiles {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        match parts.as_slice() {
            [k, a] | [k, a, ""] => Ok(Self {
                knee: k.into(),
                ankle: a.into(),
                markers: None,
            }),
            [k, a, m] => Ok(Self {
                knee: k.into(),
                ankle: a.into(),
                markers: Some(m.into()),
            }),
            _ => Err(Error::Config(format!(
                "run must be given as knee.csv,ankle.csv[,markers.csv], got {s:?}"
            ))),
        }
    }
}

impl RunFiles {
    /// Digest records for every file of run number `index` (1-based).
    pub fn digests(&self, index: usize) -> Result<Vec<InputDigest>> {
        let mut out = vec![
            digest_input(&format!("run{index}.knee"), &self.knee)?,
            digest_input(&format!("run{index}.ankle"), &self.ankle)?,
        ];
        if let Some(m) = &self.markers {
            out.push(digest_input(&format!("run{index}.markers"), m)?);
        }
        Ok(out)
    }
}

/// Feature series and per-subinterval speeds of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRun {
    pub series: FeatureSeries,
    pub speeds: Vec<f64>,
}

pub fn load_run(files: &RunFiles, profile: &RunnerProfile) -> Result<LoadedRun> {
    let knee = parse_stream(&files.knee, Sensor::Knee)?;
    let ankle = parse_stream(&files.ankle, Sensor::Ankle)?;
    let segments = match &files.markers {
        Some(path) => {
            let markers = parse_markers(path)?;
            if markers.len() != profile.segments {
                return Err(Error::Shape {
                    expected: profile.segments,
                    got: markers.len(),
                });
            }
            segment_with_markers(&knee, &ankle, &markers, profile.subinterval_distance)?
        }
        None => segment_equal_count(&knee, &ankle, profile.segments, profile.subinterval_distance)?,
    };
    let series = feature_series(&segments, &knee, &ankle)?;
    let speeds = segments.iter().map(average_speed).collect::<Result<_>>()?;
    Ok(LoadedRun { series, speeds })
}

/// Mass and subinterval length; the segment count comes from the command
/// line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub mass: f64,
    pub subinterval_distance: f64,
}

impl ProfileFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain struct serialises")
    }

    pub fn with_segments(self, segments: usize) -> Result<RunnerProfile> {
        let p = RunnerProfile {
            mass: self.mass,
            subinterval_distance: self.subinterval_distance,
            segments,
        };
        p.validate()?;
        Ok(p)
    }
}

/// `step,k_true` file, as written by `simulate`.
pub fn parse_truth(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "step,k_true" => {}
        _ => {
            return Err(Error::Parse {
                path: source,
                line: 1,
                message: "missing header \"step,k_true\"".into(),
            })
        }
    }
    let mut truth = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.clone(),
            line: i + 1,
            message,
        };
        let (step, k) = line
            .split_once(',')
            .ok_or_else(|| err("expected two fields".into()))?;
        let step: usize = step.trim().parse().map_err(|e| err(format!("step: {e}")))?;
        if step != truth.len() + 1 {
            return Err(err(format!("step {step} out of sequence")));
        }
        truth.push(k.trim().parse().map_err(|e| err(format!("k_true: {e}")))?);
    }
    Ok(truth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MetricKind {
    #[default]
    Euclidean,
    /// Per-feature distances divided by the pooled residual variance about
    /// the fitted trend.
    MahalanobisDiag,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "mahalanobis-diag" => Ok(MetricKind::MahalanobisDiag),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::MahalanobisDiag => "mahalanobis-diag",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainOptions {
    pub metric: MetricKind,
    pub mode: SelectionMode,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            metric: MetricKind::Euclidean,
            mode: SelectionMode::Procedure1,
        }
    }
}

/// Discrepancy between normalised runs; with more than two runs the
/// discrepancy vectors of all pairs are averaged.
fn pooled_discrepancy(normalized: &[FeatureSeries], metric: &DistanceMetric) -> Result<Discrepancy> {
    let mut sum = vec![0.0; FEATURE_COUNT];
    let mut pairs = 0usize;
    let mut all_fallback = true;
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            let d = discrepancy(&normalized[i], &normalized[j], metric)?;
            all_fallback &= d.uniform_fallback;
            for (s, v) in sum.iter_mut().zip(&d.d) {
                *s += v;
            }
            pairs += 1;
        }
    }
    Ok(Discrepancy {
        d: sum.into_iter().map(|s| s / pairs as f64).collect(),
        uniform_fallback: all_fallback,
    })
}

/// Filter parameters for one feature from its centred training trajectories.
fn feature_filter(j: usize, runs: &[Vec<f64>], r: f64) -> Result<FilterParams> {
    // a feature the lines fit exactly has (almost) no measurement noise and
    // passes through with a gain just below 1
    let r = r.max(MIN_NOISE_VARIANCE);
    let refs: Vec<&[f64]> = runs.iter().map(|v| v.as_slice()).collect();
    match estimate_params_pooled(&refs, r) {
        Ok(p) => Ok(p),
        Err(Error::NoiseDominates { .. }) => {
            info!("{}: noise dominates, holding the filter at the trend centre", feature_name(j));
            Ok(FilterParams {
                a: 0.0,
                r,
                q: 0.0,
                p: 0.0,
                gain: 0.0,
            })
        }
        Err(Error::Unstable { .. }) => {
            info!("{}: |A| >= 1, clamping to {MAX_STABLE_A}", feature_name(j));
            let (zz, n) = runs
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, n), z| (s + z * z, n + 1));
            let signal = zz / n as f64 - r;
            let lag: f64 = {
                let (s, m) = runs.iter().fold((0.0, 0usize), |(s, m), z| {
                    (s + z.windows(2).map(|w| w[0] * w[1]).sum::<f64>(), m + z.len() - 1)
                });
                s / m as f64
            };
            let a = MAX_STABLE_A.copysign(lag);
            FilterParams::from_model(a, signal * (1.0 - a * a), r)
        }
        Err(e) => Err(e),
    }
}

pub fn train(runs: &[LoadedRun], profile: &RunnerProfile, options: TrainOptions) -> Result<TrainedModel> {
    profile.validate()?;
    if runs.len() < 2 {
        return Err(Error::Arity(format!(
            "training needs at least two runs, got {}",
            runs.len()
        )));
    }
    for run in runs {
        if run.series.len() != profile.segments || run.speeds.len() != profile.segments {
            return Err(Error::Shape {
                expected: profile.segments,
                got: run.series.len(),
            });
        }
    }
    let series: Vec<FeatureSeries> = runs.iter().map(|r| r.series.clone()).collect();
    let trend = TrendModel::fit(&series)?;
    let scales = trend.scales();
    let normalized: Vec<FeatureSeries> = series.iter().map(|s| normalize(s, &scales)).collect();

    let metric = match options.metric {
        MetricKind::Euclidean => DistanceMetric::Euclidean,
        MetricKind::MahalanobisDiag => DistanceMetric::MahalanobisDiag(
            trend
                .features
                .iter()
                .map(|f| f.residual_variance.max(f64::MIN_POSITIVE))
                .collect(),
        ),
    };
    let disc = pooled_discrepancy(&normalized, &metric)?;
    let relevance = RelevanceDistribution::from_discrepancy(disc, &metric, options.mode)?;

    let filter_params = relevance
        .selected_features()
        .iter()
        .map(|&j| {
            let centre = trend.centre(j);
            let centred: Vec<Vec<f64>> = normalized
                .iter()
                .map(|s| s.column(j).into_iter().map(|v| v - centre).collect())
                .collect();
            let params = feature_filter(j, &centred, trend.features[j].residual_variance)?;
            Ok(SelectedFilter {
                feature: j,
                centre,
                params,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let speeds = (0..profile.segments)
        .map(|k| runs.iter().map(|r| r.speeds[k]).sum::<f64>() / runs.len() as f64)
        .collect();

    let model = TrainedModel {
        profile: *profile,
        segments: profile.segments,
        trend,
        relevance,
        filter_params,
        speeds,
    };
    model.validate()?;
    Ok(model)
}

pub fn classify(
    model: &TrainedModel,
    run: &LoadedRun,
    lag: usize,
    truth: Option<&[usize]>,
) -> Result<ClassificationResult> {
    classify_run(model, &run.series.rows, lag, truth)
}

/// RMS index error per reporting lag for each labelled run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub lags: Vec<usize>,
    pub runs: Vec<(String, Vec<f64>)>,
}

impl Evaluation {
    pub fn mean(&self) -> Vec<f64> {
        (0..self.lags.len())
            .map(|i| self.runs.iter().map(|(_, r)| r[i]).sum::<f64>() / self.runs.len() as f64)
            .collect()
    }

    /// One row per run plus a `mean` row; columns `lag0..lagN`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = self.lags.iter().map(|l| format!("lag{l}")).collect();
        writeln!(out, "run,{}", header.join(","))?;
        let row = |out: &mut W, name: &str, values: &[f64]| {
            let cells: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
            writeln!(out, "{name},{}", cells.join(","))
        };
        for (name, values) in &self.runs {
            row(&mut out, name, values)?;
        }
        row(&mut out, "mean", &self.mean())
    }
}

pub fn evaluate(
    model: &TrainedModel,
    runs: &[(String, LoadedRun, Vec<usize>)],
    lags: &[usize],
) -> Result<Evaluation> {
    if runs.is_empty() {
        return Err(Error::Arity("evaluation needs at least one labelled run".into()));
    }
    let rows = runs
        .iter()
        .map(|(name, run, truth)| {
            let rms = lags
                .iter()
                .map(|&lag| {
                    classify(model, run, lag, Some(truth))?
                        .rms_error_pct
                        .ok_or_else(|| Error::Arity(format!("run {name} has no observations")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), rms))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        lags: lags.to_vec(),
        runs: rows,
    })
}

/// Per-feature selection report: original index (1-based), name, `d`,
/// `d̄`, sorted rank (1-based) and whether the feature was kept.
pub fn write_selection_report<W: Write>(rel: &RelevanceDistribution, mut out: W) -> std::io::Result<()> {
    writeln!(out, "feature,name,d,d_bar,rank,selected")?;
    let mut rank = vec![0; rel.perm.len()];
    for (pos, &j) in rel.perm.iter().enumerate() {
        rank[j] = pos + 1;
    }
    for j in 0..rel.d.len() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            j + 1,
            feature_name(j),
            rel.d[j],
            rel.d_bar[j],
            rank[j],
            rank[j] <= rel.selected_count
        )?;
    }
    Ok(())
}

/// `L,entropy_rate` per iteration, followed by the selected count.
pub fn write_entropy_trace<W: Write>(rel: &RelevanceDistribution, mut out: W) -> std::io::Result<()> {
    writeln!(out, "L,entropy_rate")?;
    for step in &rel.trace {
        writeln!(out, "{},{}", step.l, step.entropy_rate)?;
    }
    writeln!(out, "# selected {} ({})", rel.selected_count, rel.mode)
}

/// Writes every run of `plan` under `out/<runner>/`, together with a
/// `profile.toml` per runner and a copy of the plan. Training runs are
/// `run1..`, test runs follow. Returns the written directories.
pub fn simulate(plan: &SimulationPlan, out: &Path) -> Result<Vec<PathBuf>> {
    plan.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let plan_path = out.join("plan.toml");
    let plan_text = toml::to_string(plan).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&plan_path, plan_text).map_err(|e| Error::io(&plan_path, e))?;

    let mut dirs = Vec::new();
    for (r, runner) in plan.runners.iter().enumerate() {
        let dir = out.join(&runner.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let profile = ProfileFile {
            mass: runner.mass,
            subinterval_distance: plan.subinterval_distance,
        };
        let profile_path = dir.join("profile.toml");
        std::fs::write(&profile_path, profile.to_toml()).map_err(|e| Error::io(&profile_path, e))?;
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..plan.runs_per_runner())
                .map(|i| {
                    let dir = &dir;
                    scope.spawn(move || {
                        let run = generate_raw_run(&plan.run_spec(r, i))?;
                        run.write(dir, &format!("run{}", i + 1))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("generator thread panicked"))
                .collect()
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Writes `truth` as a `step,k_true` file.
pub fn save_truth(path: &Path, truth: &[usize]) -> Result<()> {
    let mut buf = Vec::new();
    write_truth(truth, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
