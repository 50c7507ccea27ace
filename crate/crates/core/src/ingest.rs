//! Accelerometer stream parsing and subinterval segmentation.
//!
//! A stream file is a small CSV:
//!
//! ```text
//! # rate_hz=100
//! t,ax,ay,az
//! 0.00,0.012,-0.981,0.104
//! 0.01,0.015,-0.975,0.110
//! ```
//!
//! Axes are mediolateral (X), superior-inferior (Y) and anterior-posterior (Z),
//! in units of g. A marker file `k,t_start,t_end,distance_m` optionally replaces
//! the default equal-time partition.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest frames a segment may hold per sensor.
pub const MIN_SEGMENT_FRAMES: usize = 8;
/// Largest tolerated gap between consecutive frames, in nominal periods.
pub const MAX_GAP_PERIODS: u32 = 5;
/// Largest tolerated difference between the knee and ankle spans, seconds.
pub const ALIGNMENT_TOLERANCE_S: f64 = 1.0;
pub const DEFAULT_RATE_HZ: f64 = 100.0;

pub const STREAM_HEADER: &str = "t,ax,ay,az";
pub const MARKER_HEADER: &str = "k,t_start,t_end,distance_m";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Knee = 1,
    Ankle = 2,
}

impl Sensor {
    pub const ALL: [Sensor; 2] = [Sensor::Knee, Sensor::Ankle];

    pub fn number(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Knee => "knee",
            Sensor::Ankle => "ankle",
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Timestamped triaxial frames from one sensor, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStream {
    pub sensor: Sensor,
    pub rate_hz: f64,
    pub t: Vec<f64>,
    pub axes: [Vec<f64>; 3],
}

impl SampleStream {
    /// Builds a stream and checks every invariant a parsed file must satisfy.
    pub fn new(sensor: Sensor, rate_hz: f64, t: Vec<f64>, axes: [Vec<f64>; 3]) -> Result<Self> {
        let stream = Self {
            sensor,
            rate_hz,
            t,
            axes,
        };
        stream.validate("<memory>", 0)?;
        Ok(stream)
    }

    fn validate(&self, path: &str, first_line: usize) -> Result<()> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: format!("invalid sample rate {}", self.rate_hz),
            });
        }
        if self.axes.iter().any(|a| a.len() != self.t.len()) {
            return Err(Error::Invalid("axis columns differ in length".into()));
        }
        let max_gap = MAX_GAP_PERIODS as f64 / self.rate_hz;
        for i in 0..self.t.len() {
            let line = first_line + i;
            let values = [self.t[i], self.axes[0][i], self.axes[1][i], self.axes[2][i]];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    message: "non-finite value".into(),
                });
            }
            if i > 0 {
                let prev = self.t[i - 1];
                let dt = self.t[i] - prev;
                if dt <= 0.0 {
                    return Err(Error::Ordering {
                        path: path.to_string(),
                        line,
                        t: self.t[i],
                        prev,
                    });
                }
                // relative slack absorbs decimal rounding of the timestamps
                if dt > max_gap * (1.0 + 1e-9) {
                    return Err(Error::Gap {
                        path: path.to_string(),
                        line,
                        gap: dt,
                        max_periods: MAX_GAP_PERIODS,
                        rate_hz: self.rate_hz,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn start(&self) -> f64 {
        self.t.first().copied().unwrap_or(0.0)
    }

    /// End of the covered span: last timestamp plus one nominal period.
    pub fn end(&self) -> f64 {
        self.t.last().map_or(0.0, |t| t + self.period())
    }

    pub fn duration(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.end() - self.start()
        }
    }

    pub fn axis(&self, axis: usize, range: Range<usize>) -> &[f64] {
        &self.axes[axis][range]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# rate_hz={}", self.rate_hz)?;
        writeln!(out, "{STREAM_HEADER}")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.t[i], self.axes[0][i], self.axes[1][i], self.axes[2][i]
            )?;
        }
        Ok(())
    }
}

/// Reads and validates one sensor file.
pub fn parse_stream(path: impl AsRef<Path>, sensor: Sensor) -> Result<SampleStream> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::io(path, std::io::Error::new(e.kind(), format!("{sensor} stream: {e}")))
    })?;
    parse_stream_str(&text, &path.display().to_string(), sensor)
}

pub fn parse_stream_str(text: &str, source: &str, sensor: Sensor) -> Result<SampleStream> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut rate_hz = DEFAULT_RATE_HZ;
    let mut header_seen = false;
    let mut first_data_line = 0;
    let mut t = Vec::new();
    let mut axes: [Vec<f64>; 3] = Default::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if header_seen {
                continue;
            }
            for pair in comment.split(',') {
                if let Some((key, value)) = pair.split_once('=') {
                    if key.trim() == "rate_hz" {
                        rate_hz = value.trim().parse().map_err(|_| {
                            parse_err(line_no, format!("bad rate_hz value {:?}", value.trim()))
                        })?;
                    }
                }
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["t", "ax", "ay", "az"] {
                return Err(parse_err(
                    line_no,
                    format!("expected header {STREAM_HEADER:?}, found {line:?}"),
                ));
            }
            header_seen = true;
            continue;
        }
        let mut fields = [0.0; 4];
        let mut count = 0;
        for field in line.split(',') {
            if count == 4 {
                return Err(parse_err(line_no, "more than 4 fields".into()));
            }
            fields[count] = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("not a number: {:?}", field.trim())))?;
            count += 1;
        }
        if count != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, found {count}")));
        }
        if first_data_line == 0 {
            first_data_line = line_no;
        }
        t.push(fields[0]);
        for (axis, value) in axes.iter_mut().zip(&fields[1..]) {
            axis.push(*value);
        }
    }
    if !header_seen {
        return Err(parse_err(1, format!("missing header {STREAM_HEADER:?}")));
    }

    let stream = SampleStream {
        sensor,
        rate_hz,
        t,
        axes,
    };
    // blank or comment lines between rows would skew these numbers; rows are
    // contiguous in every file this crate writes
    stream.validate(source, first_data_line)?;
    Ok(stream)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunnerProfile {
    pub mass: f64,
    pub subinterval_distance: f64,
    pub segments: usize,
}

impl RunnerProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::Invalid(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.subinterval_distance.is_finite() && self.subinterval_distance > 0.0) {
            return Err(Error::Invalid(format!(
                "subinterval distance must be positive, got {}",
                self.subinterval_distance
            )));
        }
        if self.segments < 2 {
            return Err(Error::Invalid(format!(
                "segment count must be at least 2, got {}",
                self.segments
            )));
        }
        Ok(())
    }
}

/// One subinterval class `k` (1-based) with its frame ranges in both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub k: usize,
    pub knee: Range<usize>,
    pub ankle: Range<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub distance: f64,
    pub duration: f64,
}

impl Segment {
    pub fn range(&self, sensor: Sensor) -> Range<usize> {
        match sensor {
            Sensor::Knee => self.knee.clone(),
            Sensor::Ankle => self.ankle.clone(),
        }
    }
}

fn check_alignment(knee: &SampleStream, ankle: &SampleStream) -> Result<()> {
    if knee.is_empty() || ankle.is_empty() {
        return Err(Error::Invalid("empty stream".into()));
    }
    if (knee.start() - ankle.start()).abs() > ALIGNMENT_TOLERANCE_S
        || (knee.end() - ankle.end()).abs() > ALIGNMENT_TOLERANCE_S
    {
        return Err(Error::Alignment {
            knee_start: knee.start(),
            knee_end: knee.end(),
            ankle_start: ankle.start(),
            ankle_end: ankle.end(),
            tolerance: ALIGNMENT_TOLERANCE_S,
        });
    }
    Ok(())
}

fn check_density(segments: &[Segment]) -> Result<()> {
    for seg in segments {
        for sensor in Sensor::ALL {
            let frames = seg.range(sensor).len();
            if frames < MIN_SEGMENT_FRAMES {
                return Err(Error::Sparsity {
                    k: seg.k,
                    sensor: sensor.name(),
                    frames,
                    min: MIN_SEGMENT_FRAMES,
                });
            }
        }
    }
    Ok(())
}

/// Splits the common span of both streams into `n` equal-duration segments.
/// Every frame lands in exactly one segment.
pub fn segment_equal_count(
    knee: &SampleStream,
    ankle: &SampleStream,
    n: usize,
    distance: f64,
) -> Result<Vec<Segment>> {
    if n < 2 {
        return Err(Error::Invalid(format!("segment count must be at least 2, got {n}")));
    }
    check_alignment(knee, ankle)?;
    let t0 = knee.start().min(ankle.start());
    let t1 = knee.end().max(ankle.end());
    let width = (t1 - t0) / n as f64;

    let boundary = |stream: &SampleStream, i: usize| -> usize {
        if i == 0 {
            0
        } else if i == n {
            stream.len()
        } else {
            let b = t0 + i as f64 * width;
            stream.t.partition_point(|&t| t < b)
        }
    };

    let segments: Vec<Segment> = (0..n)
        .map(|i| Segment {
            k: i + 1,
            knee: boundary(knee, i)..boundary(knee, i + 1),
            ankle: boundary(ankle, i)..boundary(ankle, i + 1),
            t_start: t0 + i as f64 * width,
            t_end: if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * width },
            distance,
            duration: width,
        })
        .collect();
    check_density(&segments)?;
    Ok(segments)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub k: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub distance: Option<f64>,
}

pub fn parse_markers(path: impl AsRef<Path>) -> Result<Vec<Marker>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_markers_str(&text, &path.display().to_string())
}

pub fn parse_markers_str(text: &str, source: &str) -> Result<Vec<Marker>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut markers = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["k", "t_start", "t_end", "distance_m"] {
                return Err(parse_err(
                    line_no,
                    format!("expected header {MARKER_HEADER:?}, found {line:?}"),
                ));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("not a number: {s:?}")))
        };
        let k = fields[0]
            .parse::<usize>()
            .map_err(|_| parse_err(line_no, format!("bad index {:?}", fields[0])))?;
        let t_start = num(fields[1])?;
        let t_end = num(fields[2])?;
        let distance = if fields[3].is_empty() {
            None
        } else {
            Some(num(fields[3])?)
        };
        if t_end <= t_start {
            return Err(parse_err(line_no, "t_end must exceed t_start".into()));
        }
        if distance.is_some_and(|d| d <= 0.0) {
            return Err(parse_err(line_no, "distance must be positive".into()));
        }
        markers.push(Marker {
            k,
            t_start,
            t_end,
            distance,
        });
    }
    if !header_seen {
        return Err(parse_err(1, format!("missing header {MARKER_HEADER:?}")));
    }
    Ok(markers)
}

pub fn write_markers<W: Write>(markers: &[Marker], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MARKER_HEADER}")?;
    for m in markers {
        match m.distance {
            Some(d) => writeln!(out, "{},{},{},{}", m.k, m.t_start, m.t_end, d)?,
            None => writeln!(out, "{},{},{},", m.k, m.t_start, m.t_end)?,
        }
    }
    Ok(())
}

/// Segments both streams along explicit `[t_start, t_end)` boundaries.
/// Markers must be numbered 1..=N in order and must not overlap; frames
/// falling between markers belong to no segment.
pub fn segment_with_markers(
    knee: &SampleStream,
    ankle: &SampleStream,
    markers: &[Marker],
    default_distance: f64,
) -> Result<Vec<Segment>> {
    if markers.len() < 2 {
        return Err(Error::Invalid(format!(
            "marker file must hold at least 2 rows, found {}",
            markers.len()
        )));
    }
    check_alignment(knee, ankle)?;
    for (i, pair) in markers.windows(2).enumerate() {
        if pair[1].t_start < pair[0].t_end {
            return Err(Error::Invalid(format!(
                "markers {} and {} overlap",
                pair[0].k, pair[1].k
            )));
        }
        if pair[0].k != i + 1 {
            return Err(Error::Invalid(format!("marker row {} has k = {}", i + 1, pair[0].k)));
        }
    }
    let last = markers.last().expect("non-empty");
    if last.k != markers.len() {
        return Err(Error::Invalid(format!(
            "marker row {} has k = {}",
            markers.len(),
            last.k
        )));
    }

    let range = |stream: &SampleStream, m: &Marker| {
        stream.t.partition_point(|&t| t < m.t_start)..stream.t.partition_point(|&t| t < m.t_end)
    };
    let segments: Vec<Segment> = markers
        .iter()
        .map(|m| Segment {
            k: m.k,
            knee: range(knee, m),
            ankle: range(ankle, m),
            t_start: m.t_start,
            t_end: m.t_end,
            distance: m.distance.unwrap_or(default_distance),
            duration: m.t_end - m.t_start,
        })
        .collect();
    check_density(&segments)?;
    Ok(segments)
}

pub fn average_speed(segment: &Segment) -> Result<f64> {
    if segment.duration == 0.0 {
        return Err(Error::Division(format!("segment {} has zero duration", segment.k)));
    }
    Ok(segment.distance / segment.duration)
}
