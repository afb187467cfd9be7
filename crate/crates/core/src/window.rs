//! Temporal statistics over AU sequences.
//!
//! [`window_stats`] turns a `T × C` sequence into `N × 4C` window descriptors
//! (mean, population std, least-squares slope, range per column) that replace
//! the raw frames as encoder input. [`video_summary`] computes the same four
//! statistics plus a mean-centred zero-crossing rate over the whole video for
//! the statistical analysis.

use std::fmt;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ACTION_UNITS, NUM_AUS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window length in frames.
    pub length: usize,
    /// Hop between window starts in frames.
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { length: 16, step: 8 }
    }
}

impl WindowConfig {
    pub fn new(length: usize, step: usize) -> Result<Self> {
        let cfg = WindowConfig { length, step };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config(format!(
                "window length {} must be at least 2",
                self.length
            )));
        }
        if self.step < 1 || self.step > self.length {
            return Err(Error::Config(format!(
                "window step {} must lie in 1..={}",
                self.step, self.length
            )));
        }
        Ok(())
    }

    /// Number of windows over a `frames`-long sequence. Sequences shorter
    /// than one window yield a single window covering everything; trailing
    /// frames that do not fill a window are dropped.
    pub fn count(&self, frames: usize) -> usize {
        if frames < self.length {
            1
        } else {
            (frames - self.length) / self.step + 1
        }
    }

    /// Frame ranges `[start, end)` of every window.
    pub fn spans(&self, frames: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let len = self.length.min(frames);
        (0..self.count(frames)).map(move |i| (i * self.step, i * self.step + len))
    }
}

/// Per-window, per-column statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Std,
    Slope,
    Range,
    Zcr,
}

impl Stat {
    /// The statistics used in window descriptors, in column order.
    pub const WINDOW: [Stat; 4] = [Stat::Mean, Stat::Std, Stat::Slope, Stat::Range];
    /// The statistics in a whole-video summary.
    pub const SUMMARY: [Stat; 5] = [Stat::Mean, Stat::Std, Stat::Slope, Stat::Range, Stat::Zcr];

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Std => "std",
            Stat::Slope => "slope",
            Stat::Range => "range",
            Stat::Zcr => "zcr",
        }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `N × 4C` window descriptors, column-major by input column then statistic:
/// `[c0_mean, c0_std, c0_slope, c0_range, c1_mean, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSequence {
    pub descriptors: Array2<f64>,
}

impl WindowedSequence {
    /// Column header for AU input, e.g. `AU01_mean`.
    pub fn au_header() -> Vec<String> {
        ACTION_UNITS
            .iter()
            .flat_map(|(code, _)| Stat::WINDOW.iter().map(move |s| format!("{code}_{s}")))
            .collect()
    }
}

/// Ordinary least-squares slope of `values` against indices `0..n`.
pub fn ls_slope(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "slope needs at least 2 values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(slope_unchecked(values.iter().copied(), n, mean))
}

fn slope_unchecked(values: impl Iterator<Item = f64>, n: usize, y_mean: f64) -> f64 {
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    // Σ(x - x̄)² over 0..n
    let sxx = nf * (nf * nf - 1.0) / 12.0;
    // centring y avoids cancellation when the level dwarfs the trend
    let sxy: f64 = values
        .enumerate()
        .map(|(i, y)| (i as f64 - x_mean) * (y - y_mean))
        .sum();
    sxy / sxx
}

/// Fraction of consecutive pairs whose deviations from `center` have strictly
/// opposite signs. A value equal to `center` keeps the previous sign.
pub fn zero_crossing_rate(values: &[f64], center: f64) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "zero-crossing rate needs at least 2 values, got {n}"
        )));
    }
    Ok(zcr_unchecked(values.iter().copied(), n, center))
}

fn zcr_unchecked(values: impl Iterator<Item = f64>, n: usize, center: f64) -> f64 {
    let mut prev_sign = 0i8;
    let mut crossings = 0usize;
    for v in values {
        let d = v - center;
        let sign = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            prev_sign
        };
        if sign != 0 && prev_sign != 0 && sign != prev_sign {
            crossings += 1;
        }
        prev_sign = sign;
    }
    crossings as f64 / (n - 1) as f64
}

/// mean, population std, slope, range of one column slice. A single value
/// has zero spread and zero slope.
fn four_stats(col: ArrayView1<f64>) -> [f64; 4] {
    let n = col.len();
    let nf = n as f64;
    let mean = col.sum() / nf;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let slope = if n >= 2 {
        slope_unchecked(col.iter().copied(), n, mean)
    } else {
        0.0
    };
    [mean, var.sqrt(), slope, hi - lo]
}

/// Sliding-window descriptors of a `T × C` sequence.
pub fn window_stats(seq: ArrayView2<f64>, cfg: &WindowConfig) -> Result<WindowedSequence> {
    cfg.validate()?;
    let (frames, cols) = seq.dim();
    if frames == 0 {
        return Err(Error::Degenerate("cannot window an empty sequence".into()));
    }
    let n = cfg.count(frames);
    let mut out = Array2::zeros((n, cols * 4));
    for (w, (start, end)) in cfg.spans(frames).enumerate() {
        let window = seq.slice(s![start..end, ..]);
        for c in 0..cols {
            let st = four_stats(window.column(c));
            out.slice_mut(s![w, c * 4..c * 4 + 4])
                .iter_mut()
                .zip(st)
                .for_each(|(o, v)| *o = v);
        }
    }
    Ok(WindowedSequence { descriptors: out })
}

/// Whole-video statistics per AU.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSummary {
    /// `C × 5`, columns in [`Stat::SUMMARY`] order.
    pub values: Array2<f64>,
}

impl VideoSummary {
    pub fn get(&self, au: usize, stat: Stat) -> f64 {
        let col = Stat::SUMMARY.iter().position(|s| *s == stat).unwrap();
        self.values[[au, col]]
    }
}

/// Mean, std, slope, range and mean-centred zcr of every column over the
/// full sequence.
pub fn video_summary(seq: ArrayView2<f64>) -> Result<VideoSummary> {
    let (frames, cols) = seq.dim();
    if frames < 2 {
        return Err(Error::Degenerate(format!(
            "video summary needs at least 2 frames, got {frames}"
        )));
    }
    let mut values = Array2::zeros((cols, 5));
    for c in 0..cols {
        let col = seq.column(c);
        let st = four_stats(col);
        let zcr = zcr_unchecked(col.iter().copied(), frames, st[0]);
        for (k, v) in st.into_iter().chain([zcr]).enumerate() {
            values[[c, k]] = v;
        }
    }
    Ok(VideoSummary { values })
}

/// Number of summary features for AU input.
pub const SUMMARY_FEATURES: usize = NUM_AUS * 5;
