//! Dataset schema: feature files, manifests and sample validation.
//!
//! Feature files are comma-separated numeric tables without a header, one
//! timestep per row. The text embedding file holds a single row. A manifest
//! is a JSON Lines file with one record per video; feature paths inside it
//! are resolved relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

/// Action Units per visual frame.
pub const NUM_AUS: usize = 20;
/// Audio embedding width per frame.
pub const AUDIO_DIM: usize = 768;
/// Text embedding width.
pub const TEXT_DIM: usize = 768;

/// Column order of the visual feature files: FACS code and short name.
pub const ACTION_UNITS: [(&str, &str); NUM_AUS] = [
    ("AU01", "inner brow raiser"),
    ("AU02", "outer brow raiser"),
    ("AU04", "brow lowerer"),
    ("AU05", "upper lid raiser"),
    ("AU06", "cheek raiser"),
    ("AU07", "lid tightener"),
    ("AU09", "nose wrinkler"),
    ("AU10", "upper lip raiser"),
    ("AU11", "nasolabial deepener"),
    ("AU12", "lip corner puller"),
    ("AU14", "dimpler"),
    ("AU15", "lip corner depressor"),
    ("AU17", "chin raiser"),
    ("AU20", "lip stretcher"),
    ("AU23", "lip tightener"),
    ("AU24", "lip pressor"),
    ("AU25", "lips part"),
    ("AU26", "jaw drop"),
    ("AU28", "lip suck"),
    ("AU43", "eyes closed"),
];

/// Column index of an AU by FACS code, e.g. `au_index("AU06") == Some(4)`.
pub fn au_index(code: &str) -> Option<usize> {
    ACTION_UNITS.iter().position(|(c, _)| *c == code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

/// One video: label, split membership and its three feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// `true` for A/H present.
    pub label: bool,
    pub split: Split,
    /// `T_v × 20` AU activations.
    pub visual: Array2<f64>,
    /// `T_a × 768` audio embedding frames.
    pub audio: Array2<f64>,
    /// 768-d text embedding.
    pub text: Array1<f64>,
}

impl VideoSample {
    /// Checks every dimensional and finiteness invariant.
    pub fn validate(&self) -> Result<()> {
        check_matrix("visual", self.visual.view(), NUM_AUS)?;
        check_matrix("audio", self.audio.view(), AUDIO_DIM)?;
        if self.text.len() != TEXT_DIM {
            return Err(Error::Dimension {
                axis: "text".into(),
                found: self.text.len(),
                expected: TEXT_DIM,
            });
        }
        if self.text.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("text contains non-finite values".into()));
        }
        if self.visual.iter().any(|&v| v < 0.0) {
            return Err(Error::Validation(
                "visual contains negative AU activations".into(),
            ));
        }
        Ok(())
    }
}

fn check_matrix(axis: &str, m: ArrayView2<f64>, cols: usize) -> Result<()> {
    if m.ncols() != cols {
        return Err(Error::Dimension {
            axis: axis.into(),
            found: m.ncols(),
            expected: cols,
        });
    }
    if m.nrows() == 0 {
        return Err(Error::Validation(format!("{axis} has no frames")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{axis} contains non-finite values")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<VideoSample>,
    pub manifest_path: PathBuf,
}

impl Dataset {
    pub fn new(samples: Vec<VideoSample>) -> Result<Self> {
        let ds = Dataset {
            samples,
            manifest_path: PathBuf::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", s.id)));
            }
            s.validate().map_err(|e| Error::Ingest {
                id: s.id.clone(),
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&VideoSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub label: u8,
    pub split: Split,
    pub visual_path: PathBuf,
    pub audio_path: PathBuf,
    pub text_path: PathBuf,
}

/// Parses a headerless comma-separated numeric table into a `T × expected_cols`
/// matrix. Rows and columns in errors are 1-based.
pub fn parse_feature_matrix(path: &Path, expected_cols: usize) -> Result<Array2<f64>> {
    read_matrix(path, expected_cols, "column")
}

fn read_matrix(path: &Path, expected_cols: usize, axis: &str) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = 0;
        for (c, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: r + 1,
                col: c + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    col: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            data.push(value);
            cols += 1;
        }
        if cols != expected_cols {
            return Err(Error::Dimension {
                axis: axis.into(),
                found: cols,
                expected: expected_cols,
            });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Validation(format!("{} has no rows", path.display())));
    }
    Ok(Array2::from_shape_vec((rows, expected_cols), data).expect("row-major fill"))
}

/// Formats a matrix in the feature-file format. `{}` on `f64` prints the
/// shortest representation that parses back to the same bits.
pub fn format_feature_matrix(m: ArrayView2<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 20);
    for row in m.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    atomic_write(path, format_feature_matrix(m).as_bytes())
}

/// Loads a manifest and every feature file it references. Any invalid record
/// fails the whole load.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Manifest(format!(
                "line {}: duplicate id {:?}",
                lineno + 1,
                rec.id
            )));
        }
        let sample = load_record(base, &rec).map_err(|e| Error::Ingest {
            id: rec.id.clone(),
            source: Box::new(e),
        })?;
        samples.push(sample);
    }
    Ok(Dataset {
        samples,
        manifest_path: path.to_path_buf(),
    })
}

fn load_record(base: &Path, rec: &ManifestRecord) -> Result<VideoSample> {
    let label = match rec.label {
        0 => false,
        1 => true,
        other => return Err(Error::Validation(format!("label {other} is not 0 or 1"))),
    };
    let visual = read_matrix(&base.join(&rec.visual_path), NUM_AUS, "visual")?;
    let audio = read_matrix(&base.join(&rec.audio_path), AUDIO_DIM, "audio")?;
    let text = read_matrix(&base.join(&rec.text_path), TEXT_DIM, "text")?;
    if text.nrows() != 1 {
        return Err(Error::Validation(format!(
            "text file has {} rows, expected 1",
            text.nrows()
        )));
    }
    let sample = VideoSample {
        id: rec.id.clone(),
        label,
        split: rec.split,
        visual,
        audio,
        text: text.row(0).to_owned(),
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes every sample's feature files under `dir/features/` and a manifest
/// at `dir/manifest.jsonl`, returning the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mut manifest = String::new();
    for s in &dataset.samples {
        let rec = ManifestRecord {
            id: s.id.clone(),
            label: u8::from(s.label),
            split: s.split,
            visual_path: Path::new("features").join(format!("{}_visual.csv", s.id)),
            audio_path: Path::new("features").join(format!("{}_audio.csv", s.id)),
            text_path: Path::new("features").join(format!("{}_text.csv", s.id)),
        };
        write_feature_matrix(&dir.join(&rec.visual_path), s.visual.view())?;
        write_feature_matrix(&dir.join(&rec.audio_path), s.audio.view())?;
        write_feature_matrix(
            &dir.join(&rec.text_path),
            s.text.view().insert_axis(ndarray::Axis(0)),
        )?;
        manifest.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    atomic_write(&path, manifest.as_bytes())?;
    Ok(path)
}
