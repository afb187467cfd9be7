//! Seeded synthetic datasets with a controllable cross-modal conflict.
//!
//! Every video has a latent content vector `z ~ N(0, I_k)`. Each modality is
//! a fixed random affine rendering of a latent into its feature space:
//! AUs pass through a softplus so activations stay non-negative, and the two
//! sequential modalities get a mean-reverting random drift per frame so
//! windowed statistics are non-degenerate.
//!
//! In divergence-label mode an A/H video renders its audio from
//! `z′ = (1 − κ)z − κz`; at `κ = 1` that is `−z`, which has the same
//! distribution as `z`, so no single modality carries label information and
//! only the disagreement between modalities does.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, VideoSample, AUDIO_DIM, NUM_AUS, TEXT_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    /// Label = audio contradicts the other modalities.
    DivergenceLabel,
    /// Label shifts the shared latent; all modalities agree.
    CongruentLabel,
    /// Labels drawn independently of the features.
    Null,
}

impl SynthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthMode::DivergenceLabel => "divergence-label",
            SynthMode::CongruentLabel => "congruent-label",
            SynthMode::Null => "null",
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divergence-label" | "divergence" => Ok(SynthMode::DivergenceLabel),
            "congruent-label" | "congruent" => Ok(SynthMode::CongruentLabel),
            "null" => Ok(SynthMode::Null),
            other => Err(Error::Config(format!(
                "unknown synthetic mode {other:?} (expected divergence-label, congruent-label or null)"
            ))),
        }
    }
}

/// Scales the frame-to-frame variability of one AU in A/H videos, leaving
/// everything else untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariabilityShift {
    pub au: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Inclusive visual sequence length range.
    pub visual_len: (usize, usize),
    /// Inclusive audio sequence length range.
    pub audio_len: (usize, usize),
    /// κ ∈ [0, 1]
    pub conflict_strength: f64,
    pub mode: SynthMode,
    /// Standard deviation of the per-frame drift and the text noise.
    pub noise_sigma: f64,
    /// Latent content dimension.
    pub latent_dim: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Lag-one autocorrelation of the per-frame drift; 0 gives i.i.d. frames.
    pub drift_rho: f64,
    #[serde(default)]
    pub variability_shift: Option<VariabilityShift>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 600,
            seed: 0,
            visual_len: (16, 48),
            audio_len: (4, 12),
            conflict_strength: 1.0,
            mode: SynthMode::DivergenceLabel,
            noise_sigma: 0.1,
            latent_dim: 8,
            val_fraction: 1.0 / 6.0,
            test_fraction: 1.0 / 6.0,
            drift_rho: 0.8,
            variability_shift: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_samples < 2 {
            return fail(format!("n_samples {} must be at least 2", self.n_samples));
        }
        if !(0.0..=1.0).contains(&self.conflict_strength) {
            return fail(format!(
                "conflict strength {} outside [0, 1]",
                self.conflict_strength
            ));
        }
        for (name, (lo, hi)) in [("visual", self.visual_len), ("audio", self.audio_len)] {
            if lo == 0 || lo > hi {
                return fail(format!("{name} length range {lo}..={hi} is empty or zero"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma {} must be finite and ≥ 0", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.drift_rho) {
            return fail(format!("drift autocorrelation {} outside [0, 1)", self.drift_rho));
        }
        if self.latent_dim == 0 {
            return fail("latent dimension must be positive".into());
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(v >= 0.0 && t >= 0.0 && v + t < 1.0) {
            return fail(format!("split fractions val {v}, test {t} leave no training data"));
        }
        if let Some(s) = self.variability_shift {
            if s.au >= NUM_AUS || !(s.factor > 0.0 && s.factor.is_finite()) {
                return fail(format!("invalid variability shift {s:?}"));
            }
        }
        Ok(())
    }

    /// `(train, val, test)` sizes.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_samples as f64;
        let val = (n * self.val_fraction).round() as usize;
        let test = (n * self.test_fraction).round() as usize;
        (self.n_samples - val - test, val, test)
    }
}

struct Renderers {
    au_map: Array2<f64>,
    au_offset: Array1<f64>,
    audio_map: Array2<f64>,
    text_map: Array2<f64>,
    /// Unit latent direction for congruent-label shifts.
    shift_dir: Array1<f64>,
}

impl Renderers {
    fn new(k: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (k as f64).sqrt();
        let mut normal = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || scale * rng.sample::<f64, _>(StandardNormal))
        };
        let au_map = normal(NUM_AUS, k) * 0.5;
        let audio_map = normal(AUDIO_DIM, k);
        let text_map = normal(TEXT_DIM, k);
        let au_offset = Array1::from_shape_simple_fn(NUM_AUS, || rng.random_range(0.0..1.0));
        let mut shift_dir = Array1::from_shape_simple_fn(k, || rng.sample::<f64, _>(StandardNormal));
        shift_dir /= shift_dir.dot(&shift_dir).sqrt();
        Renderers {
            au_map,
            au_offset,
            audio_map,
            text_map,
            shift_dir,
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stationary AR(1) drift, `T × dim`, marginal standard deviation `sigma`.
fn drift(rng: &mut ChaCha8Rng, frames: usize, dim: usize, sigma: f64, rho: f64) -> Array2<f64> {
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut out = Array2::zeros((frames, dim));
    for c in 0..dim {
        let mut x = sigma * rng.sample::<f64, _>(StandardNormal);
        for t in 0..frames {
            if t > 0 {
                x = rho * x + innov * rng.sample::<f64, _>(StandardNormal);
            }
            out[[t, c]] = x;
        }
    }
    out
}

/// Per-split label plan: positives and negatives per split, balanced within
/// each split and within one overall.
fn label_plan(sizes: [usize; 3]) -> Vec<(Split, bool)> {
    let mut plan = Vec::new();
    let mut odd_seen = 0;
    for (split, size) in [Split::Train, Split::Val, Split::Test].into_iter().zip(sizes) {
        let mut pos = size / 2;
        if size % 2 == 1 {
            // alternate who gets the odd sample
            pos += usize::from(odd_seen % 2 == 0);
            odd_seen += 1;
        }
        for i in 0..size {
            plan.push((split, i < pos));
        }
    }
    plan
}

/// Builds a dataset from `cfg`. Sample `i` draws from its own ChaCha stream,
/// so each sample depends only on the seed and its index.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let k = cfg.latent_dim;
    let mut base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let render = Renderers::new(k, &mut base);
    let (tr, va, te) = cfg.split_sizes();
    let mut plan = label_plan([tr, va, te]);
    if cfg.mode == SynthMode::Null {
        // labels carry no information: permute them across samples
        use rand::seq::SliceRandom;
        let mut labels: Vec<bool> = plan.iter().map(|p| p.1).collect();
        labels.shuffle(&mut base);
        for (p, l) in plan.iter_mut().zip(labels) {
            p.1 = l;
        }
    }
    let kappa = cfg.conflict_strength;
    let width = plan.len().to_string().len();
    let mut samples = Vec::with_capacity(plan.len());
    for (i, &(split, label)) in plan.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let mut z = Array1::from_shape_simple_fn(k, || rng.sample::<f64, _>(StandardNormal));
        if cfg.mode == SynthMode::CongruentLabel && label {
            z.scaled_add(2.0 * kappa, &render.shift_dir);
        }
        let z_audio = if cfg.mode == SynthMode::DivergenceLabel && label {
            &z * (1.0 - kappa) - &z * kappa
        } else {
            z.clone()
        };
        let tv = rng.random_range(cfg.visual_len.0..=cfg.visual_len.1);
        let ta = rng.random_range(cfg.audio_len.0..=cfg.audio_len.1);

        let au_mean = render.au_map.dot(&z) + &render.au_offset;
        let mut au_drift = drift(&mut rng, tv, NUM_AUS, cfg.noise_sigma, cfg.drift_rho);
        if let Some(shift) = cfg.variability_shift.filter(|_| label) {
            au_drift.column_mut(shift.au).mapv_inplace(|v| v * shift.factor);
        }
        let visual = (au_drift + &au_mean).mapv(softplus);

        let audio = drift(&mut rng, ta, AUDIO_DIM, cfg.noise_sigma, cfg.drift_rho) + &render.audio_map.dot(&z_audio);

        let text_noise =
            Array1::from_shape_simple_fn(TEXT_DIM, || cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal));
        let text = render.text_map.dot(&z) + text_noise;

        samples.push(VideoSample {
            id: format!("syn{i:0width$}"),
            label,
            split,
            visual,
            audio,
            text,
        });
    }
    Dataset::new(samples)
}
