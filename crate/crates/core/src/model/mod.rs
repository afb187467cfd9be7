//! Modality encoders, fusion and classifier head.
//!
//! Visual and audio sequences each go through a stacked bidirectional LSTM,
//! additive attention pooling and a `tanh` projection to the shared
//! dimension. The text vector has no time axis and is projected directly.
//! The fused vector feeds an MLP with `tanh` hidden layers and inverted
//! dropout, ending in a single logit.

pub mod checkpoint;
pub mod fusion;
pub mod gradcheck;
pub mod layers;

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{VideoSample, AUDIO_DIM, NUM_AUS, TEXT_DIM};
use crate::error::{Error, Result};
use crate::window::{window_stats, WindowConfig};

pub use fusion::{fuse, fuse_backward, Fusion};
use layers::{Attention, AttentionCache, BiLstm, BiLstmCache, Linear, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Audio, Modality::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

/// What the visual encoder reads: raw per-frame AUs or window descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualFeatures {
    Raw,
    Windowed(WindowConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual_features: VisualFeatures,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub attention_dim: usize,
    /// Shared embedding width `D`.
    pub proj_dim: usize,
    pub fusion: Fusion,
    /// When set, only this modality is encoded and its embedding is fed to
    /// the head directly; `fusion` is ignored.
    pub unimodal: Option<Modality>,
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_features: VisualFeatures::Raw,
            visual_dim: NUM_AUS,
            audio_dim: AUDIO_DIM,
            text_dim: TEXT_DIM,
            lstm_hidden: 64,
            lstm_layers: 2,
            attention_dim: 64,
            proj_dim: 128,
            fusion: Fusion::Divergence,
            unimodal: None,
            mlp_hidden: vec![128, 64],
            dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn new(fusion: Fusion, visual_features: VisualFeatures) -> Self {
        let visual_dim = match visual_features {
            VisualFeatures::Raw => NUM_AUS,
            VisualFeatures::Windowed(_) => 4 * NUM_AUS,
        };
        ModelConfig {
            fusion,
            visual_features,
            visual_dim,
            ..Default::default()
        }
    }

    pub fn unimodal(modality: Modality, visual_features: VisualFeatures) -> Self {
        ModelConfig {
            unimodal: Some(modality),
            ..Self::new(Fusion::Implicit, visual_features)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("text_dim", self.text_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("attention_dim", self.attention_dim),
            ("proj_dim", self.proj_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("MLP hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if let VisualFeatures::Windowed(w) = self.visual_features {
            w.validate()?;
        }
        Ok(())
    }

    pub fn uses(&self, m: Modality) -> bool {
        self.unimodal.is_none_or(|u| u == m)
    }

    pub fn fused_dim(&self) -> usize {
        match self.unimodal {
            Some(_) => self.proj_dim,
            None => self.fusion.output_dim(self.proj_dim),
        }
    }

    /// Human-readable variant, e.g. `Fusion B (divergence)` or `Audio (unimodal)`.
    pub fn variant_name(&self) -> String {
        match self.unimodal {
            Some(m) => {
                let s = m.as_str();
                format!("{}{} (unimodal)", s[..1].to_uppercase(), &s[1..])
            }
            None => self.fusion.to_string(),
        }
    }
}

/// Encoder input for one video, after optional windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub visual: Array2<f64>,
    pub audio: Array2<f64>,
    pub text: Array1<f64>,
}

impl ModelInput {
    pub fn from_sample(sample: &VideoSample, cfg: &ModelConfig) -> Result<Self> {
        let visual = match cfg.visual_features {
            VisualFeatures::Raw => sample.visual.clone(),
            VisualFeatures::Windowed(w) => window_stats(sample.visual.view(), &w)?.descriptors,
        };
        Ok(ModelInput {
            visual,
            audio: sample.audio.clone(),
            text: sample.text.clone(),
        })
    }
}

/// BiLSTM, attention pooling and `tanh` projection for one temporal modality.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoder {
    pub lstm: BiLstm,
    pub attention: Attention,
    pub projection: Linear,
}

struct EncoderCache {
    lstm: BiLstmCache,
    attention: AttentionCache,
    pooled: Array1<f64>,
    embedding: Array1<f64>,
}

impl SequenceEncoder {
    fn zeros(in_dim: usize, cfg: &ModelConfig) -> Self {
        let width = 2 * cfg.lstm_hidden;
        SequenceEncoder {
            lstm: BiLstm::zeros(in_dim, cfg.lstm_hidden, cfg.lstm_layers),
            attention: Attention::zeros(width, cfg.attention_dim),
            projection: Linear::zeros(width, cfg.proj_dim),
        }
    }

    fn init<R: Rng + ?Sized>(in_dim: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let width = 2 * cfg.lstm_hidden;
        SequenceEncoder {
            lstm: BiLstm::init(in_dim, cfg.lstm_hidden, cfg.lstm_layers, rng),
            attention: Attention::init(width, cfg.attention_dim, rng),
            projection: Linear::init(width, cfg.proj_dim, rng),
        }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Result<EncoderCache> {
        if x.nrows() == 0 {
            return Err(Error::Shape("sequence has no time steps".into()));
        }
        if x.ncols() != self.lstm.in_dim() {
            return Err(Error::Shape(format!(
                "sequence width {} does not match encoder input {}",
                x.ncols(),
                self.lstm.in_dim()
            )));
        }
        let lstm = self.lstm.forward(x);
        let (pooled, attention) = self.attention.forward(lstm.output.view());
        let embedding = self.projection.forward(pooled.view()).mapv_into(f64::tanh);
        Ok(EncoderCache {
            lstm,
            attention,
            pooled,
            embedding,
        })
    }

    fn backward(&self, cache: &EncoderCache, demb: ArrayView1<f64>, grad: &mut SequenceEncoder) {
        let dz = &demb * &cache.embedding.mapv(|e| 1.0 - e * e);
        let dpooled = self
            .projection
            .backward(cache.pooled.view(), dz.view(), &mut grad.projection);
        let dh = self.attention.backward(
            cache.lstm.output.view(),
            &cache.attention,
            dpooled.view(),
            &mut grad.attention,
        );
        self.lstm.backward(&cache.lstm, dh.view(), &mut grad.lstm);
    }
}

impl ParamSet for SequenceEncoder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.lstm.collect(&format!("{prefix}.lstm"), out);
        self.attention.collect(&format!("{prefix}.attention"), out);
        self.projection.collect(&format!("{prefix}.projection"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.lstm.collect_mut(&format!("{prefix}.lstm"), out);
        self.attention.collect_mut(&format!("{prefix}.attention"), out);
        self.projection.collect_mut(&format!("{prefix}.projection"), out);
    }
}

/// Every learnable tensor. The same type doubles as the gradient and
/// optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub visual: Option<SequenceEncoder>,
    pub audio: Option<SequenceEncoder>,
    pub text: Option<Linear>,
    pub head: Vec<Linear>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            visual: cfg
                .uses(Modality::Visual)
                .then(|| SequenceEncoder::zeros(cfg.visual_dim, cfg)),
            audio: cfg
                .uses(Modality::Audio)
                .then(|| SequenceEncoder::zeros(cfg.audio_dim, cfg)),
            text: cfg
                .uses(Modality::Text)
                .then(|| Linear::zeros(cfg.text_dim, cfg.proj_dim)),
            head: head_dims(cfg)
                .windows(2)
                .map(|w| Linear::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Seeded uniform initialisation scaled by fan-in.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual = cfg
            .uses(Modality::Visual)
            .then(|| SequenceEncoder::init(cfg.visual_dim, cfg, &mut rng));
        let audio = cfg
            .uses(Modality::Audio)
            .then(|| SequenceEncoder::init(cfg.audio_dim, cfg, &mut rng));
        let text = cfg
            .uses(Modality::Text)
            .then(|| Linear::init(cfg.text_dim, cfg.proj_dim, &mut rng));
        let head = head_dims(cfg)
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], &mut rng))
            .collect();
        ModelParams {
            visual,
            audio,
            text,
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// All tensors in a fixed order with dotted names such as
    /// `audio.lstm.0.fwd.w_ih`.
    pub fn named(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.named()
            .into_iter()
            .map(|(_, v)| v.to_slice().expect("standard layout"))
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.named_mut()
            .into_iter()
            .map(|(_, v)| v.into_slice().expect("standard layout"))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.fill(value);
        }
    }

    /// Reads coordinate `index` of the flattened parameter vector.
    pub fn flat_get(&self, mut index: usize) -> f64 {
        for s in self.slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut index: usize, value: f64) {
        for s in self.slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("flat index out of range");
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, other: &ModelParams, k: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += k * s);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl ParamSet for ModelParams {
    fn collect<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        if let Some(v) = &self.visual {
            v.collect("visual", out);
        }
        if let Some(a) = &self.audio {
            a.collect("audio", out);
        }
        if let Some(t) = &self.text {
            t.collect("text.projection", out);
        }
        for (i, l) in self.head.iter().enumerate() {
            l.collect(&format!("head.{i}"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, _prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        if let Some(v) = &mut self.visual {
            v.collect_mut("visual", out);
        }
        if let Some(a) = &mut self.audio {
            a.collect_mut("audio", out);
        }
        if let Some(t) = &mut self.text {
            t.collect_mut("text.projection", out);
        }
        for (i, l) in self.head.iter_mut().enumerate() {
            l.collect_mut(&format!("head.{i}"), out);
        }
    }
}

fn head_dims(cfg: &ModelConfig) -> Vec<usize> {
    let mut dims = vec![cfg.fused_dim()];
    dims.extend(&cfg.mlp_hidden);
    dims.push(1);
    dims
}

/// Whether dropout is active. Training passes an explicit seed so the
/// dropout masks are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    visual: Option<EncoderCache>,
    audio: Option<EncoderCache>,
    text: Option<(Array1<f64>, Array1<f64>)>,
    /// Input to each head layer (after activation and dropout).
    head_inputs: Vec<Array1<f64>>,
    /// Post-`tanh` hidden activations and their dropout masks.
    head_hidden: Vec<(Array1<f64>, Option<Array1<f64>>)>,
    pub logit: f64,
}

impl ForwardCache {
    pub fn embedding(&self, m: Modality) -> Option<ArrayView1<'_, f64>> {
        match m {
            Modality::Visual => self.visual.as_ref().map(|c| c.embedding.view()),
            Modality::Audio => self.audio.as_ref().map(|c| c.embedding.view()),
            Modality::Text => self.text.as_ref().map(|(_, e)| e.view()),
        }
    }

    pub fn fused(&self) -> ArrayView1<'_, f64> {
        self.head_inputs[0].view()
    }
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::zeros(&config);
        let shapes = |p: &ModelParams| -> Vec<(String, Vec<usize>)> {
            p.named().into_iter().map(|(n, v)| (n, v.shape().to_vec())).collect()
        };
        if shapes(&expected) != shapes(&params) {
            return Err(Error::Shape(
                "parameter shapes do not match the model configuration".into(),
            ));
        }
        Ok(Model { config, params })
    }

    /// Scalar logit for one video.
    pub fn forward(&self, input: &ModelInput, mode: Mode) -> Result<f64> {
        Ok(self.forward_cached(input, mode)?.logit)
    }

    pub fn forward_cached(&self, input: &ModelInput, mode: Mode) -> Result<ForwardCache> {
        let p = &self.params;
        let visual = p
            .visual
            .as_ref()
            .map(|enc| enc.forward(input.visual.view()))
            .transpose()?;
        let audio = p
            .audio
            .as_ref()
            .map(|enc| enc.forward(input.audio.view()))
            .transpose()?;
        let text = p
            .text
            .as_ref()
            .map(|proj| {
                if input.text.len() != proj.in_dim() {
                    return Err(Error::Shape(format!(
                        "text length {} does not match projection input {}",
                        input.text.len(),
                        proj.in_dim()
                    )));
                }
                let e = proj.forward(input.text.view()).mapv_into(f64::tanh);
                Ok((input.text.clone(), e))
            })
            .transpose()?;

        let fused = match self.config.unimodal {
            Some(Modality::Visual) => visual.as_ref().unwrap().embedding.clone(),
            Some(Modality::Audio) => audio.as_ref().unwrap().embedding.clone(),
            Some(Modality::Text) => text.as_ref().unwrap().1.clone(),
            None => fuse(
                visual.as_ref().unwrap().embedding.view(),
                audio.as_ref().unwrap().embedding.view(),
                text.as_ref().unwrap().1.view(),
                self.config.fusion,
            )?,
        };

        let mut rng = match mode {
            Mode::Train { seed } if self.config.dropout > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
            _ => None,
        };
        let keep = 1.0 - self.config.dropout;
        let mut head_inputs = vec![fused];
        let mut head_hidden = Vec::new();
        let last = p.head.len() - 1;
        let mut logit = 0.0;
        for (i, layer) in p.head.iter().enumerate() {
            let z = layer.forward(head_inputs[i].view());
            if i == last {
                logit = z[0];
                break;
            }
            let a = z.mapv_into(f64::tanh);
            let mask = rng.as_mut().map(|r| {
                Array1::from_shape_simple_fn(a.len(), || {
                    if r.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            let next = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            head_hidden.push((a, mask));
            head_inputs.push(next);
        }
        Ok(ForwardCache {
            visual,
            audio,
            text,
            head_inputs,
            head_hidden,
            logit,
        })
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/dlogit`.
    pub fn backward(&self, cache: &ForwardCache, dlogit: f64, grads: &mut ModelParams) {
        let p = &self.params;
        let mut d = Array1::from_elem(1, dlogit);
        for i in (0..p.head.len()).rev() {
            let dx = p.head[i].backward(cache.head_inputs[i].view(), d.view(), &mut grads.head[i]);
            if i == 0 {
                d = dx;
                break;
            }
            let (a, mask) = &cache.head_hidden[i - 1];
            let mut dz = dx;
            if let Some(m) = mask {
                dz *= m;
            }
            dz.zip_mut_with(a, |g, &act| *g *= 1.0 - act * act);
            d = dz;
        }
        let dfused = d;

        let (dv, da, dt) = match self.config.unimodal {
            Some(Modality::Visual) => (Some(dfused), None, None),
            Some(Modality::Audio) => (None, Some(dfused), None),
            Some(Modality::Text) => (None, None, Some(dfused)),
            None => {
                let (v, a, t) = fuse_backward(
                    cache.visual.as_ref().unwrap().embedding.view(),
                    cache.audio.as_ref().unwrap().embedding.view(),
                    cache.text.as_ref().unwrap().1.view(),
                    self.config.fusion,
                    dfused.view(),
                );
                (Some(v), Some(a), Some(t))
            }
        };
        if let (Some(enc), Some(c), Some(g)) = (&p.visual, &cache.visual, dv) {
            enc.backward(c, g.view(), grads.visual.as_mut().unwrap());
        }
        if let (Some(enc), Some(c), Some(g)) = (&p.audio, &cache.audio, da) {
            enc.backward(c, g.view(), grads.audio.as_mut().unwrap());
        }
        if let (Some(proj), Some((x, e)), Some(g)) = (&p.text, &cache.text, dt) {
            let dz = &g * &e.mapv(|v| 1.0 - v * v);
            proj.backward(x.view(), dz.view(), grads.text.as_mut().unwrap());
        }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [visual {:?}, lstm {}x{}, D={}, head {:?}, dropout {}]",
            self.variant_name(),
            self.visual_features,
            self.lstm_layers,
            self.lstm_hidden,
            self.proj_dim,
            self.mlp_hidden,
            self.dropout
        )
    }
}

#[cfg(test)]
pub(crate) use tests::tiny_config;
