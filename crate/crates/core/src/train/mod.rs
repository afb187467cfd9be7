//! Optimization recipe: class-weighted BCE on logits, AdamW with per-group
//! learning rates, per-epoch cosine annealing, global-norm clipping, and
//! early stopping on validation Macro F1.

pub mod loss;
pub mod optim;
pub mod schedule;

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, VideoSample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_inputs, Evaluation};
use crate::model::{Model, ModelConfig, ModelInput, ModelParams, Mode};
use loss::{auto_pos_weight, bce_with_logits, bce_with_logits_grad};
use optim::{clip_global_norm, AdamW, AdamWConfig};
use schedule::cosine_lr;

/// Learning-rate groups, keyed by the first component of a parameter name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Visual,
    Audio,
    Text,
    Head,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next() {
            Some("visual") => ParamGroup::Visual,
            Some("audio") => ParamGroup::Audio,
            Some("text") => ParamGroup::Text,
            _ => ParamGroup::Head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosWeight {
    /// `N_negative / N_positive` of the training split.
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Per-group overrides of `base_lr`.
    pub group_lr: Vec<(ParamGroup, f64)>,
    pub min_lr: f64,
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub pos_weight: PosWeight,
    /// Decision threshold on `σ(logit)` for validation predictions.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            base_lr: 5e-4,
            group_lr: Vec::new(),
            min_lr: 0.0,
            adamw: AdamWConfig::default(),
            batch_size: 16,
            clip_norm: 1.0,
            patience: Some(8),
            seed: 0,
            pos_weight: PosWeight::Auto,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let PosWeight::Explicit(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("pos_weight {w} must be positive")));
            }
        }
        let rates = std::iter::once(self.base_lr).chain(self.group_lr.iter().map(|(_, lr)| *lr));
        for lr in rates {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} is invalid")));
            }
        }
        Ok(())
    }

    /// Initial learning rate of a group before annealing.
    pub fn lr_for(&self, group: ParamGroup) -> f64 {
        self.group_lr
            .iter()
            .rev()
            .find(|(g, _)| *g == group)
            .map_or(self.base_lr, |(_, lr)| *lr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    /// Base-group learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_f1(&self) -> f64 {
        self.epochs[self.best_epoch].val_macro_f1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_macro_f1,lr,best\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.val_macro_f1,
                r.lr,
                u8::from(r.epoch == self.best_epoch)
            )
            .unwrap();
        }
        out
    }
}

/// Tracks the best validation score and the run of non-improving epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records an epoch's score; returns whether it is a new best. Ties do
    /// not count as improvement, so the first epoch reaching a score wins.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, b)) if score <= b => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience.is_some_and(|p| self.since_best >= p)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters restored from the best validation epoch.
    pub model: Model,
    pub history: TrainHistory,
    pub pos_weight: f64,
}

/// Prepared input and label for one video.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: ModelInput,
    pub label: bool,
}

pub fn prepare(samples: &[&VideoSample], cfg: &ModelConfig) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            Ok(Example {
                input: ModelInput::from_sample(s, cfg)?,
                label: s.label,
            })
        })
        .collect()
}

/// Trains on the dataset's train split, selecting on its val split.
pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let tr = dataset.split(Split::Train);
    let va = dataset.split(Split::Val);
    if tr.is_empty() || va.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and val splits ({} train, {} val)",
            tr.len(),
            va.len()
        )));
    }
    train_examples(&prepare(&tr, model_cfg)?, &prepare(&va, model_cfg)?, model_cfg, cfg)
}

/// Dropout seed for one sample visit, independent of evaluation order.
fn dropout_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [epoch as u64, position as u64] {
        x = x.wrapping_add(v).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 31;
    }
    x
}

pub fn train_examples(
    train_set: &[Example],
    val_set: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and val sets must be non-empty".into()));
    }
    let pos_weight = match cfg.pos_weight {
        PosWeight::Auto => auto_pos_weight(train_set.iter().map(|e| e.label))?,
        PosWeight::Explicit(w) => w,
    };
    let mut model = Model::new(model_cfg.clone(), cfg.seed)?;
    let mut optimizer = AdamW::new(&model.params, cfg.adamw);
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params: ModelParams = model.params.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;

    info!(
        "training {} on {} examples ({} val), pos_weight {pos_weight:.4}",
        model_cfg.variant_name(),
        train_set.len(),
        val_set.len()
    );
    for epoch in 0..cfg.epochs {
        let scale = |g: ParamGroup| cosine_lr(epoch, cfg.lr_for(g), cfg.epochs, cfg.min_lr);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let mode = Mode::Train {
                    seed: dropout_seed(cfg.seed, epoch, i),
                };
                let cache = model.forward_cached(&ex.input, mode)?;
                let l = bce_with_logits(cache.logit, ex.label, pos_weight);
                batch_loss += l;
                model.backward(
                    &cache,
                    bce_with_logits_grad(cache.logit, ex.label, pos_weight),
                    &mut grads,
                );
            }
            let n = batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    param_norm: model.params.l2_norm(),
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / n);
            clip_global_norm(&mut grads.slices_mut(), cfg.clip_norm);
            optimizer.step(&mut model.params, &grads, |name| scale(ParamGroup::of(name)));
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let Evaluation { macro_f1, .. } = evaluate_inputs(&model, val_set, cfg.threshold)?;
        let lr = cosine_lr(epoch, cfg.base_lr, cfg.epochs, cfg.min_lr);
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_f1: macro_f1,
            lr,
        });
        if stopper.observe(epoch, macro_f1) {
            best_params.clone_from(&model.params);
        }
        debug!("epoch {epoch}: loss {train_loss:.5} val F1 {macro_f1:.4} lr {lr:.3e}");
        if stopper.should_stop() {
            stopped_early = epoch + 1 < cfg.epochs;
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (best_epoch, best_f1) = stopper.best().expect("at least one epoch ran");
    info!("best val Macro F1 {best_f1:.4} at epoch {best_epoch}");
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        history: TrainHistory {
            epochs: records,
            best_epoch,
            stopped_early,
        },
        pos_weight,
    })
}
