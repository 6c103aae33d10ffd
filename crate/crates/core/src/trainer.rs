//! Deterministic mini-batch training.
//!
//! Each step runs `encoder.forward(train) → loss → encoder.backward → Adam`.
//! Shuffles use a per-epoch ChaCha stream derived from the config seed, so a
//! run is a pure function of `(config, data, codebook)`.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::dataset::LabeledDataset;
use crate::encoder::{Architecture, BatchMode, EncoderParams, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM};
use crate::error::{ensure_dim, invalid, Error, Result};
use crate::loss::{ce_loss, loss_and_grad, smooth_labels, LossConfig, MarginKind, SoftTargets};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

/// Margin settings as stored in the training config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub margin: f64,
    pub margin_kind: MarginKind,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            margin: 0.2,
            margin_kind: MarginKind::Cosine,
        }
    }
}

/// What the codes are trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Scaled cosine logits against the fixed codebook rows.
    #[default]
    OrthogonalTargets,
    /// Plain softmax classifier (learned weights and bias) on top of the
    /// codes. Baseline only; the codebook just fixes C and K.
    LearnedClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::adam_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "defaults::bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "defaults::bn_epsilon")]
    pub bn_epsilon: f64,
    #[serde(default)]
    pub loss: LossSettings,
    #[serde(default)]
    pub objective: Objective,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        1e-4
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_epsilon() -> f64 {
        1e-8
    }
    pub fn bn_momentum() -> f64 {
        super::DEFAULT_BN_MOMENTUM
    }
    pub fn bn_epsilon() -> f64 {
        super::DEFAULT_BN_EPSILON
    }
}

impl TrainConfig {
    /// Defaults for everything except the architecture.
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            learning_rate: defaults::learning_rate(),
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            seed: 0,
            adam_beta1: defaults::beta1(),
            adam_beta2: defaults::beta2(),
            adam_epsilon: defaults::adam_epsilon(),
            bn_momentum: defaults::bn_momentum(),
            bn_epsilon: defaults::bn_epsilon(),
            loss: LossSettings::default(),
            objective: Objective::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be at least 2"));
        }
        AdamConfig::new(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_epsilon)?;
        LossConfig::new(self.loss.margin_kind, self.loss.margin, self.architecture.bits)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Largest per-bit |mean sign| over this epoch's training codes.
    pub max_abs_bit_balance: f64,
    pub mean_abs_bit_balance: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Softmax classifier used by [`Objective::LearnedClassifier`].
struct ClassifierHead<T> {
    weight: Array2<T>,
    bias: Array1<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    fn init(classes: usize, bits: usize, rng: &mut crate::rng::Rng) -> Self {
        let bound = 1.0 / (bits as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((classes, bits), || T::lit(rng.random_range(-bound..bound))),
            bias: Array1::zeros(classes),
        }
    }

    #[allow(clippy::type_complexity)]
    fn loss_and_grads(
        &self,
        codes: &Array2<T>,
        targets: &SoftTargets<T>,
    ) -> Result<(T, Array2<T>, Array2<T>, Array1<T>)> {
        let logits = codes.dot(&self.weight.t()) + &self.bias;
        let (loss, g) = ce_loss(logits.view(), targets)?;
        let dw = g.t().dot(codes);
        let db = g.sum_axis(Axis(0));
        let dcodes = g.dot(&self.weight);
        Ok((loss, dcodes, dw, db))
    }
}

/// Trains an encoder from scratch.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &LabeledDataset<T>,
    cb: &Codebook,
) -> Result<(EncoderParams<T>, TrainHistory)> {
    cfg.validate()?;
    let arch = &cfg.architecture;
    ensure_dim("codebook classes", data.classes, cb.classes())?;
    ensure_dim("codebook bits", arch.bits, cb.bits())?;
    ensure_dim("descriptor dimension", arch.input_dim, data.dim())?;
    if data.len() < 2 {
        return Err(invalid("need at least 2 training samples"));
    }

    let mut params = EncoderParams::<T>::init(arch.clone(), cfg.bn_momentum, cfg.bn_epsilon, cfg.seed)?;
    let loss_cfg = LossConfig::new(cfg.loss.margin_kind, T::lit(cfg.loss.margin), arch.bits)?;
    let adam = AdamConfig::new(
        T::lit(cfg.learning_rate),
        T::lit(cfg.adam_beta1),
        T::lit(cfg.adam_beta2),
        T::lit(cfg.adam_epsilon),
    )?;
    let mut head = match cfg.objective {
        Objective::OrthogonalTargets => None,
        Objective::LearnedClassifier => {
            let mut rng = seeded(cfg.seed, stream::INIT + 0x100);
            Some(ClassifierHead::<T>::init(cb.classes(), arch.bits, &mut rng))
        }
    };
    let mut sizes: Vec<usize> = params.trainable_mut().iter().map(|t| t.len()).collect();
    if let Some(h) = &head {
        sizes.push(h.weight.len());
        sizes.push(h.bias.len());
    }
    let mut state = AdamState::new(sizes);

    let targets_all = smooth_labels::<T>(&data.labels, data.classes)?;
    let n = data.len();
    let k = arch.bits;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut rng = seeded(cfg.seed, stream::SHUFFLE_BASE + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut sign_sum = vec![0i64; k];
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = data.descriptors.select(Axis(0), batch);
            let targets = SoftTargets::new(targets_all.matrix().select(Axis(0), batch))?;
            let (codes, cache) = params.forward(x.view(), BatchMode::Train)?;
            for row in codes.axis_iter(Axis(0)) {
                for (s, &v) in sign_sum.iter_mut().zip(row.iter()) {
                    *s += if v >= T::zero() { 1 } else { -1 };
                }
            }
            let (loss, grad_codes, head_grads) = match &head {
                None => {
                    let (l, g) = loss_and_grad(codes.view(), cb, &targets, &loss_cfg)?;
                    (l, g, None)
                }
                Some(h) => {
                    let (l, g, dw, db) = h.loss_and_grads(&codes, &targets)?;
                    (l, g, Some((dw, db)))
                }
            };
            let grads = params.backward(&cache, grad_codes.view())?;
            let mut slices = params.trainable_mut();
            let mut grad_slices = grads.trainable();
            if let (Some(h), Some((dw, db))) = (head.as_mut(), head_grads.as_ref()) {
                slices.push(h.weight.as_slice_mut().expect("standard layout"));
                slices.push(h.bias.as_slice_mut().expect("standard layout"));
                grad_slices.push(dw.as_slice().expect("standard layout"));
                grad_slices.push(db.as_slice().expect("standard layout"));
            }
            adam_step(&mut slices, &grad_slices, &mut state, &adam)?;
            loss_sum += loss.as_f64() * batch.len() as f64;
            seen += batch.len();
        }

        if !params.is_finite() || !loss_sum.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        let balance: Vec<f64> = sign_sum.iter().map(|&s| s as f64 / seen.max(1) as f64).collect();
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / seen.max(1) as f64,
            max_abs_bit_balance: balance.iter().fold(0.0, |a, b| a.max(b.abs())),
            mean_abs_bit_balance: balance.iter().map(|b| b.abs()).sum::<f64>() / k as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}

/// Orthogonal-target loss of infer-mode codes on `data`.
pub fn evaluate_loss<T: Scalar>(
    params: &EncoderParams<T>,
    data: &LabeledDataset<T>,
    cb: &Codebook,
    loss: &LossSettings,
) -> Result<T> {
    let codes = params.encode_continuous(data.descriptors.view())?;
    let targets = smooth_labels::<T>(&data.labels, data.classes)?;
    let cfg = LossConfig::new(loss.margin_kind, T::lit(loss.margin), cb.bits())?;
    Ok(loss_and_grad(codes.view(), cb, &targets, &cfg)?.0)
}
