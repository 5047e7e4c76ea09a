//! Optimizers, the pretraining loop, and the two transfer procedures
//! (fine-tuning and linear probing) with median-rule kernel sizing and the
//! mean-residual bias correction.
//!
//! The kernel width for an entropy/HSIC adaptation is computed once from the
//! source model's residuals on the target training data, before any gradient
//! step, and held fixed for the whole run.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, Bandwidth, MedianMode};
use crate::losses::Loss;
use crate::models::{Model, ModelParams, ModelSpec};
use crate::synthdata::{derive_seed, Dataset};

const TAG_INIT: u64 = 0x494E_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidParameter {
                name: "optimizer",
                reason: format!("unknown optimizer `{other}`"),
            }),
        }
    }
}

/// Training hyperparameters. `batch_size: None` trains full-batch.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub validation_fraction: f64,
    pub early_stopping: bool,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: None,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            validation_fraction: 0.1,
            early_stopping: false,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState::with_hyper(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update with bias-corrected moment estimates.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Per-epoch loss trajectory of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV rows `epoch,train_loss,val_loss` (empty val column when absent).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", e.epoch, e.train_loss, val).unwrap();
        }
        out
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// A trained model together with its loss trajectory.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Model,
    pub history: TrainHistory,
}

/// Trains a freshly initialized model on `data`. The model weights are
/// seeded from `cfg.seed`, so a fixed seed reproduces the run bitwise.
pub fn pretrain(
    data: &Dataset,
    spec: &ModelSpec,
    loss: &Loss,
    cfg: &TrainConfig,
) -> Result<Pretrained> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset("pretraining data".into()));
    }
    let mut model = Model::init(spec, derive_seed(cfg.seed, &[TAG_INIT]));
    let history = fit(&mut model, data.x.view(), &data.y, loss, cfg, true)?;
    Ok(Pretrained { model, history })
}

/// Mean residual `b = (1/n) sum (y_i - g(x_i))` of the model on `data`,
/// including the model's current bias term.
pub fn compute_bias(model: &Model, data: &Dataset) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset("bias computation".into()));
    }
    let e = model.residuals(data.x.view(), &data.y)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Folds the mean training residual into the model's bias so the corrected
/// model has zero mean residual on `data`. Returns the new bias, which
/// equals the mean residual of the bias-free model.
pub fn apply_bias_correction(model: &mut Model, data: &Dataset) -> Result<f64> {
    let b = model.bias() + compute_bias(model, data)?;
    model.set_bias(b)?;
    Ok(b)
}

/// How the kernel width of an adaptation loss is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaRule {
    /// Median of pairwise squared distances of the initial residuals
    /// (inputs, for the HSIC input kernel).
    MedianRule,
    /// Median rule scaled by a positive multiplier.
    MedianScaled(f64),
    Fixed(f64),
}

/// Adaptation objective for the transfer procedures. Kernel widths may be
/// deferred to the median rule, which is resolved from the source model's
/// residuals before training starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdaptLoss {
    Mse,
    Mae,
    Huber { delta: f64 },
    Barron { alpha: f64, scale: f64 },
    MeeMatrix { sigma: SigmaRule },
    MeeKde { sigma: SigmaRule },
    Hsic { sigma_x: SigmaRule, sigma_e: SigmaRule },
}

impl AdaptLoss {
    pub fn name(&self) -> &'static str {
        match self {
            AdaptLoss::Mse => "mse",
            AdaptLoss::Mae => "mae",
            AdaptLoss::Huber { .. } => "huber",
            AdaptLoss::Barron { .. } => "barron",
            AdaptLoss::MeeMatrix { .. } => "mee_matrix",
            AdaptLoss::MeeKde { .. } => "mee_kde",
            AdaptLoss::Hsic { .. } => "hsic",
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        matches!(
            self,
            AdaptLoss::MeeMatrix { .. } | AdaptLoss::MeeKde { .. } | AdaptLoss::Hsic { .. }
        )
    }
}

/// Whether the transfer procedures apply the bias correction. `Auto`
/// corrects exactly the translation-invariant losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Procedure {
    Finetune,
    Probe,
}

impl Procedure {
    pub fn name(&self) -> &'static str {
        match self {
            Procedure::Finetune => "finetune",
            Procedure::Probe => "probe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Procedure::Finetune),
            "probe" => Ok(Procedure::Probe),
            other => Err(Error::InvalidParameter {
                name: "procedure",
                reason: format!("unknown procedure `{other}`"),
            }),
        }
    }
}

/// Output of a transfer run: the corrected model, the kernel width that was
/// used for the residual kernel (if any), the loss trajectory, and a
/// snapshot of the source parameters the run started from.
#[derive(Debug, Clone)]
pub struct TransferResult {
    pub model: Model,
    pub sigma_used: Option<Bandwidth>,
    pub history: TrainHistory,
    pub source_snapshot: ModelParams,
    /// Bias of the returned model; with correction on, this equals the mean
    /// training residual of the pre-correction (bias-free) model.
    pub bias_b: f64,
    pub bias_corrected: bool,
    /// Set when the source residuals had zero spread, in which case the
    /// result is the source model with bias correction only.
    pub degenerate: bool,
}

/// Fine-tuning: adapt both the feature extractor and the head.
pub fn finetune(
    target: &Dataset,
    source: &Model,
    adapt: &AdaptLoss,
    cfg: &TrainConfig,
) -> Result<TransferResult> {
    transfer(target, source, Procedure::Finetune, adapt, cfg, BiasMode::Auto)
}

/// Linear probing: freeze the feature extractor, adapt only the head.
pub fn linear_probe(
    target: &Dataset,
    source: &Model,
    adapt: &AdaptLoss,
    cfg: &TrainConfig,
) -> Result<TransferResult> {
    transfer(target, source, Procedure::Probe, adapt, cfg, BiasMode::Auto)
}

/// Fine-tuning with the matrix-based entropy loss and median-rule width.
pub fn finetune_mee(target: &Dataset, source: &Model, cfg: &TrainConfig) -> Result<TransferResult> {
    finetune(
        target,
        source,
        &AdaptLoss::MeeMatrix {
            sigma: SigmaRule::MedianRule,
        },
        cfg,
    )
}

/// Linear probing with the matrix-based entropy loss and median-rule width.
pub fn linear_probe_mee(
    target: &Dataset,
    source: &Model,
    cfg: &TrainConfig,
) -> Result<TransferResult> {
    linear_probe(
        target,
        source,
        &AdaptLoss::MeeMatrix {
            sigma: SigmaRule::MedianRule,
        },
        cfg,
    )
}

/// Full-form transfer entry point.
pub fn transfer(
    target: &Dataset,
    source: &Model,
    procedure: Procedure,
    adapt: &AdaptLoss,
    cfg: &TrainConfig,
    bias: BiasMode,
) -> Result<TransferResult> {
    if target.dim() != source.input_dim() {
        return Err(Error::DimensionMismatch {
            left: target.dim(),
            right: source.input_dim(),
        });
    }
    if target.n() == 0 {
        return Err(Error::EmptyDataset("target training data".into()));
    }
    let source_snapshot = source.params();
    let mut model = source.clone();
    let initial_residuals = model.residuals(target.x.view(), &target.y)?;

    let resolved = match resolve_adapt_loss(adapt, &initial_residuals, target.x.view()) {
        Ok(r) => r,
        Err(Error::DegenerateBandwidth) => {
            // The source model already fits exactly up to a constant; there
            // is nothing for a translation-invariant loss to do.
            let bias_b = apply_bias_correction(&mut model, target)?;
            return Ok(TransferResult {
                model,
                sigma_used: None,
                history: TrainHistory::default(),
                source_snapshot,
                bias_b,
                bias_corrected: true,
                degenerate: true,
            });
        }
        Err(e) => return Err(e),
    };

    let history = fit(
        &mut model,
        target.x.view(),
        &target.y,
        &resolved.loss,
        cfg,
        procedure == Procedure::Finetune,
    )?;

    let correct = match bias {
        BiasMode::Auto => adapt.is_translation_invariant(),
        BiasMode::Always => true,
        BiasMode::Never => false,
    };
    let bias_b = if correct {
        apply_bias_correction(&mut model, target)?
    } else {
        model.bias()
    };

    Ok(TransferResult {
        model,
        sigma_used: resolved.sigma_used,
        history,
        source_snapshot,
        bias_b,
        bias_corrected: correct,
        degenerate: false,
    })
}

struct ResolvedLoss {
    loss: Loss,
    sigma_used: Option<Bandwidth>,
}

fn resolve_sigma(rule: SigmaRule, residuals: &[f64]) -> Result<Bandwidth> {
    match rule {
        SigmaRule::MedianRule => kernels::median_rule(residuals),
        SigmaRule::MedianScaled(factor) => kernels::median_rule(residuals)?.scaled(factor),
        SigmaRule::Fixed(s) => Bandwidth::new(s),
    }
}

fn resolve_input_sigma(rule: SigmaRule, x: ArrayView2<'_, f64>) -> Result<Bandwidth> {
    match rule {
        SigmaRule::MedianRule => kernels::median_rule_rows(x, MedianMode::SquaredDistance),
        SigmaRule::MedianScaled(factor) => {
            kernels::median_rule_rows(x, MedianMode::SquaredDistance)?.scaled(factor)
        }
        SigmaRule::Fixed(s) => Bandwidth::new(s),
    }
}

fn resolve_adapt_loss(
    adapt: &AdaptLoss,
    initial_residuals: &[f64],
    x: ArrayView2<'_, f64>,
) -> Result<ResolvedLoss> {
    Ok(match adapt {
        AdaptLoss::Mse => ResolvedLoss {
            loss: Loss::Mse,
            sigma_used: None,
        },
        AdaptLoss::Mae => ResolvedLoss {
            loss: Loss::Mae,
            sigma_used: None,
        },
        AdaptLoss::Huber { delta } => ResolvedLoss {
            loss: Loss::huber(*delta)?,
            sigma_used: None,
        },
        AdaptLoss::Barron { alpha, scale } => ResolvedLoss {
            loss: Loss::barron(*alpha, *scale)?,
            sigma_used: None,
        },
        AdaptLoss::MeeMatrix { sigma } => {
            let s = resolve_sigma(*sigma, initial_residuals)?;
            ResolvedLoss {
                loss: Loss::MeeMatrix { sigma: s },
                sigma_used: Some(s),
            }
        }
        AdaptLoss::MeeKde { sigma } => {
            let s = resolve_sigma(*sigma, initial_residuals)?;
            ResolvedLoss {
                loss: Loss::MeeKde { sigma: s },
                sigma_used: Some(s),
            }
        }
        AdaptLoss::Hsic { sigma_x, sigma_e } => {
            let sx = resolve_input_sigma(*sigma_x, x)?;
            let se = resolve_sigma(*sigma_e, initial_residuals)?;
            ResolvedLoss {
                loss: Loss::Hsic {
                    sigma_x: sx,
                    sigma_e: se,
                },
                sigma_used: Some(se),
            }
        }
    })
}

/// Gradient-trains `model` on `(x, y)` with the given loss. `train_theta:
/// false` freezes the feature extractor (linear-probe mode); the features
/// are then computed once and the run degenerates to training the head.
pub fn fit(
    model: &mut Model,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    loss: &Loss,
    cfg: &TrainConfig,
    train_theta: bool,
) -> Result<TrainHistory> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            left: y.len(),
            right: n,
        });
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Validation split for early stopping; disabled when either side would
    // be too small for the kernel losses.
    let mut indices: Vec<usize> = (0..n).collect();
    let n_val = if cfg.early_stopping {
        ((cfg.validation_fraction * n as f64).round() as usize).min(n.saturating_sub(2))
    } else {
        0
    };
    let early = cfg.early_stopping && n_val >= 2;
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) = if early {
        indices.shuffle(&mut rng);
        let (v, t) = indices.split_at(n_val);
        (v.to_vec(), t.to_vec())
    } else {
        (Vec::new(), indices)
    };

    let n_train = train_idx.len();
    let batch = cfg.batch_size.unwrap_or(n_train).min(n_train).max(1);
    let full_batch = batch >= n_train;

    // Probe mode never changes theta, so the features can be extracted once.
    let frozen_features: Option<Array2<f64>> = if train_theta {
        None
    } else {
        Some(model.features(x)?)
    };

    let theta_len = if train_theta { model.theta().len() } else { 0 };
    let mut theta_opt = Optimizer::new(cfg, theta_len);
    let mut w_opt = Optimizer::new(cfg, model.w().len());

    let val_x = early.then(|| x.select(Axis(0), &val_idx));
    let val_y: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();

    let mut order = train_idx.clone();
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        if full_batch {
            let bx = x.select(Axis(0), &order);
            let by: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            epoch_loss = train_step(
                model,
                bx.view(),
                &by,
                loss,
                frozen_features.as_ref().map(|f| f.select(Axis(0), &order)),
                &mut theta_opt,
                &mut w_opt,
                cfg,
                train_theta,
            )? * by.len() as f64;
        } else {
            order.shuffle(&mut rng);
            let mut start = 0;
            while start < n_train {
                let mut end = (start + batch).min(n_train);
                // The kernel losses need at least two samples; fold a
                // trailing singleton into the previous batch.
                if n_train - end == 1 {
                    end = n_train;
                }
                let idx = &order[start..end];
                let bx = x.select(Axis(0), idx);
                let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                let batch_loss = train_step(
                    model,
                    bx.view(),
                    &by,
                    loss,
                    frozen_features.as_ref().map(|f| f.select(Axis(0), idx)),
                    &mut theta_opt,
                    &mut w_opt,
                    cfg,
                    train_theta,
                )?;
                epoch_loss += batch_loss * by.len() as f64;
                start = end;
            }
        }
        let train_loss = epoch_loss / n_train as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }

        let val_loss = if let Some(vx) = &val_x {
            let e = residuals_for(model, vx.view(), &val_y, frozen_features.is_some())?;
            let inputs = loss.needs_inputs().then_some(vx.view());
            let v = loss.value(&e, inputs)?;
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params()));
            }
            Some(v)
        } else {
            None
        };

        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
    }

    if let Some((_, params)) = best {
        *model = Model::from_params(model.spec(), params)?;
    }
    Ok(history)
}

fn residuals_for(
    model: &Model,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    _frozen: bool,
) -> Result<Vec<f64>> {
    model.residuals(x, y)
}

enum Optimizer {
    Adam { state: AdamState, lr: f64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    fn new(cfg: &TrainConfig, len: usize) -> Self {
        match cfg.optimizer {
            OptimizerKind::Adam => Optimizer::Adam {
                state: AdamState::with_hyper(len, cfg.beta1, cfg.beta2, cfg.epsilon),
                lr: cfg.learning_rate,
            },
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: cfg.learning_rate,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Adam { state, lr } => adam_step(params, grads, state, *lr),
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut Model,
    bx: ArrayView2<'_, f64>,
    by: &[f64],
    loss: &Loss,
    frozen_batch_features: Option<Array2<f64>>,
    theta_opt: &mut Optimizer,
    w_opt: &mut Optimizer,
    _cfg: &TrainConfig,
    train_theta: bool,
) -> Result<f64> {
    let inputs = loss.needs_inputs().then_some(bx);
    if let Some(features) = frozen_batch_features {
        // Head-only update on precomputed features.
        let w = Array1::from_vec(model.w().to_vec());
        let preds = features.dot(&w);
        let e: Vec<f64> = by
            .iter()
            .zip(preds.iter())
            .map(|(yi, pi)| yi - (pi + model.bias()))
            .collect();
        let (value, dl_de) = loss.value_and_grad(&e, inputs)?;
        let dl_dpred = Array1::from_iter(dl_de.iter().map(|g| -g));
        let grad_w = features.t().dot(&dl_dpred);
        w_opt.step(model.w_mut(), grad_w.as_slice().expect("layout"));
        Ok(value)
    } else {
        let e = model.residuals(bx, by)?;
        let (value, dl_de) = loss.value_and_grad(&e, inputs)?;
        let grads = model.backward(bx, &dl_de)?;
        if train_theta && !grads.theta.is_empty() {
            theta_opt.step(model.theta_mut(), &grads.theta);
        }
        w_opt.step(model.w_mut(), &grads.w);
        Ok(value)
    }
}
