//! Fine-tuning loop with the stability regularizer, AdamW and a linear
//! warmup/decay schedule.

use alloc::vec::Vec;

use crate::data::TextDataset;
use crate::encoder::{BoundParams, EncoderConfig, EncoderModel, Injection};
use crate::error::{config, contract, Error, Result};
use crate::manifold::{inmanifold_injection_noise, NeighborIndex};
use crate::noise::{injection_noise, NoiseMode, NoiseSpec};
use crate::numerics::{Graph, Tensor, Var};
use crate::objective::{assemble_objective, batch_mean, lnsr_term, Mode, RegularizerConfig, Target};
use crate::rng::{self, Rng, Stream};
use crate::stats::{self, Summary};

/// Learning rates used with pre-trained encoders.
pub const PRETRAINED_LR_PRESETS: [f64; 3] = [2e-5, 3e-5, 5e-5];
/// Warmup ratio for span-extraction style tasks.
pub const QA_WARMUP_RATIO: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub reg: RegularizerConfig,
    /// Apply dropout in the perturbed pass as well as the clean one.
    pub dropout_in_perturbed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            warmup_ratio: 0.06,
            epochs: 3,
            seed: 0,
            noise: NoiseSpec::default(),
            reg: RegularizerConfig::default(),
            dropout_in_perturbed: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &EncoderConfig) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(config("lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config("beta", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(config("adam_eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(config("warmup_ratio", "must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(config("epochs", "must be positive"));
        }
        self.noise.validate()?;
        if self.noise.injection_layer != self.reg.injection_layer {
            return Err(config("injection_layer", "noise and regularizer disagree"));
        }
        if self.noise.injection_layer > model.num_layers {
            return Err(config("injection_layer", "exceeds the number of layers"));
        }
        self.reg.lambdas(model.num_layers)?;
        if self.noise.mode == NoiseMode::InManifold {
            if self.noise.injection_layer != 1 {
                return Err(config(
                    "injection_layer",
                    "in-manifold noise is defined at layer 1 only",
                ));
            }
            if model.vocab_size < self.noise.neighbors + 1 {
                return Err(config("neighbors", "vocabulary smaller than k + 1"));
            }
        }
        Ok(())
    }
}

/// Hyperparameters of one AdamW update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW step at iteration `t ≥ 1`: decoupled decay
/// `θ −= lr·wd·θ`, then `θ −= lr·m̂/(√v̂ + eps)`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    t: u64,
    hp: &AdamParams,
) -> Result<()> {
    if t == 0 {
        return Err(contract("adam iteration counter starts at 1"));
    }
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(contract("parameter, gradient and state counts differ"));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    let bc1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(hp.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        for j in 0..p.len() {
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
            if hp.weight_decay != 0.0 {
                p[j] -= hp.lr * hp.weight_decay * p[j];
            }
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p[j] -= hp.lr * mh / (libm::sqrt(vh) + hp.eps);
        }
    }
    Ok(())
}

/// Linear warmup over `⌈ratio·total⌉` steps, then linear decay to 0.
pub fn lr_at(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let warmup = libm::ceil(warmup_ratio * total_steps as f64) as usize;
    if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub train_loss: f64,
    /// Mean per-example stability term over the epoch.
    pub reg_term: f64,
    pub train_metric: f64,
    pub dev_metric: f64,
    /// Positions whose in-manifold neighborhood fell back to Gaussian noise.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub epochs: Vec<EpochMetrics>,
    pub final_train_metric: f64,
    pub final_dev_metric: f64,
    pub generalization_gap: f64,
    /// Seconds; filled in by callers with a clock.
    pub wall_time_s: f64,
    pub model_config: EncoderConfig,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub result: RunResult,
    pub model: EncoderModel,
}

/// Accuracy for classification, Pearson correlation for regression.
pub fn evaluate(model: &EncoderModel, data: &TextDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(contract("cannot evaluate on an empty dataset"));
    }
    let mut preds = Vec::with_capacity(data.len());
    let mut ys = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for ex in &data.examples {
        let (logits, _) = model.forward(&ex.tokens)?;
        match ex.target {
            Target::Class(c) => {
                let l = logits.data();
                let mut best = 0;
                for (i, v) in l.iter().enumerate() {
                    if *v > l[best] {
                        best = i;
                    }
                }
                if best == c {
                    correct += 1;
                }
            }
            Target::Value(y) => {
                preds.push(logits.data()[0]);
                ys.push(y);
            }
        }
    }
    if data.is_regression() {
        stats::pearson(&preds, &ys)
    } else {
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Adds one example's objective to `g`: clean pass, noise drawn from the
/// clean activation at the injection point, perturbed pass and the mode's
/// loss. Returns the objective node and the value of the stability term.
#[allow(clippy::too_many_arguments)]
pub fn push_example(
    g: &mut Graph,
    p: &BoundParams,
    model: &EncoderModel,
    tokens: &[usize],
    target: Target,
    reg_cfg: &RegularizerConfig,
    draw_noise: impl FnOnce(&Tensor, usize) -> Result<Tensor>,
    mut dropout: Option<&mut Rng>,
    dropout_in_perturbed: bool,
) -> Result<(Var, f64)> {
    let mode = reg_cfg.mode;
    let b = reg_cfg.injection_layer;
    let (clean_logits, clean) = model.forward_with_taps(g, p, tokens, None, dropout.as_deref_mut())?;
    let x = g.value(clean.layers[b - 1]).clone();
    let noise = draw_noise(&x, clean.valid_len)?;
    if mode == Mode::Ft {
        return Ok((assemble_objective(g, clean_logits, None, target, None, mode)?, 0.0));
    }
    let nv = g.constant(noise);
    let pdrop = if dropout_in_perturbed { dropout } else { None };
    let (pl, pt) = model.forward_perturbed(g, p, &clean, Injection { layer: b, noise: nv }, pdrop)?;
    let (reg, value) = if mode.uses_regularizer() {
        let (r, _) = lnsr_term(g, &clean, &pt, reg_cfg)?;
        (Some(r), g.value(r).item())
    } else {
        (None, 0.0)
    };
    Ok((assemble_objective(g, clean_logits, Some(pl), target, reg, mode)?, value))
}

/// Objective of a single example with fixed injection noise, and its
/// gradient with respect to every model parameter.
pub fn example_objective(
    model: &EncoderModel,
    tokens: &[usize],
    target: Target,
    noise: &Tensor,
    reg_cfg: &RegularizerConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let (obj, _) = push_example(
        &mut g,
        &p,
        model,
        tokens,
        target,
        reg_cfg,
        |_, _| Ok(noise.clone()),
        None,
        false,
    )?;
    g.backward(obj)?;
    Ok((g.value(obj).item(), p.grads(&g)))
}

/// Runs the regularized fine-tuning loop.
///
/// Per batch: for each example draw noise from the noise stream, run the
/// clean pass and the perturbed pass, form the mode's objective, average
/// over the batch and take one AdamW step. Noise is drawn in every mode so
/// that the noise stream advances identically across ablations.
pub fn run_training(
    model_cfg: &EncoderConfig,
    train: &TextDataset,
    dev: &TextDataset,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let model = EncoderModel::new(model_cfg.clone(), cfg.seed)?;
    train_model(model, train, dev, cfg)
}

/// As [`run_training`], starting from an existing model.
pub fn train_model(
    mut model: EncoderModel,
    train: &TextDataset,
    dev: &TextDataset,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let model_cfg = model.config().clone();
    cfg.validate(&model_cfg)?;
    if train.is_empty() {
        return Err(contract("empty training set"));
    }
    if train.num_outputs() != model_cfg.num_outputs {
        return Err(config("num_outputs", "does not match the dataset"));
    }
    let mut order_rng = rng::stream(cfg.seed, Stream::DataOrder);
    let mut noise_rng = rng::stream(cfg.seed, Stream::Noise);
    let mut drop_rng = rng::stream(cfg.seed, Stream::Dropout);
    let use_dropout = model_cfg.dropout_rate > 0.0;

    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut state = AdamState::new(model.params());
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        rng::shuffle(&mut order_rng, &mut order);
        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        let mut fallbacks = 0;
        for batch in order.chunks(cfg.batch_size) {
            let index = (cfg.noise.mode == NoiseMode::InManifold)
                .then(|| NeighborIndex::build(model.token_embeddings().clone()))
                .transpose()?;
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let mut objectives = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &train.examples[i];
                let clean_drop = use_dropout.then_some(&mut drop_rng);
                let (obj, reg) = {
                    let noise_rng = &mut noise_rng;
                    let fallbacks = &mut fallbacks;
                    let index = index.as_ref();
                    let draw = |x: &Tensor, valid: usize| -> Result<Tensor> {
                        match cfg.noise.mode {
                            NoiseMode::None => Ok(Tensor::zeros(x.shape())),
                            NoiseMode::Standard => injection_noise(&cfg.noise, x, valid, noise_rng),
                            NoiseMode::InManifold => {
                                let idx = index.expect("index built for in-manifold mode");
                                let s = inmanifold_injection_noise(&cfg.noise, idx, &ex.tokens, x, noise_rng)?;
                                *fallbacks += s.fallbacks;
                                Ok(s.noise)
                            }
                        }
                    };
                    let pdrop = cfg.dropout_in_perturbed;
                    push_example(
                        &mut g, &p, &model, &ex.tokens, ex.target, &cfg.reg, draw, clean_drop, pdrop,
                    )?
                };
                reg_sum += reg;
                objectives.push(obj);
            }
            let loss = batch_mean(&mut g, &objectives)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(step));
            }
            loss_sum += lv;
            g.backward(loss)?;
            let grads = p.grads(&g);
            let hp = AdamParams {
                lr: lr_at(step, total_steps, cfg.warmup_ratio, cfg.lr),
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.adam_eps,
                weight_decay: cfg.weight_decay,
            };
            step += 1;
            adam_step(model.params_mut(), &grads, &mut state, step as u64, &hp)?;
        }
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches_per_epoch as f64,
            reg_term: reg_sum / train.len() as f64,
            train_metric: evaluate(&model, train)?,
            dev_metric: evaluate(&model, dev)?,
            fallbacks,
        });
    }
    let last = epochs.last().expect("at least one epoch");
    let (final_train_metric, final_dev_metric) = (last.train_metric, last.dev_metric);
    Ok(Trained {
        result: RunResult {
            epochs,
            final_train_metric,
            final_dev_metric,
            generalization_gap: final_train_metric - final_dev_metric,
            wall_time_s: 0.0,
            model_config: model_cfg,
            config: cfg.clone(),
        },
        model,
    })
}

/// Per-seed results and their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeedReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
    pub dev: Summary,
    pub gap: Summary,
}

impl MultiSeedReport {
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<RunResult>) -> Result<Self> {
        let dev: Vec<f64> = runs.iter().map(|r| r.final_dev_metric).collect();
        let gap: Vec<f64> = runs.iter().map(|r| r.generalization_gap).collect();
        Ok(Self {
            seeds,
            dev: Summary::of(&dev)?,
            gap: Summary::of(&gap)?,
            runs,
        })
    }
}

/// Trains once per seed; `on_run` sees each completed run before the next
/// starts so callers can persist partial results.
pub fn multi_seed(
    model_cfg: &EncoderConfig,
    train: &TextDataset,
    dev: &TextDataset,
    template: &TrainConfig,
    seeds: &[u64],
    mut on_run: impl FnMut(&RunResult) -> Result<()>,
) -> Result<MultiSeedReport> {
    if seeds.len() < 2 {
        return Err(contract("multi-seed statistics need at least two seeds"));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..template.clone()
        };
        let run = run_training(model_cfg, train, dev, &cfg)?.result;
        on_run(&run)?;
        runs.push(run);
    }
    MultiSeedReport::from_runs(seeds.to_vec(), runs)
}
