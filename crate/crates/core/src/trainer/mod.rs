//! AdamW with warmup and cosine annealing, gradient accumulation and
//! global-norm clipping.

use crate::autodiff::Tape;
use crate::encoders::{stream_rng, streams, tokenize, TextEncoder};
use crate::losses::{contrastive_loss, negation_loss, paraphrase_loss, total_loss, LossComponents, LossReport, LossWeights};
use crate::model::{ModelConfig, Param, SemClipModel};
use crate::projection::BankConfig;
use crate::scene::{Caption, Scene, TripleRecord, Vocabulary};
use crate::Error;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub adam: AdamWConfig,
    pub accumulation_steps: usize,
    pub clip_max_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub bank: BankConfig,
    pub d: usize,
    pub d_tok: usize,
    pub noise_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            epochs: 200,
            peak_lr: 5e-5,
            warmup_steps: 50,
            adam: AdamWConfig::default(),
            accumulation_steps: 2,
            clip_max_norm: 1.0,
            batch_size: 64,
            seed: 42,
            weights: LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 },
            bank: model.bank,
            d: model.d,
            d_tok: model.d_tok,
            noise_sigma: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("peak_lr", self.peak_lr),
            ("clip_max_norm", self.clip_max_norm),
            ("beta1", self.adam.beta1),
            ("beta2", self.adam.beta2),
            ("eps", self.adam.eps),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Usage(format!("{name} must be positive, got {x}")));
            }
        }
        if self.adam.beta1 >= 1.0 || self.adam.beta2 >= 1.0 {
            return Err(Error::Usage("Adam betas must be below 1".into()));
        }
        if !(self.adam.weight_decay >= 0.0) {
            return Err(Error::Usage("weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.accumulation_steps == 0 {
            return Err(Error::Usage("epochs, batch_size and accumulation_steps must be at least 1".into()));
        }
        self.weights.check().map_err(|e| Error::Usage(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { d: self.d, d_tok: self.d_tok, seed: self.seed, bank: self.bank, noise_sigma: self.noise_sigma }
    }

    /// Optimizer updates in a run over `examples` training triples.
    pub fn total_steps(&self, examples: usize) -> usize {
        let micro = self.epochs * examples.div_ceil(self.batch_size);
        micro.div_ceil(self.accumulation_steps)
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// 0 at `total`. Steps past `total` stay at 0.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return if step >= total { 0.0 } else { peak };
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    if progress >= 1.0 {
        return 0.0;
    }
    peak * 0.5 * (1.0 + (PI * progress).cos())
}

/// First and second moments per parameter, created on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// One decoupled-weight-decay Adam update using each parameter's stored
/// gradient. Weight decay applies only where [`Param::decay`] is set.
pub fn adamw_step(params: &mut [Param<'_>], state: &mut OptimizerState, lr: f64, adam: &AdamWConfig) -> Result<(), Error> {
    for p in params.iter() {
        let g = p.tensor.grad().ok_or_else(|| Error::Contract(format!("{} has no gradient slot", p.name)))?;
        if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {} at element {bad}", p.name)));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.tensor.len()) {
        return Err(Error::Contract("optimizer state does not match the parameter list".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - adam.beta1.powi(t);
    let bc2 = 1.0 - adam.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.tensor.grad().expect("checked above").to_vec();
        let decay = if p.decay { 1.0 - lr * adam.weight_decay } else { 1.0 };
        for (i, x) in p.tensor.values_mut().iter_mut().enumerate() {
            *x *= decay;
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(())
}

/// Scales all gradients jointly so their global ℓ2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let total = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if total > max_norm {
        let s = max_norm / total;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    total
}

/// A training triple, tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub scene: Scene,
    pub original: Vec<usize>,
    pub paraphrase: Vec<usize>,
    pub negation: Vec<usize>,
}

impl Example {
    pub fn from_record(record: &TripleRecord, vocab: &Vocabulary) -> Result<Self, Error> {
        let tok = |s: &str| tokenize(&Caption::from(s), vocab).map_err(|e| Error::Data(format!("{}: {e}", record.scene_id)));
        Ok(Self {
            scene: record.scene,
            original: tok(&record.original)?,
            paraphrase: tok(&record.paraphrase)?,
            negation: tok(&record.negation)?,
        })
    }

    pub fn from_records(records: &[TripleRecord]) -> Result<Vec<Self>, Error> {
        let vocab = Vocabulary::standard();
        records.iter().map(|r| Self::from_record(r, &vocab)).collect()
    }
}

/// Forward and backward pass over one micro-batch. Gradients are added to
/// the model's parameter accumulators; nothing is updated.
pub fn accumulate_batch(
    model: &mut SemClipModel,
    batch: &[&Example],
    images: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<LossReport, Error> {
    if batch.is_empty() || images.len() != batch.len() {
        return Err(Error::Contract("micro-batch needs one image per example".into()));
    }
    let mut tape = Tape::new();
    let text = model.text.register(&mut tape);
    let v = model.bank.register(&mut tape);
    let theta = tape.leaf(&model.temperature.theta);
    let d = model.image.dim();
    let image_values: Vec<f64> = images.iter().flatten().copied().collect();
    let img = tape.constant(batch.len(), d, image_values)?;

    let bags = |f: fn(&Example) -> &Vec<usize>| batch.iter().map(|e| f(e).clone()).collect::<Vec<_>>();
    let t = TextEncoder::forward(&mut tape, &text, &bags(|e| &e.original))?;
    let t_plus = TextEncoder::forward(&mut tape, &text, &bags(|e| &e.paraphrase))?;
    let t_minus = TextEncoder::forward(&mut tape, &text, &bags(|e| &e.negation))?;

    let contrastive = contrastive_loss(&mut tape, img, t, theta)?;
    let p = model.bank.project(&mut tape, t, v)?;
    let p_plus = model.bank.project(&mut tape, t_plus, v)?;
    let p_minus = model.bank.project(&mut tape, t_minus, v)?;
    let paraphrase = paraphrase_loss(&mut tape, p, p_plus)?;
    let negation = negation_loss(&mut tape, p, p_minus)?;
    let (total, report) = total_loss(&mut tape, LossComponents { contrastive, paraphrase, negation }, weights)?;
    if !report.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {report:?}")));
    }

    let grads = tape.backward(total)?;
    let pairs = [
        (text.embedding, &mut model.text.embedding),
        (text.w1, &mut model.text.w1),
        (text.b1, &mut model.text.b1),
        (text.w2, &mut model.text.w2),
        (text.b2, &mut model.text.b2),
        (theta, &mut model.temperature.theta),
    ];
    for (var, tensor) in pairs {
        grads.accumulate_into(var, tensor)?;
    }
    if model.bank.learnable {
        grads.accumulate_into(v, &mut model.bank.v)?;
    }
    Ok(report)
}

/// One row of the loss log, written after each optimizer update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub contrastive: f64,
    pub paraphrase: f64,
    pub negation: f64,
    pub tau: f64,
}

pub const LOG_HEADER: &str = "step,lr,total,contrastive,paraphrase,negation,tau";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{},{},{},{}", r.step, r.lr, r.total, r.contrastive, r.paraphrase, r.negation, r.tau)
            .expect("writing to a String");
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The final model, or the last model with finite parameters if the run
    /// aborted.
    pub model: SemClipModel,
    pub log: Vec<LogRow>,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
}

/// Owns the model and optimizer for one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SemClipModel,
    pub optimizer: OptimizerState,
    total_steps: usize,
    pending: usize,
    sums: LossReport,
    tau_sum: f64,
    log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, total_steps: usize) -> Result<Self, Error> {
        config.validate()?;
        let model = SemClipModel::init(&config.model_config())?;
        Ok(Self::with_model(config, model, total_steps))
    }

    pub fn with_model(config: TrainConfig, mut model: SemClipModel, total_steps: usize) -> Self {
        model.zero_grad();
        Self {
            config,
            model,
            optimizer: OptimizerState::default(),
            total_steps,
            pending: 0,
            sums: LossReport::default(),
            tau_sum: 0.0,
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn into_parts(self) -> (SemClipModel, Vec<LogRow>) {
        (self.model, self.log)
    }

    /// Adds one micro-batch; updates once `accumulation_steps` have been
    /// seen. Returns whether an update happened.
    pub fn micro_batch(&mut self, batch: &[&Example], images: &[Vec<f64>]) -> Result<bool, Error> {
        let tau = self.model.temperature.tau();
        let report = accumulate_batch(&mut self.model, batch, images, &self.config.weights)?;
        self.pending += 1;
        self.sums.total += report.total;
        self.sums.contrastive += report.contrastive;
        self.sums.paraphrase += report.paraphrase;
        self.sums.negation += report.negation;
        self.tau_sum += tau;
        if self.pending == self.config.accumulation_steps {
            self.update()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Applies the accumulated gradients, averaged over the micro-batches
    /// seen since the last update. A no-op when nothing is pending.
    pub fn update(&mut self) -> Result<(), Error> {
        if self.pending == 0 {
            return Ok(());
        }
        let k = self.pending as f64;
        let step = self.optimizer.step as usize + 1;
        let lr = lr_schedule(step, self.config.warmup_steps, self.total_steps, self.config.peak_lr);
        let snapshot = (self.model.clone(), self.optimizer.clone());

        let mut params = self.model.params_mut();
        let mut grads: Vec<&mut [f64]> =
            params.iter_mut().map(|p| p.tensor.grad_mut().expect("trainable parameters carry gradients")).collect();
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x /= k));
        clip_gradients(&mut grads, self.config.clip_max_norm);
        let result = adamw_step(&mut params, &mut self.optimizer, lr, &self.config.adam);
        // Checkpoints store f32, so anything beyond its range counts as lost.
        let finite = params.iter().all(|p| p.tensor.values().iter().all(|x| x.abs() <= f32::MAX as f64));
        drop(params);
        if let Err(e) = result.and_then(|()| {
            if finite {
                Ok(())
            } else {
                Err(Error::Numeric(format!("parameters overflowed at step {step}")))
            }
        }) {
            (self.model, self.optimizer) = snapshot;
            self.model.zero_grad();
            self.pending = 0;
            return Err(e);
        }
        self.model.temperature.clamp();
        if self.model.bank.learnable {
            self.model.bank.reorthonormalize()?;
        }
        self.model.zero_grad();
        self.log.push(LogRow {
            step,
            lr,
            total: self.sums.total / k,
            contrastive: self.sums.contrastive / k,
            paraphrase: self.sums.paraphrase / k,
            negation: self.sums.negation / k,
            tau: self.tau_sum / k,
        });
        self.pending = 0;
        self.sums = LossReport::default();
        self.tau_sum = 0.0;
        Ok(())
    }
}

/// Full run over the training split with a seeded shuffle each epoch.
///
/// A numeric failure stops the run and returns the last good model along
/// with the reason; other errors propagate.
pub fn train(config: &TrainConfig, records: &[TripleRecord]) -> Result<TrainOutcome, Error> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let examples = Example::from_records(records)?;
    let total = config.total_steps(examples.len());
    let mut trainer = Trainer::new(config.clone(), total)?;
    let clean: Vec<Vec<f64>> = examples.iter().map(|e| trainer.model.image.encode(&e.scene)).collect();
    let mut shuffle = stream_rng(config.seed, streams::SHUFFLE);
    let mut noise = stream_rng(config.seed, streams::IMAGE_NOISE);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut failure = None;
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let images: Vec<Vec<f64>> = if trainer.model.image.noise_sigma > 0.0 {
                chunk.iter().map(|&i| trainer.model.image.encode_noisy(&examples[i].scene, &mut noise)).collect()
            } else {
                chunk.iter().map(|&i| clean[i].clone()).collect()
            };
            match trainer.micro_batch(&batch, &images) {
                Ok(_) => {}
                Err(e @ (Error::Numeric(_) | Error::DegenerateProjection { .. } | Error::Autodiff(_))) => {
                    failure = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
    }
    if failure.is_none() {
        if let Err(e) = trainer.update() {
            failure = Some(e.to_string());
        }
    }
    let (mut model, log) = trainer.into_parts();
    model.zero_grad();
    Ok(TrainOutcome { model, log, failure })
}

#[cfg(test)]
mod tests;
