use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ModelConfig;
use super::encoder::{backward, forward_with_cache};
use super::params::ModelParameters;
use super::{cross_entropy, softmax};
use crate::error::{Error, Result};
use crate::prediction::Label;
use crate::tokenizer::TokenSequence;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Stream for the epoch shuffles, kept apart from the init stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    /// Mean per-example loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Adaptive-moment optimizer state.
struct Adam {
    first: ModelParameters,
    second: ModelParameters,
    step: i32,
    learning_rate: f64,
}

impl Adam {
    fn new(config: &ModelConfig, learning_rate: f64) -> Self {
        Self {
            first: ModelParameters::zeros(config),
            second: ModelParameters::zeros(config),
            step: 0,
            learning_rate,
        }
    }

    fn update(&mut self, params: &mut ModelParameters, grads: &ModelParameters) {
        self.step += 1;
        let correct1 = 1.0 - ADAM_BETA1.powi(self.step);
        let correct2 = 1.0 - ADAM_BETA2.powi(self.step);
        let lr = self.learning_rate;
        let tensors = params
            .slices_mut()
            .into_iter()
            .zip(grads.views())
            .zip(self.first.slices_mut().into_iter().zip(self.second.slices_mut()));
        for ((theta, grad), (m, v)) in tensors {
            for i in 0..theta.len() {
                let g = grad.data[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Loss of one example and the gradient of that loss.
pub fn example_gradient(
    params: &ModelParameters,
    config: &ModelConfig,
    seq: &TokenSequence,
    label: Label,
) -> Result<(f64, ModelParameters)> {
    let (out, cache) = forward_with_cache(params, config, seq)?;
    let probs = softmax(out.logits)?;
    let loss = cross_entropy(probs, label);
    let mut grad_logits = probs;
    grad_logits[label.index()] -= 1.0;
    let mut grads = ModelParameters::zeros(config);
    backward(params, config, &cache, grad_logits, &mut grads);
    Ok((loss, grads))
}

/// Loss of one example without gradients.
pub fn example_loss(params: &ModelParameters, config: &ModelConfig, seq: &TokenSequence, label: Label) -> Result<f64> {
    let out = super::encoder::forward(params, config, seq)?;
    Ok(cross_entropy(softmax(out.logits)?, label))
}

/// Mini-batch Adam on prepared sequences.
///
/// Example order is reshuffled each epoch from a generator seeded by
/// `config.seed`. Per-example gradients within a batch are computed in
/// parallel and summed in batch order, so the run is bit-reproducible.
pub fn train(
    mut params: ModelParameters,
    config: &ModelConfig,
    examples: &[(TokenSequence, Label)],
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let causal = examples.iter().filter(|(_, l)| *l == Label::Causal).count();
    if causal == 0 || causal == examples.len() {
        return Err(Error::InvalidInput("training set must contain both labels".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if !(options.learning_rate.is_finite() && options.learning_rate > 0.0) {
        return Err(Error::InvalidInput(format!("learning rate {} is not positive", options.learning_rate)));
    }
    params.check_shapes(config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut optimizer = Adam::new(config, options.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(options.epochs);

    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(options.batch_size).enumerate() {
            let results: Vec<Result<(f64, ModelParameters)>> = batch
                .par_iter()
                .map(|&i| example_gradient(&params, config, &examples[i].0, examples[i].1))
                .collect();
            let mut total = ModelParameters::zeros(config);
            let mut batch_loss = 0.0;
            for result in results {
                let (loss, grads) = result.map_err(|e| match e {
                    Error::Numeric(_) => Error::NonFiniteLoss { epoch, batch: batch_index },
                    other => other,
                })?;
                batch_loss += loss;
                total.add_scaled(&grads, 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_index });
            }
            let inv = 1.0 / batch.len() as f64;
            for slice in total.slices_mut() {
                slice.iter_mut().for_each(|g| *g *= inv);
            }
            optimizer.update(&mut params, &total);
            if !params.all_finite() {
                return Err(Error::Numeric(format!(
                    "parameters became non-finite after batch {batch_index} of epoch {epoch}"
                )));
            }
            epoch_loss += batch_loss;
        }
        loss_history.push(epoch_loss / examples.len() as f64);
    }
    Ok(TrainOutcome { params, loss_history })
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences over the selected flat parameter indices.
///
/// The relative error of one index is
/// `|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`.
pub fn gradient_check(
    params: &ModelParameters,
    config: &ModelConfig,
    seq: &TokenSequence,
    label: Label,
    step: f64,
    indices: &[usize],
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step {step} must be positive")));
    }
    if indices.is_empty() {
        return Err(Error::InvalidInput("no parameter indices selected".into()));
    }
    let total = params.num_scalars();
    if let Some(&bad) = indices.iter().find(|&&i| i >= total) {
        return Err(Error::InvalidInput(format!("index {bad} exceeds parameter count {total}")));
    }

    let (_, analytic) = example_gradient(params, config, seq, label)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for &index in indices {
        let g_analytic = analytic.get_flat(index).expect("index checked");
        let original = params.get_flat(index).expect("index checked");
        probe.set_flat(index, original + step);
        let plus = example_loss(&probe, config, seq, label)?;
        probe.set_flat(index, original - step);
        let minus = example_loss(&probe, config, seq, label)?;
        probe.set_flat(index, original);
        let g_numeric = (plus - minus) / (2.0 * step);
        let rel = (g_analytic - g_numeric).abs() / (g_analytic.abs() + g_numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
