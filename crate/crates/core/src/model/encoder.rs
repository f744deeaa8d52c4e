//! Forward and backward passes of the post-norm transformer encoder.
//!
//! Each block computes
//! `Y1 = LN(X + MHA(X))` and `Y2 = LN(Y1 + W2·gelu(W1·Y1 + b1) + b2)`.
//! Attention scores for PAD keys receive an additive `-inf` before the row
//! softmax, so padded positions never contribute to real ones. The final
//! hidden state at position 0 (`[CLS]`) is the sentence embedding that the
//! linear head maps to two logits.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::config::ModelConfig;
use super::params::{LayerParams, ModelParameters};
use crate::error::{Error, Result};
use crate::syntax::EnrichmentMode;
use crate::tokenizer::TokenSequence;

const NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, scale: &Array1<f64>, offset: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + NORM_EPS).sqrt();
        let k = *inv;
        row.mapv_inplace(|v| v * k);
    }
    let out = &normalized * scale + offset;
    (out, NormCache { normalized, inv_std })
}

/// Returns the input gradient; accumulates scale/offset gradients.
fn layer_norm_backward(
    grad_out: &Array2<f64>,
    cache: &NormCache,
    scale: &Array1<f64>,
    grad_scale: &mut Array1<f64>,
    grad_offset: &mut Array1<f64>,
) -> Array2<f64> {
    *grad_scale += &(grad_out * &cache.normalized).sum_axis(Axis(0));
    *grad_offset += &grad_out.sum_axis(Axis(0));
    let d = grad_out.ncols() as f64;
    let grad_norm = grad_out * scale;
    let mut grad_in = Array2::zeros(grad_out.raw_dim());
    for i in 0..grad_out.nrows() {
        let g = grad_norm.row(i);
        let xhat = cache.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xhat) / d;
        let inv = cache.inv_std[i];
        grad_in
            .row_mut(i)
            .assign(&((&g - mean_g - &(&xhat * mean_gx)) * inv));
    }
    grad_in
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Row softmax over the scores with `-inf` at masked keys.
fn masked_softmax_rows(scores: &mut Array2<f64>, key_mask: &[u8]) {
    for mut row in scores.rows_mut() {
        for (v, &m) in row.iter_mut().zip(key_mask) {
            if m == 0 {
                *v = f64::NEG_INFINITY;
            }
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_norm: NormCache,
    mid: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_norm: NormCache,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    dep_ids: Vec<u8>,
    layers: Vec<LayerCache>,
    cls: Array1<f64>,
}

/// Output of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: [f64; 2],
    pub cls_embedding: Array1<f64>,
}

fn check_input(config: &ModelConfig, seq: &TokenSequence) -> Result<()> {
    if seq.len() != config.seq_len {
        return Err(Error::Config(format!(
            "sequence length {} does not match model length {}",
            seq.len(),
            config.seq_len
        )));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::Config(format!("token id {id} exceeds vocabulary size {}", config.vocab_size)));
    }
    if let Some(&tag) = seq.dep_ids.iter().find(|&&t| t as usize >= config.tagset_size) {
        return Err(Error::Config(format!("tag id {tag} exceeds tagset size {}", config.tagset_size)));
    }
    // Only the mask decides what is attended to, so whatever sits at masked
    // positions is accepted as long as it is in range.
    if seq.mask.len() != seq.len() || seq.dep_ids.len() != seq.len() {
        return Err(Error::Corruption("ids, mask and dep_ids differ in length".into()));
    }
    if seq.mask.first() != Some(&1) || seq.mask.iter().any(|&m| m > 1) {
        return Err(Error::Corruption("mask must be binary and start with an active [CLS]".into()));
    }
    Ok(())
}

fn ensure_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values in {what}")))
    }
}

fn layer_forward(
    layer: &LayerParams,
    x: Array2<f64>,
    mask: &[u8],
    n_heads: usize,
) -> (Array2<f64>, LayerCache) {
    let n = x.nrows();
    let d = x.ncols();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let q = affine(&x, &layer.query, &layer.query_bias);
    let k = affine(&x, &layer.key, &layer.key_bias);
    let v = affine(&x, &layer.value, &layer.value_bias);
    let mut context = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        masked_softmax_rows(&mut scores, mask);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let attended = affine(&context, &layer.output, &layer.output_bias);
    let (mid, attn_norm) = layer_norm(&(&x + &attended), &layer.attn_norm_scale, &layer.attn_norm_offset);

    let ff_pre = affine(&mid, &layer.ff_in, &layer.ff_in_bias);
    let ff_act = ff_pre.mapv(gelu);
    let ff_out = affine(&ff_act, &layer.ff_out, &layer.ff_out_bias);
    let (out, ff_norm) = layer_norm(&(&mid + &ff_out), &layer.ff_norm_scale, &layer.ff_norm_offset);

    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        context,
        attn_norm,
        mid,
        ff_pre,
        ff_act,
        ff_norm,
    };
    (out, cache)
}

/// Runs the encoder and head, keeping the cache needed by [`backward`].
pub fn forward_with_cache(
    params: &ModelParameters,
    config: &ModelConfig,
    seq: &TokenSequence,
) -> Result<(ForwardOutput, ForwardCache)> {
    check_input(config, seq)?;
    let n = seq.len();
    let d = config.d_model;
    let mut x = Array2::zeros((n, d));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row.assign(&params.token_embedding.row(seq.ids[i] as usize));
        row += &params.position_embedding.row(i);
        if config.mode == EnrichmentMode::SumEmbedding {
            row += &params.tag_embedding.row(seq.dep_ids[i] as usize);
        }
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(layer, x, &seq.mask, config.n_heads);
        ensure_finite(&out, &format!("encoder layer {l}"))?;
        layers.push(cache);
        x = out;
    }

    let cls = x.row(0).to_owned();
    let raw = cls.dot(&params.head_weight) + &params.head_bias;
    let logits = [raw[0], raw[1]];
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let cache = ForwardCache {
        ids: seq.ids.clone(),
        dep_ids: seq.dep_ids.clone(),
        layers,
        cls: cls.clone(),
    };
    Ok((
        ForwardOutput {
            logits,
            cls_embedding: cls,
        },
        cache,
    ))
}

/// Logits and `[CLS]` embedding for one sequence.
pub fn forward(params: &ModelParameters, config: &ModelConfig, seq: &TokenSequence) -> Result<ForwardOutput> {
    forward_with_cache(params, config, seq).map(|(out, _)| out)
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

fn accumulate_affine(
    input: &Array2<f64>,
    grad_out: &Array2<f64>,
    grad_w: &mut Array2<f64>,
    grad_b: &mut Array1<f64>,
) {
    *grad_w += &input.t().dot(grad_out);
    *grad_b += &grad_out.sum_axis(Axis(0));
}

fn layer_backward(
    layer: &LayerParams,
    cache: &LayerCache,
    grad_out: Array2<f64>,
    grads: &mut LayerParams,
    n_heads: usize,
) -> Array2<f64> {
    let d = cache.input.ncols();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();

    // feed-forward sublayer
    let grad_res2 = layer_norm_backward(
        &grad_out,
        &cache.ff_norm,
        &layer.ff_norm_scale,
        &mut grads.ff_norm_scale,
        &mut grads.ff_norm_offset,
    );
    accumulate_affine(&cache.ff_act, &grad_res2, &mut grads.ff_out, &mut grads.ff_out_bias);
    let mut grad_pre = grad_res2.dot(&layer.ff_out.t());
    grad_pre.zip_mut_with(&cache.ff_pre, |g, &z| *g *= gelu_grad(z));
    accumulate_affine(&cache.mid, &grad_pre, &mut grads.ff_in, &mut grads.ff_in_bias);
    let grad_mid = grad_res2 + grad_pre.dot(&layer.ff_in.t());

    // attention sublayer
    let grad_res1 = layer_norm_backward(
        &grad_mid,
        &cache.attn_norm,
        &layer.attn_norm_scale,
        &mut grads.attn_norm_scale,
        &mut grads.attn_norm_offset,
    );
    accumulate_affine(&cache.context, &grad_res1, &mut grads.output, &mut grads.output_bias);
    let grad_context = grad_res1.dot(&layer.output.t());

    let mut grad_q = Array2::zeros(cache.q.raw_dim());
    let mut grad_k = Array2::zeros(cache.k.raw_dim());
    let mut grad_v = Array2::zeros(cache.v.raw_dim());
    for (h, probs) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let grad_ctx_h: ArrayView2<f64> = grad_context.slice(cols);
        let grad_probs = grad_ctx_h.dot(&cache.v.slice(cols).t());
        grad_v.slice_mut(cols).assign(&probs.t().dot(&grad_ctx_h));
        let mut grad_scores = probs * &grad_probs;
        let row_dots = grad_scores.sum_axis(Axis(1));
        for (mut row, (p_row, dot)) in grad_scores.rows_mut().into_iter().zip(probs.rows().into_iter().zip(row_dots)) {
            row.scaled_add(-dot, &p_row);
        }
        grad_scores *= scale;
        grad_q.slice_mut(cols).assign(&grad_scores.dot(&cache.k.slice(cols)));
        grad_k.slice_mut(cols).assign(&grad_scores.t().dot(&cache.q.slice(cols)));
    }
    accumulate_affine(&cache.input, &grad_q, &mut grads.query, &mut grads.query_bias);
    accumulate_affine(&cache.input, &grad_k, &mut grads.key, &mut grads.key_bias);
    accumulate_affine(&cache.input, &grad_v, &mut grads.value, &mut grads.value_bias);

    grad_res1
        + grad_q.dot(&layer.query.t())
        + grad_k.dot(&layer.key.t())
        + grad_v.dot(&layer.value.t())
}

/// Accumulates into `grads` the gradient of a scalar loss given
/// `grad_logits = dLoss/dLogits`.
pub fn backward(
    params: &ModelParameters,
    config: &ModelConfig,
    cache: &ForwardCache,
    grad_logits: [f64; 2],
    grads: &mut ModelParameters,
) {
    let grad_logits = Array1::from(grad_logits.to_vec());
    grads.head_weight += &outer(cache.cls.view(), grad_logits.view());
    grads.head_bias += &grad_logits;

    let n = cache.ids.len();
    let mut grad = Array2::zeros((n, config.d_model));
    grad.row_mut(0).assign(&params.head_weight.dot(&grad_logits));

    for (l, layer) in params.layers.iter().enumerate().rev() {
        grad = layer_backward(layer, &cache.layers[l], grad, &mut grads.layers[l], config.n_heads);
    }

    for (i, row) in grad.rows().into_iter().enumerate() {
        let mut tok = grads.token_embedding.row_mut(cache.ids[i] as usize);
        tok += &row;
        let mut pos = grads.position_embedding.row_mut(i);
        pos += &row;
        if config.mode == EnrichmentMode::SumEmbedding {
            let mut tag = grads.tag_embedding.row_mut(cache.dep_ids[i] as usize);
            tag += &row;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;
    use crate::tokenizer::TokenSequence;

    fn seq(content: &[u32], len: usize) -> TokenSequence {
        TokenSequence::frame(content, len).unwrap()
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let cfg = ModelConfig::tiny(20);
        let p = init_params(&cfg).unwrap();
        let out = forward(&p, &cfg, &seq(&[5, 6, 7], 8)).unwrap();
        assert_eq!(out.logits, [0.0, 0.0]);
        assert_eq!(out.cls_embedding.len(), cfg.d_model);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::tiny(20);
        let mut p = init_params(&cfg).unwrap();
        p.randomize_head(3, 0.5);
        let s = seq(&[5, 6, 7], 8);
        let a = forward(&p, &cfg, &s).unwrap();
        let b = forward(&p, &cfg, &s).unwrap();
        assert_eq!(a.logits[0].to_bits(), b.logits[0].to_bits());
        assert_eq!(a.logits[1].to_bits(), b.logits[1].to_bits());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let cfg = ModelConfig::tiny(20);
        let p = init_params(&cfg).unwrap();
        assert!(matches!(forward(&p, &cfg, &seq(&[5], 9)), Err(Error::Config(_))));
        assert!(matches!(forward(&p, &cfg, &seq(&[25], 8)), Err(Error::Config(_))));
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut scores = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 50.0, 0.0, 0.0, 0.0]).unwrap();
        masked_softmax_rows(&mut scores, &[1, 1, 0]);
        assert_eq!(scores[[0, 2]], 0.0);
        assert!((scores.row(1).sum() - 1.0).abs() < 1e-15);
        assert!((scores[[1, 0]] - 0.5).abs() < 1e-15);
    }
}
