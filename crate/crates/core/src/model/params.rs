use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Coarse grouping of parameter tensors, used to spread gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    TokenEmbedding,
    PositionEmbedding,
    TagEmbedding,
    AttentionProjection,
    AttentionBias,
    FeedForward,
    FeedForwardBias,
    LayerNorm,
    Head,
}

/// Read-only view of one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub layer: Option<usize>,
    pub kind: ParamKind,
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

/// Weights of one post-norm encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: Array2<f64>,
    pub query_bias: Array1<f64>,
    pub key: Array2<f64>,
    pub key_bias: Array1<f64>,
    pub value: Array2<f64>,
    pub value_bias: Array1<f64>,
    pub output: Array2<f64>,
    pub output_bias: Array1<f64>,
    pub attn_norm_scale: Array1<f64>,
    pub attn_norm_offset: Array1<f64>,
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array1<f64>,
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array1<f64>,
    pub ff_norm_scale: Array1<f64>,
    pub ff_norm_offset: Array1<f64>,
}

impl LayerParams {
    fn zeros(d: usize, ff: usize) -> Self {
        Self {
            query: Array2::zeros((d, d)),
            query_bias: Array1::zeros(d),
            key: Array2::zeros((d, d)),
            key_bias: Array1::zeros(d),
            value: Array2::zeros((d, d)),
            value_bias: Array1::zeros(d),
            output: Array2::zeros((d, d)),
            output_bias: Array1::zeros(d),
            attn_norm_scale: Array1::zeros(d),
            attn_norm_offset: Array1::zeros(d),
            ff_in: Array2::zeros((d, ff)),
            ff_in_bias: Array1::zeros(ff),
            ff_out: Array2::zeros((ff, d)),
            ff_out_bias: Array1::zeros(d),
            ff_norm_scale: Array1::zeros(d),
            ff_norm_offset: Array1::zeros(d),
        }
    }

    fn views<'a>(&'a self, layer: usize, out: &mut Vec<TensorView<'a>>) {
        use ParamKind::*;
        let entries: [(&'static str, ParamKind, &[usize], &[f64]); 16] = [
            ("query", AttentionProjection, self.query.shape(), slice(&self.query)),
            ("query_bias", AttentionBias, self.query_bias.shape(), slice1(&self.query_bias)),
            ("key", AttentionProjection, self.key.shape(), slice(&self.key)),
            ("key_bias", AttentionBias, self.key_bias.shape(), slice1(&self.key_bias)),
            ("value", AttentionProjection, self.value.shape(), slice(&self.value)),
            ("value_bias", AttentionBias, self.value_bias.shape(), slice1(&self.value_bias)),
            ("output", AttentionProjection, self.output.shape(), slice(&self.output)),
            ("output_bias", AttentionBias, self.output_bias.shape(), slice1(&self.output_bias)),
            ("attn_norm_scale", LayerNorm, self.attn_norm_scale.shape(), slice1(&self.attn_norm_scale)),
            ("attn_norm_offset", LayerNorm, self.attn_norm_offset.shape(), slice1(&self.attn_norm_offset)),
            ("ff_in", FeedForward, self.ff_in.shape(), slice(&self.ff_in)),
            ("ff_in_bias", FeedForwardBias, self.ff_in_bias.shape(), slice1(&self.ff_in_bias)),
            ("ff_out", FeedForward, self.ff_out.shape(), slice(&self.ff_out)),
            ("ff_out_bias", FeedForwardBias, self.ff_out_bias.shape(), slice1(&self.ff_out_bias)),
            ("ff_norm_scale", LayerNorm, self.ff_norm_scale.shape(), slice1(&self.ff_norm_scale)),
            ("ff_norm_offset", LayerNorm, self.ff_norm_offset.shape(), slice1(&self.ff_norm_offset)),
        ];
        out.extend(entries.into_iter().map(|(name, kind, shape, data)| TensorView {
            name,
            layer: Some(layer),
            kind,
            shape,
            data,
        }));
    }

    fn slices_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.extend([
            slice_mut(&mut self.query),
            slice1_mut(&mut self.query_bias),
            slice_mut(&mut self.key),
            slice1_mut(&mut self.key_bias),
            slice_mut(&mut self.value),
            slice1_mut(&mut self.value_bias),
            slice_mut(&mut self.output),
            slice1_mut(&mut self.output_bias),
            slice1_mut(&mut self.attn_norm_scale),
            slice1_mut(&mut self.attn_norm_offset),
            slice_mut(&mut self.ff_in),
            slice1_mut(&mut self.ff_in_bias),
            slice_mut(&mut self.ff_out),
            slice1_mut(&mut self.ff_out_bias),
            slice1_mut(&mut self.ff_norm_scale),
            slice1_mut(&mut self.ff_norm_offset),
        ]);
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

/// All learnable tensors of the encoder and classification head.
///
/// The declared order (embeddings, layers, head) is the checkpoint order and
/// the order of flat parameter indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub tag_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl ModelParameters {
    /// All-zero tensors shaped for `config`; also the gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.seq_len, d)),
            tag_embedding: Array2::zeros((config.tagset_size, d)),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(d, config.d_ff)).collect(),
            head_weight: Array2::zeros((d, 2)),
            head_bias: Array1::zeros(2),
        }
    }

    /// The expected shape of every tensor, in declared order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let d = config.d_model;
        let ff = config.d_ff;
        let mut shapes = vec![vec![config.vocab_size, d], vec![config.seq_len, d], vec![config.tagset_size, d]];
        for _ in 0..config.n_layers {
            shapes.extend([
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, ff],
                vec![ff],
                vec![ff, d],
                vec![d],
                vec![d],
                vec![d],
            ]);
        }
        shapes.extend([vec![d, 2], vec![2]]);
        shapes
    }

    pub fn views(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::with_capacity(5 + 16 * self.layers.len());
        out.push(TensorView {
            name: "token_embedding",
            layer: None,
            kind: ParamKind::TokenEmbedding,
            shape: self.token_embedding.shape(),
            data: slice(&self.token_embedding),
        });
        out.push(TensorView {
            name: "position_embedding",
            layer: None,
            kind: ParamKind::PositionEmbedding,
            shape: self.position_embedding.shape(),
            data: slice(&self.position_embedding),
        });
        out.push(TensorView {
            name: "tag_embedding",
            layer: None,
            kind: ParamKind::TagEmbedding,
            shape: self.tag_embedding.shape(),
            data: slice(&self.tag_embedding),
        });
        for (i, layer) in self.layers.iter().enumerate() {
            layer.views(i, &mut out);
        }
        out.push(TensorView {
            name: "head_weight",
            layer: None,
            kind: ParamKind::Head,
            shape: self.head_weight.shape(),
            data: slice(&self.head_weight),
        });
        out.push(TensorView {
            name: "head_bias",
            layer: None,
            kind: ParamKind::Head,
            shape: self.head_bias.shape(),
            data: slice1(&self.head_bias),
        });
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(5 + 16 * self.layers.len());
        out.push(slice_mut(&mut self.token_embedding));
        out.push(slice_mut(&mut self.position_embedding));
        out.push(slice_mut(&mut self.tag_embedding));
        for layer in &mut self.layers {
            layer.slices_mut(&mut out);
        }
        out.push(slice_mut(&mut self.head_weight));
        out.push(slice1_mut(&mut self.head_bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.views().iter().map(|v| v.data.len()).sum()
    }

    /// Maps a flat index to (tensor position, offset within the tensor).
    fn locate(&self, mut index: usize) -> Option<(usize, usize)> {
        for (t, view) in self.views().iter().enumerate() {
            if index < view.data.len() {
                return Some((t, index));
            }
            index -= view.data.len();
        }
        None
    }

    pub fn get_flat(&self, index: usize) -> Option<f64> {
        let (t, offset) = self.locate(index)?;
        Some(self.views()[t].data[offset])
    }

    pub fn set_flat(&mut self, index: usize, value: f64) -> Option<()> {
        let (t, offset) = self.locate(index)?;
        self.slices_mut()[t][offset] = value;
        Some(())
    }

    /// Kind of the tensor holding flat index `index`.
    pub fn kind_of(&self, index: usize) -> Option<ParamKind> {
        let (t, _) = self.locate(index)?;
        Some(self.views()[t].kind)
    }

    /// First flat index of every tensor, in declared order.
    pub fn tensor_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::new();
        let mut acc = 0;
        for view in self.views() {
            offsets.push(acc);
            acc += view.data.len();
        }
        offsets
    }

    pub fn all_finite(&self) -> bool {
        self.views().iter().all(|v| v.data.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &ModelParameters, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.views()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    /// Checks tensor shapes against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::expected_shapes(config);
        let views = self.views();
        if views.len() != expected.len() {
            return Err(Error::Config(format!(
                "parameters hold {} tensors, config requires {}",
                views.len(),
                expected.len()
            )));
        }
        for (view, shape) in views.iter().zip(&expected) {
            if view.shape != shape.as_slice() {
                return Err(Error::Config(format!(
                    "tensor {} has shape {:?}, config requires {shape:?}",
                    view.name, view.shape
                )));
            }
        }
        Ok(())
    }

    /// Sets the head to uniform random values in `[-scale, scale]`.
    pub fn randomize_head(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.head_weight.mapv_inplace(|_| rng.random_range(-scale..=scale));
        self.head_bias.mapv_inplace(|_| rng.random_range(-scale..=scale));
    }
}

/// Seeded initialization.
///
/// Embeddings and weight matrices are drawn from `U(-a, a)` with
/// `a = 1/sqrt(d_model)`; biases and norm offsets start at zero, norm scales
/// at one, and the classification head at zero.
pub fn init_params(config: &ModelConfig) -> Result<ModelParameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / (config.d_model as f64).sqrt();
    let mut fill = |a: &mut Array2<f64>| a.mapv_inplace(|_| rng.random_range(-bound..bound));

    let mut params = ModelParameters::zeros(config);
    fill(&mut params.token_embedding);
    fill(&mut params.position_embedding);
    fill(&mut params.tag_embedding);
    for layer in &mut params.layers {
        fill(&mut layer.query);
        fill(&mut layer.key);
        fill(&mut layer.value);
        fill(&mut layer.output);
        fill(&mut layer.ff_in);
        fill(&mut layer.ff_out);
        layer.attn_norm_scale.fill(1.0);
        layer.ff_norm_scale.fill(1.0);
    }
    Ok(params)
}
