use std::collections::HashSet;

use cira_core::model::{gradient_check, init_params, Model, ModelConfig, ModelParameters, ParamKind};
use cira_core::syntax::EnrichmentMode;
use cira_core::tokenizer::build_vocab;
use cira_core::{Error, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model(mode: EnrichmentMode) -> Model {
    let vocab = build_vocab(&["if the user enters a password the app shall lock"], 1, 1000).unwrap();
    let config = ModelConfig {
        mode,
        ..ModelConfig::tiny(vocab.len())
    };
    Model::initialize(config, vocab).unwrap()
}

/// Picks `per_tensor` offsets from every tensor; embedding rows are taken
/// from ids present in the sequence.
fn spread_indices(params: &ModelParameters, used_tokens: &[u32], used_tags: &[u8], per_tensor: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let offsets = params.tensor_offsets();
    for (view, base) in params.views().iter().zip(offsets) {
        let cols = *view.shape.last().unwrap();
        for _ in 0..per_tensor {
            let offset = match view.kind {
                ParamKind::TokenEmbedding => {
                    let row = used_tokens[rng.random_range(0..used_tokens.len())] as usize;
                    row * cols + rng.random_range(0..cols)
                }
                ParamKind::TagEmbedding => {
                    let row = used_tags[rng.random_range(0..used_tags.len())] as usize;
                    row * cols + rng.random_range(0..cols)
                }
                _ => rng.random_range(0..view.data.len()),
            };
            out.push(base + offset);
        }
    }
    out
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for mode in [EnrichmentMode::SumEmbedding, EnrichmentMode::InterleaveTokens] {
        let mut model = tiny_model(mode);
        model.params.randomize_head(11, 0.5);
        let seq = model.prepare("if the user enters", None).unwrap();
        let tokens: Vec<u32> = seq.ids.clone();
        let tags: Vec<u8> = seq.dep_ids.clone();
        let indices = spread_indices(&model.params, &tokens, &tags, 3, 5);
        let kinds: HashSet<ParamKind> = indices.iter().map(|&i| model.params.kind_of(i).unwrap()).collect();
        assert!(indices.len() >= 20);
        assert_eq!(kinds.len(), 9, "all tensor kinds covered");
        for label in [Label::Causal, Label::NonCausal] {
            let err = gradient_check(&model.params, &model.config, &seq, label, 1e-5, &indices).unwrap();
            assert!(err < 1e-4, "{mode} {label}: max relative error {err:e}");
        }
    }
}

#[test]
fn zero_head_gradient_on_head_weights() {
    let model = tiny_model(EnrichmentMode::SumEmbedding);
    let seq = model.prepare("the app shall lock", None).unwrap();
    let head_start = *model.params.tensor_offsets().iter().rev().nth(1).unwrap();
    let indices: Vec<usize> = (head_start..head_start + 2 * model.config.d_model + 2).collect();
    let err = gradient_check(&model.params, &model.config, &seq, Label::Causal, 1e-5, &indices).unwrap();
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn multi_layer_gradients() {
    let vocab = build_vocab(&["when the server sends a token the client shall store it"], 1, 1000).unwrap();
    let config = ModelConfig {
        seq_len: 12,
        d_model: 12,
        n_heads: 3,
        n_layers: 2,
        d_ff: 20,
        ..ModelConfig::tiny(vocab.len())
    };
    let mut model = Model::initialize(config, vocab).unwrap();
    model.params.randomize_head(2, 0.7);
    let seq = model.prepare("when the server sends a token", None).unwrap();
    let indices = spread_indices(&model.params, &seq.ids, &seq.dep_ids, 2, 17);
    let err = gradient_check(&model.params, &model.config, &seq, Label::NonCausal, 1e-5, &indices).unwrap();
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn invalid_step_rejected() {
    let model = tiny_model(EnrichmentMode::SumEmbedding);
    let seq = model.prepare("the app", None).unwrap();
    let err = gradient_check(&model.params, &model.config, &seq, Label::Causal, 0.0, &[0]).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
    assert!(gradient_check(&model.params, &model.config, &seq, Label::Causal, 1e-5, &[usize::MAX]).is_err());
}

#[test]
fn init_params_respects_seed() {
    let cfg = ModelConfig::tiny(30);
    assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
}
