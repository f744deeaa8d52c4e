//! Desk-scale transformer encoder with a softmax classification head.

pub mod checkpoint;
mod config;
mod encoder;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use encoder::{backward, forward, forward_with_cache, ForwardCache, ForwardOutput};
pub use params::{init_params, LayerParams, ModelParameters, ParamKind, TensorView};
pub use train::{
    example_gradient, example_loss, gradient_check, train, TrainOptions, TrainOutcome, ADAM_BETA1, ADAM_BETA2,
    ADAM_EPS,
};

use crate::error::{Error, Result};
use crate::evaluation::LabeledDataset;
use crate::prediction::{Label, Prediction};
use crate::syntax::{self, DepTag, EnrichmentMode, TaggedSentence};
use crate::tokenizer::{self, TokenSequence, Vocabulary};

/// Probability floor used by [`cross_entropy`].
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Two-class softmax with max subtraction.
pub fn softmax(logits: [f64; 2]) -> Result<[f64; 2]> {
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    let sum = e0 + e1;
    Ok([e0 / sum, e1 / sum])
}

/// Negative log-likelihood of `label`, with the probability clamped at
/// [`PROBABILITY_FLOOR`].
pub fn cross_entropy(probabilities: [f64; 2], label: Label) -> f64 {
    -probabilities[label.index()].max(PROBABILITY_FLOOR).ln()
}

/// Configuration, weights and vocabulary of a trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub vocab: Vocabulary,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParameters, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, config expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        if config.mode == EnrichmentMode::InterleaveTokens {
            if let Some(tag) = DepTag::LINGUISTIC.iter().find(|&&t| vocab.dep_marker_id(t).is_none()) {
                return Err(Error::Config(format!("interleave mode needs the {tag} marker in the vocabulary")));
            }
        }
        Ok(Self { config, params, vocab })
    }

    /// Freshly initialized model over `vocab`.
    pub fn initialize(mut config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.vocab_size = vocab.len();
        let params = init_params(&config)?;
        Self::new(config, params, vocab)
    }

    /// Tokenizes, tags and aligns `text` into a model input. `tags`, when
    /// given, holds one gold tag per whitespace-separated token.
    pub fn prepare(&self, text: &str, tags: Option<&[DepTag]>) -> Result<TokenSequence> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("text is empty".into()));
        }
        let tagged = match tags {
            Some(tags) => TaggedSentence::from_whitespace_tags(text, tags)?,
            None => syntax::annotate_dep_tags(&tokenizer::pre_tokenize(text))?,
        };
        let seq = tokenizer::encode_words(tagged.tokens(), &self.vocab, self.config.seq_len)?;
        let aligned = syntax::align_tags_to_subwords(&tagged, &seq, &self.vocab)?;
        match self.config.mode {
            EnrichmentMode::SumEmbedding => Ok(aligned),
            EnrichmentMode::InterleaveTokens => syntax::interleave_tags(&aligned, &self.vocab),
        }
    }

    pub fn predict_sequence(&self, seq: &TokenSequence) -> Result<Prediction> {
        let out = forward(&self.params, &self.config, seq)?;
        Ok(Prediction::from_probabilities(softmax(out.logits)?))
    }

    /// Classifies the whole text as one sequence.
    pub fn classify(&self, text: &str) -> Result<Prediction> {
        let seq = self.prepare(text, None)?;
        self.predict_sequence(&seq)
    }

    /// Prepares every example of `dataset`, using gold tags where present.
    pub fn prepare_dataset(&self, dataset: &LabeledDataset) -> Result<Vec<(TokenSequence, Label)>> {
        dataset
            .examples()
            .iter()
            .map(|ex| Ok((self.prepare(&ex.text, ex.tags.as_deref())?, ex.label)))
            .collect()
    }

    /// Trains in place and returns the per-epoch mean loss.
    pub fn fit(&mut self, dataset: &LabeledDataset, options: &TrainOptions) -> Result<Vec<f64>> {
        let examples = self.prepare_dataset(dataset)?;
        let outcome = train(self.params.clone(), &self.config, &examples, options)?;
        self.params = outcome.params;
        Ok(outcome.loss_history)
    }
}

/// Runs the full pipeline for one text.
pub fn classify(model: &Model, text: &str) -> Result<Prediction> {
    model.classify(text)
}
