use crate::error::{Error, Result};
use crate::syntax::{DepTag, EnrichmentMode};

/// Shape and seed of an encoder classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub tagset_size: usize,
    pub seed: u64,
    pub mode: EnrichmentMode,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, 4 heads, width 64, feed-forward 256,
    /// sequence length 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            seq_len: 64,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            vocab_size,
            tagset_size: DepTag::COUNT,
            seed: 42,
            mode: EnrichmentMode::SumEmbedding,
        }
    }

    /// The configuration used for gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            seq_len: 8,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            ..Self::desk(vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("tagset_size", self.tagset_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.seq_len < crate::tokenizer::MIN_SEQ_LEN {
            return Err(Error::Config(format!("seq_len {} is below 3", self.seq_len)));
        }
        if self.tagset_size < DepTag::COUNT {
            return Err(Error::Config(format!(
                "tagset_size {} cannot hold the {} DEP tags",
                self.tagset_size,
                DepTag::COUNT
            )));
        }
        Ok(())
    }
}
