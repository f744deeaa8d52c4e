use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary causality label. Numeric values follow the dataset convention
/// (0 = non-causal, 1 = causal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    NonCausal,
    Causal,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::NonCausal => 0,
            Label::Causal => 1,
        }
    }

    pub fn from_index(index: u64) -> Option<Label> {
        match index {
            0 => Some(Label::NonCausal),
            1 => Some(Label::Causal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonCausal => "non-causal",
            Label::Causal => "causal",
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::NonCausal => Label::Causal,
            Label::Causal => Label::NonCausal,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" | "1" => Ok(Label::Causal),
            "non-causal" | "0" => Ok(Label::NonCausal),
            other => Err(Error::InvalidInput(format!("unknown label {other:?}"))),
        }
    }
}

/// A classification outcome. `probabilities` is indexed by [`Label::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub confidence: f64,
    pub probabilities: [f64; 2],
}

impl Prediction {
    /// Derives label and confidence from class probabilities. A tie resolves
    /// to non-causal.
    pub fn from_probabilities(probabilities: [f64; 2]) -> Self {
        let label = if probabilities[1] > probabilities[0] {
            Label::Causal
        } else {
            Label::NonCausal
        };
        Self {
            label,
            confidence: probabilities[label.index()],
            probabilities,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_is_non_causal() {
        let p = Prediction::from_probabilities([0.5, 0.5]);
        assert_eq!(p.label, Label::NonCausal);
        assert_eq!(p.confidence, 0.5);
    }

    #[test]
    fn confidence_is_max_probability() {
        let p = Prediction::from_probabilities([0.2, 0.8]);
        assert_eq!(p.label, Label::Causal);
        assert_eq!(p.confidence, 0.8);
    }

    #[test]
    fn label_parsing() {
        assert_eq!("causal".parse::<Label>().unwrap(), Label::Causal);
        assert_eq!("0".parse::<Label>().unwrap(), Label::NonCausal);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!(Label::from_index(2), None);
        assert_eq!(serde_json::to_string(&Label::NonCausal).unwrap(), "\"non-causal\"");
    }
}
