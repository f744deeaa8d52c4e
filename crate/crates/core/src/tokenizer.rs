//! Subword tokenization into fixed-length, special-token-framed sequences.
//!
//! Text is lowercased, split on whitespace and at every punctuation
//! character, and each resulting word is segmented greedily into the longest
//! vocabulary pieces. Non-initial pieces carry the `##` continuation marker.
//! The piece ids are framed as `[CLS] … [SEP]` and padded with `[PAD]` to the
//! configured sequence length.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::syntax::DepTag;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// Surface forms of the reserved tokens, indexed by id.
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Prefix marking a non-initial subword piece.
pub const CONTINUATION: &str = "##";

/// Serving sequence length.
pub const DEFAULT_SEQ_LEN: usize = 384;

/// Smallest sequence length that can hold `[CLS] x [SEP]`.
pub const MIN_SEQ_LEN: usize = 3;

/// Interleave-mode marker token for a DEP tag, e.g. `[DEP=nsubj]`.
pub fn dep_marker(tag: DepTag) -> String {
    format!("[DEP={}]", tag.name())
}

/// Bidirectional token/id map. Ids 0–3 are always the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an id-ordered token list, validating the
    /// reserved prefix and uniqueness.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Corruption(format!(
                "vocabulary has {} entries, at least {} special tokens required",
                tokens.len(),
                SPECIAL_TOKENS.len()
            )));
        }
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[id] != *special {
                return Err(Error::Corruption(format!(
                    "id {id} must be {special}, found {:?}",
                    tokens[id]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.contains(['\n', '\r']) {
                return Err(Error::Corruption(format!("invalid token at id {id}: {token:?}")));
            }
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(Error::Corruption(format!("duplicate token {token:?} at id {id}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    pub fn dep_marker_id(&self, tag: DepTag) -> Option<u32> {
        self.id(&dep_marker(tag))
    }

    /// Parses the one-token-per-line file format (line index = id).
    pub fn parse(contents: &str) -> Result<Self> {
        let body = contents.strip_suffix('\n').unwrap_or(contents);
        let tokens = body.split('\n').map(str::to_owned).collect();
        Self::from_tokens(tokens)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            let _ = writeln!(out, "{token}");
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases and splits text into words: whitespace separates words and
/// every punctuation character becomes a word of its own.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut words = Vec::new();
    for chunk in lowered.split_whitespace() {
        words.extend(split_punctuation(chunk));
    }
    words
}

/// Splits one whitespace-free chunk (already lowercased) at punctuation.
pub(crate) fn split_punctuation(chunk: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in chunk.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Builds a vocabulary from raw sentences.
///
/// Entries are laid out as: the four specials, one `[DEP=tag]` marker per
/// linguistic DEP tag, initial character pieces, `##` continuation character
/// pieces, and finally whole words with frequency `>= min_freq` ordered by
/// descending frequency (ties broken lexicographically). Entries past
/// `max_size` are dropped in that priority order.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize, max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("corpus is empty".into()));
    }
    if min_freq == 0 {
        return Err(Error::InvalidInput("min_freq must be at least 1".into()));
    }
    let reserved = SPECIAL_TOKENS.len() + DepTag::LINGUISTIC.len();
    if max_size < reserved {
        return Err(Error::InvalidInput(format!(
            "max_size {max_size} cannot hold the {reserved} reserved tokens"
        )));
    }

    let mut word_freq: HashMap<String, usize> = HashMap::new();
    let mut initial_chars = std::collections::BTreeSet::new();
    let mut continuation_chars = std::collections::BTreeSet::new();
    for sentence in corpus {
        for word in pre_tokenize(sentence.as_ref()) {
            let mut chars = word.chars();
            if let Some(first) = chars.next() {
                initial_chars.insert(first);
            }
            continuation_chars.extend(chars);
            *word_freq.entry(word).or_default() += 1;
        }
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(DepTag::LINGUISTIC.iter().map(|&t| dep_marker(t)));
    tokens.extend(initial_chars.iter().map(char::to_string));
    tokens.extend(continuation_chars.iter().map(|c| format!("{CONTINUATION}{c}")));

    let mut words: Vec<(String, usize)> = word_freq
        .into_iter()
        .filter(|(w, f)| *f >= min_freq && w.chars().count() > 1)
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    tokens.extend(words.into_iter().map(|(w, _)| w));
    tokens.truncate(max_size);

    Vocabulary::from_tokens(tokens)
}

/// Greedy longest-match-first segmentation of a single word.
///
/// Returns `[UNK]` when the word cannot be covered by vocabulary pieces.
pub fn wordpiece_encode(word: &str, vocab: &Vocabulary) -> Vec<u32> {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    if chars.is_empty() {
        return vec![UNK_ID];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::with_capacity(word.len() + CONTINUATION.len());
    while start < chars.len() {
        let begin = chars[start].0;
        let mut found = None;
        let mut end = chars.len();
        while end > start {
            let stop = chars.get(end).map_or(word.len(), |&(i, _)| i);
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(&word[begin..stop]);
            if let Some(id) = vocab.id(&candidate) {
                if !Vocabulary::is_special(id) {
                    found = Some(id);
                    break;
                }
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                pieces.push(id);
                start = end;
            }
            None => return vec![UNK_ID],
        }
    }
    pieces
}

/// Fixed-length model input: token ids, attention mask and DEP tag ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub dep_ids: Vec<u8>,
}

impl TokenSequence {
    /// Frames content ids as `[CLS] content [SEP]`, truncating the tail of the
    /// content so the result fits `seq_len`, then pads.
    pub fn frame(content: &[u32], seq_len: usize) -> Result<Self> {
        if seq_len < MIN_SEQ_LEN {
            return Err(Error::InvalidInput(format!(
                "sequence length {seq_len} is below the minimum of {MIN_SEQ_LEN}"
            )));
        }
        let kept = content.len().min(seq_len - 2);
        let mut ids = Vec::with_capacity(seq_len);
        ids.push(CLS_ID);
        ids.extend_from_slice(&content[..kept]);
        ids.push(SEP_ID);
        let active = ids.len();
        ids.resize(seq_len, PAD_ID);
        let mut mask = vec![1u8; active];
        mask.resize(seq_len, 0);
        Ok(Self {
            ids,
            mask,
            dep_ids: vec![DepTag::None.id(); seq_len],
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of mask-1 positions (CLS and SEP included).
    pub fn active_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m == 1).count()
    }

    /// Ids strictly between CLS and SEP.
    pub fn content(&self) -> &[u32] {
        let active = self.active_len();
        &self.ids[1..active.saturating_sub(1).max(1)]
    }

    /// True when the content fills the whole sequence, i.e. the input may
    /// have been cut.
    pub fn is_full(&self) -> bool {
        self.active_len() == self.len()
    }

    /// Checks the framing invariants.
    pub fn validate(&self) -> Result<()> {
        let len = self.ids.len();
        if self.mask.len() != len || self.dep_ids.len() != len {
            return Err(Error::Corruption(format!(
                "length mismatch: ids {len}, mask {}, dep_ids {}",
                self.mask.len(),
                self.dep_ids.len()
            )));
        }
        if len < MIN_SEQ_LEN {
            return Err(Error::Corruption(format!("sequence of length {len} is too short")));
        }
        if self.ids[0] != CLS_ID {
            return Err(Error::Corruption("first token is not [CLS]".into()));
        }
        let active = self.active_len();
        if self.mask[active..].iter().any(|&m| m != 0) {
            return Err(Error::Corruption("mask is not a contiguous prefix".into()));
        }
        for (i, (&id, &m)) in self.ids.iter().zip(&self.mask).enumerate() {
            if m > 1 {
                return Err(Error::Corruption(format!("mask value {m} at {i} is not binary")));
            }
            if (m == 0) != (id == PAD_ID) {
                return Err(Error::Corruption(format!("mask/PAD disagreement at position {i}")));
            }
        }
        let seps: Vec<usize> = (0..active).filter(|&i| self.ids[i] == SEP_ID).collect();
        if seps != [active - 1] || active < 2 {
            return Err(Error::Corruption(format!(
                "expected one [SEP] at index {}, found {seps:?}",
                active.saturating_sub(1)
            )));
        }
        Ok(())
    }
}

/// Wordpiece ids for a word list plus, for every piece, the index of the
/// word it came from.
pub(crate) fn encode_pieces(words: &[String], vocab: &Vocabulary) -> (Vec<u32>, Vec<usize>) {
    let mut ids = Vec::new();
    let mut owners = Vec::new();
    for (w, word) in words.iter().enumerate() {
        let pieces = wordpiece_encode(word, vocab);
        owners.extend(std::iter::repeat_n(w, pieces.len()));
        ids.extend(pieces);
    }
    (ids, owners)
}

/// Encodes pre-split words into a framed sequence of length `seq_len`.
pub fn encode_words(words: &[String], vocab: &Vocabulary, seq_len: usize) -> Result<TokenSequence> {
    if words.is_empty() {
        return Err(Error::InvalidInput("no words to encode".into()));
    }
    let (ids, _) = encode_pieces(words, vocab);
    TokenSequence::frame(&ids, seq_len)
}

/// Tokenizes `text` into a framed, padded sequence of length `seq_len`.
pub fn encode_sequence(text: &str, vocab: &Vocabulary, seq_len: usize) -> Result<TokenSequence> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("text is empty".into()));
    }
    if seq_len < MIN_SEQ_LEN {
        return Err(Error::InvalidInput(format!(
            "sequence length {seq_len} is below the minimum of {MIN_SEQ_LEN}"
        )));
    }
    let words = pre_tokenize(text);
    if words.is_empty() {
        return Err(Error::InvalidInput("text contains no tokens".into()));
    }
    encode_words(&words, vocab, seq_len)
}

/// Reconstructs the words of a sequence: `##` pieces are merged into their
/// predecessor, `[CLS]`/`[SEP]`/`[PAD]` and DEP markers are skipped, and
/// `[UNK]` is kept verbatim.
pub fn decode_words(seq: &TokenSequence, vocab: &Vocabulary) -> Result<Vec<String>> {
    let mut words: Vec<String> = Vec::new();
    for &id in &seq.ids {
        let token = vocab.token(id).ok_or_else(|| {
            Error::Corruption(format!("token id {id} outside vocabulary of size {}", vocab.len()))
        })?;
        if matches!(id, PAD_ID | CLS_ID | SEP_ID) || token.starts_with("[DEP=") {
            continue;
        }
        match token.strip_prefix(CONTINUATION) {
            Some(rest) if !words.is_empty() => words.last_mut().unwrap().push_str(rest),
            _ => words.push(token.to_owned()),
        }
    }
    Ok(words)
}

/// Surface text of a sequence, words joined by single spaces.
pub fn decode(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    Ok(decode_words(seq, vocab)?.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(tokens).unwrap()
    }

    #[test]
    fn minimal_corpus_vocab() {
        let v = build_vocab(&["a a"], 1, 1000).unwrap();
        assert!(v.id("a").is_some());
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(special), Some(id as u32));
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        let corpus: [&str; 0] = [];
        assert!(matches!(build_vocab(&corpus, 1, 100), Err(Error::InvalidInput(_))));
        assert!(matches!(build_vocab(&["a"], 0, 100), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn table_sentences_vocab_contains_app() {
        let corpus = [
            "The prompt no longer appears after the first time the app is used.",
            "The terms of use can be displayed within the app.",
            "The consent prompt is shown only the first time a user launches the app.",
            "An explanation of the app\u{2019}s various functions will be provided.",
            "There is a \u{201c}Publication information\u{201d} item in the menu.",
            "The IDs can be sent to the Warn server pseudonymized.",
        ];
        let v = build_vocab(&corpus, 1, 10_000).unwrap();
        assert!(v.id("app").is_some());
        assert_eq!(wordpiece_encode("app", &v), vec![v.id("app").unwrap()]);
    }

    #[test]
    fn min_freq_and_max_size() {
        let v = build_vocab(&["alpha beta beta"], 2, 1000).unwrap();
        assert!(v.id("beta").is_some());
        assert!(v.id("alpha").is_none());
        // still encodable through character pieces
        let ids = wordpiece_encode("alpha", &v);
        assert_eq!(ids.len(), 5);
        assert!(!ids.contains(&UNK_ID));

        let small = build_vocab(&["alpha beta beta"], 1, 30).unwrap();
        assert_eq!(small.len(), 30);
        assert!(build_vocab(&["x"], 1, 10).is_err());
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab_of(&["enter", "##s", "e", "##n", "##t", "##e", "##r", "if"]);
        assert_eq!(wordpiece_encode("enters", &v), vec![v.id("enter").unwrap(), v.id("##s").unwrap()]);
        assert_eq!(wordpiece_encode("if", &v), vec![v.id("if").unwrap()]);
        assert_eq!(wordpiece_encode("xyzzy", &v), vec![UNK_ID]);
        // partial coverage still falls back to a single UNK
        assert_eq!(wordpiece_encode("enterx", &v), vec![UNK_ID]);
    }

    #[test]
    fn special_tokens_never_matched_as_pieces() {
        let v = vocab_of(&["[", "##p"]);
        assert_eq!(wordpiece_encode("[pad]", &v), vec![UNK_ID]);
    }

    #[test]
    fn frame_and_pad() {
        let v = vocab_of(&["if", "the", "user"]);
        let seq = encode_sequence("if the user", &v, 8).unwrap();
        let (i, t, u) = (v.id("if").unwrap(), v.id("the").unwrap(), v.id("user").unwrap());
        assert_eq!(seq.ids, vec![CLS_ID, i, t, u, SEP_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(seq.mask, vec![1, 1, 1, 1, 1, 0, 0, 0]);
        assert!(seq.dep_ids.iter().all(|&d| d == DepTag::None.id()));
        seq.validate().unwrap();
        assert_eq!(decode(&seq, &v).unwrap(), "if the user");
    }

    #[test]
    fn truncation_keeps_head() {
        let v = vocab_of(&["w"]);
        let text = vec!["w"; 500].join(" ");
        let seq = encode_sequence(&text, &v, DEFAULT_SEQ_LEN).unwrap();
        assert_eq!(seq.len(), 384);
        assert_eq!(seq.content().len(), 382);
        assert_eq!(seq.ids[383], SEP_ID);
        assert!(!seq.ids.contains(&PAD_ID));
        assert!(seq.is_full());
        seq.validate().unwrap();
    }

    #[test]
    fn blank_text_rejected() {
        let v = vocab_of(&[]);
        assert!(matches!(encode_sequence("   ", &v, 8), Err(Error::InvalidInput(_))));
        assert!(matches!(encode_sequence("a", &v, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn punctuation_split() {
        assert_eq!(
            pre_tokenize("If A, then B."),
            vec!["if", "a", ",", "then", "b", "."]
        );
        assert_eq!(pre_tokenize("app\u{2019}s"), vec!["app", "\u{2019}", "s"]);
    }

    #[test]
    fn decode_merges_continuations() {
        let v = vocab_of(&["enter", "##s"]);
        let seq = TokenSequence::frame(&[v.id("enter").unwrap(), v.id("##s").unwrap()], 6).unwrap();
        assert_eq!(decode(&seq, &v).unwrap(), "enters");
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let v = vocab_of(&["a"]);
        let seq = TokenSequence::frame(&[99], 4).unwrap();
        assert!(matches!(decode(&seq, &v), Err(Error::Corruption(_))));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&["the app is used"], 1, 1000).unwrap();
        let parsed = Vocabulary::parse(&v.to_file_string()).unwrap();
        assert_eq!(parsed, v);
        assert!(Vocabulary::parse("[PAD]\n[UNK]\n[SEP]\n[CLS]\n").is_err());
        assert!(Vocabulary::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\na\na\n").is_err());
    }

    #[test]
    fn validate_catches_broken_sequences() {
        let mut seq = TokenSequence::frame(&[5, 6], 6).unwrap();
        seq.validate().unwrap();
        seq.mask[4] = 1;
        assert!(seq.validate().is_err());
        let mut seq = TokenSequence::frame(&[5, 6], 6).unwrap();
        seq.ids[1] = SEP_ID;
        assert!(seq.validate().is_err());
        let mut seq = TokenSequence::frame(&[5, 6], 6).unwrap();
        seq.dep_ids.pop();
        assert!(seq.validate().is_err());
    }
}
