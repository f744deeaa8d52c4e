//! Dependency-tag enrichment.
//!
//! A deterministic lexicon/rule tagger assigns one Universal-Dependencies
//! style relation label to every word. Tags are then copied onto the
//! subword pieces of a [`TokenSequence`], either as ids consumed by the
//! model's tag embedding or as interleaved `[DEP=tag]` marker tokens.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::tokenizer::{self, TokenSequence, Vocabulary, CONTINUATION, UNK_ID};

macro_rules! dep_tags {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Closed DEP tagset. `None` marks special and padding positions.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum DepTag {
            $($variant,)+
        }

        impl DepTag {
            pub const ALL: &'static [DepTag] = &[$(DepTag::$variant,)+];

            pub fn name(self) -> &'static str {
                match self {
                    $(DepTag::$variant => $name,)+
                }
            }
        }
    };
}

dep_tags! {
    Root => "root",
    Nsubj => "nsubj",
    Obj => "obj",
    Obl => "obl",
    Advmod => "advmod",
    Amod => "amod",
    Det => "det",
    Aux => "aux",
    Cop => "cop",
    Mark => "mark",
    Case => "case",
    Cc => "cc",
    Conj => "conj",
    Advcl => "advcl",
    Acl => "acl",
    Xcomp => "xcomp",
    Ccomp => "ccomp",
    Compound => "compound",
    Nmod => "nmod",
    Nummod => "nummod",
    Punct => "punct",
    Dep => "dep",
    None => "NONE",
}

impl DepTag {
    /// Every tag except `None`.
    pub const LINGUISTIC: &'static [DepTag] = {
        let all = DepTag::ALL;
        let (head, _) = all.split_at(all.len() - 1);
        head
    };

    /// Number of tags including `None`; the size of the tag embedding table.
    pub const COUNT: usize = DepTag::ALL.len();

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<DepTag> {
        DepTag::ALL.get(id as usize).copied()
    }
}

impl fmt::Display for DepTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DepTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DepTag::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown DEP tag {s:?}")))
    }
}

/// Words with a known tag.
const LEXICON: &[(DepTag, &[&str])] = &[
    (
        DepTag::Mark,
        &["if", "when", "whenever", "because", "unless", "once", "while", "whereas", "whether", "although", "though", "until"],
    ),
    (
        DepTag::Det,
        &["the", "a", "an", "this", "these", "those", "each", "every", "all", "any", "some", "no", "its", "their", "his", "her", "our", "my", "your"],
    ),
    (DepTag::Cc, &["and", "or", "but", "nor"]),
    (
        DepTag::Aux,
        &[
            "shall", "can", "will", "is", "are", "must", "should", "may", "might", "could", "would", "be",
            "been", "being", "was", "were", "has", "have", "had", "does", "do", "did", "cannot",
        ],
    ),
    (
        DepTag::Case,
        &[
            "in", "of", "to", "within", "after", "before", "on", "at", "by", "for", "from", "with", "into",
            "during", "without", "via", "about", "over", "under", "through", "upon",
        ],
    ),
    (
        DepTag::Advmod,
        &["not", "then", "also", "only", "again", "never", "always", "longer", "already", "immediately", "automatically"],
    ),
];

static LEXICON_INDEX: LazyLock<HashMap<&'static str, DepTag>> = LazyLock::new(|| {
    build_lexicon_index().expect("DEP lexicon contains an ambiguous entry")
});

/// Flattens the lexicon, rejecting any word listed under two tags.
pub fn build_lexicon_index() -> Result<HashMap<&'static str, DepTag>> {
    let mut index = HashMap::new();
    for &(tag, words) in LEXICON {
        for &word in words {
            if let Some(previous) = index.insert(word, tag) {
                return Err(Error::Config(format!(
                    "lexicon word {word:?} is listed under both {previous} and {tag}"
                )));
            }
        }
    }
    Ok(index)
}

/// Forces lexicon construction; panics if the lexicon is ambiguous.
pub fn check_lexicon() {
    LazyLock::force(&LEXICON_INDEX);
}

fn lexicon_tag(word: &str) -> Option<DepTag> {
    if word.chars().all(|c| !c.is_alphanumeric()) {
        return Some(DepTag::Punct);
    }
    if word.chars().all(|c| c.is_ascii_digit()) {
        return Some(DepTag::Nummod);
    }
    LEXICON_INDEX.get(word).copied()
}

/// Words paired with one linguistic tag each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    tokens: Vec<String>,
    tags: Vec<DepTag>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<DepTag>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if tags.contains(&DepTag::None) {
            return Err(Error::InvalidInput("NONE is reserved for special positions".into()));
        }
        Ok(Self { tokens, tags })
    }

    /// Expands tags given per whitespace-separated token of `text` onto the
    /// punctuation-split words the tokenizer produces. Pure punctuation
    /// pieces take `punct`; every other piece inherits its token's tag.
    pub fn from_whitespace_tags(text: &str, tags: &[DepTag]) -> Result<Self> {
        let lowered = text.to_lowercase();
        let chunks: Vec<&str> = lowered.split_whitespace().collect();
        if chunks.len() != tags.len() {
            return Err(Error::InvalidInput(format!(
                "{} whitespace tokens but {} tags",
                chunks.len(),
                tags.len()
            )));
        }
        let mut tokens = Vec::new();
        let mut expanded = Vec::new();
        for (chunk, &tag) in chunks.iter().zip(tags) {
            for word in tokenizer::split_punctuation(chunk) {
                let piece_tag = if lexicon_tag(&word) == Some(DepTag::Punct) {
                    DepTag::Punct
                } else {
                    tag
                };
                tokens.push(word);
                expanded.push(piece_tag);
            }
        }
        Self::new(tokens, expanded)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tags(&self) -> &[DepTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Tags words with the rule tagger.
///
/// Rules in priority order: closed-class lexicon (punctuation and numerals
/// included); the first unlexicalized word before the first auxiliary is
/// `nsubj` (without an auxiliary, the first unlexicalized word after a
/// subordinating `mark`); the first unlexicalized word after the last
/// auxiliary is `root`; everything else is `dep`.
pub fn annotate_dep_tags(tokens: &[String]) -> Result<TaggedSentence> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot tag an empty token list".into()));
    }
    let lexical: Vec<Option<DepTag>> = tokens.iter().map(|t| lexicon_tag(t)).collect();
    let first_aux = lexical.iter().position(|t| *t == Some(DepTag::Aux));
    let last_aux = lexical.iter().rposition(|t| *t == Some(DepTag::Aux));

    let subject = match first_aux {
        Some(aux) => (0..aux).find(|&i| lexical[i].is_none()),
        None => lexical
            .iter()
            .position(|t| *t == Some(DepTag::Mark))
            .and_then(|mark| (mark + 1..tokens.len()).find(|&i| lexical[i].is_none())),
    };
    let root = last_aux.and_then(|aux| (aux + 1..tokens.len()).find(|&i| lexical[i].is_none()));

    let tags = lexical
        .iter()
        .enumerate()
        .map(|(i, lex)| match lex {
            Some(tag) => *tag,
            None if Some(i) == subject => DepTag::Nsubj,
            None if Some(i) == root => DepTag::Root,
            None => DepTag::Dep,
        })
        .collect();
    TaggedSentence::new(tokens.to_vec(), tags)
}

/// Copies each word's tag onto all of its subword pieces in `seq`.
///
/// Pieces are grouped back into words (`##` pieces join their predecessor)
/// and checked against the tagged words. When `seq` is full the last word
/// may be cut short and trailing words may be missing.
pub fn align_tags_to_subwords(tagged: &TaggedSentence, seq: &TokenSequence, vocab: &Vocabulary) -> Result<TokenSequence> {
    let active = seq.active_len();
    if active < 2 {
        return Err(Error::Alignment("sequence has no [CLS]/[SEP] frame".into()));
    }
    let mut out = seq.clone();
    out.dep_ids.fill(DepTag::None.id());

    // word index per content position, and the surface text rebuilt per word
    let mut owners = Vec::with_capacity(active - 2);
    let mut rebuilt: Vec<String> = Vec::new();
    for &id in &seq.ids[1..active - 1] {
        let token = vocab
            .token(id)
            .ok_or_else(|| Error::Alignment(format!("token id {id} outside vocabulary")))?;
        match token.strip_prefix(CONTINUATION) {
            Some(rest) if !rebuilt.is_empty() => rebuilt.last_mut().unwrap().push_str(rest),
            _ => rebuilt.push(token.to_owned()),
        }
        owners.push(rebuilt.len() - 1);
    }

    let truncated = seq.is_full();
    if rebuilt.len() > tagged.len() || (!truncated && rebuilt.len() != tagged.len()) {
        return Err(Error::Alignment(format!(
            "sequence encodes {} words, tagged sentence has {}",
            rebuilt.len(),
            tagged.len()
        )));
    }
    for (w, piece_word) in rebuilt.iter().enumerate() {
        let word = &tagged.tokens()[w];
        let last = w + 1 == rebuilt.len();
        let matches = piece_word == word
            || piece_word == tokenizer::SPECIAL_TOKENS[UNK_ID as usize]
            || (truncated && last && word.starts_with(piece_word.as_str()));
        if !matches {
            return Err(Error::Alignment(format!(
                "word {w}: pieces spell {piece_word:?}, tagged word is {word:?}"
            )));
        }
    }
    for (offset, &w) in owners.iter().enumerate() {
        out.dep_ids[offset + 1] = tagged.tags()[w].id();
    }
    Ok(out)
}

/// How DEP information reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnrichmentMode {
    /// A learned tag embedding is added to each token embedding.
    #[default]
    SumEmbedding,
    /// Every subword id is followed by its `[DEP=tag]` marker token.
    InterleaveTokens,
}

impl EnrichmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EnrichmentMode::SumEmbedding => "sum-embedding",
            EnrichmentMode::InterleaveTokens => "interleave-tokens",
        }
    }

    pub fn id(self) -> u8 {
        match self {
            EnrichmentMode::SumEmbedding => 0,
            EnrichmentMode::InterleaveTokens => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(EnrichmentMode::SumEmbedding),
            1 => Some(EnrichmentMode::InterleaveTokens),
            _ => None,
        }
    }
}

impl fmt::Display for EnrichmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnrichmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-embedding" => Ok(EnrichmentMode::SumEmbedding),
            "interleave-tokens" => Ok(EnrichmentMode::InterleaveTokens),
            other => Err(Error::Config(format!(
                "unknown enrichment mode {other:?} (expected sum-embedding or interleave-tokens)"
            ))),
        }
    }
}

/// Resolves the configured enrichment mode; absent config means the default.
pub fn enrichment_mode_config(value: Option<&str>) -> Result<EnrichmentMode> {
    value.map_or(Ok(EnrichmentMode::default()), str::parse)
}

/// Rewrites an aligned sequence so that each content id is followed by its
/// DEP marker token. Content beyond the capacity of `seq` is dropped in
/// (piece, marker) pairs so a marker never appears without its piece.
pub fn interleave_tags(seq: &TokenSequence, vocab: &Vocabulary) -> Result<TokenSequence> {
    let active = seq.active_len();
    let capacity = (seq.len() - 2) / 2;
    let mut content = Vec::with_capacity(2 * capacity);
    let mut tags = Vec::with_capacity(2 * capacity);
    for i in 1..active - 1 {
        if content.len() / 2 == capacity {
            break;
        }
        let tag = DepTag::from_id(seq.dep_ids[i])
            .filter(|t| *t != DepTag::None)
            .ok_or_else(|| Error::Alignment(format!("position {i} has no linguistic tag")))?;
        let marker = vocab
            .dep_marker_id(tag)
            .ok_or_else(|| Error::Config(format!("vocabulary lacks the marker for {tag}")))?;
        content.extend([seq.ids[i], marker]);
        tags.extend([tag.id(), tag.id()]);
    }
    let mut out = TokenSequence::frame(&content, seq.len())?;
    out.dep_ids[1..1 + tags.len()].copy_from_slice(&tags);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocab, encode_sequence, encode_words, pre_tokenize, CLS_ID, SEP_ID, SPECIAL_TOKENS};

    fn words(s: &[&str]) -> Vec<String> {
        s.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tagset_shape() {
        assert_eq!(DepTag::COUNT, 23);
        assert_eq!(DepTag::LINGUISTIC.len(), 22);
        assert!(!DepTag::LINGUISTIC.contains(&DepTag::None));
        for (i, t) in DepTag::ALL.iter().enumerate() {
            assert_eq!(t.id() as usize, i);
            assert_eq!(DepTag::from_id(t.id()), Some(*t));
            assert_eq!(t.name().parse::<DepTag>().unwrap(), *t);
        }
    }

    #[test]
    fn lexicon_is_unambiguous() {
        build_lexicon_index().unwrap();
        check_lexicon();
    }

    #[test]
    fn rule_examples() {
        let tagged = annotate_dep_tags(&words(&["the", "app"])).unwrap();
        assert_eq!(tagged.tags(), &[DepTag::Det, DepTag::Dep]);
        let tagged = annotate_dep_tags(&words(&["if", "the", "user"])).unwrap();
        assert_eq!(tagged.tags(), &[DepTag::Mark, DepTag::Det, DepTag::Nsubj]);
        assert!(matches!(annotate_dep_tags(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn requirement_sentence() {
        let tokens = pre_tokenize("If the user enters an incorrect password, an error message shall be displayed");
        let tagged = annotate_dep_tags(&tokens).unwrap();
        let by_word: HashMap<&str, DepTag> =
            tagged.tokens().iter().map(String::as_str).zip(tagged.tags().iter().copied()).collect();
        assert_eq!(by_word["if"], DepTag::Mark);
        assert_eq!(by_word["user"], DepTag::Nsubj);
        assert_eq!(by_word[","], DepTag::Punct);
        assert_eq!(by_word["shall"], DepTag::Aux);
        assert_eq!(by_word["be"], DepTag::Aux);
        assert_eq!(by_word["displayed"], DepTag::Root);
        assert_eq!(by_word["password"], DepTag::Dep);
    }

    #[test]
    fn tagged_sentence_rejects_none_and_mismatch() {
        assert!(TaggedSentence::new(words(&["a"]), vec![DepTag::None]).is_err());
        assert!(TaggedSentence::new(words(&["a", "b"]), vec![DepTag::Det]).is_err());
    }

    #[test]
    fn whitespace_tags_expand_over_punctuation() {
        let tagged =
            TaggedSentence::from_whitespace_tags("If A, then B.", &[DepTag::Mark, DepTag::Nsubj, DepTag::Advmod, DepTag::Root])
                .unwrap();
        assert_eq!(tagged.tokens(), &words(&["if", "a", ",", "then", "b", "."])[..]);
        assert_eq!(
            tagged.tags(),
            &[DepTag::Mark, DepTag::Nsubj, DepTag::Punct, DepTag::Advmod, DepTag::Root, DepTag::Punct]
        );
        assert!(TaggedSentence::from_whitespace_tags("a b", &[DepTag::Det]).is_err());
    }

    fn small_vocab(extra: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(DepTag::LINGUISTIC.iter().map(|&t| tokenizer::dep_marker(t)));
        tokens.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(tokens).unwrap()
    }

    #[test]
    fn tags_copied_to_pieces() {
        let v = small_vocab(&["user", "enter", "##s", "the"]);
        let ws = words(&["the", "user", "enters"]);
        let tagged = TaggedSentence::new(ws.clone(), vec![DepTag::Det, DepTag::Nsubj, DepTag::Root]).unwrap();
        let seq = encode_words(&ws, &v, 10).unwrap();
        let aligned = align_tags_to_subwords(&tagged, &seq, &v).unwrap();
        let none = DepTag::None.id();
        assert_eq!(
            aligned.dep_ids,
            vec![none, DepTag::Det.id(), DepTag::Nsubj.id(), DepTag::Root.id(), DepTag::Root.id(), none, none, none, none, none]
        );
        assert_eq!(aligned.ids, seq.ids);
    }

    #[test]
    fn word_count_mismatch_is_alignment_error() {
        let v = small_vocab(&["a", "b", "c", "d"]);
        let tagged = annotate_dep_tags(&words(&["a", "b", "c"])).unwrap();
        let seq = encode_words(&words(&["a", "b", "c", "d"]), &v, 10).unwrap();
        assert!(matches!(align_tags_to_subwords(&tagged, &seq, &v), Err(Error::Alignment(_))));
        let seq = encode_words(&words(&["a", "b", "d"]), &v, 10).unwrap();
        assert!(matches!(align_tags_to_subwords(&tagged, &seq, &v), Err(Error::Alignment(_))));
    }

    #[test]
    fn truncated_sequence_aligns_on_prefix() {
        let v = small_vocab(&["enter", "##s", "the"]);
        let ws = words(&["the", "enters", "the"]);
        let tagged = annotate_dep_tags(&ws).unwrap();
        // room for two pieces: "the", "enter"
        let seq = encode_words(&ws, &v, 4).unwrap();
        let aligned = align_tags_to_subwords(&tagged, &seq, &v).unwrap();
        assert_eq!(aligned.dep_ids[2], tagged.tags()[1].id());
    }

    #[test]
    fn unknown_words_align() {
        let v = build_vocab(&["the app"], 1, 1000).unwrap();
        let seq = encode_sequence("the zebra", &v, 8).unwrap();
        let tagged = annotate_dep_tags(&pre_tokenize("the zebra")).unwrap();
        let aligned = align_tags_to_subwords(&tagged, &seq, &v).unwrap();
        assert_eq!(aligned.dep_ids[2], DepTag::Dep.id());
    }

    #[test]
    fn mode_config() {
        assert_eq!(enrichment_mode_config(None).unwrap(), EnrichmentMode::SumEmbedding);
        assert_eq!(
            enrichment_mode_config(Some("interleave-tokens")).unwrap(),
            EnrichmentMode::InterleaveTokens
        );
        assert!(matches!(enrichment_mode_config(Some("concat")), Err(Error::Config(_))));
    }

    #[test]
    fn interleaving_halves_capacity() {
        let v = small_vocab(&["if", "the", "user"]);
        let ws = words(&["if", "the", "user"]);
        let tagged = annotate_dep_tags(&ws).unwrap();
        let seq = align_tags_to_subwords(&tagged, &encode_words(&ws, &v, 6).unwrap(), &v).unwrap();
        let inter = interleave_tags(&seq, &v).unwrap();
        inter.validate().unwrap();
        // 4 content slots hold two (piece, marker) pairs
        assert_eq!(
            inter.ids,
            vec![
                CLS_ID,
                v.id("if").unwrap(),
                v.dep_marker_id(DepTag::Mark).unwrap(),
                v.id("the").unwrap(),
                v.dep_marker_id(DepTag::Det).unwrap(),
                SEP_ID
            ]
        );
        assert_eq!(inter.dep_ids[1], DepTag::Mark.id());
        assert_eq!(inter.dep_ids[2], DepTag::Mark.id());
        assert_eq!(inter.dep_ids[5], DepTag::None.id());
    }
}
