//! Templated requirement corpus for learning checks.
//!
//! Causal sentences wrap a cue phrase from a [`CueLexicon`] around two
//! clauses built from random subject/verb/object fillers. Non-causal
//! sentences are plain declaratives drawn from the same fillers, including
//! two-clause coordinations so that sentence length alone does not give the
//! label away.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::CueLexicon;
use crate::evaluation::{LabeledDataset, LabeledExample};
use crate::prediction::Label;

const SUBJECTS: &[&str] = &[
    "user", "system", "app", "server", "administrator", "operator", "client", "device", "service", "module",
    "sensor", "customer", "driver", "controller", "browser", "gateway",
];
const ACTIONS: &[&str] = &[
    "enters", "sends", "deletes", "opens", "updates", "receives", "selects", "uploads", "confirms", "stores",
    "validates", "closes", "requests", "changes",
];
const BASE_VERBS: &[&str] = &[
    "display", "send", "store", "reject", "log", "lock", "notify", "update", "show", "encrypt", "archive", "reset",
];
const OBJECTS: &[&str] = &[
    "password", "message", "report", "record", "file", "request", "token", "button", "menu", "notification",
    "setting", "key", "account", "session", "warning", "form",
];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("filler lists are non-empty")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn clauses(rng: &mut ChaCha8Rng) -> (String, String) {
    let antecedent = format!("the {} {} the {}", pick(rng, SUBJECTS), pick(rng, ACTIONS), pick(rng, OBJECTS));
    let consequent = format!("the {} shall {} the {}", pick(rng, SUBJECTS), pick(rng, BASE_VERBS), pick(rng, OBJECTS));
    (antecedent, consequent)
}

fn causal_sentence(rng: &mut ChaCha8Rng, cues: &CueLexicon) -> String {
    let cue = cues.phrases().choose(rng).expect("lexicon is non-empty");
    let (antecedent, consequent) = clauses(rng);
    if rng.random_bool(0.5) {
        capitalize(&format!("{cue} {antecedent}, {consequent}."))
    } else {
        capitalize(&format!("{consequent} {cue} {antecedent}."))
    }
}

fn non_causal_sentence(rng: &mut ChaCha8Rng) -> String {
    let (first, second) = clauses(rng);
    match rng.random_range(0..3) {
        0 => capitalize(&format!("{first} and {second}.")),
        1 => capitalize(&format!("{second}.")),
        _ => capitalize(&format!("{first} within the {}.", pick(rng, OBJECTS))),
    }
}

/// `size` examples alternating causal and non-causal, reproducible from
/// `seed`.
pub fn templated_corpus(size: usize, seed: u64, cues: &CueLexicon) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..size)
        .map(|i| {
            if i % 2 == 0 {
                LabeledExample::new(causal_sentence(&mut rng, cues), Label::Causal)
            } else {
                LabeledExample::new(non_causal_sentence(&mut rng), Label::NonCausal)
            }
        })
        .collect();
    LabeledDataset::new(examples).expect("templates never produce empty text")
}
