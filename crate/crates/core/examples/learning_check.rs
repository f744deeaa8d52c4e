//! Trains the desk-scale model on the templated corpus and reports held-out
//! accuracy.

use std::time::Instant;

use cira_core::baseline::CueLexicon;
use cira_core::evaluation::evaluate_parallel;
use cira_core::model::{Model, ModelConfig, TrainOptions};
use cira_core::synthetic::templated_corpus;
use cira_core::tokenizer::build_vocab;

fn main() -> cira_core::Result<()> {
    let cues = CueLexicon::default();
    let train = templated_corpus(400, 1, &cues);
    let test = templated_corpus(100, 2, &cues);
    let texts: Vec<&str> = train.examples().iter().map(|e| e.text.as_str()).collect();
    let vocab = build_vocab(&texts, 1, 30_000)?;
    let mut model = Model::initialize(ModelConfig::desk(vocab.len()), vocab)?;
    let started = Instant::now();
    let options = TrainOptions::default();
    let history = model.fit(&train, &options)?;
    for (epoch, loss) in history.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    let report = evaluate_parallel(|t| model.classify(t), &test)?;
    println!("{report}");
    println!("trained in {:.1?}", started.elapsed());
    Ok(())
}
