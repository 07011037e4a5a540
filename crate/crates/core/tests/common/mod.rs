#![allow(dead_code)]

use contgcn::data::Example;
use contgcn::synthetic::{self, SyntheticSpec};
use contgcn::train::TrainConfig;
use contgcn::vocab::Vocabulary;

/// Training setup for the generated corpus. The from-scratch token table
/// needs far larger steps than a fine-tuned language model.
pub fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        dim: 32,
        batch_size: 32,
        lr_encoder: 1e-3,
        lr_gcn: 1e-3,
        lr_post_pretrain: 1e-2,
        stage1_epochs: 3,
        update_epochs: 3,
        epochs: 30,
        lambda: 0.03,
        ..Default::default()
    }
}

pub fn examples(vocab: &Vocabulary, spec: &SyntheticSpec, max_len: usize) -> Vec<Example> {
    let file = synthetic::generate(spec);
    file.examples(vocab, max_len, &file.labels).unwrap()
}

/// 80/20 split of a generated corpus.
pub fn split(examples: Vec<Example>) -> (Vec<Example>, Vec<Example>) {
    let n_train = examples.len() * 4 / 5;
    let mut train = examples;
    let test = train.split_off(n_train);
    (train, test)
}

pub fn labels() -> Vec<String> {
    vec!["c0".into(), "c1".into()]
}

pub fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}
