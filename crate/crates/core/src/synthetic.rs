//! Generated two-class corpora with class-specific token distributions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetFile, Record};
use crate::error::Result;
use crate::vocab::{Vocabulary, PAD_TOKEN, UNK_TOKEN};

pub const CLASS_WORDS: usize = 80;
pub const SHARED_WORDS: usize = 38;
/// Class words `[0, CORE)` dominate ordinary documents; the rest dominate
/// shifted ones.
pub const CORE_WORDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub docs: usize,
    pub seed: u64,
    /// Probability that a word comes from the document's class.
    pub class_word_prob: f64,
    /// Draw class words mostly from the tail instead of the core.
    pub shifted: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            docs: 500,
            seed: 0,
            class_word_prob: 0.6,
            shifted: false,
        }
    }
}

fn class_word(class: usize, i: usize) -> String {
    format!("{}{i}", if class == 0 { "alpha" } else { "beta" })
}

fn shared_word(i: usize) -> String {
    format!("common{i}")
}

/// The 200-token vocabulary shared by every generated corpus.
pub fn vocabulary() -> Vocabulary {
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    for class in 0..2 {
        tokens.extend((0..CLASS_WORDS).map(|i| class_word(class, i)));
    }
    tokens.extend((0..SHARED_WORDS).map(shared_word));
    Vocabulary::from_tokens(tokens).expect("generated vocabulary is valid")
}

/// Balanced labeled corpus: 2 to 4 sentences of 5 to 9 words per document.
pub fn generate(spec: &SyntheticSpec) -> DatasetFile {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut classes: Vec<usize> = (0..spec.docs).map(|i| i % 2).collect();
    classes.shuffle(&mut rng);
    let tag = if spec.shifted { "s" } else { "d" };
    let records = classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let sentences: Vec<String> = (0..rng.gen_range(2..=4))
                .map(|_| {
                    let words: Vec<String> = (0..rng.gen_range(5..=9))
                        .map(|_| word(&mut rng, class, spec))
                        .collect();
                    words.join(" ")
                })
                .collect();
            Record {
                id: format!("{tag}{}-{i}", spec.seed),
                label: Some(format!("c{class}")),
                text: format!("{}.", sentences.join(". ")),
            }
        })
        .collect();
    DatasetFile {
        records,
        labels: vec!["c0".into(), "c1".into()],
    }
}

fn word(rng: &mut ChaCha8Rng, class: usize, spec: &SyntheticSpec) -> String {
    if !rng.gen_bool(spec.class_word_prob) {
        return shared_word(rng.gen_range(0..SHARED_WORDS));
    }
    let from_core = rng.gen_bool(0.9) != spec.shifted;
    let i = if from_core {
        rng.gen_range(0..CORE_WORDS)
    } else {
        rng.gen_range(CORE_WORDS..CLASS_WORDS)
    };
    class_word(class, i)
}

/// Writes the vocabulary and a corpus for command-line use.
pub fn write_files(spec: &SyntheticSpec, vocab_path: &std::path::Path, data_path: &std::path::Path) -> Result<()> {
    vocabulary().save(vocab_path)?;
    generate(spec).write(data_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_200_tokens() {
        let v = vocabulary();
        assert_eq!(v.len(), 200);
        assert_eq!(v.encode_words("alpha12"), vec![v.id("alpha12").unwrap()]);
    }

    #[test]
    fn balanced_and_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        let ones = a.records.iter().filter(|r| r.label.as_deref() == Some("c1")).count();
        assert_eq!(ones, 250);
        let v = vocabulary();
        for r in &a.records {
            assert!(!v.sentence_tokens(&r.text).concat().contains(&v.unk_id()));
        }
    }

    #[test]
    fn shift_moves_class_words_to_the_tail() {
        let spec = SyntheticSpec {
            shifted: true,
            ..Default::default()
        };
        let text: String = generate(&spec).records.iter().map(|r| r.text.clone() + " ").collect();
        let tail = (CORE_WORDS..CLASS_WORDS)
            .map(|i| text.matches(&format!("alpha{i} ")).count())
            .sum::<usize>();
        let core = (10..CORE_WORDS)
            .map(|i| text.matches(&format!("alpha{i} ")).count())
            .sum::<usize>();
        assert!(tail > 3 * core);
    }
}
