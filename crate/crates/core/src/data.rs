//! Tab-separated datasets: `id<TAB>label<TAB>text`, label `-` for unlabeled rows.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::vocab::{SentenceTokens, TokenizedDocument, Vocabulary};

pub const UNLABELED: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub label: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetFile {
    pub records: Vec<Record>,
    /// Class names indexed by class id, in first-appearance order.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub docs: usize,
    pub labeled: usize,
    pub classes: usize,
    /// Mean whitespace-separated words per document.
    pub avg_len: f64,
}

/// A document ready for the model: stable key, model input, and the
/// per-sentence view consumed by the occurrence memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub key: String,
    pub doc: TokenizedDocument,
    pub sentences: SentenceTokens,
}

impl Example {
    pub fn new(vocab: &Vocabulary, key: impl Into<String>, text: &str, max_len: usize, label: Option<usize>) -> Self {
        Self {
            key: key.into(),
            doc: vocab.document(text, max_len, label),
            sentences: vocab.sentence_tokens(text),
        }
    }

    pub fn label(&self) -> Option<usize> {
        self.doc.label
    }

    /// Same document with its label removed.
    pub fn unlabeled(&self) -> Self {
        let mut out = self.clone();
        out.doc.label = None;
        out
    }
}

impl DatasetFile {
    pub fn ingest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    pub fn parse<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .quoting(false)
            .flexible(true)
            .from_reader(reader);
        let mut out = Self::default();
        let mut seen = HashSet::new();
        let err = |line: usize, reason: String| Error::Dataset {
            path: PathBuf::from(path),
            line,
            reason,
        };
        for (i, row) in rdr.records().enumerate() {
            let line = i + 1;
            let row = row.map_err(|e| err(line, e.to_string()))?;
            if row.len() == 1 && row[0].trim().is_empty() {
                continue;
            }
            if row.len() != 3 {
                return Err(err(line, format!("expected 3 columns, found {}", row.len())));
            }
            let id = row[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(err(line, format!("duplicate id {id:?}")));
            }
            let label = match &row[1] {
                UNLABELED => None,
                name => {
                    if !out.labels.iter().any(|l| l == name) {
                        out.labels.push(name.to_string());
                    }
                    Some(name.to_string())
                }
            };
            out.records.push(Record {
                id,
                label,
                text: row[2].to_string(),
            });
        }
        Ok(out)
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn stats(&self) -> DatasetStats {
        let words: usize = self.records.iter().map(|r| r.text.split_whitespace().count()).sum();
        DatasetStats {
            docs: self.records.len(),
            labeled: self.records.iter().filter(|r| r.label.is_some()).count(),
            classes: self.labels.len(),
            avg_len: if self.records.is_empty() {
                0.0
            } else {
                words as f64 / self.records.len() as f64
            },
        }
    }

    /// Tokenizes every record, mapping label names onto `classes` (usually a
    /// trained model's label list). Unknown label names are an error.
    pub fn examples(&self, vocab: &Vocabulary, max_len: usize, classes: &[String]) -> Result<Vec<Example>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let label = match &r.label {
                    None => None,
                    Some(name) => Some(classes.iter().position(|c| c == name).ok_or_else(|| Error::Dataset {
                        path: PathBuf::new(),
                        line: i + 1,
                        reason: format!("label {name:?} unknown to the model"),
                    })?),
                };
                Ok(Example::new(vocab, r.id.clone(), &r.text, max_len, label))
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for r in &self.records {
            let label = r.label.as_deref().unwrap_or(UNLABELED);
            out.push_str(&format!("{}\t{}\t{}\n", r.id, label, r.text));
        }
        crate::codec::atomic_write(path, out.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetFile> {
        DatasetFile::parse(text.as_bytes(), Path::new("mem.tsv"))
    }

    #[test]
    fn labels_by_first_appearance() {
        let d = parse("a\tpos\tgood film\nb\tneg\tbad\nc\tpos\tfine\n").unwrap();
        assert_eq!(d.labels, vec!["pos", "neg"]);
        assert_eq!(d.class_id("neg"), Some(1));
        let s = d.stats();
        assert_eq!((s.docs, s.classes, s.labeled), (3, 2, 3));
        assert!((s.avg_len - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dash_is_unlabeled() {
        let d = parse("x\t-\tsome text\n").unwrap();
        assert_eq!(d.records[0].label, None);
        assert!(d.labels.is_empty());
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(matches!(parse("a\tpos\n"), Err(Error::Dataset { line: 1, .. })));
        assert!(matches!(
            parse("a\tpos\tx\na\tneg\ty\n"),
            Err(Error::Dataset { line: 2, .. })
        ));
    }

    #[test]
    fn quotes_are_literal() {
        let d = parse("q\t-\the said \"hi\"\n").unwrap();
        assert_eq!(d.records[0].text, "he said \"hi\"");
    }

    #[test]
    fn write_round_trips() {
        let d = parse("a\tpos\tgood\nb\t-\tplain\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        d.write(&p).unwrap();
        assert_eq!(DatasetFile::ingest(&p).unwrap(), d);
    }
}
