//! Occurrence memory: incrementally accumulated document, sentence-presence
//! and sentence co-occurrence counters.
//!
//! Each sentence counts every token type once, and every unordered pair of
//! distinct token types once. Because all counters are plain sums over
//! sentences, folding [`OmmState::update`] over any chunking of a document
//! list gives exactly the counters of a single update over the whole list.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::codec::{self, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::vocab::{SentenceTokens, TokenId, Vocabulary};

const MAGIC: &[u8; 4] = b"CGOM";
const FORMAT: u32 = 1;
const CORPUS_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmmState {
    vocab_size: usize,
    documents: u64,
    token_counts: Vec<u64>,
    // keyed (min id, max id); diagonal never stored
    pair_counts: BTreeMap<(TokenId, TokenId), u64>,
    version: u64,
}

impl OmmState {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            documents: 0,
            token_counts: vec![0; vocab_size],
            pair_counts: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Total documents ever ingested.
    pub fn documents(&self) -> u64 {
        self.documents
    }

    /// Number of sentences containing `token`.
    pub fn token_count(&self, token: TokenId) -> u64 {
        self.token_counts.get(token as usize).copied().unwrap_or(0)
    }

    pub fn token_counts(&self) -> &[u64] {
        &self.token_counts
    }

    /// Symmetric read of the co-occurrence counter.
    pub fn co_occurrence(&self, a: TokenId, b: TokenId) -> u64 {
        if a == b {
            return 0;
        }
        let key = (a.min(b), a.max(b));
        self.pair_counts.get(&key).copied().unwrap_or(0)
    }

    /// Stored pairs `(i, j, count)` with `i < j`, in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (TokenId, TokenId, u64)> + '_ {
        self.pair_counts.iter().map(|(&(i, j), &n)| (i, j, n))
    }

    pub fn pair_len(&self) -> usize {
        self.pair_counts.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Counter equality, ignoring the update epoch.
    pub fn same_counts(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size
            && self.documents == other.documents
            && self.token_counts == other.token_counts
            && self.pair_counts == other.pair_counts
    }

    fn validate(&self, docs: &[SentenceTokens]) -> Result<()> {
        for &id in docs.iter().flatten().flatten() {
            if id as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn ingest(&mut self, docs: &[SentenceTokens]) {
        self.documents += docs.len() as u64;
        let mut types: Vec<TokenId> = Vec::new();
        for sentence in docs.iter().flatten() {
            types.clear();
            types.extend_from_slice(sentence);
            types.sort_unstable();
            types.dedup();
            for (k, &a) in types.iter().enumerate() {
                self.token_counts[a as usize] += 1;
                for &b in &types[k + 1..] {
                    *self.pair_counts.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
    }

    /// Ingests a batch of documents and bumps the version. Validates all ids
    /// before touching any counter.
    pub fn update(&mut self, docs: &[SentenceTokens]) -> Result<()> {
        self.validate(docs)?;
        self.ingest(docs);
        self.version += 1;
        Ok(())
    }

    /// Streams a plain-text corpus (one document per line) into the memory.
    /// Counts as a single update.
    pub fn merge_corpus(&mut self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if vocab.len() != self.vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "vocabulary has {} tokens, memory expects {}",
                vocab.len(),
                self.vocab_size
            )));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut chunk = Vec::with_capacity(CORPUS_CHUNK);
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            chunk.push(vocab.sentence_tokens(&line));
            if chunk.len() == CORPUS_CHUNK {
                self.ingest(&chunk);
                chunk.clear();
            }
        }
        self.ingest(&chunk);
        self.version += 1;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(MAGIC, FORMAT);
        e.u64(self.vocab_size as u64);
        e.u64(self.documents);
        e.u64(self.version);
        for &c in &self.token_counts {
            e.u64(c);
        }
        e.u64(self.pair_counts.len() as u64);
        for (&(i, j), &n) in &self.pair_counts {
            e.u32(i);
            e.u32(j);
            e.u64(n);
        }
        e.finish_with_checksum()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut d = Decoder::with_checksum(bytes, path, MAGIC, FORMAT)?;
        let vocab_size = d.u64()?;
        let documents = d.u64()?;
        let version = d.u64()?;
        d.ensure_remaining(vocab_size, 8)?;
        let vocab_size = vocab_size as usize;
        let token_counts = (0..vocab_size).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
        let pairs = d.u64()?;
        d.ensure_remaining(pairs, 16)?;
        let mut pair_counts = BTreeMap::new();
        let mut last = None;
        for _ in 0..pairs {
            let (i, j, n) = (d.u32()?, d.u32()?, d.u64()?);
            if i >= j || j as usize >= vocab_size || last >= Some((i, j)) {
                return Err(d.corrupt("pair triples out of order or range"));
            }
            last = Some((i, j));
            pair_counts.insert((i, j), n);
        }
        if !d.is_at_end() {
            return Err(d.corrupt("trailing bytes"));
        }
        Ok(Self {
            vocab_size,
            documents,
            token_counts,
            pair_counts,
            version,
        })
    }

    /// Atomically replaces the snapshot at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::atomic_write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&codec::read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // ids: a=0, b=1, c=2
    fn docs(sentences: &[&[&[u32]]]) -> Vec<SentenceTokens> {
        sentences
            .iter()
            .map(|d| d.iter().map(|s| s.to_vec()).collect())
            .collect()
    }

    #[test]
    fn toy_corpus_counts() {
        let mut omm = OmmState::new(3);
        omm.update(&docs(&[&[&[0, 1]], &[&[0, 1]], &[&[2]]])).unwrap();
        assert_eq!(omm.documents(), 3);
        assert_eq!(omm.token_count(0), 2);
        assert_eq!(omm.token_count(1), 2);
        assert_eq!(omm.token_count(2), 1);
        assert_eq!(omm.co_occurrence(0, 1), 2);
        assert_eq!(omm.co_occurrence(1, 0), 2);
        assert_eq!(omm.co_occurrence(0, 2), 0);
        assert_eq!(omm.version(), 1);
    }

    #[test]
    fn empty_update_only_bumps_version() {
        let mut omm = OmmState::new(3);
        omm.update(&[]).unwrap();
        assert!(omm.same_counts(&OmmState::new(3)));
        assert_eq!(omm.version(), 1);
    }

    #[test]
    fn repeated_token_counted_once() {
        let mut omm = OmmState::new(3);
        omm.update(&docs(&[&[&[0, 0]]])).unwrap();
        assert_eq!(omm.token_count(0), 1);
        assert_eq!(omm.pair_len(), 0);
        assert_eq!(omm.co_occurrence(0, 0), 0);
    }

    #[test]
    fn out_of_range_rejected_without_mutation() {
        let mut omm = OmmState::new(3);
        let err = omm.update(&docs(&[&[&[0, 1]], &[&[7]]])).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { id: 7, size: 3 }));
        assert_eq!(omm, OmmState::new(3));
    }

    #[test]
    fn truncated_snapshot_fails_checksum() {
        let mut omm = OmmState::new(3);
        omm.update(&docs(&[&[&[0, 1, 2]]])).unwrap();
        let bytes = omm.to_bytes();
        let path = Path::new("mem.omm");
        assert_eq!(OmmState::from_bytes(&bytes, path).unwrap(), omm);
        for cut in [0, 5, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                OmmState::from_bytes(&bytes[..cut], path),
                Err(Error::Checksum(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(OmmState::from_bytes(&flipped, path).is_err());
    }
}
