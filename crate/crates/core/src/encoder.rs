//! Node encoder: contextual token states per document, masked mean pooling,
//! and the jammed / unjammed node-input assembly.
//!
//! The jammed input holds every batch document's embedding on its document
//! node and nothing on token nodes. The unjammed input for document `j`
//! holds only document `j`: its pooled embedding on node `u+j` and its own
//! contextual token states on the token nodes it contains.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::codec::{self, Decoder, Encoder as ByteEncoder};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenizedDocument};

const EXTERNAL_MAGIC: &[u8; 4] = b"CGEE";
const EXTERNAL_FORMAT: u32 = 1;

/// `b` documents padded with `<pad>` to a common length.
#[derive(Debug, Clone)]
pub struct DocumentBatch {
    pub docs: Vec<TokenizedDocument>,
    /// Stable document keys, used by the external encoder.
    pub keys: Vec<String>,
    pub padded_len: usize,
    pub pad_id: TokenId,
}

impl DocumentBatch {
    pub fn new(docs: Vec<TokenizedDocument>, keys: Vec<String>, pad_id: TokenId) -> Self {
        assert_eq!(docs.len(), keys.len(), "one key per document");
        let padded_len = docs.iter().map(TokenizedDocument::len).max().unwrap_or(0);
        Self {
            docs,
            keys,
            padded_len,
            pad_id,
        }
    }

    /// Batch with positional keys (`"0"`, `"1"`, ...).
    pub fn unkeyed(docs: Vec<TokenizedDocument>, pad_id: TokenId) -> Self {
        let keys = (0..docs.len()).map(|j| j.to_string()).collect();
        Self::new(docs, keys, pad_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Row `j` padded to `padded_len`.
    pub fn padded_ids(&self, j: usize) -> Vec<TokenId> {
        let mut ids = self.docs[j].token_ids.clone();
        ids.resize(self.padded_len, self.pad_id);
        ids
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.docs.iter().map(|d| d.label).collect()
    }
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// One `l × d` matrix per document.
    pub token_states: Vec<Array2<f64>>,
    /// `b × d` pooled embeddings.
    pub doc_embeddings: Array2<f64>,
    /// `b × l`, true on real (non-pad) positions.
    pub pad_mask: Vec<Vec<bool>>,
    token_ids: Vec<Vec<TokenId>>,
}

/// Which model row an input row belongs to. Token rows remember the document
/// whose contextual states produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSlot {
    Token { token: TokenId, doc: usize },
    Doc(usize),
}

/// Sparse node-input matrix: the listed slots carry the given rows, every
/// other node is zero.
#[derive(Debug, Clone)]
pub struct NodeRows {
    pub slots: Vec<NodeSlot>,
    pub values: Array2<f64>,
}

impl NodeRows {
    /// Dense `(u + b) × d` view on the full node index space.
    pub fn to_dense(&self, vocab_size: usize, docs: usize) -> Array2<f64> {
        let mut out = Array2::zeros((vocab_size + docs, self.values.ncols()));
        for (slot, row) in self.slots.iter().zip(self.values.axis_iter(Axis(0))) {
            let r = match *slot {
                NodeSlot::Token { token, .. } => token as usize,
                NodeSlot::Doc(j) => vocab_size + j,
            };
            out.row_mut(r).assign(&row);
        }
        out
    }
}

impl EncodedBatch {
    /// Builds the pooled embeddings from per-position states.
    pub fn from_states(
        token_states: Vec<Array2<f64>>,
        pad_mask: Vec<Vec<bool>>,
        token_ids: Vec<Vec<TokenId>>,
    ) -> Result<Self> {
        let d = token_states.first().map_or(0, |s| s.ncols());
        let mut doc_embeddings = Array2::zeros((token_states.len(), d));
        for (j, states) in token_states.iter().enumerate() {
            let valid = pad_mask[j].iter().filter(|&&m| m).count();
            if valid == 0 {
                return Err(Error::ZeroLengthDocument(j));
            }
            let mut row = doc_embeddings.row_mut(j);
            for (k, state) in states.axis_iter(Axis(0)).enumerate() {
                if pad_mask[j][k] {
                    row += &state;
                }
            }
            row /= valid as f64;
        }
        Ok(Self {
            token_states,
            doc_embeddings,
            pad_mask,
            token_ids,
        })
    }

    pub fn docs(&self) -> usize {
        self.token_states.len()
    }

    pub fn dim(&self) -> usize {
        self.doc_embeddings.ncols()
    }

    /// Valid positions of each distinct token in document `j`.
    fn token_positions(&self, j: usize) -> BTreeMap<TokenId, Vec<usize>> {
        let mut out: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
        for (k, &t) in self.token_ids[j].iter().enumerate() {
            if self.pad_mask[j][k] {
                out.entry(t).or_default().push(k);
            }
        }
        out
    }

    /// Jammed input: only document rows, carrying the pooled embeddings.
    pub fn assemble_jammed(&self) -> NodeRows {
        NodeRows {
            slots: (0..self.docs()).map(NodeSlot::Doc).collect(),
            values: self.doc_embeddings.clone(),
        }
    }

    /// Unjammed input for document `j`: its token rows (repeated tokens
    /// average their states) plus its own document row.
    pub fn assemble_unjammed(&self, j: usize) -> NodeRows {
        let positions = self.token_positions(j);
        let d = self.dim();
        let mut slots = Vec::with_capacity(positions.len() + 1);
        let mut values = Array2::zeros((positions.len() + 1, d));
        for (r, (&token, ks)) in positions.iter().enumerate() {
            slots.push(NodeSlot::Token { token, doc: j });
            let mut row = values.row_mut(r);
            for &k in ks {
                row += &self.token_states[j].row(k);
            }
            row /= ks.len() as f64;
        }
        slots.push(NodeSlot::Doc(j));
        values.row_mut(positions.len()).assign(&self.doc_embeddings.row(j));
        NodeRows { slots, values }
    }

    /// Routes gradients on input rows back to the per-position states,
    /// accumulating into `state_grads` (shaped like `token_states`).
    pub fn backward_rows(&self, slots: &[NodeSlot], grads: &Array2<f64>, state_grads: &mut [Array2<f64>]) {
        for (slot, g) in slots.iter().zip(grads.axis_iter(Axis(0))) {
            match *slot {
                NodeSlot::Doc(j) => {
                    let valid = self.pad_mask[j].iter().filter(|&&m| m).count() as f64;
                    for k in 0..self.pad_mask[j].len() {
                        if self.pad_mask[j][k] {
                            state_grads[j].row_mut(k).scaled_add(1.0 / valid, &g);
                        }
                    }
                }
                NodeSlot::Token { token, doc } => {
                    let ks: Vec<usize> = (0..self.token_ids[doc].len())
                        .filter(|&k| self.pad_mask[doc][k] && self.token_ids[doc][k] == token)
                        .collect();
                    let share = 1.0 / ks.len() as f64;
                    for k in ks {
                        state_grads[doc].row_mut(k).scaled_add(share, &g);
                    }
                }
            }
        }
    }

    pub fn zero_state_grads(&self) -> Vec<Array2<f64>> {
        self.token_states
            .iter()
            .map(|s| Array2::zeros(s.raw_dim()))
            .collect()
    }
}

/// Frozen per-document states produced outside this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddings {
    dim: usize,
    states: HashMap<String, Array2<f32>>,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            states: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, states: Array2<f32>) -> Result<()> {
        if states.ncols() != self.dim {
            return Err(Error::External(format!(
                "states have width {}, expected {}",
                states.ncols(),
                self.dim
            )));
        }
        self.states.insert(key.into(), states);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Array2<f32>> {
        self.states.get(key)
    }

    /// Layout: magic `CGEE`, format u32, d u32, count u64, then per entry
    /// key (u32 length + UTF-8), rows u32, `rows × d` f32; trailing CRC32.
    /// All integers and floats little-endian; entries sorted by key.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = ByteEncoder::new(EXTERNAL_MAGIC, EXTERNAL_FORMAT);
        e.u32(self.dim as u32);
        e.u64(self.states.len() as u64);
        let mut keys: Vec<&String> = self.states.keys().collect();
        keys.sort();
        for key in keys {
            let m = &self.states[key];
            e.str(key);
            e.u32(m.nrows() as u32);
            for &v in m.iter() {
                e.f32(v);
            }
        }
        e.finish_with_checksum()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let mut d = Decoder::with_checksum(bytes, path, EXTERNAL_MAGIC, EXTERNAL_FORMAT)?;
        let dim = d.u32()? as usize;
        if let Some(want) = expected_dim {
            if want != dim {
                return Err(Error::External(format!("file has d={dim}, model expects d={want}")));
            }
        }
        let count = d.u64()?;
        let mut out = Self::new(dim);
        for _ in 0..count {
            let key = d.str()?;
            let rows = d.u32()? as usize;
            d.ensure_remaining((rows * dim) as u64, 4)?;
            let data = (0..rows * dim).map(|_| d.f32()).collect::<Result<Vec<_>>>()?;
            let m = Array2::from_shape_vec((rows, dim), data).map_err(|e| d.corrupt(&e.to_string()))?;
            out.states.insert(key, m);
        }
        if !d.is_at_end() {
            return Err(d.corrupt("trailing bytes"));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::atomic_write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&codec::read_file(path)?, path, expected_dim)
    }
}

/// The document encoder.
#[derive(Debug, Clone)]
pub enum DocumentEncoder {
    /// Trainable `u × d` embedding table.
    Tiny(Array2<f64>),
    External(ExternalEmbeddings),
}

impl DocumentEncoder {
    /// Table initialized uniform in `±sqrt(3/d)` (unit expected row norm).
    pub fn tiny<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let a = (3.0 / dim as f64).sqrt();
        Self::Tiny(Array2::from_shape_simple_fn((vocab_size, dim), || rng.gen_range(-a..a)))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Tiny(t) => t.ncols(),
            Self::External(e) => e.dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Self::Tiny(_))
    }

    pub fn encode(&self, batch: &DocumentBatch) -> Result<EncodedBatch> {
        let l = batch.padded_len;
        let d = self.dim();
        let mut states = Vec::with_capacity(batch.len());
        let mut masks = Vec::with_capacity(batch.len());
        let mut ids = Vec::with_capacity(batch.len());
        for j in 0..batch.len() {
            let padded = batch.padded_ids(j);
            let len = batch.docs[j].len();
            let mut m = Array2::zeros((l, d));
            let mut mask = vec![false; l];
            match self {
                Self::Tiny(table) => {
                    for (k, &t) in padded.iter().enumerate() {
                        if t as usize >= table.nrows() {
                            return Err(Error::TokenOutOfRange {
                                id: t,
                                size: table.nrows(),
                            });
                        }
                        m.row_mut(k).assign(&table.row(t as usize));
                        mask[k] = k < len;
                    }
                }
                Self::External(ext) => {
                    let key = &batch.keys[j];
                    let src = ext
                        .get(key)
                        .ok_or_else(|| Error::External(format!("no states for document {key:?}")))?;
                    let rows = src.nrows().min(len);
                    for k in 0..rows {
                        m.row_mut(k).assign(&src.row(k).mapv(f64::from));
                        mask[k] = true;
                    }
                }
            }
            states.push(m);
            masks.push(mask);
            ids.push(padded);
        }
        EncodedBatch::from_states(states, masks, ids)
    }

    /// Scatters per-position state gradients into the embedding table
    /// gradient. No-op for the frozen external encoder.
    pub fn accumulate_grad(&self, enc: &EncodedBatch, state_grads: &[Array2<f64>], table_grad: &mut Array2<f64>) {
        if !self.is_trainable() {
            return;
        }
        for (j, g) in state_grads.iter().enumerate() {
            for (k, &t) in enc.token_ids[j].iter().enumerate() {
                if enc.pad_mask[j][k] {
                    table_grad.row_mut(t as usize).scaled_add(1.0, &g.row(k));
                }
            }
        }
    }

    pub fn table(&self) -> Option<&Array2<f64>> {
        match self {
            Self::Tiny(t) => Some(t),
            Self::External(_) => None,
        }
    }

    pub fn table_mut(&mut self) -> Option<&mut Array2<f64>> {
        match self {
            Self::Tiny(t) => Some(t),
            Self::External(_) => None,
        }
    }
}
