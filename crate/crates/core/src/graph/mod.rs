//! Adjacency generation for the all-token/any-document graph.
//!
//! Node layout: token nodes `[0, u)` followed by the current batch's document
//! nodes `[u, u+b)`. The token-token block comes from PPMI over the occurrence
//! memory and only changes when the memory does; the document-token block is
//! TF-IDF over the batch; documents connect to each other only through their
//! self-loops.

mod sparse;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

pub use sparse::SparseMatrix;

use crate::codec;
use crate::error::{Error, Result};
use crate::omm::OmmState;
use crate::vocab::{TokenId, TokenizedDocument};

/// Token-token PPMI block with unit diagonal.
pub fn build_ppmi(state: &OmmState) -> Result<SparseMatrix> {
    if state.documents() == 0 {
        return Err(Error::EmptyMemory);
    }
    let u = state.vocab_size();
    let s = state.documents() as f64;
    let counts = state.token_counts();
    let mut triplets: Vec<(usize, usize, f64)> = (0..u).map(|i| (i, i, 1.0)).collect();
    for (i, j, co) in state.pairs() {
        let (ci, cj) = (counts[i as usize], counts[j as usize]);
        if co == 0 || ci == 0 || cj == 0 {
            continue;
        }
        let pmi = (s * co as f64 / (ci as f64 * cj as f64)).ln();
        if pmi > 0.0 {
            triplets.push((i as usize, j as usize, pmi));
            triplets.push((j as usize, i as usize, pmi));
        }
    }
    SparseMatrix::from_triplets(u, triplets)
}

/// Document-token TF-IDF rows for one batch (`b × u`, sparse).
#[derive(Debug, Clone, PartialEq)]
pub struct DocTokenBlock {
    vocab_size: usize,
    rows: Vec<Vec<(TokenId, f64)>>,
}

impl DocTokenBlock {
    pub fn new(vocab_size: usize, rows: Vec<Vec<(TokenId, f64)>>) -> Self {
        Self { vocab_size, rows }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn docs(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, doc: usize) -> &[(TokenId, f64)] {
        &self.rows[doc]
    }

    pub fn get(&self, doc: usize, token: TokenId) -> f64 {
        self.rows[doc]
            .iter()
            .find(|&&(t, _)| t == token)
            .map_or(0.0, |&(_, w)| w)
    }
}

/// `(g(s,t)/|s|) · max(log(s/(c_t+1)), 0)` with `s` and `c` from the memory.
pub fn build_doc_token(state: &OmmState, docs: &[TokenizedDocument]) -> Result<DocTokenBlock> {
    if state.documents() == 0 {
        return Err(Error::EmptyMemory);
    }
    let u = state.vocab_size();
    let s = state.documents() as f64;
    let mut rows = Vec::with_capacity(docs.len());
    for (j, doc) in docs.iter().enumerate() {
        if doc.token_ids.is_empty() {
            return Err(Error::ZeroLengthDocument(j));
        }
        let mut freq: BTreeMap<TokenId, usize> = BTreeMap::new();
        for &t in &doc.token_ids {
            if t as usize >= u {
                return Err(Error::TokenOutOfRange { id: t, size: u });
            }
            *freq.entry(t).or_insert(0) += 1;
        }
        let len = doc.token_ids.len() as f64;
        let row = freq
            .into_iter()
            .filter_map(|(t, g)| {
                let idf = (s / (state.token_count(t) as f64 + 1.0)).ln().max(0.0);
                let w = g as f64 / len * idf;
                (w > 0.0).then_some((t, w))
            })
            .collect();
        rows.push(row);
    }
    Ok(DocTokenBlock::new(u, rows))
}

/// Block composition `[[A1, A2ᵀ], [A2, I]]`.
pub fn compose_adjacency(ppmi: &SparseMatrix, doc_token: &DocTokenBlock) -> Result<SparseMatrix> {
    let u = ppmi.dim();
    if doc_token.vocab_size() != u {
        return Err(Error::ShapeMismatch(format!(
            "token block is {u}x{u} but document rows span {} tokens",
            doc_token.vocab_size()
        )));
    }
    let b = doc_token.docs();
    let mut triplets: Vec<(usize, usize, f64)> = ppmi.triplets().collect();
    for j in 0..b {
        let r = u + j;
        triplets.push((r, r, 1.0));
        for &(t, w) in doc_token.row(j) {
            triplets.push((r, t as usize, w));
            triplets.push((t as usize, r, w));
        }
    }
    SparseMatrix::from_triplets(u + b, triplets)
}

/// PPMI block memoized per memory version.
#[derive(Debug, Default, Clone)]
pub struct PpmiCache {
    cached: Option<(u64, Arc<SparseMatrix>)>,
}

impl PpmiCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, state: &OmmState) -> Result<Arc<SparseMatrix>> {
        match &self.cached {
            Some((v, m)) if *v == state.version() && m.dim() == state.vocab_size() => Ok(m.clone()),
            _ => {
                let m = Arc::new(build_ppmi(state)?);
                self.cached = Some((state.version(), m.clone()));
                Ok(m)
            }
        }
    }

    pub fn version(&self) -> Option<u64> {
        self.cached.as_ref().map(|(v, _)| *v)
    }
}

/// The adjacency for one batch, raw and normalized.
#[derive(Debug, Clone)]
pub struct AdjacencyBundle {
    pub ppmi: Arc<SparseMatrix>,
    pub doc_token: DocTokenBlock,
    pub composed: SparseMatrix,
    pub normalized: SparseMatrix,
    pub omm_version: u64,
}

impl AdjacencyBundle {
    pub fn build(cache: &mut PpmiCache, state: &OmmState, docs: &[TokenizedDocument]) -> Result<Self> {
        let ppmi = cache.get(state)?;
        let doc_token = build_doc_token(state, docs)?;
        let composed = compose_adjacency(&ppmi, &doc_token)?;
        let normalized = composed.normalize()?;
        Ok(Self {
            ppmi,
            doc_token,
            composed,
            normalized,
            omm_version: state.version(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.ppmi.dim()
    }

    pub fn docs(&self) -> usize {
        self.doc_token.docs()
    }

    pub fn check_version(&self, state: &OmmState) -> Result<()> {
        if self.omm_version != state.version() {
            return Err(Error::VersionMismatch {
                bundle: self.omm_version,
                memory: state.version(),
            });
        }
        Ok(())
    }

    /// Full normalized graph.
    pub fn full_graph(&self) -> GraphView {
        GraphView {
            matrix: self.normalized.clone(),
            token_nodes: None,
            doc_offset: self.vocab_size(),
            docs: self.docs(),
        }
    }

    /// Normalized graph restricted to nodes within `hops` edges of some
    /// document node. Document-row outputs of an `hops`-layer GCN are the
    /// same as on the full graph: a node at distance `k` only needs its
    /// layer-`(hops-k)` value, which depends on nodes at distance `<= hops`.
    pub fn projected_graph(&self, hops: usize) -> GraphView {
        let n = self.normalized.dim();
        let u = self.vocab_size();
        let mut dist = vec![usize::MAX; n];
        let mut frontier: Vec<usize> = (u..n).collect();
        for &d in &frontier {
            dist[d] = 0;
        }
        for step in 1..=hops {
            let mut next = Vec::new();
            for &v in &frontier {
                for &w in self.normalized.row(v).0 {
                    if dist[w] == usize::MAX {
                        dist[w] = step;
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        let nodes: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
        let kept_tokens = nodes.len() - self.docs();
        let mut token_nodes = vec![usize::MAX; u];
        for (k, &v) in nodes[..kept_tokens].iter().enumerate() {
            token_nodes[v] = k;
        }
        GraphView {
            matrix: self.normalized.submatrix(&nodes),
            token_nodes: Some(token_nodes),
            doc_offset: kept_tokens,
            docs: self.docs(),
        }
    }

    /// Writes the composed adjacency as `row col weight` lines.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        for (r, c, w) in self.composed.triplets() {
            let _ = writeln!(text, "{r} {c} {w}");
        }
        codec::atomic_write(path.as_ref(), text.as_bytes())
    }
}

/// A normalized graph as seen by the GCN: where token and document nodes
/// live in the (possibly projected) node index space.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub matrix: SparseMatrix,
    token_nodes: Option<Vec<usize>>,
    doc_offset: usize,
    docs: usize,
}

impl GraphView {
    pub fn nodes(&self) -> usize {
        self.matrix.dim()
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn doc_offset(&self) -> usize {
        self.doc_offset
    }

    pub fn doc_node(&self, j: usize) -> usize {
        self.doc_offset + j
    }

    /// Node index of a token, or `None` if projected away.
    pub fn token_node(&self, t: TokenId) -> Option<usize> {
        match &self.token_nodes {
            None => Some(t as usize),
            Some(map) => map.get(t as usize).copied().filter(|&v| v != usize::MAX),
        }
    }
}
