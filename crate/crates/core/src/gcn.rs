//! Multi-layer graph convolution `H_k = relu(Ã H_{k-1} W_k)` with exact
//! reverse-mode gradients.
//!
//! Layers are evaluated as `Ã (H W)`. Zero input rows are skipped in both
//! products, which makes the first layer over an unjammed input (a handful
//! of nonzero rows) cheap; the last layer can be restricted to the rows the
//! caller actually reads.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

pub const DEFAULT_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<Array2<f64>>,
}

impl GcnParams {
    /// `h` layers of `d × d`, uniform in `±sqrt(6 / 2d)`.
    pub fn init<R: Rng>(dim: usize, layers: usize, rng: &mut R) -> Self {
        assert!(layers >= 1, "a GCN needs at least one layer");
        let a = (6.0 / (2.0 * dim as f64)).sqrt();
        Self {
            layers: (0..layers)
                .map(|_| Array2::from_shape_simple_fn((dim, dim), || rng.gen_range(-a..a)))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
        }
    }

    pub fn forward(&self, adj: &SparseMatrix, x: Array2<f64>, last_rows: Option<&[usize]>) -> Result<GcnPass> {
        let d = self.dim();
        if x.nrows() != adj.dim() || x.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "gcn input is {}x{}, graph has {} nodes and d={d}",
                x.nrows(),
                x.ncols(),
                adj.dim()
            )));
        }
        let n = adj.dim();
        let mut h = x;
        let mut active = nonzero_rows(&h);
        let mut layers = Vec::with_capacity(self.depth());
        for (k, w) in self.layers.iter().enumerate() {
            let rows: Vec<usize> = match last_rows {
                Some(r) if k + 1 == self.depth() => r.to_vec(),
                _ => (0..n).collect(),
            };
            let hw = masked_matmul(&h, &active, w);
            let mut pre = Array2::zeros((n, d));
            for &r in &rows {
                adj.accumulate_row(r, hw.view(), Some(&active), pre.row_mut(r));
            }
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite activation in layer {}", k + 1)));
            }
            let next = pre.mapv(|v| v.max(0.0));
            let next_active = nonzero_rows(&next);
            layers.push(LayerCache {
                input: std::mem::replace(&mut h, next),
                active: std::mem::replace(&mut active, next_active),
                pre,
            });
        }
        Ok(GcnPass { layers, output: h })
    }

    /// Gradients of `sum(upstream ⊙ output)` w.r.t. every weight and the
    /// input. Input gradients are only produced on nonzero input rows.
    pub fn backward(&self, adj: &SparseMatrix, pass: &GcnPass, upstream: &Array2<f64>) -> GcnGrads {
        let mut weights = self.zeros_like();
        let mut g_h = upstream.clone();
        for (k, (w, cache)) in self.layers.iter().zip(&pass.layers).enumerate().rev() {
            let mut g_pre = g_h;
            Zip::from(&mut g_pre).and(&cache.pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            let g_active = nonzero_rows(&g_pre);
            // Ã is symmetric, so Ãᵀ G = Ã G; only rows feeding live inputs matter.
            let mut g_hw = Array2::zeros(g_pre.raw_dim());
            for r in 0..adj.dim() {
                if cache.active[r] {
                    adj.accumulate_row(r, g_pre.view(), Some(&g_active), g_hw.row_mut(r));
                }
            }
            let live: Vec<usize> = (0..adj.dim()).filter(|&r| cache.active[r]).collect();
            let h_live = cache.input.select(Axis(0), &live);
            let g_live = g_hw.select(Axis(0), &live);
            weights.layers[k] = h_live.t().dot(&g_live);
            let back = g_live.dot(&w.t());
            let mut g_in = Array2::zeros(cache.input.raw_dim());
            for (i, &r) in live.iter().enumerate() {
                g_in.row_mut(r).assign(&back.row(i));
            }
            g_h = g_in;
        }
        GcnGrads { weights, input: g_h }
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    active: Vec<bool>,
    pre: Array2<f64>,
}

/// Forward intermediates of one pass.
#[derive(Debug, Clone)]
pub struct GcnPass {
    layers: Vec<LayerCache>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GcnGrads {
    pub weights: GcnParams,
    pub input: Array2<f64>,
}

fn nonzero_rows(m: &Array2<f64>) -> Vec<bool> {
    m.axis_iter(Axis(0))
        .map(|r| r.iter().any(|&v| v != 0.0))
        .collect()
}

/// `H W` computed on active rows only; inactive rows stay zero.
fn masked_matmul(h: &Array2<f64>, active: &[bool], w: &Array2<f64>) -> Array2<f64> {
    let live: Vec<usize> = (0..h.nrows()).filter(|&r| active[r]).collect();
    if live.len() * 2 > h.nrows() {
        return h.dot(w);
    }
    let prod = h.select(Axis(0), &live).dot(w);
    let mut out = Array2::zeros((h.nrows(), w.ncols()));
    for (i, &r) in live.iter().enumerate() {
        out.row_mut(r).assign(&prod.row(i));
    }
    out
}

/// Document-row embeddings pulled out of the GCN passes over one batch.
#[derive(Debug, Clone)]
pub struct GcnOutputs {
    /// `b × d`: document `j`'s own row from its unjammed pass.
    pub z: Array2<f64>,
    /// Per anchor `j`, the `b × d` document rows of its unjammed pass.
    pub z_p: Vec<Array2<f64>>,
    /// `b × d`: document rows of the jammed pass.
    pub z_n: Array2<f64>,
}

/// Extracts document rows `[doc_offset, doc_offset + b)` from the jammed
/// output and each unjammed output.
pub fn extract_outputs(jammed: &Array2<f64>, unjammed: &[Array2<f64>], doc_offset: usize) -> GcnOutputs {
    let b = unjammed.len();
    let docs = s![doc_offset..doc_offset + b, ..];
    let z_p: Vec<Array2<f64>> = unjammed.iter().map(|x| x.slice(docs).to_owned()).collect();
    let mut z = Array2::zeros((b, jammed.ncols()));
    for (j, zp) in z_p.iter().enumerate() {
        z.row_mut(j).assign(&zp.row(j));
    }
    GcnOutputs {
        z,
        z_p,
        z_n: jammed.slice(docs).to_owned(),
    }
}
