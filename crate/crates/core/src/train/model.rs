//! Model parameters, the per-batch forward/backward pass, and checkpoints.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, ParamUpdate};
use super::classifier::Classifier;
use super::config::TrainConfig;
use super::loss::{classification_loss, contrastive_loss};
use crate::codec::{self, Decoder, Encoder as ByteEncoder};
use crate::encoder::{DocumentBatch, DocumentEncoder, EncodedBatch, NodeRows, NodeSlot};
use crate::error::{Error, Result};
use crate::gcn::{extract_outputs, GcnParams, GcnPass};
use crate::graph::{AdjacencyBundle, GraphView, PpmiCache};
use crate::omm::OmmState;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CGCK";
const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: DocumentEncoder,
    pub gcn: GcnParams,
    pub classifier: Classifier,
    pub vocab_size: usize,
    pub labels: Vec<String>,
    pub config: TrainConfig,
}

/// Gradients for every parameter group.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub table: Option<Array2<f64>>,
    pub gcn: GcnParams,
    pub classifier: Classifier,
}

impl ModelGrads {
    pub fn zeros(model: &Model) -> Self {
        Self {
            table: model.encoder.table().map(|t| Array2::zeros(t.raw_dim())),
            gcn: model.gcn.zeros_like(),
            classifier: model.classifier.zeros_like(),
        }
    }

    /// Every gradient entry, in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(t) = &self.table {
            out.extend(t.iter());
        }
        for w in &self.gcn.layers {
            out.extend(w.iter());
        }
        let c = &self.classifier;
        out.extend(c.w1.iter().chain(c.b1.iter()).chain(c.w2.iter()).chain(c.b2.iter()));
        out
    }
}

/// What a batch pass computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Classification loss on `Z` (needs labels).
    pub classify: bool,
    /// Contrastive loss with this weight in the gradient. `Some(0.0)` reports
    /// the loss without letting it contribute.
    pub contrastive: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss_cls: Option<f64>,
    pub loss_aic: Option<f64>,
    pub probs: Option<Array2<f64>>,
    pub grads: Option<ModelGrads>,
}

impl BatchOutcome {
    pub fn total(&self, lambda: f64) -> f64 {
        self.loss_cls.unwrap_or(0.0) + lambda * self.loss_aic.unwrap_or(0.0)
    }
}

/// Places sparse input rows onto the graph's node index space.
fn place(rows: &NodeRows, graph: &GraphView) -> (Array2<f64>, Vec<Option<usize>>) {
    let mut x = Array2::zeros((graph.nodes(), rows.values.ncols()));
    let nodes: Vec<Option<usize>> = rows
        .slots
        .iter()
        .map(|slot| match *slot {
            NodeSlot::Token { token, .. } => graph.token_node(token),
            NodeSlot::Doc(j) => Some(graph.doc_node(j)),
        })
        .collect();
    for (r, node) in nodes.iter().enumerate() {
        if let Some(n) = node {
            x.row_mut(*n).assign(&rows.values.row(r));
        }
    }
    (x, nodes)
}

fn pick_rows(grad: &Array2<f64>, nodes: &[Option<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros((nodes.len(), grad.ncols()));
    for (r, node) in nodes.iter().enumerate() {
        if let Some(n) = node {
            out.row_mut(r).assign(&grad.row(*n));
        }
    }
    out
}

struct PassRecord {
    rows: NodeRows,
    nodes: Vec<Option<usize>>,
    pass: GcnPass,
}

impl Model {
    pub fn new(
        vocab_size: usize,
        labels: Vec<String>,
        encoder: Option<DocumentEncoder>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("model needs at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = match encoder {
            Some(e) => e,
            None => DocumentEncoder::tiny(vocab_size, config.dim, &mut rng),
        };
        if encoder.dim() != config.dim {
            return Err(Error::Config(format!(
                "encoder width {} differs from configured dim {}",
                encoder.dim(),
                config.dim
            )));
        }
        let gcn = GcnParams::init(config.dim, config.layers, &mut rng);
        let classifier = Classifier::init(config.dim, labels.len(), &mut rng);
        Ok(Self {
            encoder,
            gcn,
            classifier,
            vocab_size,
            labels,
            config,
        })
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    fn graph(&self, bundle: &AdjacencyBundle) -> GraphView {
        if self.config.project_hops {
            bundle.projected_graph(self.gcn.depth())
        } else {
            bundle.full_graph()
        }
    }

    /// Builds the batch graph and encodes the batch.
    pub fn prepare(
        &self,
        omm: &OmmState,
        cache: &mut PpmiCache,
        batch: &DocumentBatch,
    ) -> Result<(GraphView, EncodedBatch)> {
        if omm.vocab_size() != self.vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "memory has {} tokens, model {}",
                omm.vocab_size(),
                self.vocab_size
            )));
        }
        let bundle = AdjacencyBundle::build(cache, omm, &batch.docs)?;
        bundle.check_version(omm)?;
        Ok((self.graph(&bundle), self.encoder.encode(batch)?))
    }

    /// Unjammed output for document `j`, reading back only `last_rows`.
    fn unjammed_pass(&self, graph: &GraphView, enc: &EncodedBatch, j: usize, last_rows: &[usize]) -> Result<PassRecord> {
        let rows = enc.assemble_unjammed(j);
        let (x, nodes) = place(&rows, graph);
        let pass = self.gcn.forward(&graph.matrix, x, Some(last_rows))?;
        Ok(PassRecord { rows, nodes, pass })
    }

    /// `Z(j)`: document `j`'s row of its own unjammed pass.
    pub fn unjammed_output(&self, omm: &OmmState, cache: &mut PpmiCache, batch: &DocumentBatch, j: usize) -> Result<Array1<f64>> {
        let (graph, enc) = self.prepare(omm, cache, batch)?;
        let node = graph.doc_node(j);
        let rec = self.unjammed_pass(&graph, &enc, j, &[node])?;
        Ok(rec.pass.output.row(node).to_owned())
    }

    /// Class probabilities for each document of the batch.
    pub fn predict_batch(&self, omm: &OmmState, cache: &mut PpmiCache, batch: &DocumentBatch) -> Result<Array2<f64>> {
        let (graph, enc) = self.prepare(omm, cache, batch)?;
        let b = batch.len();
        let z_rows = (0..b)
            .into_par_iter()
            .map(|j| {
                let node = graph.doc_node(j);
                let rec = self.unjammed_pass(&graph, &enc, j, &[node])?;
                Ok(rec.pass.output.row(node).to_owned())
            })
            .collect::<Result<Vec<Array1<f64>>>>()?;
        Ok(self.classifier.probabilities(&stack_rows(&z_rows, self.config.dim)))
    }

    /// Forward (and optionally backward) pass over one batch.
    pub fn run_batch(
        &self,
        omm: &OmmState,
        cache: &mut PpmiCache,
        batch: &DocumentBatch,
        objective: Objective,
        backward: bool,
    ) -> Result<BatchOutcome> {
        let (graph, enc) = self.prepare(omm, cache, batch)?;
        let b = batch.len();
        let doc_nodes: Vec<usize> = (0..b).map(|j| graph.doc_node(j)).collect();
        let contrast = objective.contrastive.is_some();

        let unjammed = (0..b)
            .into_par_iter()
            .map(|j| {
                if contrast {
                    self.unjammed_pass(&graph, &enc, j, &doc_nodes)
                } else {
                    self.unjammed_pass(&graph, &enc, j, &doc_nodes[j..j + 1])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let jammed = if contrast {
            let rows = enc.assemble_jammed();
            let (x, nodes) = place(&rows, &graph);
            let pass = self.gcn.forward(&graph.matrix, x, Some(&doc_nodes))?;
            Some(PassRecord { rows, nodes, pass })
        } else {
            None
        };

        let mut z = Array2::zeros((b, self.config.dim));
        for (j, rec) in unjammed.iter().enumerate() {
            z.row_mut(j).assign(&rec.pass.output.row(doc_nodes[j]));
        }

        let cls = if objective.classify {
            let labels = batch
                .labels()
                .into_iter()
                .collect::<Option<Vec<usize>>>()
                .ok_or(Error::NoLabeledData)?;
            Some(classification_loss(&self.classifier, &z, &labels)?)
        } else {
            None
        };
        let aic = match &jammed {
            Some(jam) => {
                let outs: Vec<Array2<f64>> = unjammed.iter().map(|r| r.pass.output.clone()).collect();
                let extracted = extract_outputs(&jam.pass.output, &outs, graph.doc_offset());
                Some(contrastive_loss(&extracted.z_p, &extracted.z_n)?)
            }
            None => None,
        };

        let mut outcome = BatchOutcome {
            loss_cls: cls.as_ref().map(|c| c.loss),
            loss_aic: aic.as_ref().map(|a| a.loss),
            probs: cls.as_ref().map(|c| c.probs.clone()),
            grads: None,
        };
        if !backward {
            return Ok(outcome);
        }

        let weight = objective.contrastive.unwrap_or(0.0);
        let aic = aic.filter(|_| weight != 0.0);
        let n = graph.nodes();
        let d = self.config.dim;
        let per_pass = unjammed
            .par_iter()
            .enumerate()
            .map(|(j, rec)| {
                let mut up = Array2::zeros((n, d));
                if let Some(c) = &cls {
                    up.row_mut(doc_nodes[j]).assign(&c.grad_z.row(j));
                }
                if let Some(a) = &aic {
                    for (i, &node) in doc_nodes.iter().enumerate() {
                        up.row_mut(node).scaled_add(weight, &a.grad_z_p[j].row(i));
                    }
                }
                let g = self.gcn.backward(&graph.matrix, &rec.pass, &up);
                let input = pick_rows(&g.input, &rec.nodes);
                (g.weights, input)
            })
            .collect::<Vec<_>>();

        let mut grads = ModelGrads::zeros(self);
        let mut state_grads = enc.zero_state_grads();
        for ((w, input), rec) in per_pass.iter().zip(&unjammed) {
            for (acc, g) in grads.gcn.layers.iter_mut().zip(&w.layers) {
                *acc += g;
            }
            enc.backward_rows(&rec.rows.slots, input, &mut state_grads);
        }
        if let (Some(jam), Some(a)) = (&jammed, &aic) {
            let mut up = Array2::zeros((n, d));
            for (i, &node) in doc_nodes.iter().enumerate() {
                up.row_mut(node).scaled_add(weight, &a.grad_z_n.row(i));
            }
            let g = self.gcn.backward(&graph.matrix, &jam.pass, &up);
            for (acc, gw) in grads.gcn.layers.iter_mut().zip(&g.weights.layers) {
                *acc += gw;
            }
            enc.backward_rows(&jam.rows.slots, &pick_rows(&g.input, &jam.nodes), &mut state_grads);
        }
        if let Some(c) = cls {
            grads.classifier = c.grads;
        }
        if let Some(table) = grads.table.as_mut() {
            self.encoder.accumulate_grad(&enc, &state_grads, table);
        }
        outcome.grads = Some(grads);
        Ok(outcome)
    }

    /// Applies one optimizer step. `None` learning rates freeze a group.
    pub fn apply(&mut self, adam: &mut Adam, grads: &ModelGrads, lr_encoder: Option<f64>, lr_other: Option<f64>, lr_classifier: Option<f64>) {
        let mut updates = Vec::new();
        let mut empty: [f64; 0] = [];
        match (self.encoder.table_mut(), &grads.table) {
            (Some(t), Some(g)) => updates.push(ParamUpdate {
                lr: lr_encoder,
                param: t.as_slice_mut().expect("standard layout"),
                grad: g.as_slice().expect("standard layout"),
            }),
            _ => updates.push(ParamUpdate {
                lr: None,
                param: &mut empty,
                grad: &[],
            }),
        }
        for (w, g) in self.gcn.layers.iter_mut().zip(&grads.gcn.layers) {
            updates.push(ParamUpdate {
                lr: lr_other,
                param: w.as_slice_mut().expect("standard layout"),
                grad: g.as_slice().expect("standard layout"),
            });
        }
        let c = &mut self.classifier;
        let gc = &grads.classifier;
        updates.push(ParamUpdate {
            lr: lr_classifier,
            param: c.w1.as_slice_mut().unwrap(),
            grad: gc.w1.as_slice().unwrap(),
        });
        updates.push(ParamUpdate {
            lr: lr_classifier,
            param: c.b1.as_slice_mut().unwrap(),
            grad: gc.b1.as_slice().unwrap(),
        });
        updates.push(ParamUpdate {
            lr: lr_classifier,
            param: c.w2.as_slice_mut().unwrap(),
            grad: gc.w2.as_slice().unwrap(),
        });
        updates.push(ParamUpdate {
            lr: lr_classifier,
            param: c.b2.as_slice_mut().unwrap(),
            grad: gc.b2.as_slice().unwrap(),
        });
        adam.step(updates);
    }

    /// Layout: magic `CGCK`, format u32, metadata JSON (u32 length + UTF-8),
    /// tensor count u32, then per tensor name, rank u32, dims u64, f64
    /// values; trailing CRC32. Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            vocab_size: self.vocab_size,
            labels: self.labels.clone(),
            encoder: if self.encoder.is_trainable() { "tiny" } else { "external" }.into(),
            config: self.config.clone(),
        };
        let mut e = ByteEncoder::new(CHECKPOINT_MAGIC, CHECKPOINT_FORMAT);
        e.str(&serde_json::to_string(&meta).expect("metadata serializes"));
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        let mut push2 = |name: String, m: &Array2<f64>| {
            tensors.push((name, m.shape().to_vec(), m.iter().copied().collect()));
        };
        if let Some(t) = self.encoder.table() {
            push2("encoder.table".into(), t);
        }
        for (k, w) in self.gcn.layers.iter().enumerate() {
            push2(format!("gcn.w{}", k + 1), w);
        }
        push2("mlp.w1".into(), &self.classifier.w1);
        push2("mlp.w2".into(), &self.classifier.w2);
        tensors.push(("mlp.b1".into(), vec![self.classifier.b1.len()], self.classifier.b1.to_vec()));
        tensors.push(("mlp.b2".into(), vec![self.classifier.b2.len()], self.classifier.b2.to_vec()));
        e.u32(tensors.len() as u32);
        for (name, dims, data) in tensors {
            e.str(&name);
            e.u32(dims.len() as u32);
            for d in dims {
                e.u64(d as u64);
            }
            for v in data {
                e.f64(v);
            }
        }
        e.finish_with_checksum()
    }

    /// Restores a checkpoint. An external-encoder checkpoint needs the
    /// embedding source supplied separately.
    pub fn from_bytes(bytes: &[u8], path: &Path, external: Option<DocumentEncoder>) -> Result<Self> {
        let mut d = Decoder::with_checksum(bytes, path, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&d.str()?).map_err(|e| d.corrupt(&format!("metadata: {e}")))?;
        let count = d.u32()?;
        let mut tensors = std::collections::HashMap::new();
        for _ in 0..count {
            let name = d.str()?;
            let rank = d.u32()? as usize;
            let dims = (0..rank).map(|_| d.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            d.ensure_remaining(len as u64, 8)?;
            let data = (0..len).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
            tensors.insert(name, (dims, data));
        }
        let mut take2 = |name: &str| -> Result<Array2<f64>> {
            let (dims, data) = tensors.remove(name).ok_or_else(|| d.corrupt(&format!("missing tensor {name}")))?;
            if dims.len() != 2 {
                return Err(d.corrupt(&format!("tensor {name} is not a matrix")));
            }
            Array2::from_shape_vec((dims[0], dims[1]), data).map_err(|e| d.corrupt(&e.to_string()))
        };
        let encoder = if meta.encoder == "tiny" {
            DocumentEncoder::Tiny(take2("encoder.table")?)
        } else {
            external.ok_or_else(|| Error::Config("checkpoint uses an external encoder; supply --encoder external:<path>".into()))?
        };
        let layers = (1..=meta.config.layers)
            .map(|k| take2(&format!("gcn.w{k}")))
            .collect::<Result<Vec<_>>>()?;
        let w1 = take2("mlp.w1")?;
        let w2 = take2("mlp.w2")?;
        let mut take1 = |name: &str| -> Result<Array1<f64>> {
            let (_, data) = tensors.remove(name).ok_or_else(|| d.corrupt(&format!("missing tensor {name}")))?;
            Ok(Array1::from(data))
        };
        let b1 = take1("mlp.b1")?;
        let b2 = take1("mlp.b2")?;
        let model = Self {
            encoder,
            gcn: GcnParams { layers },
            classifier: Classifier { w1, b1, w2, b2 },
            vocab_size: meta.vocab_size,
            labels: meta.labels,
            config: meta.config,
        };
        if model.encoder.dim() != model.config.dim || model.classifier.classes() != model.labels.len() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: "tensor shapes disagree with metadata".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::atomic_write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>, external: Option<DocumentEncoder>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&codec::read_file(path)?, path, external)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    vocab_size: usize,
    labels: Vec<String>,
    encoder: String,
    config: TrainConfig,
}

fn stack_rows(rows: &[Array1<f64>], d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(src);
    }
    out
}
