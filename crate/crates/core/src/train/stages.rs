//! The three lifecycle stages and evaluation.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::{Adam, ParamUpdate};
use super::classifier::Classifier;
use super::loss::classification_loss;
use super::model::{Model, Objective};
use crate::data::Example;
use crate::encoder::{DocumentBatch, NodeSlot};
use crate::error::{Error, Result};
use crate::graph::PpmiCache;
use crate::omm::OmmState;
use crate::vocab::TokenId;

/// One metrics row. Empty cells mean "not computed".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub stage: String,
    pub session: usize,
    pub epoch: usize,
    pub loss_cls: Option<f64>,
    pub loss_aic: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub seconds: f64,
}

pub fn write_metrics(path: impl AsRef<std::path::Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Config(format!("metrics: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("metrics: {e}")))?;
    crate::codec::atomic_write(path, &bytes)
}

pub(crate) fn make_batch(examples: &[&Example], pad_id: TokenId) -> DocumentBatch {
    DocumentBatch::new(
        examples.iter().map(|e| e.doc.clone()).collect(),
        examples.iter().map(|e| e.key.clone()).collect(),
        pad_id,
    )
}

fn shuffled<'a>(examples: &'a [Example], rng: &mut ChaCha8Rng) -> Vec<&'a Example> {
    let mut refs: Vec<&Example> = examples.iter().collect();
    refs.shuffle(rng);
    refs
}

/// Warm-starts the encoder with a classification task on pooled document
/// embeddings. The classifier used here is temporary. Returns the mean
/// training loss of each epoch.
pub fn stage1_post_pretrain(model: &mut Model, data: &[Example], pad_id: TokenId) -> Result<Vec<f64>> {
    let labeled: Vec<Example> = data.iter().filter(|e| e.label().is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::NoLabeledData);
    }
    if !model.encoder.is_trainable() {
        log::warn!("post-pretraining skipped: external encoder is frozen");
        return Ok(Vec::new());
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5151);
    let mut clf = Classifier::init(cfg.dim, model.classes(), &mut rng);
    let mut adam = Adam::default();
    let mut losses = Vec::with_capacity(cfg.stage1_epochs);
    for _ in 0..cfg.stage1_epochs {
        let order = shuffled(&labeled, &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(chunk, pad_id);
            let labels: Vec<usize> = chunk.iter().map(|e| e.label().expect("filtered")).collect();
            let enc = model.encoder.encode(&batch)?;
            let out = classification_loss(&clf, &enc.doc_embeddings, &labels)?;
            total += out.loss * chunk.len() as f64;
            let slots: Vec<NodeSlot> = (0..chunk.len()).map(NodeSlot::Doc).collect();
            let mut state_grads = enc.zero_state_grads();
            enc.backward_rows(&slots, &out.grad_z, &mut state_grads);
            let table = model.encoder.table().expect("trainable");
            let mut g_table = Array2::zeros(table.raw_dim());
            model.encoder.accumulate_grad(&enc, &state_grads, &mut g_table);
            let g = out.grads;
            let table = model.encoder.table_mut().expect("trainable");
            let lr = Some(cfg.lr_gcn);
            adam.step(vec![
                ParamUpdate {
                    lr: Some(cfg.lr_post_pretrain),
                    param: table.as_slice_mut().expect("standard layout"),
                    grad: g_table.as_slice().expect("standard layout"),
                },
                ParamUpdate {
                    lr,
                    param: clf.w1.as_slice_mut().unwrap(),
                    grad: g.w1.as_slice().unwrap(),
                },
                ParamUpdate {
                    lr,
                    param: clf.b1.as_slice_mut().unwrap(),
                    grad: g.b1.as_slice().unwrap(),
                },
                ParamUpdate {
                    lr,
                    param: clf.w2.as_slice_mut().unwrap(),
                    grad: g.w2.as_slice().unwrap(),
                },
                ParamUpdate {
                    lr,
                    param: clf.b2.as_slice_mut().unwrap(),
                    grad: g.b2.as_slice().unwrap(),
                },
            ]);
        }
        losses.push(total / labeled.len() as f64);
    }
    Ok(losses)
}

/// Predicted class probabilities, batched in the given order.
pub fn predict(
    model: &Model,
    omm: &OmmState,
    cache: &mut PpmiCache,
    examples: &[Example],
    pad_id: TokenId,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((examples.len(), model.classes()));
    let refs: Vec<&Example> = examples.iter().collect();
    for (i, chunk) in refs.chunks(model.config.batch_size).enumerate() {
        let probs = model.predict_batch(omm, cache, &make_batch(chunk, pad_id))?;
        let start = i * model.config.batch_size;
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&probs);
    }
    Ok(out)
}

pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fraction of labeled examples classified correctly.
pub fn evaluate(model: &Model, omm: &OmmState, cache: &mut PpmiCache, examples: &[Example], pad_id: TokenId) -> Result<f64> {
    let labeled: Vec<Example> = examples.iter().filter(|e| e.label().is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::NoLabeledData);
    }
    let probs = predict(model, omm, cache, &labeled, pad_id)?;
    let correct = probs
        .axis_iter(Axis(0))
        .zip(&labeled)
        .filter(|(row, e)| Some(argmax(row.view())) == e.label())
        .count();
    Ok(correct as f64 / labeled.len() as f64)
}

/// Splits off a validation share with the seeded generator.
pub fn validation_split(data: &[Example], fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let mut n_val = (data.len() as f64 * fraction).round() as usize;
    if fraction > 0.0 && n_val == 0 && data.len() >= 2 {
        n_val = 1;
    }
    let val = idx[..n_val].iter().map(|&i| data[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| data[i].clone()).collect();
    (train, val)
}

pub struct StageContext<'a> {
    pub omm: &'a mut OmmState,
    pub cache: &'a mut PpmiCache,
    pub pad_id: TokenId,
    /// Held-out set scored after every epoch, if any.
    pub test: Option<&'a [Example]>,
    pub session: usize,
}

/// Multi-task training. The occurrence memory is first updated with the
/// training documents. Keeps the parameters with the best validation
/// accuracy and stops after `patience` epochs without improvement.
pub fn stage2_train(model: &mut Model, data: &[Example], ctx: &mut StageContext<'_>) -> Result<Vec<MetricsRow>> {
    let labeled: Vec<Example> = data.iter().filter(|e| e.label().is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::NoLabeledData);
    }
    let sentences: Vec<_> = data.iter().map(|e| e.sentences.clone()).collect();
    ctx.omm.update(&sentences)?;

    let cfg = model.config.clone();
    let (train, val) = validation_split(&labeled, cfg.val_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2222);
    let mut adam = Adam::default();
    let objective = Objective {
        classify: true,
        contrastive: (cfg.lambda > 0.0).then_some(cfg.lambda),
    };
    let mut rows = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = shuffled(&train, &mut rng);
        let (mut cls_sum, mut aic_sum, mut aic_seen) = (0.0, 0.0, false);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(chunk, ctx.pad_id);
            let out = model.run_batch(ctx.omm, ctx.cache, &batch, objective, true)?;
            cls_sum += out.loss_cls.unwrap_or(0.0) * chunk.len() as f64;
            if let Some(a) = out.loss_aic {
                aic_sum += a * chunk.len() as f64;
                aic_seen = true;
            }
            let grads = out.grads.expect("backward requested");
            model.apply(&mut adam, &grads, Some(cfg.lr_encoder), Some(cfg.lr_gcn), Some(cfg.lr_gcn));
        }
        let n = train.len() as f64;
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate(model, ctx.omm, ctx.cache, &val, ctx.pad_id)?)
        };
        let test_acc = match ctx.test {
            Some(t) => Some(evaluate(model, ctx.omm, ctx.cache, t, ctx.pad_id)?),
            None => None,
        };
        rows.push(MetricsRow {
            stage: "train".into(),
            session: ctx.session,
            epoch,
            loss_cls: Some(cls_sum / n),
            loss_aic: aic_seen.then(|| aic_sum / n),
            val_acc,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: loss_cls {:.4} val_acc {:?}", cls_sum / n, val_acc);
        let Some(acc) = val_acc else { continue };
        if best.as_ref().map_or(true, |(b, _)| acc > *b) {
            best = Some((acc, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(rows)
}

/// Label-free update: ingests the documents into the occurrence memory,
/// then fine-tunes encoder and GCN on the contrastive loss alone. Labels on
/// the input are never read.
pub fn stage3_label_free_update(model: &mut Model, data: &[Example], ctx: &mut StageContext<'_>) -> Result<Vec<MetricsRow>> {
    if data.is_empty() {
        log::warn!("label-free update called with no documents; nothing to do");
        return Ok(Vec::new());
    }
    let sentences: Vec<_> = data.iter().map(|e| e.sentences.clone()).collect();
    ctx.omm.update(&sentences)?;
    contrastive_finetune(model, data, ctx)
}

/// Contrastive-only fine-tuning with the classifier frozen; the occurrence
/// memory is left as is.
pub fn contrastive_finetune(model: &mut Model, data: &[Example], ctx: &mut StageContext<'_>) -> Result<Vec<MetricsRow>> {
    let docs: Vec<Example> = data.iter().map(Example::unlabeled).collect();
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3333);
    let mut adam = Adam::default();
    let objective = Objective {
        classify: false,
        contrastive: Some(1.0),
    };
    let mut rows = Vec::new();
    for epoch in 1..=cfg.update_epochs {
        let start = Instant::now();
        let order = shuffled(&docs, &mut rng);
        let mut aic_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(chunk, ctx.pad_id);
            let out = model.run_batch(ctx.omm, ctx.cache, &batch, objective, true)?;
            aic_sum += out.loss_aic.unwrap_or(0.0) * chunk.len() as f64;
            let grads = out.grads.expect("backward requested");
            model.apply(&mut adam, &grads, Some(cfg.lr_encoder), Some(cfg.lr_gcn), None);
        }
        let test_acc = match ctx.test {
            Some(t) => Some(evaluate(model, ctx.omm, ctx.cache, t, ctx.pad_id)?),
            None => None,
        };
        rows.push(MetricsRow {
            stage: "label_free_update".into(),
            session: ctx.session,
            epoch,
            loss_cls: None,
            loss_aic: Some(aic_sum / docs.len().max(1) as f64),
            val_acc: None,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}
