//! Online sessions and the contrastive-weight sweep.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use super::stages::{evaluate, stage1_post_pretrain, stage2_train, stage3_label_free_update, MetricsRow, StageContext};
use crate::data::Example;
use crate::encoder::DocumentEncoder;
use crate::error::{Error, Result};
use crate::graph::PpmiCache;
use crate::omm::OmmState;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    LabelFree,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub train: f64,
    pub test: f64,
    pub update: f64,
    pub sessions: usize,
    pub mode: SessionMode,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            train: 0.2,
            test: 0.2,
            update: 0.6,
            sessions: 6,
            mode: SessionMode::LabelFree,
        }
    }
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.update];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRow {
    /// 0 is the initial training; `k ≥ 1` the k-th update session.
    pub session: usize,
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub sessions: Vec<SessionRow>,
    pub metrics: Vec<MetricsRow>,
}

/// Shared inputs of whole-run drivers.
pub struct RunInputs<'a> {
    pub vocab_size: usize,
    pub pad_id: TokenId,
    pub labels: &'a [String],
    /// Starting occurrence memory (usually empty or corpus-initialized).
    pub omm: &'a OmmState,
    pub encoder: Option<DocumentEncoder>,
}

/// Stages 1 and 2 from scratch on `train`.
pub fn train_model(
    config: &TrainConfig,
    inputs: &RunInputs<'_>,
    omm: &mut OmmState,
    cache: &mut PpmiCache,
    train: &[Example],
    test: Option<&[Example]>,
    session: usize,
) -> Result<(Model, Vec<MetricsRow>)> {
    let mut model = Model::new(inputs.vocab_size, inputs.labels.to_vec(), inputs.encoder.clone(), config.clone())?;
    let start = Instant::now();
    let losses = stage1_post_pretrain(&mut model, train, inputs.pad_id)?;
    let mut rows: Vec<MetricsRow> = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| MetricsRow {
            stage: "post_pretrain".into(),
            session,
            epoch: i + 1,
            loss_cls: Some(l),
            loss_aic: None,
            val_acc: None,
            test_acc: None,
            seconds: 0.0,
        })
        .collect();
    if let Some(last) = rows.last_mut() {
        last.seconds = start.elapsed().as_secs_f64();
    }
    let mut ctx = StageContext {
        omm,
        cache,
        pad_id: inputs.pad_id,
        test,
        session,
    };
    rows.extend(stage2_train(&mut model, train, &mut ctx)?);
    Ok((model, rows))
}

/// Trains on the training share, then feeds the update share in equal
/// parts, scoring the fixed test share after each session.
pub fn run_online_sessions(
    config: &TrainConfig,
    inputs: &RunInputs<'_>,
    data: &[Example],
    spec: &SessionSpec,
) -> Result<OnlineReport> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x0411));
    let n = data.len();
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_test = ((n as f64 * spec.test).round() as usize).min(n - n_train);
    let pick = |r: &[usize]| r.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let train = pick(&idx[..n_train]);
    let test = pick(&idx[n_train..n_train + n_test]);
    let update = pick(&idx[n_train + n_test..]);

    let mut omm = inputs.omm.clone();
    let mut cache = PpmiCache::new();
    let start = Instant::now();
    let (mut model, mut metrics) = train_model(config, inputs, &mut omm, &mut cache, &train, None, 0)?;
    let mut sessions = vec![SessionRow {
        session: 0,
        accuracy: evaluate(&model, &omm, &mut cache, &test, inputs.pad_id)?,
        seconds: start.elapsed().as_secs_f64(),
    }];
    if spec.sessions > 0 {
        let per = update.len().div_ceil(spec.sessions).max(1);
        let parts: Vec<&[Example]> = update.chunks(per).collect();
        for k in 1..=spec.sessions {
            let part = parts.get(k - 1).copied().unwrap_or(&[]);
            let start = Instant::now();
            let mut ctx = StageContext {
                omm: &mut omm,
                cache: &mut cache,
                pad_id: inputs.pad_id,
                test: None,
                session: k,
            };
            let rows = match spec.mode {
                SessionMode::LabelFree => stage3_label_free_update(&mut model, part, &mut ctx)?,
                SessionMode::Labeled => stage2_train(&mut model, part, &mut ctx)?,
            };
            let seconds = start.elapsed().as_secs_f64();
            metrics.extend(rows);
            sessions.push(SessionRow {
                session: k,
                accuracy: evaluate(&model, &omm, &mut cache, &test, inputs.pad_id)?,
                seconds,
            });
        }
    }
    Ok(OnlineReport { sessions, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: f64,
    /// `accuracy(λ) − accuracy(0)`.
    pub relative: f64,
}

/// Retrains from scratch for each weight and reports test accuracy relative
/// to the unweighted run. A `0` baseline is trained even when absent from
/// the grid.
pub fn sweep_lambda(
    config: &TrainConfig,
    inputs: &RunInputs<'_>,
    train: &[Example],
    test: &[Example],
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    let run = |lambda: f64| -> Result<f64> {
        let cfg = TrainConfig {
            lambda,
            ..config.clone()
        };
        cfg.validate()?;
        let mut omm = inputs.omm.clone();
        let mut cache = PpmiCache::new();
        let (model, _) = train_model(&cfg, inputs, &mut omm, &mut cache, train, None, 0)?;
        evaluate(&model, &omm, &mut cache, test, inputs.pad_id)
    };
    let mut accs = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        accs.push(run(l)?);
    }
    let base = match lambdas.iter().position(|&l| l == 0.0) {
        Some(i) => accs[i],
        None => run(0.0)?,
    };
    Ok(lambdas
        .iter()
        .zip(accs)
        .map(|(&lambda, accuracy)| SweepRow {
            lambda,
            accuracy,
            relative: accuracy - base,
        })
        .collect())
}
