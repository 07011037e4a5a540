mod common;

use contgcn::data::Example;
use contgcn::encoder::DocumentBatch;
use contgcn::graph::PpmiCache;
use contgcn::omm::OmmState;
use contgcn::synthetic::{self, SyntheticSpec};
use contgcn::train::online::{run_online_sessions, train_model, RunInputs, SessionMode, SessionSpec};
use contgcn::train::{
    stage1_post_pretrain, stage2_train, stage3_label_free_update, Model, Objective, StageContext, TrainConfig,
};
use contgcn::vocab::Vocabulary;
use contgcn::Error;

use common::{examples, labels, split, synthetic_config};

fn corpus(docs: usize, seed: u64) -> (Vocabulary, Vec<Example>) {
    let vocab = synthetic::vocabulary();
    let data = examples(&vocab, &SyntheticSpec { docs, seed, ..Default::default() }, 128);
    (vocab, data)
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 16,
        epochs: 4,
        ..synthetic_config(seed)
    }
}

fn fresh_model(vocab: &Vocabulary, cfg: &TrainConfig) -> Model {
    Model::new(vocab.len(), labels(), None, cfg.clone()).unwrap()
}

#[test]
fn post_pretraining_lowers_loss_and_is_deterministic() {
    let (vocab, data) = corpus(200, 1);
    let cfg = TrainConfig { stage1_epochs: 2, ..small_config(1) };
    let mut a = fresh_model(&vocab, &cfg);
    let losses = stage1_post_pretrain(&mut a, &data, vocab.pad_id()).unwrap();
    assert!(losses[1] < losses[0], "{losses:?}");
    let mut b = fresh_model(&vocab, &cfg);
    assert_eq!(stage1_post_pretrain(&mut b, &data, vocab.pad_id()).unwrap(), losses);
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn post_pretraining_with_zero_epochs_changes_nothing() {
    let (vocab, data) = corpus(20, 2);
    let cfg = TrainConfig { stage1_epochs: 0, ..small_config(2) };
    let mut model = fresh_model(&vocab, &cfg);
    let before = model.to_bytes();
    assert!(stage1_post_pretrain(&mut model, &data, vocab.pad_id()).unwrap().is_empty());
    assert_eq!(model.to_bytes(), before);
}

#[test]
fn training_requires_labels() {
    let (vocab, data) = corpus(10, 3);
    let unlabeled: Vec<Example> = data.iter().map(Example::unlabeled).collect();
    let mut model = fresh_model(&vocab, &small_config(3));
    assert!(matches!(
        stage1_post_pretrain(&mut model, &unlabeled, vocab.pad_id()),
        Err(Error::NoLabeledData)
    ));
    let mut omm = OmmState::new(vocab.len());
    let mut cache = PpmiCache::new();
    let mut ctx = StageContext { omm: &mut omm, cache: &mut cache, pad_id: vocab.pad_id(), test: None, session: 0 };
    assert!(matches!(stage2_train(&mut model, &unlabeled, &mut ctx), Err(Error::NoLabeledData)));
}

#[test]
fn training_writes_one_metrics_row_per_epoch_and_updates_memory() {
    let (vocab, data) = corpus(120, 4);
    let (train, test) = split(data);
    let cfg = TrainConfig { patience: 100, ..small_config(4) };
    let mut model = fresh_model(&vocab, &cfg);
    let mut omm = OmmState::new(vocab.len());
    let mut cache = PpmiCache::new();
    let mut ctx = StageContext { omm: &mut omm, cache: &mut cache, pad_id: vocab.pad_id(), test: Some(&test), session: 0 };
    let rows = stage2_train(&mut model, &train, &mut ctx).unwrap();
    assert_eq!(rows.len(), cfg.epochs);
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.loss_aic.is_some() && r.val_acc.is_some() && r.test_acc.is_some()));
    assert_eq!(omm.documents(), train.len() as u64);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    contgcn::train::stages::write_metrics(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "stage,session,epoch,loss_cls,loss_aic,val_acc,test_acc,seconds");
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn zero_lambda_matches_pure_classification() {
    let (vocab, data) = corpus(60, 5);
    let cfg = TrainConfig { lambda: 0.0, ..small_config(5) };
    let model = fresh_model(&vocab, &cfg);
    let mut omm = OmmState::new(vocab.len());
    omm.update(&data.iter().map(|e| e.sentences.clone()).collect::<Vec<_>>()).unwrap();
    let batch = DocumentBatch::unkeyed(data[..6].iter().map(|e| e.doc.clone()).collect(), vocab.pad_id());
    let mut cache = PpmiCache::new();
    let pure = model
        .run_batch(&omm, &mut cache, &batch, Objective { classify: true, contrastive: None }, true)
        .unwrap();
    let weighted = model
        .run_batch(&omm, &mut cache, &batch, Objective { classify: true, contrastive: Some(0.0) }, true)
        .unwrap();
    assert!((pure.loss_cls.unwrap() - weighted.total(0.0)).abs() < 1e-12);
    let (g1, g2) = (pure.grads.unwrap().flatten(), weighted.grads.unwrap().flatten());
    assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn label_free_update_properties() {
    let (vocab, data) = corpus(160, 6);
    let (train, rest) = data.split_at(100);
    let cfg = small_config(6);
    let mut omm = OmmState::new(vocab.len());
    let mut cache = PpmiCache::new();
    let labels = labels();
    let base = OmmState::new(vocab.len());
    let inputs = RunInputs { vocab_size: vocab.len(), pad_id: vocab.pad_id(), labels: &labels, omm: &base, encoder: None };
    let (mut model, _) = train_model(&cfg, &inputs, &mut omm, &mut cache, train, None, 0).unwrap();
    let classifier = model.classifier.clone();
    let gcn_before = model.gcn.clone();
    let (s, version) = (omm.documents(), omm.version());
    let mut ctx = StageContext { omm: &mut omm, cache: &mut cache, pad_id: vocab.pad_id(), test: None, session: 1 };
    let rows = stage3_label_free_update(&mut model, rest, &mut ctx).unwrap();
    assert_eq!(omm.documents(), s + rest.len() as u64);
    assert!(omm.version() > version);
    assert_eq!(model.classifier, classifier);
    assert_ne!(model.gcn.layers, gcn_before.layers);
    let (first, last) = (rows[0].loss_aic.unwrap(), rows.last().unwrap().loss_aic.unwrap());
    assert!(last < first, "contrastive loss {first} -> {last}");
}

#[test]
fn empty_update_is_a_no_op() {
    let (vocab, _) = corpus(1, 7);
    let mut model = fresh_model(&vocab, &small_config(7));
    let before = model.to_bytes();
    let mut omm = OmmState::new(vocab.len());
    let mut cache = PpmiCache::new();
    let mut ctx = StageContext { omm: &mut omm, cache: &mut cache, pad_id: vocab.pad_id(), test: None, session: 1 };
    assert!(stage3_label_free_update(&mut model, &[], &mut ctx).unwrap().is_empty());
    assert_eq!(model.to_bytes(), before);
    assert_eq!(omm.version(), 0);
}

#[test]
fn online_sessions_shape_and_errors() {
    let (vocab, data) = corpus(150, 8);
    let labels = labels();
    let base = OmmState::new(vocab.len());
    let inputs = RunInputs { vocab_size: vocab.len(), pad_id: vocab.pad_id(), labels: &labels, omm: &base, encoder: None };
    let cfg = TrainConfig { epochs: 2, update_epochs: 1, ..small_config(8) };
    let none = SessionSpec { sessions: 0, ..Default::default() };
    assert_eq!(run_online_sessions(&cfg, &inputs, &data, &none).unwrap().sessions.len(), 1);
    let three = SessionSpec { sessions: 3, mode: SessionMode::Labeled, ..Default::default() };
    let report = run_online_sessions(&cfg, &inputs, &data, &three).unwrap();
    assert_eq!(report.sessions.iter().map(|r| r.session).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let bad = SessionSpec { train: 0.5, test: 0.5, update: 0.5, ..Default::default() };
    assert!(matches!(run_online_sessions(&cfg, &inputs, &data, &bad), Err(Error::Config(_))));
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let (vocab, data) = corpus(100, 9);
    let labels = labels();
    let base = OmmState::new(vocab.len());
    let inputs = RunInputs { vocab_size: vocab.len(), pad_id: vocab.pad_id(), labels: &labels, omm: &base, encoder: None };
    let cfg = TrainConfig { epochs: 2, ..small_config(9) };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let mut omm = base.clone();
                let mut cache = PpmiCache::new();
                let (model, rows) = train_model(&cfg, &inputs, &mut omm, &mut cache, &data, None, 0).unwrap();
                let losses: Vec<_> = rows.iter().map(|r| (r.loss_cls, r.loss_aic, r.val_acc)).collect();
                (model.to_bytes(), losses)
            })
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(4));
}

#[test]
fn projected_graph_gives_the_same_outputs() {
    let (vocab, data) = corpus(80, 10);
    let mut omm = OmmState::new(vocab.len());
    omm.update(&data.iter().map(|e| e.sentences.clone()).collect::<Vec<_>>()).unwrap();
    // with one layer only the batch's own tokens survive the projection
    let docs: Vec<_> = data[..5].iter().map(|e| e.doc.clone()).collect();
    let batch = DocumentBatch::unkeyed(docs, vocab.pad_id());
    for layers in [1, 2, 3] {
        let full_cfg = TrainConfig { layers, ..small_config(10) };
        let full = fresh_model(&vocab, &full_cfg);
        let mut projected = full.clone();
        projected.config.project_hops = true;
        let obj = Objective { classify: true, contrastive: Some(0.5) };
        let mut cache = PpmiCache::new();
        let a = full.run_batch(&omm, &mut cache, &batch, obj, true).unwrap();
        let b = projected.run_batch(&omm, &mut cache, &batch, obj, true).unwrap();
        assert!((a.loss_cls.unwrap() - b.loss_cls.unwrap()).abs() < 1e-10);
        assert!((a.loss_aic.unwrap() - b.loss_aic.unwrap()).abs() < 1e-10);
        let (ga, gb) = (a.grads.unwrap().flatten(), b.grads.unwrap().flatten());
        assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-10));
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let (vocab, _) = corpus(1, 11);
    let model = fresh_model(&vocab, &small_config(11));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ck");
    model.save(&path).unwrap();
    let loaded = Model::load(&path, None).unwrap();
    assert_eq!(loaded.to_bytes(), model.to_bytes());
    assert_eq!(loaded.config, model.config);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Model::load(&path, None), Err(Error::Checksum(_))));
    std::fs::write(&path, &bytes[..10]).unwrap();
    assert!(Model::load(&path, None).is_err());
}
