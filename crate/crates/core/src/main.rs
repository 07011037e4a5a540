use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use contgcn::data::{DatasetFile, Example};
use contgcn::encoder::{DocumentEncoder, ExternalEmbeddings};
use contgcn::graph::{AdjacencyBundle, PpmiCache};
use contgcn::omm::OmmState;
use contgcn::run_config::{EncoderMode, RunConfig};
use contgcn::synthetic::{self, SyntheticSpec};
use contgcn::train::online::{RunInputs, SessionMode, SessionSpec};
use contgcn::train::stages::{argmax, predict, write_metrics, MetricsRow, StageContext};
use contgcn::train::{self, Model, TrainConfig};
use contgcn::vocab::Vocabulary;
use contgcn::{Error, Result};

#[derive(Parser)]
#[command(name = "contgcn", version, about = "Continual GCN text classifier")]
struct Cli {
    /// Run configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Occurrence-memory maintenance.
    Omm {
        #[command(subcommand)]
        op: OmmOp,
    },
    /// Post-pretrain and train a model.
    Train(TrainArgs),
    /// Label-free update of a trained model with new documents.
    Update(UpdateArgs),
    /// Accuracy on a labeled dataset.
    Eval(EvalArgs),
    /// Predict classes for documents from a file or stdin, one per line.
    Classify(ClassifyArgs),
    /// Initial training followed by incremental update sessions.
    Online(OnlineArgs),
    /// Retrain over a grid of contrastive weights.
    SweepLambda(SweepArgs),
    /// Write a generated two-class corpus and its vocabulary.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum OmmOp {
    Init {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Update {
        #[command(flatten)]
        common: Common,
        /// Dataset whose text is ingested (labels ignored).
        #[arg(long)]
        data: PathBuf,
    },
    Stats {
        #[arg(long)]
        omm: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    omm: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lr_gcn: Option<f64>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    #[arg(long)]
    lr_post_pretrain: Option<f64>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    update_epochs: Option<usize>,
    /// Restrict each batch graph to the GCN's receptive field.
    #[arg(long)]
    project_hops: bool,
    /// `tiny` or `external:<path>`.
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the updated memory (defaults to --omm, else next to the checkpoint).
    #[arg(long)]
    omm_out: Option<PathBuf>,
    /// Write the first training batch's adjacency as `row col weight` lines.
    #[arg(long)]
    dump_adjacency: Option<PathBuf>,
}

#[derive(Args)]
struct UpdateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write (defaults to overwriting --model).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    omm_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    dump_adjacency: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Text file with one document per line; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    dump_adjacency: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    LabelFree,
    Labeled,
}

#[derive(Args)]
struct OnlineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    sessions: usize,
    /// Train, test and update shares.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.2, 0.6])]
    ratios: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::LabelFree)]
    mode: ModeArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.03, 0.1, 0.5])]
    lambdas: Vec<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    vocab_out: PathBuf,
    #[arg(long)]
    data_out: PathBuf,
    #[arg(long, default_value_t = 500)]
    docs: usize,
    /// Emphasize class words unseen in ordinary corpora.
    #[arg(long)]
    shifted: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("CONTGCN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Env {
    run: RunConfig,
    seed: Option<u64>,
}

impl Env {
    fn new(cli: &Cli) -> Result<Self> {
        let mut run = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            run.training.seed = s;
        }
        Ok(Self { run, seed: cli.seed })
    }

    fn vocab(&self, common: &Common) -> Result<Vocabulary> {
        let p = pick(&common.vocab, &self.run.vocab, "--vocab")?;
        Vocabulary::load(p)
    }

    fn omm_path(&self, common: &Common) -> Option<PathBuf> {
        common.omm.clone().or_else(|| self.run.omm.clone())
    }

    /// The snapshot at `--omm`, or an empty memory when none is given.
    fn omm_or_empty(&self, common: &Common, vocab: &Vocabulary) -> Result<OmmState> {
        match self.omm_path(common) {
            Some(p) => {
                let s = OmmState::load(&p)?;
                if s.vocab_size() != vocab.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "memory has {} tokens, vocabulary {}",
                        s.vocab_size(),
                        vocab.len()
                    )));
                }
                Ok(s)
            }
            None => Ok(OmmState::new(vocab.len())),
        }
    }

    fn omm_required(&self, common: &Common) -> Result<OmmState> {
        let p = self.omm_path(common).ok_or_else(|| usage("--omm is required"))?;
        OmmState::load(p)
    }

    fn training(&self, o: &Overrides) -> Result<(TrainConfig, EncoderMode, Option<PathBuf>)> {
        let mut t = self.run.training.clone();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { t.$f = v; } )* };
        }
        set!(lambda, epochs, batch_size, dim, layers, lr_gcn, lr_encoder, lr_post_pretrain, stage1_epochs, update_epochs);
        t.project_hops |= o.project_hops;
        t.validate()?;
        let encoder = match &o.encoder {
            Some(s) => s.parse()?,
            None => self.run.encoder.clone(),
        };
        Ok((t, encoder, o.metrics.clone().or_else(|| self.run.metrics.clone())))
    }

    fn load_model(&self, path: &Option<PathBuf>, encoder: &Option<String>) -> Result<Model> {
        let p = pick(path, &self.run.checkpoint, "--model")?;
        let mode: EncoderMode = match encoder {
            Some(s) => s.parse()?,
            None => self.run.encoder.clone(),
        };
        // width is checked against the checkpoint metadata on load
        let external = match &mode {
            EncoderMode::Tiny => None,
            EncoderMode::External(e) => Some(DocumentEncoder::External(ExternalEmbeddings::load(e, None)?)),
        };
        let mut model = Model::load(p, external)?;
        if let Some(s) = self.seed {
            model.config.seed = s;
        }
        Ok(model)
    }
}

fn usage(msg: &str) -> Error {
    Error::Config(msg.to_string())
}

fn pick<'a>(flag: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| usage(&format!("{name} is required")))
}

fn load_examples(path: &Path, vocab: &Vocabulary, max_len: usize, classes: &[String]) -> Result<(DatasetFile, Vec<Example>)> {
    let file = DatasetFile::ingest(path)?;
    let s = file.stats();
    log::info!(
        "{}: {} docs, {} labeled, {} classes, avg length {:.1}",
        path.display(),
        s.docs,
        s.labeled,
        s.classes,
        s.avg_len
    );
    let examples = file.examples(vocab, max_len, classes).map_err(|e| match e {
        Error::Dataset { line, reason, .. } => Error::Dataset {
            path: path.to_path_buf(),
            line,
            reason,
        },
        other => other,
    })?;
    Ok((file, examples))
}

fn dump_first_batch(path: &Path, omm: &OmmState, examples: &[Example], batch_size: usize) -> Result<()> {
    let docs: Vec<_> = examples.iter().take(batch_size).map(|e| e.doc.clone()).collect();
    let bundle = AdjacencyBundle::build(&mut PpmiCache::new(), omm, &docs)?;
    bundle.dump(path)
}

fn finish_metrics(path: Option<PathBuf>, rows: &[MetricsRow]) -> Result<()> {
    match path {
        Some(p) => write_metrics(p, rows),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let env = Env::new(&cli)?;
    env.run.check_inputs()?;
    match cli.command {
        Command::Omm { op } => run_omm(&env, op),
        Command::Train(a) => run_train(&env, a),
        Command::Update(a) => run_update(&env, a),
        Command::Eval(a) => run_eval(&env, a),
        Command::Classify(a) => run_classify(&env, a),
        Command::Online(a) => run_online(&env, a),
        Command::SweepLambda(a) => run_sweep(&env, a),
        Command::Synth(a) => synthetic::write_files(
            &SyntheticSpec {
                docs: a.docs,
                seed: env.run.training.seed,
                shifted: a.shifted,
                ..Default::default()
            },
            &a.vocab_out,
            &a.data_out,
        ),
    }
}

fn run_omm(env: &Env, op: OmmOp) -> Result<()> {
    match op {
        OmmOp::Init { common, corpus, out } => {
            let vocab = env.vocab(&common)?;
            let mut state = OmmState::new(vocab.len());
            if let Some(c) = corpus.or_else(|| env.run.corpus.clone()) {
                state.merge_corpus(&vocab, c)?;
            }
            state.save(out)
        }
        OmmOp::Update { common, data } => {
            let vocab = env.vocab(&common)?;
            let path = env.omm_path(&common).ok_or_else(|| usage("--omm is required"))?;
            let mut state = OmmState::load(&path)?;
            let file = DatasetFile::ingest(&data)?;
            let docs: Vec<_> = file.records.iter().map(|r| vocab.sentence_tokens(&r.text)).collect();
            state.update(&docs)?;
            state.save(&path)
        }
        OmmOp::Stats { omm } => {
            let path = pick(&omm, &env.run.omm, "--omm")?;
            let s = OmmState::load(path)?;
            let present = s.token_counts().iter().filter(|&&c| c > 0).count();
            println!("version\t{}", s.version());
            println!("documents\t{}", s.documents());
            println!("vocab_size\t{}", s.vocab_size());
            println!("tokens_seen\t{present}");
            println!("pairs\t{}", s.pair_len());
            Ok(())
        }
    }
}

fn run_train(env: &Env, a: TrainArgs) -> Result<()> {
    let vocab = env.vocab(&a.common)?;
    let (cfg, enc_mode, metrics) = env.training(&a.overrides)?;
    let train_path = pick(&a.train, &env.run.train, "--train")?;
    let file = DatasetFile::ingest(train_path)?;
    let (_, train) = load_examples(train_path, &vocab, cfg.max_len, &file.labels)?;
    let test = match a.test.as_ref().or(env.run.test.as_ref()) {
        Some(p) => Some(load_examples(p, &vocab, cfg.max_len, &file.labels)?.1),
        None => None,
    };
    let out = pick(&a.out, &env.run.checkpoint, "--out")?.to_path_buf();
    let base = env.omm_or_empty(&a.common, &vocab)?;
    let inputs = RunInputs {
        vocab_size: vocab.len(),
        pad_id: vocab.pad_id(),
        labels: &file.labels,
        omm: &base,
        encoder: enc_mode.load(cfg.dim)?,
    };
    let mut omm = base.clone();
    let mut cache = PpmiCache::new();
    let (model, rows) = train::online::train_model(&cfg, &inputs, &mut omm, &mut cache, &train, test.as_deref(), 0)?;
    model.save(&out)?;
    let omm_out = a
        .omm_out
        .or_else(|| env.omm_path(&a.common))
        .unwrap_or_else(|| out.with_extension("omm"));
    omm.save(&omm_out)?;
    if let Some(p) = a.dump_adjacency.or_else(|| env.run.dump_adjacency.clone()) {
        dump_first_batch(&p, &omm, &train, cfg.batch_size)?;
    }
    if let Some(last) = rows.iter().rev().find(|r| r.stage == "train") {
        println!(
            "epochs\t{}\nval_acc\t{}\ntest_acc\t{}",
            last.epoch,
            fmt_opt(last.val_acc),
            fmt_opt(last.test_acc)
        );
    }
    finish_metrics(metrics, &rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn run_update(env: &Env, a: UpdateArgs) -> Result<()> {
    let vocab = env.vocab(&a.common)?;
    let mut model = env.load_model(&a.model, &a.overrides.encoder)?;
    let (cfg, _, metrics) = env.training(&a.overrides)?;
    model.config.update_epochs = cfg.update_epochs;
    model.config.lr_encoder = cfg.lr_encoder;
    model.config.lr_gcn = cfg.lr_gcn;
    let data_path = pick(&a.data, &env.run.update, "--data")?;
    let file = DatasetFile::ingest(data_path)?;
    if file.stats().labeled > 0 {
        log::warn!("update data carries labels; they are ignored");
    }
    let docs: Vec<Example> = file
        .records
        .iter()
        .map(|r| Example::new(&vocab, r.id.clone(), &r.text, model.config.max_len, None))
        .collect();
    let mut omm = env.omm_required(&a.common)?;
    let mut cache = PpmiCache::new();
    let mut ctx = StageContext {
        omm: &mut omm,
        cache: &mut cache,
        pad_id: vocab.pad_id(),
        test: None,
        session: 0,
    };
    let rows = train::stage3_label_free_update(&mut model, &docs, &mut ctx)?;
    let out = a.out.or(a.model).or_else(|| env.run.checkpoint.clone()).expect("model path checked");
    model.save(&out)?;
    let omm_out = a
        .omm_out
        .or_else(|| env.omm_path(&a.common))
        .expect("memory path checked");
    omm.save(omm_out)?;
    finish_metrics(metrics, &rows)
}

fn run_eval(env: &Env, a: EvalArgs) -> Result<()> {
    let vocab = env.vocab(&a.common)?;
    let model = env.load_model(&a.model, &a.encoder)?;
    let omm = env.omm_required(&a.common)?;
    let path = pick(&a.data, &env.run.test, "--data")?;
    let (_, examples) = load_examples(path, &vocab, model.config.max_len, &model.labels)?;
    if let Some(p) = a.dump_adjacency.as_ref().or(env.run.dump_adjacency.as_ref()) {
        dump_first_batch(p, &omm, &examples, model.config.batch_size)?;
    }
    let acc = train::evaluate(&model, &omm, &mut PpmiCache::new(), &examples, vocab.pad_id())?;
    println!("accuracy\t{acc:.4}");
    Ok(())
}

fn run_classify(env: &Env, a: ClassifyArgs) -> Result<()> {
    let vocab = env.vocab(&a.common)?;
    let model = env.load_model(&a.model, &a.encoder)?;
    let omm = env.omm_required(&a.common)?;
    let lines: Vec<String> = match &a.input {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::io(p, e))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<_>>()
            .map_err(|e| Error::io("<stdin>", e))?,
    };
    let examples: Vec<Example> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Example::new(&vocab, format!("line{}", i + 1), l, model.config.max_len, None))
        .collect();
    if let Some(p) = &a.dump_adjacency {
        dump_first_batch(p, &omm, &examples, model.config.batch_size)?;
    }
    let probs = predict(&model, &omm, &mut PpmiCache::new(), &examples, vocab.pad_id())?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for row in probs.rows() {
        let k = argmax(row);
        let ps: Vec<String> = row.iter().map(|p| format!("{p:.6}")).collect();
        writeln!(out, "{k}\t{}\t{}", model.labels[k], ps.join("\t")).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn run_online(env: &Env, a: OnlineArgs) -> Result<()> {
    let vocab = env.vocab(&a.common)?;
    let (cfg, enc_mode, metrics) = env.training(&a.overrides)?;
    if a.ratios.len() != 3 {
        return Err(usage("--ratios takes three values: train,test,update"));
    }
    let path = pick(&a.data, &env.run.train, "--data")?;
    let file = DatasetFile::ingest(path)?;
    let (_, data) = load_examples(path, &vocab, cfg.max_len, &file.labels)?;
    let base = env.omm_or_empty(&a.common, &vocab)?;
    let inputs = RunInputs {
        vocab_size: vocab.len(),
        pad_id: vocab.pad_id(),
        labels: &file.labels,
        omm: &base,
        encoder: enc_mode.load(cfg.dim)?,
    };
    let spec = SessionSpec {
        train: a.ratios[0],
        test: a.ratios[1],
        update: a.ratios[2],
        sessions: a.sessions,
        mode: match a.mode {
            ModeArg::LabelFree => SessionMode::LabelFree,
            ModeArg::Labeled => SessionMode::Labeled,
        },
    };
    let report = train::run_online_sessions(&cfg, &inputs, &data, &spec)?;
    println!("session\taccuracy\tseconds");
    for r in &report.sessions {
        println!("{}\t{:.4}\t{:.3}", r.session, r.accuracy, r.seconds);
    }
    finish_metrics(metrics, &report.metrics)
}

fn run_sweep(env: &Env, a: SweepArgs) -> Result<()> {
    let vocab = env.vocab(&a.common)?;
    let (cfg, enc_mode, _) = env.training(&a.overrides)?;
    let train_path = pick(&a.train, &env.run.train, "--train")?;
    let test_path = pick(&a.test, &env.run.test, "--test")?;
    let file = DatasetFile::ingest(train_path)?;
    let (_, train) = load_examples(train_path, &vocab, cfg.max_len, &file.labels)?;
    let (_, test) = load_examples(test_path, &vocab, cfg.max_len, &file.labels)?;
    let base = env.omm_or_empty(&a.common, &vocab)?;
    let inputs = RunInputs {
        vocab_size: vocab.len(),
        pad_id: vocab.pad_id(),
        labels: &file.labels,
        omm: &base,
        encoder: enc_mode.load(cfg.dim)?,
    };
    let rows = train::sweep_lambda(&cfg, &inputs, &train, &test, &a.lambdas)?;
    println!("lambda\taccuracy\trelative");
    for r in rows {
        println!("{}\t{:.4}\t{:+.4}", r.lambda, r.accuracy, r.relative);
    }
    Ok(())
}
