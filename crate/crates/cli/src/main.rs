//! `sg2hoi` command-line tool: synthetic data, training, prediction,
//! evaluation and gradient checks.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 gradient-check
//! failure, 1 anything else (e.g. divergence).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use sg2hoi::config::{EvalSetting, RunConfig, Switches};
use sg2hoi::datamodel::io::{read_json, write_atomic, write_json_atomic};
use sg2hoi::datamodel::{load_annotations, load_detections, AnnotationSet};
use sg2hoi::evalkit::map_role;
use sg2hoi::hoihead::gradcheck::{grad_check, Fixture, GradTarget, DEFAULT_STEP};
use sg2hoi::hoihead::train::train;
use sg2hoi::params::{save_checkpoint, ParameterStore};
use sg2hoi::pipeline::{
    open_checkpoint, parse_split, predict_all, prepare_all, scene_dot, write_dataset, Dataset,
    MANIFEST_FILE,
};
use sg2hoi::synthworld::{generate_world, RuleTable, WorldConfig};
use sg2hoi::Error;

const THREADS_ENV: &str = "SG2HOI_THREADS";
const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_FILE: &str = "checkpoint.bin";
const LOG_FILE: &str = "train_log.jsonl";

#[derive(Parser)]
#[command(name = "sg2hoi", version, about = "Scene-graph driven HOI detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    SynthGen(SynthGenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Score every candidate pair of a dataset split.
    Predict(PredictArgs),
    /// Compute mAP_role of detections against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    /// JSON world configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_scenes: Option<usize>,
    #[arg(long)]
    num_test: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// `default`, `predicate-only`, or a path to a JSON rule table.
    #[arg(long, default_value = "default")]
    rules: String,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Ablation variant: baseline, sge, rel, cov-rel, sge-no-rel, full, or
    /// several joined with `+`.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    d_g: Option<usize>,
    #[arg(long)]
    d_f: Option<usize>,
    #[arg(long)]
    mask_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (defaults to `data.dir` of the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoint, log and resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output detections file.
    #[arg(long)]
    out: PathBuf,
    /// Run configuration; defaults to the one saved next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    min_score: Option<f64>,
    /// Directory receiving one Graphviz file per scene.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Detections file.
    #[arg(long)]
    det: PathBuf,
    /// Dataset directory or annotations file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// `default` or `known`.
    #[arg(long, default_value = "default")]
    setting: String,
    /// `auto` (from the data), `none`, or comma-separated class ids.
    #[arg(long, default_value = "auto")]
    rare: String,
    #[arg(long)]
    iou: Option<f64>,
    /// Number of interaction classes when `--gt` is a plain file.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// A target name or `all`.
    #[arg(long, default_value = "all")]
    target: String,
    #[arg(long, default_value_t = 10)]
    fixtures: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Marker for a failed check, mapped to exit code 4.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 4;
    }
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) {
        return match e {
            Error::Config(_) => 2,
            Error::Divergence(_) => 1,
            _ => 3,
        };
    }
    if err.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()) {
        return 3;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(exit_code(&e));
    }
    let result = match cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn load_rules(spec: &str) -> anyhow::Result<RuleTable> {
    Ok(match spec {
        "default" => RuleTable::default_table(),
        "predicate-only" => RuleTable::predicate_only(),
        path => read_json(Path::new(path))?,
    })
}

fn synth_gen(a: SynthGenArgs) -> anyhow::Result<()> {
    let mut cfg: WorldConfig = match &a.config {
        Some(p) => read_json(p).map_err(|e| Error::Config(e.to_string()))?,
        None => WorldConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.num_scenes {
        cfg.num_scenes = v;
    }
    if let Some(v) = a.num_test {
        cfg.num_test = v;
    }
    if let Some(v) = a.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    let rules = load_rules(&a.rules)?;
    let world = generate_world(&cfg, &rules)?;
    let manifest = write_dataset(&world, &a.out)?;
    println!(
        "wrote {} scenes to {} (manifest {})",
        manifest.num_scenes,
        a.out.display(),
        &manifest.digest()[..16]
    );
    Ok(())
}

fn apply_model_flags(cfg: &mut RunConfig, f: &ModelFlags) -> sg2hoi::Result<()> {
    if let Some(v) = &f.ablation {
        cfg.ablation.variant = Some(v.clone());
        cfg.apply_switches(Switches::parse(v)?);
    }
    if let Some(v) = f.rounds {
        cfg.passing.rounds = v;
    }
    for (slot, v) in [
        (&mut cfg.model.d_s, f.d_s),
        (&mut cfg.model.d_h, f.d_h),
        (&mut cfg.model.d_g, f.d_g),
        (&mut cfg.model.d_f, f.d_f),
        (&mut cfg.model.mask_size, f.mask_size),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    Ok(())
}

fn write_config(path: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    write_atomic(path, cfg.to_toml_string().as_bytes())?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::with_seed(a.seed.ok_or_else(|| {
            Error::Config("a seed is required (--seed or a config file)".into())
        })?),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    apply_model_flags(&mut cfg, &a.model)?;
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
    let cfg = cfg.resolved()?;
    let data_dir = cfg
        .data
        .dir
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (--data or data.dir)".into()))?;

    let dataset = Dataset::open(&data_dir)?;
    let vocab = &dataset.vocabulary;
    let arch = cfg.architecture(vocab.num_interactions(), vocab.word_dim)?;
    let split = parse_split(&cfg.data.train_split)?;
    let scenes = dataset.load_split(split, cfg.data.relation_threshold)?;
    if let Some(s) = scenes.first() {
        if s.features.dim != cfg.model.d_f {
            return Err(Error::Config(format!(
                "model.d_f = {} but the dataset features have dimension {}",
                cfg.model.d_f, s.features.dim
            ))
            .into());
        }
    }
    let prepared = prepare_all(&scenes, vocab, &arch)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_config(&a.out.join(CONFIG_FILE), &cfg)?;
    let store = ParameterStore::init(&arch, cfg.seed);
    let mut log_lines = String::new();
    let outcome = train(&prepared, &cfg.train, &arch, store, cfg.seed, |entry| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        eprintln!("{line}");
        log_lines.push_str(&line);
        log_lines.push('\n');
    })?;
    write_atomic(&a.out.join(LOG_FILE), log_lines.as_bytes())?;
    save_checkpoint(
        &a.out.join(CHECKPOINT_FILE),
        &outcome.store,
        &arch,
        &vocab.fingerprint(),
    )?;
    println!(
        "trained {} epochs on {} scenes; checkpoint in {}",
        cfg.train.epochs,
        prepared.len(),
        a.out.display()
    );
    Ok(())
}

/// `dir/name.ext` → `dir/name.config.toml`.
fn sidecar_config(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}.config.toml"))
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let vocab = &dataset.vocabulary;
    let (header, store) = open_checkpoint(&a.checkpoint, vocab)?;
    let arch = header.architecture;

    let beside = a.checkpoint.with_file_name(CONFIG_FILE);
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None if beside.is_file() => RunConfig::load(&beside)?,
        None => RunConfig::with_seed(0),
    };
    // The checkpoint's architecture is authoritative.
    cfg.model = arch.model.clone();
    cfg.passing.rounds = arch.rounds;
    cfg.ablation.variant = None;
    cfg.apply_switches(arch.switches);
    cfg.data.dir = Some(a.data.clone());
    cfg.data.test_split = a.split.clone();
    if let Some(v) = a.min_score {
        cfg.eval.min_score = v;
    }
    let cfg = cfg.resolved()?;

    let split = parse_split(&a.split)?;
    let scenes = dataset.load_split(split, cfg.data.relation_threshold)?;
    let prepared = prepare_all(&scenes, vocab, &arch)?;
    let results = predict_all(&store, &arch, &prepared, cfg.eval.min_score)?;
    let dets: Vec<_> = results.iter().map(|(_, d)| d.clone()).collect();
    write_json_atomic(&a.out, &dets)?;
    write_config(&sidecar_config(&a.out), &cfg)?;
    if let Some(dir) = &a.dot {
        for (scene, (scores, _)) in prepared.iter().zip(&results) {
            let text = scene_dot(scene, scores, vocab, cfg.eval.min_score);
            write_atomic(&dir.join(format!("{}.dot", scene.image_id())), text.as_bytes())?;
        }
    }
    let total: usize = dets.iter().map(|d| d.detections.len()).sum();
    println!("{total} detections over {} scenes -> {}", dets.len(), a.out.display());
    Ok(())
}

fn parse_rare(spec: &str, auto: impl FnOnce() -> BTreeSet<usize>) -> anyhow::Result<BTreeSet<usize>> {
    match spec {
        "auto" => Ok(auto()),
        "none" => Ok(BTreeSet::new()),
        list => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad class id '{s}' in --rare")).into())
            })
            .collect(),
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let setting: EvalSetting = a.setting.parse()?;
    let dets = load_detections(&a.det)?;
    let (gts, num_classes, names, rare): (Vec<AnnotationSet>, usize, Option<Vec<String>>, _) =
        if a.gt.join(MANIFEST_FILE).is_file() {
            let dataset = Dataset::open(&a.gt)?;
            let split = parse_split(&a.split)?;
            let gts = dataset
                .entries(split)
                .map(|e| {
                    dataset
                        .load_scene(e, 0.0)
                        .map(|s| s.annotations.unwrap_or_else(|| AnnotationSet {
                            image_id: e.image_id.clone(),
                            hois: Vec::new(),
                            rare_classes: None,
                        }))
                })
                .collect::<sg2hoi::Result<Vec<_>>>()?;
            let rare = parse_rare(&a.rare, || {
                dataset.manifest.rare_classes.iter().copied().collect()
            })?;
            let k = dataset.vocabulary.num_interactions();
            (gts, k, Some(dataset.vocabulary.interactions.clone()), rare)
        } else {
            let gts = load_annotations(&a.gt)?;
            let rare = parse_rare(&a.rare, || {
                gts.iter()
                    .filter_map(|g| g.rare_classes.as_ref())
                    .flatten()
                    .copied()
                    .collect()
            })?;
            let observed = gts
                .iter()
                .flat_map(|g| g.hois.iter().map(|h| h.interaction_id))
                .chain(dets.iter().flat_map(|d| d.detections.iter().map(|x| x.interaction_id)))
                .max()
                .map_or(0, |m| m + 1);
            (gts, a.num_classes.unwrap_or(observed), None, rare)
        };
    let iou = a.iou.unwrap_or(sg2hoi::evalkit::DEFAULT_IOU_THRESHOLD);
    let report = map_role(&dets, &gts, num_classes, setting, &rare, None, iou)?;
    print!("{}", report.to_table(names.as_deref()));
    std::io::stdout().flush().ok();
    if let Some(out) = &a.out {
        write_json_atomic(out, &report)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let targets: Vec<GradTarget> = if a.target == "all" {
        GradTarget::ALL.to_vec()
    } else {
        vec![a.target.parse()?]
    };
    if a.fixtures == 0 {
        return Err(Error::Config("--fixtures must be positive".into()).into());
    }
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for &target in &targets {
        let mut worst = 0.0f64;
        let mut ok = true;
        for i in 0..a.fixtures {
            let seed = a.seed.wrapping_add(i as u64);
            let fixture = Fixture::random(seed, a.nodes)?;
            let store = ParameterStore::init(&fixture.arch, seed);
            let report = grad_check(target, &fixture, &store, a.step)?;
            worst = worst.max(report.max_rel_err);
            ok &= report.passed(a.tol);
            reports.push(report);
        }
        println!(
            "{:<16} max_rel_err {:.3e} {}",
            target.name(),
            worst,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures.push(target.name());
        }
    }
    if let Some(out) = &a.out {
        write_json_atomic(out, &reports)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("gradient check failed for: {}", failures.join(", "))).into())
    }
}
