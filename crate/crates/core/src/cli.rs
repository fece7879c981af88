//! `clipsort` command line: dataset generation and ingest, training,
//! inference, evaluation, oracle cross-checks and report aggregation.
//!
//! Every invocation writes one run manifest (`run-<command>.json`) next to
//! its main output, recording the arguments, effective configuration, seed,
//! SHA-256 of inputs and outputs, and wall time.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::DistanceKind;
use crate::datagen::{generate_clip, generate_dataset, shuffle_clip, write_dataset, DatasetSpec, GenConfig};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate_split, infer_order, infer_order_with, CountSource, HierarchySource, InferenceConfig, LevelMode,
    OracleComparator, Prediction, Predictor, SplitScore,
};
use crate::ingest::{ingest_dir, split_dataset, IngestConfig, SplitRatios, Splits};
use crate::metrics::{
    max_weight_assignment, max_weight_assignment_bruteforce, ordering_score, ordering_score_bruteforce,
};
use crate::model::train::{train, write_loss_csv};
use crate::model::{HeadSharing, ModelConfig, ModelParams};
use crate::reorder::{beam_search, exact_max_path, ScoreMatrix};
use crate::seed::{derive_seed, rng_for};
use crate::types::{ground_truth_permutation, read_clips_jsonl, ClipPuzzle, Permutation};

pub const DATA_DIR_ENV: &str = "CLIPSORT_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ORACLE_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "clipsort", version, about = "Reorder shuffled multimodal movie clips")]
pub struct Cli {
    /// Root seed; every random stream is derived from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for clip-level parallel work
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// JSON file with `model`, `inference`, `gen`, `ingest`, `ratios` and
    /// `seed` sections; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset split into train/val/test_in/test_out
    Gen(GenArgs),
    /// Build a dataset from .srt subtitles and frame manifests
    Ingest(IngestArgs),
    /// Train the order classifier and projection heads
    Train(TrainArgs),
    /// Predict frame orders for a clip file
    Infer(InferArgs),
    /// Score predictions per split and β
    Eval(EvalArgs),
    /// Cross-check fast routines against brute force
    Oracle(OracleArgs),
    /// Merge metric tables into one summary
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub clips: usize,
    #[arg(long, default_value_t = 20)]
    pub clips_per_movie: usize,
    /// Output directory [default: $CLIPSORT_DATA_DIR or ./data]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub pair_rate: Option<f64>,
    #[arg(long)]
    pub d_v: Option<usize>,
    #[arg(long)]
    pub d_u: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of `<movie>.srt` files with matching `<movie>.csv` frame manifests
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Longest allowed gap before an unpaired frame is retained
    #[arg(long)]
    pub keep_gap_ms: Option<u64>,
    /// Drop every frame not covered by a cue
    #[arg(long, conflicts_with = "keep_gap_ms")]
    pub no_keep_gap: bool,
    /// Dimension of hashed utterance features
    #[arg(long)]
    pub text_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training clips [default: <data dir>/train.jsonl]
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Output directory for checkpoint.json and loss.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub proj_dim: Option<usize>,
    #[arg(long)]
    pub n_negatives: Option<usize>,
    /// One set of heads for all levels
    #[arg(long)]
    pub shared_heads: bool,
}

#[derive(Debug, Args, Clone)]
pub struct InferOpts {
    #[arg(long)]
    pub bsize: Option<usize>,
    /// frame_only, frame_shot, frame_scene or frame_shot_scene
    #[arg(long)]
    pub level_mode: Option<LevelMode>,
    #[arg(long)]
    pub max_cluster_steps: Option<usize>,
    /// euclidean or cosine
    #[arg(long)]
    pub cluster_distance: Option<DistanceKind>,
    /// Fixed scene count instead of per-clip metadata
    #[arg(long, requires = "n_shots_per_scene")]
    pub n_scenes: Option<usize>,
    #[arg(long, requires = "n_scenes")]
    pub n_shots_per_scene: Option<usize>,
    /// Use labelled scenes and shots instead of clustering
    #[arg(long)]
    pub oracle_hierarchy: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip file [default: <data dir>/test_in.jsonl]
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "predictions.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: InferOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding `<split>.jsonl` files [default: $CLIPSORT_DATA_DIR or ./data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "test_in,test_out")]
    pub splits: Vec<String>,
    /// identity, random, model, or a predictions JSONL file
    #[arg(long, default_value = "model")]
    pub pred: String,
    /// Checkpoint for `--pred model`
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    pub betas: Vec<usize>,
    /// Metric table; a per-clip table is written beside it with a `.clips.csv` suffix
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: InferOpts,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Random instances per check
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric tables written by `eval`
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "summary.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    model: Option<ModelConfig>,
    inference: Option<InferenceConfig>,
    gen: Option<GenConfig>,
    ingest: Option<IngestConfig>,
    ratios: Option<SplitRatios>,
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    command: String,
    argv: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    wall_time_ms: u128,
}

struct Run {
    seed: u64,
    file: FileConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
    manifest_dir: PathBuf,
    exit: i32,
}

impl Run {
    fn snapshot<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("configs serialise");
        if let serde_json::Value::Object(map) = &mut self.config {
            map.insert(key.to_string(), v);
        }
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn to_json_pretty<T: Serialize>(value: &T, context: &str) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|source| Error::Json {
            context: context.into(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<i32> {
    let started = Instant::now();
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|source| Error::Json {
                context: path.display().to_string(),
                source,
            })?
        }
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let mut run = Run {
        seed,
        file,
        inputs: cli.config.iter().cloned().collect(),
        outputs: Vec::new(),
        config: serde_json::json!({}),
        manifest_dir: data_dir(),
        exit: EXIT_OK,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let name = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Ingest(_) => "ingest",
        Command::Train(_) => "train",
        Command::Infer(_) => "infer",
        Command::Eval(_) => "eval",
        Command::Oracle(_) => "oracle",
        Command::Report(_) => "report",
    };
    pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(a, &mut run),
        Command::Ingest(a) => cmd_ingest(a, &mut run),
        Command::Train(a) => cmd_train(a, &mut run),
        Command::Infer(a) => cmd_infer(a, &mut run),
        Command::Eval(a) => cmd_eval(a, &mut run),
        Command::Oracle(a) => cmd_oracle(a, &mut run),
        Command::Report(a) => cmd_report(a, &mut run),
    })?;

    let hash_all = |paths: &[PathBuf]| -> Result<Vec<Artifact>> {
        paths
            .iter()
            .map(|p| {
                Ok(Artifact {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv,
        seed: run.seed,
        config: run.config.clone(),
        inputs: hash_all(&run.inputs)?,
        outputs: hash_all(&run.outputs)?,
        wall_time_ms: started.elapsed().as_millis(),
    };
    let path = cli
        .manifest
        .unwrap_or_else(|| run.manifest_dir.join(format!("run-{name}.json")));
    write_text(&path, &to_json_pretty(&manifest, "run manifest")?)?;
    Ok(run.exit)
}

fn cmd_gen(a: &GenArgs, run: &mut Run) -> Result<()> {
    let mut base = run.file.gen.clone().unwrap_or_default();
    base.seed = run.seed;
    if let Some(v) = a.drift {
        base.drift = v;
    }
    if let Some(v) = a.noise {
        base.noise = v;
    }
    if let Some(v) = a.pair_rate {
        base.pair_rate = v;
    }
    if let Some(v) = a.d_v {
        base.d_v = v;
    }
    if let Some(v) = a.d_u {
        base.d_u = v;
    }
    let spec = DatasetSpec {
        clips_per_movie: a.clips_per_movie,
        ratios: run.file.ratios.unwrap_or_default(),
        ..DatasetSpec::benchmark_mix(a.clips, run.seed)
    };
    let spec = DatasetSpec {
        configs: GenConfig::benchmark_mix(&base),
        ..spec
    };
    let out = a.out.clone().unwrap_or_else(data_dir);
    let splits = generate_dataset(&spec)?;
    run.outputs = write_dataset(&out, &spec, &splits)?;
    run.snapshot("gen", &spec);
    run.manifest_dir = out;
    print_split_sizes(&splits);
    Ok(())
}

fn print_split_sizes(splits: &Splits) {
    for (name, clips) in splits.named() {
        println!("{name:<9} {:>6} clips", clips.len());
    }
}

fn cmd_ingest(a: &IngestArgs, run: &mut Run) -> Result<()> {
    let mut cfg = run.file.ingest.clone().unwrap_or_default();
    if let Some(v) = a.keep_gap_ms {
        cfg.keep_gap_ms = Some(v);
    }
    if a.no_keep_gap {
        cfg.keep_gap_ms = None;
    }
    if let Some(v) = a.text_dim {
        cfg.segment.text_dim = v;
    }
    let ratios = run.file.ratios.unwrap_or_default();
    let (clips, stats) = ingest_dir(&a.input, &cfg)?;
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&a.input)
        .map_err(|e| Error::io(&a.input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "srt" || x == "csv"))
        .collect();
    inputs.sort();
    run.inputs.extend(inputs);

    let splits = split_dataset(clips, &ratios, derive_seed(run.seed, "split", 0))?;
    let out = a.out.clone().unwrap_or_else(data_dir);
    run.outputs = crate::ingest::write_splits(&out, &splits)?;
    let stats_path = out.join("stats.json");
    write_text(&stats_path, &to_json_pretty(&stats, "ingest stats")?)?;
    run.outputs.push(stats_path);
    run.snapshot("ingest", &cfg);
    run.snapshot("ratios", &ratios);
    run.manifest_dir = out;
    println!(
        "{} clips from {} frames ({} cues, {} dropped); paired fraction in clips {:.3}",
        stats.n_clips, stats.n_frames, stats.n_cues, stats.n_cues_dropped, stats.clip_paired_fraction
    );
    print_split_sizes(&splits);
    Ok(())
}

fn cmd_train(a: &TrainArgs, run: &mut Run) -> Result<()> {
    let train_path = a.train.clone().unwrap_or_else(|| data_dir().join("train.jsonl"));
    let clips = read_clips_jsonl(&train_path)?;
    let first = clips
        .first()
        .and_then(|c| c.frames.first())
        .ok_or_else(|| Error::invalid(format!("{} holds no frames", train_path.display())))?;
    let mut cfg = run.file.model.clone().unwrap_or_default();
    cfg.d_v = first.vision_feat.dim();
    cfg.d_u = first.text_feat.dim();
    cfg.seed = run.seed;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { cfg.$field = v; })* };
    }
    set!(lr, batch_size, epochs, lambda, weight_decay, hidden_dim, proj_dim, n_negatives);
    if a.shared_heads {
        cfg.heads = HeadSharing::Shared;
    }
    cfg.validate()?;

    let out = a.out.clone().unwrap_or_else(|| data_dir().join("model"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let outcome = train(&clips, &cfg)?;
    let ckpt = out.join("checkpoint.json");
    let loss = out.join("loss.csv");
    outcome.params.save(&ckpt)?;
    write_loss_csv(&loss, &outcome.trace)?;
    run.inputs.push(train_path);
    run.outputs = vec![ckpt, loss];
    run.snapshot("model", &cfg);
    run.manifest_dir = out;
    for (e, m) in outcome.epoch_means().iter().enumerate() {
        println!("epoch {e}: mean loss {m:.5}");
    }
    if outcome.skipped > 0 {
        println!("{} clip/level combinations had fewer than two items", outcome.skipped);
    }
    Ok(())
}

fn inference_config(opts: &InferOpts, run: &Run) -> InferenceConfig {
    let mut cfg = run.file.inference.clone().unwrap_or_default();
    cfg.cluster.seed = run.seed;
    if let Some(v) = opts.bsize {
        cfg.bsize = v;
    }
    if let Some(v) = opts.level_mode {
        cfg.level_mode = v;
    }
    if let Some(v) = opts.max_cluster_steps {
        cfg.cluster.max_steps = v;
    }
    if let Some(v) = opts.cluster_distance {
        cfg.cluster.distance = v;
    }
    if let (Some(n_scenes), Some(n_shots_per_scene)) = (opts.n_scenes, opts.n_shots_per_scene) {
        cfg.counts = CountSource::Fixed { n_scenes, n_shots_per_scene };
    }
    if opts.oracle_hierarchy {
        cfg.hierarchy = HierarchySource::Oracle;
    }
    cfg
}

/// Predictions for every clip, in clip id order.
pub fn predict_all(clips: &[ClipPuzzle], params: &ModelParams, cfg: &InferenceConfig) -> Result<Vec<Prediction>> {
    let mut out = clips
        .par_iter()
        .map(|clip| {
            let (order, trace) = infer_order(clip, params, cfg)?;
            Ok(Prediction::new(clip, order, &trace))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(out)
}

fn cmd_infer(a: &InferArgs, run: &mut Run) -> Result<()> {
    let cfg = inference_config(&a.opts, run);
    let input = a.input.clone().unwrap_or_else(|| data_dir().join("test_in.jsonl"));
    let params = ModelParams::load(&a.checkpoint)?;
    let clips = read_clips_jsonl(&input)?;
    let preds = predict_all(&clips, &params, &cfg)?;
    let mut text = String::new();
    for p in &preds {
        text += &serde_json::to_string(p).map_err(|source| Error::Json {
            context: "prediction".into(),
            source,
        })?;
        text.push('\n');
    }
    write_text(&a.out, &text)?;
    run.inputs.extend([a.checkpoint.clone(), input]);
    run.outputs.push(a.out.clone());
    run.snapshot("inference", &cfg);
    run.manifest_dir = parent_dir(&a.out);
    println!("{} predictions written to {}", preds.len(), a.out.display());
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<HashMap<String, Permutation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), i + 1),
            source,
        })?;
        map.insert(p.clip_id, p.predicted_order);
    }
    Ok(map)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Writes the split × β table and the per-clip rows.
pub fn write_metric_tables(path: &Path, scores: &[SplitScore]) -> Result<PathBuf> {
    let betas = &scores[0].betas;
    let mut table = String::from("split,n_clips");
    for b in betas {
        table += &format!(",beta_{b}");
    }
    table += ",scene_iou,shot_iou\n";
    let mut clips = table.replacen("split,n_clips", "split,clip_id,n_frames", 1);
    for s in scores {
        table += &format!("{},{}", s.split, s.n_clips);
        for m in &s.means {
            table += &format!(",{m:.4}");
        }
        table += &format!(",{},{}\n", fmt_opt(s.scene_iou), fmt_opt(s.shot_iou));
        for r in &s.rows {
            clips += &format!("{},{},{}", r.split, r.clip_id, r.n_frames);
            for v in &r.scores {
                clips += &format!(",{v:.4}");
            }
            clips += &format!(",{},{}\n", fmt_opt(r.scene_iou), fmt_opt(r.shot_iou));
        }
    }
    write_text(path, &table)?;
    let clip_path = path.with_extension("clips.csv");
    write_text(&clip_path, &clips)?;
    Ok(clip_path)
}

fn cmd_eval(a: &EvalArgs, run: &mut Run) -> Result<()> {
    let dir = a.data.clone().unwrap_or_else(data_dir);
    let cfg = inference_config(&a.opts, run);
    let params;
    let fixed;
    let predictor = match a.pred.as_str() {
        "identity" => Predictor::Identity,
        "random" => Predictor::Random { seed: run.seed },
        "model" => {
            let ckpt = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::invalid("--pred model needs --checkpoint"))?;
            params = ModelParams::load(ckpt)?;
            run.inputs.push(ckpt.clone());
            run.snapshot("inference", &cfg);
            Predictor::Model { params: &params, cfg: &cfg }
        }
        file => {
            let path = PathBuf::from(file);
            fixed = read_predictions(&path)?;
            run.inputs.push(path);
            Predictor::Fixed(&fixed)
        }
    };
    let mut scores = Vec::new();
    for split in &a.splits {
        let path = dir.join(format!("{split}.jsonl"));
        let clips = read_clips_jsonl(&path)?;
        scores.push(evaluate_split(split, &clips, &predictor, &a.betas)?);
        run.inputs.push(path);
    }
    let clip_path = write_metric_tables(&a.out, &scores)?;
    run.outputs = vec![a.out.clone(), clip_path];
    run.snapshot("eval", &serde_json::json!({ "pred": a.pred, "splits": a.splits, "betas": a.betas }));
    run.manifest_dir = parent_dir(&a.out);

    print!("{:<10} {:>7}", "split", "clips");
    for b in &a.betas {
        print!(" {:>8}", format!("β={b}"));
    }
    println!(" {:>9} {:>9}", "scene_iou", "shot_iou");
    for s in &scores {
        print!("{:<10} {:>7}", s.split, s.n_clips);
        for m in &s.means {
            print!(" {m:>8.2}");
        }
        println!(" {:>9} {:>9}", fmt_opt(s.scene_iou), fmt_opt(s.shot_iou));
    }
    Ok(())
}

/// Runs every brute-force cross-check; returns the failing case descriptions.
pub fn oracle_checks(seeds: u64, root: u64) -> Result<Vec<String>> {
    let mut failures = Vec::new();
    for s in 0..seeds {
        let mut rng = rng_for(root, "oracle", s);

        let n = rng.gen_range(2..=9);
        let mut g: Vec<usize> = (0..n).collect();
        let mut p = g.clone();
        rand::seq::SliceRandom::shuffle(&mut g[..], &mut rng);
        rand::seq::SliceRandom::shuffle(&mut p[..], &mut rng);
        let (g, p) = (Permutation::new(g)?, Permutation::new(p)?);
        for beta in 2..=4.min(n) {
            if ordering_score(&g, &p, beta)? != ordering_score_bruteforce(&g, &p, beta)? {
                failures.push(format!("ordering score: seed {s}, n {n}, beta {beta}"));
            }
        }

        let n = rng.gen_range(2..=6);
        let w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-0.99..0.99)).collect();
        let m = ScoreMatrix::new(n, w)?;
        let bsize = (1..n).product::<usize>().max(1);
        let (beam, exact) = (beam_search(&m, bsize)?, exact_max_path(&m)?);
        if (beam.weight - exact.weight).abs() > 1e-9 {
            failures.push(format!("beam search: seed {s}, n {n}: {} vs {}", beam.weight, exact.weight));
        }

        let (r, c) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let w: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let got: f64 = max_weight_assignment(&w).iter().map(|&(i, j)| w[i][j]).sum();
        let best = max_weight_assignment_bruteforce(&w);
        if (got - best).abs() > 1e-9 {
            failures.push(format!("assignment: seed {s}, {r}x{c}: {got} vs {best}"));
        }

        let gen = GenConfig {
            noise: 0.0,
            seed: derive_seed(root, "oracle-clip", s),
            ..Default::default()
        };
        let clip = shuffle_clip(&generate_clip(&gen)?.0, s);
        let reps: Vec<_> = clip.frames.iter().map(|f| f.vision_feat.clone()).collect();
        let icfg = InferenceConfig {
            level_mode: LevelMode::FrameShotScene,
            hierarchy: HierarchySource::Oracle,
            ..Default::default()
        };
        let (order, _) = infer_order_with(&clip, &reps, &OracleComparator::default(), &icfg)?;
        if order != ground_truth_permutation(&clip)? {
            failures.push(format!("oracle pipeline: seed {s}"));
        }
    }
    Ok(failures)
}

fn cmd_oracle(a: &OracleArgs, run: &mut Run) -> Result<()> {
    let failures = oracle_checks(a.seeds, run.seed)?;
    run.snapshot("oracle", &serde_json::json!({ "seeds": a.seeds, "failures": failures }));
    if failures.is_empty() {
        println!("oracle: all checks agree over {} seeds", a.seeds);
    } else {
        for f in &failures {
            println!("MISMATCH {f}");
        }
        println!("oracle: {} mismatches", failures.len());
        run.exit = EXIT_ORACLE_MISMATCH;
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs, run: &mut Run) -> Result<()> {
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<(String, BTreeMap<String, String>)> = Vec::new();
    for path in &a.inputs {
        let csv_err = |source| Error::Csv {
            context: path.display().to_string(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
        for h in &header {
            if !columns.contains(h) {
                columns.push(h.clone());
            }
        }
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let row = header.iter().cloned().zip(record.iter().map(String::from)).collect();
            rows.push((path.display().to_string(), row));
        }
        run.inputs.push(path.clone());
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    let write_err = |source| Error::Csv {
        context: a.out.display().to_string(),
        source,
    };
    let mut header = vec!["source".to_string()];
    header.extend(columns.iter().cloned());
    out.write_record(&header).map_err(write_err)?;
    let stdout = std::io::stdout();
    let mut console = stdout.lock();
    let _ = writeln!(console, "{}", header.join("  "));
    for (source, row) in &rows {
        let mut record = vec![source.clone()];
        record.extend(columns.iter().map(|c| row.get(c).cloned().unwrap_or_default()));
        let _ = writeln!(console, "{}", record.join("  "));
        out.write_record(&record).map_err(write_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_text(&a.out, &String::from_utf8_lossy(&bytes))?;
    run.outputs.push(a.out.clone());
    run.manifest_dir = parent_dir(&a.out);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("clipsort".to_string())
            .chain(s.split_whitespace().map(String::from))
            .collect()
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(argv("frobnicate")), EXIT_USAGE);
        assert_eq!(run(argv("gen --clips")), EXIT_USAGE);
        assert_eq!(run(argv("gen --bogus 3")), EXIT_USAGE);
    }

    #[test]
    fn hyperparameter_flags_parse() {
        let cli = Cli::try_parse_from(argv(
            "eval --pred model --checkpoint c.json --bsize 4 --max-cluster-steps 50 --cluster-distance cosine --level-mode frame_shot_scene",
        ))
        .unwrap();
        let Command::Eval(e) = cli.command else { panic!() };
        assert_eq!(e.opts.bsize, Some(4));
        assert_eq!(e.opts.cluster_distance, Some(DistanceKind::Cosine));
        assert_eq!(e.opts.level_mode, Some(LevelMode::FrameShotScene));
        let cli = Cli::try_parse_from(argv("train --lr 0.001 --batch-size 4 --epochs 2 --lambda 0")).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!((t.lr, t.batch_size, t.epochs, t.lambda), (Some(0.001), Some(4), Some(2), Some(0.0)));
    }

    #[test]
    fn missing_input_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.jsonl");
        let code = run(argv(&format!(
            "train --train {} --out {} --manifest {}",
            missing.display(),
            dir.path().display(),
            dir.path().join("m.json").display()
        )));
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn oracle_checks_agree() {
        assert!(oracle_checks(10, 0).unwrap().is_empty());
    }
}
