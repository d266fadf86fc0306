use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use topple::analyze::{analyze, write_analysis, DEFAULT_EXPERIMENT};
use topple::config::{DatasetConfig, ExperimentConfig, Preset, EFFECTIVE_CONFIG};
use topple::core::eval::{run_experiment, ExperimentSpec, RatingRecord, ScenePrediction};
use topple::core::scene::{generate_scene, GroupTag, Scene, SceneParams};
use topple::error::{Error, Result};
use topple::experiments::{run_experiments, ExperimentKind};
use topple::formats;
use topple::pipeline::{build_dataset, render_png, Dataset};
use topple::study::{Server, StudyService};

/// Block-tower stability workbench.
#[derive(Parser)]
#[command(name = "topple", version)]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, simulate, label, render and split the scene groups.
    Dataset(DatasetArgs),
    /// Run the intra-group, cross-group or generalization experiments.
    Experiment(ExperimentArgs),
    /// Train one model on the Train split of some groups.
    Train(TrainArgs),
    /// Serve the rating study over HTTP.
    Study(StudyArgs),
    /// Compare exported human ratings with model predictions.
    Analyze(AnalyzeArgs),
    /// Render a single scene to PNG.
    RenderOne(RenderArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Output directory.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// desk: 200 scenes per group, full: 1000.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Scenes per group (even); overrides the preset.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated group tags such as 4B-2D-Uni (default: all 16).
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<GroupTag>>,
    /// Exponent k of the support-precision draw s = u^k.
    #[arg(long)]
    offset_power: Option<f64>,
    /// Start from a config file (e.g. a previous config.effective.json).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for weight initialisation and shuffling.
    #[arg(long)]
    train_seed: Option<u64>,
    /// Experiment config file (e.g. a previous config.effective.json).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: ExperimentKind,
    #[arg(long, default_value = "data")]
    dataset: PathBuf,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Groups for the intra-group experiment (default: every group present).
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<GroupTag>>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "data")]
    dataset: PathBuf,
    #[arg(long, default_value = "model")]
    out: PathBuf,
    /// Groups to train and test on (default: all 16).
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<GroupTag>>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value = "data")]
    dataset: PathBuf,
    /// Where sessions.jsonl and ratings.jsonl are kept.
    #[arg(long, default_value = "study-state")]
    state: PathBuf,
    /// Directory served at / (the rating UI bundle).
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, default_value = "data")]
    dataset: PathBuf,
    /// Exported ratings (JSON lines).
    #[arg(long)]
    ratings: PathBuf,
    /// predictions.jsonl from `topple experiment`.
    #[arg(long)]
    predictions: PathBuf,
    /// Which experiment's predictions to compare with.
    #[arg(long, default_value = DEFAULT_EXPERIMENT)]
    experiment: String,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene group to sample from.
    #[arg(long, required_unless_present = "scene")]
    group: Option<GroupTag>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render this scene file instead of sampling one.
    #[arg(long, conflicts_with = "group")]
    scene: Option<PathBuf>,
    #[arg(long)]
    offset_power: Option<f64>,
    #[arg(long, default_value = "scene.png")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("topple: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.cmd {
        Command::Dataset(a) => cmd_dataset(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Train(a) => cmd_train(a),
        Command::Study(a) => cmd_study(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::RenderOne(a) => cmd_render(a),
    }
}

fn cmd_dataset(a: DatasetArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => formats::read_json(p)?,
        None => DatasetConfig::preset(a.preset.unwrap_or(Preset::Desk)),
    };
    if let (Some(_), Some(p)) = (&a.config, a.preset) {
        cfg.per_group_count = p.per_group_count();
    }
    if let Some(n) = a.count {
        cfg.per_group_count = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.groups {
        cfg.groups = g;
    }
    if let Some(k) = a.offset_power {
        cfg.sampler.offset_power = k;
    }
    let total = cfg.per_group_count * cfg.groups.len();
    eprintln!(
        "building {} groups x {} scenes into {}",
        cfg.groups.len(),
        cfg.per_group_count,
        a.out.display()
    );
    let progress = |g: GroupTag, n: usize| eprintln!("  {g}: {n} scenes labelled");
    let records = build_dataset(&a.out, &cfg, &progress).inspect_err(|_| {
        eprintln!(
            "dataset incomplete: {} has no manifest; rerun the same command to rebuild",
            a.out.display()
        );
    })?;
    debug_assert_eq!(records.len(), total);
    let stable = records
        .iter()
        .filter(|r| r.label == topple::core::stability::StabilityLabel::Stable)
        .count();
    println!(
        "{} scenes ({stable} stable) in {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}

fn experiment_config(flags: &TrainFlags, groups: Option<Vec<GroupTag>>) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &flags.config {
        Some(p) => {
            // Accept either a bare ExperimentConfig or the echo written next
            // to a report, which nests it under "experiment".
            let v: serde_json::Value = formats::read_json(p)?;
            let inner = v.get("experiment").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = flags.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = flags.train_seed {
        cfg.train.seed = s;
    }
    if let Some(g) = groups {
        cfg.intra_groups = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let cfg = experiment_config(&a.train, a.groups)?;
    let dataset = Dataset::open(&a.dataset)?;
    let report = run_experiments(&dataset, &a.out, a.name, &cfg)?;
    let text = formats::read_bytes(&a.out.join("report.txt"))?;
    print!("{}", String::from_utf8_lossy(&text));
    eprintln!("{} runs written to {}", report.runs.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    dataset: &'a Path,
    groups: &'a [GroupTag],
    train: &'a topple::core::learn::TrainConfig,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = experiment_config(&a.train, None)?;
    let groups = a.groups.unwrap_or_else(GroupTag::all);
    let dataset = Dataset::open(&a.dataset)?;
    let examples = dataset.examples()?;
    formats::write_json(
        &a.out.join(EFFECTIVE_CONFIG),
        &TrainEcho {
            dataset: &a.dataset,
            groups: &groups,
            train: &cfg.train,
        },
    )?;
    let spec = ExperimentSpec::new("train", groups.clone(), groups);
    let run = run_experiment(&spec, &examples, &cfg.train)?;
    formats::write_atomic(&a.out.join("model.slnn"), &formats::encode_model(&run.params))?;
    formats::write_atomic(&a.out.join("curve.csv"), &formats::loss_csv(&run.curve))?;
    formats::write_jsonl(&a.out.join("predictions.jsonl"), &run.predictions)?;
    let acc = run.accuracy();
    println!(
        "trained on {} scenes; test accuracy {}/{}",
        run.train_size, acc.correct, acc.count
    );
    Ok(())
}

fn cmd_study(a: StudyArgs) -> Result<()> {
    let dataset = Dataset::open(&a.dataset)?;
    let service = StudyService::open(&dataset, &a.state, a.static_dir.as_deref())?;
    let addr = format!("{}:{}", a.bind, a.port);
    let workers = rayon::current_num_threads().max(2);
    let server = Server::bind(&addr, Arc::new(service), workers)?;
    match server.local_addr() {
        Some(addr) => eprintln!("serving the study at http://{addr}/"),
        None => eprintln!("serving the study on {addr}"),
    }
    server.join();
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let dataset = Dataset::open(&a.dataset)?;
    let ratings: Vec<RatingRecord> = formats::read_jsonl(&a.ratings)?;
    let predictions: Vec<ScenePrediction> = formats::read_jsonl(&a.predictions)?;
    let analysis = analyze(&dataset, ratings, &predictions, &a.experiment)?;
    formats::write_json(
        &a.out.join(EFFECTIVE_CONFIG),
        &serde_json::json!({
            "dataset": a.dataset,
            "ratings": a.ratings,
            "predictions": a.predictions,
            "experiment": a.experiment,
        }),
    )?;
    write_analysis(&a.out, &analysis, &a.experiment)?;
    let text = formats::read_bytes(&a.out.join("report.txt"))?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let defaults = DatasetConfig::default();
    let scene: Scene = match (&a.scene, a.group) {
        (Some(p), _) => formats::read_json(p)?,
        (None, Some(group)) => {
            let mut sampler = defaults.sampler;
            if let Some(k) = a.offset_power {
                sampler.offset_power = k;
            }
            generate_scene(&SceneParams::new(group, a.seed), &sampler)?
        }
        (None, None) => return Err(Error::Config("pass --group or --scene".into())),
    };
    formats::write_atomic(&a.out, &render_png(&scene, &defaults.camera)?)?;
    println!("{} -> {}", scene.id, a.out.display());
    Ok(())
}
