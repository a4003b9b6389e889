//! `msda`: run the two-stage adaptation pipeline stage by stage or end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use msda_core::divergence::{select_closest, DistanceMatrix};
use msda_core::nets::{AdversarialLoss, PrivateFeatures};
use msda_core::pretrain::evaluate_accuracy;
use msda_core::runner::{
    emit_report, load_checkpoint, load_domains, predictions_tsv, run_experiment, save_checkpoint, target_dir,
    ExperimentConfig, PreparedTarget, ReportFormat, ResultsTable, TargetSpec,
};
use msda_core::sda::{predict_target_sda, sda_accuracy};
use msda_core::toe::{ensemble_accuracy, predict_target_toe, Labeling, LoopGuard};

#[derive(Parser)]
#[command(name = "msda", version, about = "Multi-source unsupervised domain adaptation for sentiment classification")]
struct Cli {
    /// Root that relative output directories resolve against.
    #[arg(long, global = true, env = "MSDA_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: adversarial shared-private pretraining on the sources.
    Pretrain(StageArgs),
    /// Pairwise proxy A-distances among the sources and the target.
    Adist(StageArgs),
    /// Stage 2 by adapting a private extractor from the closest source.
    Sda(SdaArgs),
    /// Stage 2 by pseudo-labeling with the closest sources' heads and finetuning.
    Toe(ToeArgs),
    /// Full protocol: every target, all requested methods and baselines.
    Run(RunArgs),
    /// Render a results table as CSV or markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config (key=value lines).
    #[arg(short, long)]
    config: PathBuf,
    /// Target domain; required when the config rotates over all domains.
    #[arg(short, long)]
    target: Option<String>,
}

#[derive(Args)]
struct SdaArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Stage-1 checkpoint; defaults to the target's `stage1/best.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Adapt from this source instead of the closest one.
    #[arg(long)]
    source: Option<String>,
    /// Weight of the alignment term.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Weight of the source-parameter constraint.
    #[arg(long)]
    lambda_theta: Option<f64>,
    /// Critic warm-up iterations.
    #[arg(long)]
    iter1: Option<usize>,
    /// Adaptation iterations.
    #[arg(long)]
    iter2: Option<usize>,
    /// Alignment critic objective: nll or wasserstein.
    #[arg(long)]
    da_loss: Option<AdversarialLoss>,
}

#[derive(Args)]
struct ToeArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Stage-1 checkpoint; defaults to the target's `stage1/best.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Initial confidence threshold.
    #[arg(long)]
    delta0: Option<f64>,
    /// Threshold decay per sweep.
    #[arg(long)]
    eta: Option<f64>,
    /// Minimum two-sweep gain that keeps labeling going.
    #[arg(long)]
    n_min: Option<usize>,
    /// Ensemble size.
    #[arg(short, long)]
    k: Option<usize>,
    /// Finetuning iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// average, unanimous or min_prob.
    #[arg(long)]
    labeling: Option<String>,
    /// or / and.
    #[arg(long)]
    guard: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `results.json` written by `run`, or a run directory holding one.
    results: PathBuf,
    /// csv or markdown.
    #[arg(short, long, default_value = "markdown")]
    format: String,
    /// Output file; printed to stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Pretrain(a) => pretrain(&a, root),
        Command::Adist(a) => adist(&a, root),
        Command::Sda(a) => sda(&a, root),
        Command::Toe(a) => toe(&a, root),
        Command::Run(a) => run(&a, root),
        Command::Report(a) => report(&a),
    }
}

fn load_config(path: &Path, root: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(root) = root {
        if cfg.output_dir.is_relative() {
            cfg.output_dir = root.join(&cfg.output_dir);
        }
    }
    Ok(cfg)
}

fn resolve_target(cfg: &ExperimentConfig, flag: Option<&str>) -> Result<String> {
    match (flag, &cfg.target) {
        (Some(t), _) => {
            if !cfg.domain_names().iter().any(|n| n == t) {
                bail!("target '{t}' is not one of the domains {:?}", cfg.domain_names());
            }
            Ok(t.to_string())
        }
        (None, TargetSpec::Single(t)) => Ok(t.clone()),
        (None, TargetSpec::Rotate) => bail!("the config rotates over all domains; pass --target"),
    }
}

struct Stage {
    cfg: ExperimentConfig,
    prep: PreparedTarget,
    dir: PathBuf,
}

fn prepare(args: &StageArgs, root: Option<&Path>) -> Result<Stage> {
    let cfg = load_config(&args.config, root)?;
    let target = resolve_target(&cfg, args.target.as_deref())?;
    let domains = load_domains(&cfg)?;
    let prep = PreparedTarget::new(&cfg, &domains, &target)?;
    let dir = target_dir(&cfg, &target);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(Stage { cfg, prep, dir })
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn pretrain(args: &StageArgs, root: Option<&Path>) -> Result<()> {
    let s = prepare(args, root)?;
    let out = s.dir.join("stage1");
    let (model, log) = s.prep.pretrain(&s.cfg, Some(&out))?;
    save_checkpoint(&model, &out.join("final.ckpt"))?;
    for (name, (_, dev, _)) in s.prep.source_names.iter().zip(&s.prep.sources) {
        let acc = evaluate_accuracy(&model, dev, PrivateFeatures::Extractor(model.private(name)?))?;
        println!("{name}\tdev_accuracy\t{acc:.4}");
    }
    println!("{}\tzero_private_accuracy\t{:.4}", s.prep.target, s.prep.zero_accuracy(&model)?);
    println!(
        "best epoch {:?}, early stop {}, {:.1}s; artifacts in {}",
        log.best_epoch,
        log.stopped_early,
        log.wall_clock_secs,
        out.display()
    );
    Ok(())
}

fn distances(s: &Stage) -> Result<DistanceMatrix> {
    let cached = s.dir.join("adist.json");
    if cached.is_file() {
        let body = fs::read_to_string(&cached)?;
        let matrix: DistanceMatrix = serde_json::from_str(&body).context("parsing cached distance matrix")?;
        let mut expected = s.prep.source_names.clone();
        expected.push(s.prep.target.clone());
        if matrix.names == expected {
            return Ok(matrix);
        }
        log::warn!("{} covers other domains; recomputing", cached.display());
    }
    let matrix = s.prep.distance_matrix(&s.cfg)?;
    write(&s.dir.join("adist.csv"), &matrix.to_csv())?;
    write(&s.dir.join("adist_long.csv"), &matrix.to_long_csv())?;
    write(&cached, &serde_json::to_string_pretty(&matrix)?)?;
    Ok(matrix)
}

fn adist(args: &StageArgs, root: Option<&Path>) -> Result<()> {
    let s = prepare(args, root)?;
    let _ = fs::remove_file(s.dir.join("adist.json"));
    let matrix = distances(&s)?;
    print!("{}", matrix.to_csv());
    Ok(())
}

fn stage1_model(s: &Stage, checkpoint: Option<&Path>) -> Result<msda_core::SharedPrivateModel> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| s.dir.join("stage1/best.ckpt"));
    load_checkpoint(&path, Some(&s.prep.model_config))
        .with_context(|| format!("loading Stage-1 checkpoint {} (run `msda pretrain` first?)", path.display()))
}

fn sda(args: &SdaArgs, root: Option<&Path>) -> Result<()> {
    let mut s = prepare(&args.stage, root)?;
    let c = &mut s.cfg.sda;
    if let Some(v) = args.lambda2 {
        c.lambda2 = v;
    }
    if let Some(v) = args.lambda_theta {
        c.lambda_theta = v;
    }
    if let Some(v) = args.iter1 {
        c.iter1 = v;
    }
    if let Some(v) = args.iter2 {
        c.iter2 = v;
    }
    if let Some(v) = args.da_loss {
        c.da_loss = v;
    }
    s.cfg.validate()?;
    let model = stage1_model(&s, args.checkpoint.as_deref())?;
    let source = match &args.source {
        Some(src) => src.clone(),
        None => select_closest(&distances(&s)?, &s.prep.target)?,
    };
    let out = s.dir.join("sda");
    let state = s.prep.adapt(&model, &source, &s.cfg, Some(&out))?;
    let preds = predict_target_sda(&state, s.prep.target_test.examples())?;
    write(&out.join("predictions.tsv"), &predictions_tsv(&preds))?;
    println!(
        "{}\tsda_from\t{source}\taccuracy\t{:.4}",
        s.prep.target,
        sda_accuracy(&state, &s.prep.target_test)?
    );
    Ok(())
}

fn toe(args: &ToeArgs, root: Option<&Path>) -> Result<()> {
    let mut s = prepare(&args.stage, root)?;
    let c = &mut s.cfg.toe;
    if let Some(v) = args.delta0 {
        c.delta0 = v;
    }
    if let Some(v) = args.eta {
        c.eta = v;
    }
    if let Some(v) = args.n_min {
        c.n_min = v;
    }
    if let Some(v) = args.k {
        c.k_sources = v;
    }
    if let Some(v) = args.iterations {
        c.finetune_iter = v;
    }
    if let Some(v) = &args.labeling {
        c.labeling = match v.as_str() {
            "average" => Labeling::Average,
            "unanimous" => Labeling::Unanimous,
            "min_prob" => Labeling::MinProb,
            other => bail!("unknown labeling '{other}' (expected average, unanimous or min_prob)"),
        };
    }
    if let Some(v) = &args.guard {
        c.guard = match v.as_str() {
            "or" => LoopGuard::Or,
            "and" => LoopGuard::And,
            other => bail!("unknown guard '{other}' (expected or, and)"),
        };
    }
    s.cfg.validate()?;
    let model = stage1_model(&s, args.checkpoint.as_deref())?;
    let matrix = distances(&s)?;
    let out = s.dir.join("toe");
    let outcome = s.prep.toe(&model, &matrix, &s.cfg, Some(&out))?;
    let preds = predict_target_toe(&outcome.model, &outcome.sources, s.prep.target_test.examples())?;
    write(&out.join("predictions.tsv"), &predictions_tsv(&preds))?;
    println!(
        "{}\ttoe_sources\t{}\tpseudo_labels\t{}\taccuracy\t{:.4}",
        s.prep.target,
        outcome.sources.join(","),
        outcome.pseudo_labels.len(),
        ensemble_accuracy(&outcome.model, &outcome.sources, &s.prep.target_test)?
    );
    Ok(())
}

fn run(args: &RunArgs, root: Option<&Path>) -> Result<()> {
    let cfg = load_config(&args.config, root)?;
    let table = run_experiment(&cfg).with_context(|| format!("run failed; see {}/manifest.json", cfg.output_dir.display()))?;
    print!("{}", table.render(ReportFormat::Markdown)?);
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let path = if args.results.is_dir() { args.results.join("results.json") } else { args.results.clone() };
    let body = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table = ResultsTable::from_json(&body)?;
    let format: ReportFormat = args.format.parse()?;
    match &args.out {
        Some(out) => emit_report(&table, format, out)?,
        None => print!("{}", table.render(format)?),
    }
    Ok(())
}
