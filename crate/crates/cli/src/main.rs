use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fewshot_core::episodes::{write_csv_dataset, NoiseSpec};
use fewshot_core::eval::{evaluate, HeadMode};
use fewshot_core::experiment::{
    emit_results, head_mode_for, load_checkpoint, run_sweep, save_checkpoint, train_model,
    ExperimentConfig, OutputFormat,
};
use fewshot_core::meta::{Learner, TrainMode};
use fewshot_core::noise_analysis::{
    clean_selection_probability, monte_carlo_clean_prob, ConfusionMatrixQ, MAX_EXACT_WAYS,
};
use fewshot_core::{seed, Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fewshot", version, about = "Noise-robust few-shot meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one model and write a checkpoint.
    Train(TrainArgs),
    /// Meta-test a checkpoint on the test split.
    Eval(EvalArgs),
    /// Run the full learner x mode x epsilon grid.
    Sweep(CommonArgs),
    /// Tabulate clean-selection probabilities, exact and simulated.
    ProbAnalysis(ProbArgs),
    /// Write the configured dataset as train.csv and test.csv.
    GenData(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Defaults to the first learner in the config.
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    /// Defaults to the first mode in the config.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Learner the checkpoint was trained with; selects head handling.
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args)]
struct ProbArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 5])]
    ways: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.3, 0.6])]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Reptile,
    EigenReptile,
    FomamlZo,
    Imaml,
}

impl From<LearnerArg> for Learner {
    fn from(l: LearnerArg) -> Self {
        match l {
            LearnerArg::Reptile => Learner::Reptile,
            LearnerArg::EigenReptile => Learner::EigenReptile,
            LearnerArg::FomamlZo => Learner::FomamlZo,
            LearnerArg::Imaml => Learner::Imaml,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Supervised,
    Man,
    Batman,
    Rand,
    Ssl,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Supervised => TrainMode::Supervised,
            ModeArg::Man => TrainMode::Man,
            ModeArg::Batman => TrainMode::Batman,
            ModeArg::Rand => TrainMode::Rand,
            ModeArg::Ssl => TrainMode::Ssl,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let learner = args.learner.map_or(cfg.learners[0], Into::into);
    let mode = args.mode.map_or(cfg.modes[0], Into::into);
    let (train, _) = cfg.load_datasets()?;
    let noise = NoiseSpec::new(args.epsilon, seed::derive(cfg.seed, &[1]))?;
    let (theta, spec) = train_model(&cfg, &train, learner, mode, noise, seed::derive(cfg.seed, &[2]))?;
    let dir = out_dir(&cfg)?;
    let path = dir.join(format!("{}_{}.ckpt", learner.name(), mode.name()));
    save_checkpoint(&theta, &spec, &path)?;
    println!(
        "{}",
        json!({
            "checkpoint": path,
            "learner": learner.name(),
            "mode": mode.name(),
            "epsilon": args.epsilon,
            "parameters": theta.len(),
        })
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let (theta, spec) = load_checkpoint(&args.checkpoint)?;
    let head_mode = match (args.learner, args.mode) {
        (Some(l), Some(m)) => head_mode_for(l.into(), m.into()),
        (Some(l), None) if spec.head_width().is_some() => head_mode_for(l.into(), TrainMode::Supervised),
        _ if spec.head_width().is_some() => HeadMode::AsIs,
        _ => HeadMode::ZeroHead,
    };
    let (_, test) = cfg.load_datasets()?;
    let result = evaluate(&theta, &spec, &test, cfg.task, &cfg.eval, head_mode, seed::derive(cfg.seed, &[3]))?;
    let dir = out_dir(&cfg)?;
    let path = dir.join(format!("eval.{}", extension(args.common.format)));
    let text = match args.common.format {
        Format::Csv => format!(
            "mean_accuracy,ci95,tasks\n{:.6},{:.6},{}\n",
            result.mean_accuracy,
            result.ci95,
            result.per_task_accuracies.len()
        ),
        Format::Json => format!(
            "{{\"mean_accuracy\": {:.6}, \"ci95\": {:.6}, \"tasks\": {}}}\n",
            result.mean_accuracy,
            result.ci95,
            result.per_task_accuracies.len()
        ),
    };
    write_text(&path, &text)?;
    print!("{text}");
    Ok(())
}

fn sweep(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let rows = run_sweep(&cfg)?;
    let dir = out_dir(&cfg)?;
    let path = dir.join(format!("results.{}", extension(args.format)));
    emit_results(&rows, args.format.into(), &path)?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!(
                "{}",
                json!({"cell": {"learner": r.learner.name(), "mode": r.mode.name(), "epsilon": r.epsilon}, "error": e})
            );
        }
        println!(
            "{:<14} {:<11} eps={:.1}  acc={:.4} +- {:.4}",
            r.learner.name(),
            r.mode.name(),
            r.epsilon,
            r.mean_accuracy,
            r.ci95
        );
    }
    Ok(())
}

fn prob_analysis(args: ProbArgs) -> Result<()> {
    let mut rows = Vec::new();
    for &n in &args.ways {
        for (ei, &eps) in args.epsilons.iter().enumerate() {
            let q = ConfusionMatrixQ::from_noise(n, eps)?;
            let analytic = if n <= MAX_EXACT_WAYS {
                Some(clean_selection_probability(&q)?)
            } else {
                None
            };
            let mc = monte_carlo_clean_prob(n, eps, args.trials, seed::derive(args.seed, &[n as u64, ei as u64]))?;
            rows.push((n, eps, analytic, mc.estimate, mc.stderr));
        }
    }
    let fmt = |v: Option<f64>, missing: &str| v.map_or(missing.to_string(), |x| format!("{x:.6}"));
    let text = match args.format {
        Format::Csv => {
            let mut s = String::from("ways,epsilon,analytic,monte_carlo,stderr\n");
            for (n, eps, a, m, se) in &rows {
                s.push_str(&format!("{n},{eps:.6},{},{m:.6},{se:.6}\n", fmt(*a, "")));
            }
            s
        }
        Format::Json => {
            let items: Vec<String> = rows
                .iter()
                .map(|(n, eps, a, m, se)| {
                    format!(
                        "  {{\"ways\": {n}, \"epsilon\": {eps:.6}, \"analytic\": {}, \"monte_carlo\": {m:.6}, \"stderr\": {se:.6}}}",
                        fmt(*a, "null")
                    )
                })
                .collect();
            format!("[\n{}\n]\n", items.join(",\n"))
        }
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        write_text(&dir.join(format!("prob_analysis.{}", extension(args.format))), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn gen_data(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let (train, test) = cfg.load_datasets()?;
    let dir = out_dir(&cfg)?;
    write_csv_dataset(&train, dir.join("train.csv"))?;
    write_csv_dataset(&test, dir.join("test.csv"))?;
    println!(
        "{}",
        json!({"train": dir.join("train.csv"), "test": dir.join("test.csv"), "train_examples": train.len(), "test_examples": test.len()})
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::ProbAnalysis(a) => prob_analysis(a),
        Command::GenData(a) => gen_data(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.to_string(), "kind": e.kind()}));
            ExitCode::FAILURE
        }
    }
}
