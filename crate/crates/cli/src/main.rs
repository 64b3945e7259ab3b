use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphfuse::ablation::{ablation_settings, run_ablation};
use graphfuse::data::{parse_tokens, read_conll, serialize_conll, write_conll, Sentence};
use graphfuse::synth::{generate, TaskKind, TaskSpec};
use graphfuse::trainer::train_with;
use graphfuse::{Error, Preset, RunSettings, Tagger, Variant};

#[derive(Parser)]
#[command(name = "graphfuse", version, about = "Graph-attention token classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tagger on CoNLL files.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled CoNLL file.
    Eval(EvalArgs),
    /// Label a token-per-line file.
    Predict(PredictArgs),
    /// Write a synthetic train/valid/test corpus.
    Generate(GenerateArgs),
    /// Train every model variant over several seeds on a synthetic task.
    Ablate(AblateArgs),
}

/// Settings overrides, applied in the order defaults < preset < file < flags.
#[derive(Args)]
struct SettingsArgs {
    /// JSON file with (partial) settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// phoner, vietmed, disfluency or desk.
    #[arg(long)]
    preset: Option<String>,
    /// encoder, gat or full.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Graph attention heads.
    #[arg(long)]
    heads: Option<usize>,
    /// Graph attention hidden size.
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[command(flatten)]
    settings: SettingsArgs,
    /// Output directory for checkpoint.json and history.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TaskArgs {
    /// copy, window or relational-match.
    #[arg(long, default_value = "relational-match")]
    task: TaskKind,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    task_max_len: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    valid_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for train.conll, valid.conll and test.conll.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    #[command(flatten)]
    settings: SettingsArgs,
    /// Output directory for ablation.csv, ablation.json and summary.txt.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<Sentence>, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("no such file: {}", path.display())));
    }
    read_conll(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn resolve_settings(args: &SettingsArgs, base: RunSettings) -> Result<RunSettings, Failure> {
    let mut s = match &args.preset {
        Some(p) => p.parse::<Preset>()?.settings(),
        None => base,
    };
    if let Some(path) = &args.config {
        let value: serde_json::Value = serde_json::from_str(&read_file(path)?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        s = s.merge_json(&value)?;
    }
    if let Some(v) = args.variant {
        s.model.variant = v;
    }
    if let Some(v) = args.seed {
        s.train.seed = v;
    }
    if let Some(v) = args.epochs {
        s.train.epochs = v;
    }
    if let Some(v) = args.lr {
        s.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        s.train.batch_size = v;
    }
    if let Some(v) = args.max_len {
        s.train.max_len = v;
    }
    if let Some(v) = args.heads {
        s.model.gat_heads = v;
    }
    if let Some(v) = args.hidden {
        s.model.gat_hidden = v;
    }
    s.validate()?;
    Ok(s)
}

fn task_spec(args: &TaskArgs, seed: u64) -> TaskSpec {
    let mut spec = match args.task {
        TaskKind::Copy => TaskSpec::copy(seed),
        TaskKind::Window => TaskSpec::window(seed),
        TaskKind::RelationalMatch => TaskSpec::relational(seed),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.vocab_size, args.vocab_size);
    set(&mut spec.min_len, args.min_len);
    set(&mut spec.max_len, args.task_max_len);
    set(&mut spec.train, args.train_size);
    set(&mut spec.valid, args.valid_size);
    set(&mut spec.test, args.test_size);
    spec
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let settings = resolve_settings(&args.settings, RunSettings::default())?;
    let train = read_corpus(&args.train)?;
    let valid = read_corpus(&args.valid)?;
    if train.is_empty() || valid.is_empty() {
        return Err(Failure::Usage("training and validation files must contain sentences".into()));
    }
    create_dir(&args.out)?;
    let outcome = train_with(&settings, &train, &valid, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  micro-F1 {:.4}  macro-F1 {:.4}",
            r.epoch, r.train_loss, r.micro_f1, r.macro_f1
        );
    })?;
    outcome.tagger.save(args.out.join("checkpoint.json"))?;
    write_file(&args.out.join("history.jsonl"), &outcome.history_jsonl())?;
    println!(
        "best validation micro-F1 {:.4} at epoch {}",
        outcome.best_micro_f1, outcome.best_epoch
    );
    Ok(())
}

fn load_tagger(path: &Path) -> Result<Tagger, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("no such checkpoint: {}", path.display())));
    }
    Tagger::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let tagger = load_tagger(&args.checkpoint)?;
    let test = read_corpus(&args.test)?;
    if test.is_empty() {
        return Err(Failure::Usage(format!("{} contains no sentences", args.test.display())));
    }
    let report = tagger.evaluate(&test, args.batch_size)?;
    let table = report.to_table();
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("report.json"), &report.to_json())?;
        write_file(&out.join("report.txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let tagger = load_tagger(&args.checkpoint)?;
    let text = read_file(&args.input)?;
    let sentences = parse_tokens(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.input.display())))?;
    let labels = tagger.predict(&sentences, args.batch_size)?;
    let labeled: Vec<Sentence> = sentences
        .into_iter()
        .zip(labels)
        .map(|(tokens, labels)| Sentence::new(tokens, labels))
        .collect();
    let output = serialize_conll(&labeled);
    match &args.out {
        Some(path) => write_file(path, &output),
        None => {
            print!("{output}");
            Ok(())
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let splits = generate(&task_spec(&args.task, args.seed))?;
    create_dir(&args.out)?;
    for (name, corpus) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        write_conll(args.out.join(format!("{name}.conll")), corpus)?;
    }
    println!(
        "wrote {} / {} / {} sentences to {}",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Failure> {
    if args.seeds.is_empty() {
        return Err(Failure::Usage("at least one seed is required".into()));
    }
    let settings = resolve_settings(&args.settings, ablation_settings())?;
    let task = task_spec(&args.task, 0);
    create_dir(&args.out)?;
    let report = run_ablation(&task, &settings, &args.seeds, |row, history| {
        eprintln!(
            "{:<8} seed {:>3}  test micro-F1 {:.4}  macro-F1 {:.4}  ({} epochs)",
            row.variant.as_str(),
            row.seed,
            row.micro_f1,
            row.macro_f1,
            history.len()
        );
    })?;
    let table = report.to_table();
    write_file(&args.out.join("ablation.csv"), &report.to_csv())?;
    write_file(
        &args.out.join("ablation.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_file(&args.out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
