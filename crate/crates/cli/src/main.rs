use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multihead::autodiff::GradCheckOptions;
use multihead::corpus::{
    parse_corpus, parse_predictions, synth_generate, write_records, AnnotatedSentence, SynthParams,
};
use multihead::evalkit::{aggregate, evaluate, evaluate_records, Averaging, EvalMode, EvalOptions};
use multihead::model::DecodeOptions;
use multihead::trainer::{self, Checkpoint, EpochRecord, TrainConfig};
use multihead::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "multihead", version, about = "Joint entity and relation extraction with multi-head selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Annotate a corpus with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Finite-difference check of every parameter group on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Checkpoint path.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// History path; one JSON record per epoch.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    enforce_tree: bool,
    #[arg(long)]
    no_crf: bool,
    #[arg(long)]
    no_char: bool,
    #[arg(long)]
    no_label_emb: bool,
    #[arg(long)]
    single_head: bool,
    #[arg(long)]
    ec_mode: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    enforce_tree: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Prediction records, or a plain corpus aligned with `--gold`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "strict")]
    mode: EvalMode,
    #[arg(long, default_value = "micro")]
    averaging: Averaging,
    /// Entity classes left out of entity scores; repeatable.
    #[arg(long)]
    exclude: Vec<String>,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    entity_types: usize,
    #[arg(long, default_value_t = 2)]
    relation_labels: usize,
    #[arg(long, default_value_t = 2)]
    multiplicity: usize,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Eval(a) => run_eval(a),
        Command::Synth(a) => run_synth(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn output(path: Option<&Path>) -> multihead::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Missing inputs are reported with their path.
fn require(path: &Path) -> multihead::Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )))
    }
}

fn run_train(a: TrainArgs) -> multihead::Result<ExitCode> {
    let mut config = match &a.config {
        Some(path) => {
            let mut c = TrainConfig::default();
            c.apply_text(&std::fs::read_to_string(require(path)?)?)?;
            c
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(t) = a.threshold {
        config.threshold = t;
    }
    if let Some(m) = a.max_epochs {
        config.max_epochs = m;
    }
    if let Some(path) = a.embeddings {
        config.embeddings_path = Some(path);
    }
    config.enforce_tree |= a.enforce_tree;
    config.use_crf &= !a.no_crf;
    config.use_char_embeddings &= !a.no_char;
    config.use_label_embeddings &= !a.no_label_emb;
    config.single_head |= a.single_head;
    config.ec_mode |= a.ec_mode;
    config.validate()?;

    let train = parse_corpus(require(&a.train)?)?;
    let dev = parse_corpus(require(&a.dev)?)?;
    let model = trainer::build_model(&config, &train, &dev)?;
    let outcome = trainer::fit(model, &train, &dev, |r: &EpochRecord| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev entity {:.4}  relation {:.4}  overall {:.4}",
            r.epoch, r.train_loss, r.dev_entity_f1, r.dev_relation_f1, r.dev_overall_f1
        );
    })?;
    Checkpoint::from_model(&outcome.model).save(&a.out)?;
    if let Some(path) = &a.history {
        write_records(BufWriter::new(File::create(path)?), &outcome.history)?;
    }
    match outcome.best_epoch {
        Some(e) => eprintln!("best epoch {e}; checkpoint written to {}", a.out.display()),
        None => eprintln!("no epochs run; initial model written to {}", a.out.display()),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_predict(a: PredictArgs) -> multihead::Result<ExitCode> {
    let model = Checkpoint::load(require(&a.checkpoint)?)?.to_model()?;
    let mut opts = DecodeOptions::from_config(&model.config);
    if let Some(t) = a.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {t}")));
        }
        opts.threshold = t;
    }
    opts.enforce_tree |= a.enforce_tree;
    let corpus = parse_corpus(require(&a.input)?)?;
    let records = trainer::predict_corpus(&model, &corpus, &opts)?;
    let mut out = output(a.output.as_deref())?;
    write_records(&mut out, &records)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_eval(a: EvalArgs) -> multihead::Result<ExitCode> {
    let gold = parse_corpus(require(&a.gold)?)?;
    require(&a.pred)?;
    let opts = EvalOptions {
        mode: a.mode,
        excluded_entity_classes: a.exclude,
    };
    let counts = match parse_predictions(&a.pred) {
        Ok(mut records) => {
            check_alignment(&gold, records.iter().map(|r| &r.gold.tokens))?;
            for (r, g) in records.iter_mut().zip(&gold) {
                r.gold = g.clone();
            }
            evaluate_records(&records, &opts)?
        }
        Err(_) => {
            let pred: Vec<AnnotatedSentence> = parse_corpus(&a.pred)?;
            check_alignment(&gold, pred.iter().map(|p| &p.tokens))?;
            evaluate(&gold, &pred, None, &opts)?
        }
    };
    let report = aggregate(&counts, a.averaging);
    let mut out = output(a.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn check_alignment<'a>(
    gold: &[AnnotatedSentence],
    pred: impl ExactSizeIterator<Item = &'a Vec<String>>,
) -> multihead::Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::VocabularyMismatch(format!(
            "{} gold records but {} predicted records",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if &g.tokens != p {
            return Err(Error::InvalidRecord {
                record: i + 1,
                message: "predicted tokens differ from gold tokens".into(),
            });
        }
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> multihead::Result<ExitCode> {
    let params = SynthParams {
        entity_types: a.entity_types,
        relation_labels: a.relation_labels,
        multiplicity: a.multiplicity,
        ..SynthParams::default()
    };
    let corpus = synth_generate(a.seed, a.size, &params)?;
    let mut out = output(a.output.as_deref())?;
    write_records(&mut out, &corpus)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(a: GradcheckArgs) -> multihead::Result<ExitCode> {
    let reports = trainer::gradient_check(a.seed, &GradCheckOptions::default())?;
    let mut all_passed = true;
    for (part, report) in &reports {
        println!("{part}");
        for g in &report.groups {
            println!("  {:<28} {:>5} entries  max rel err {:.3e}", g.name, g.entries_checked, g.max_relative_error);
        }
        let verdict = if report.passed() { "pass" } else { "FAIL" };
        println!("  {verdict}: max {:.3e} (tolerance {:.0e})", report.max_relative_error(), report.tolerance);
        all_passed &= report.passed();
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    })
}
