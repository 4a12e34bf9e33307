//! Command-line front end: train, evaluate, score, benchmark, and inspect
//! models over delimited text data. Training runs in f32.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctr::checkpoint::{save_parts, Checkpoint};
use ctr::data::{build_vocabulary, read_dataset, Dataset, ReadOptions};
use ctr::error::{Error, Result};
use ctr::fwbi::Activation;
use ctr::metrics::{benchmark_throughput, evaluate, param_count};
use ctr::network::{DiceConfig, HeadActivation, ModelConfig, ModelParams};
use ctr::schema::FieldSchema;
use ctr::trainer::{train_epoch, TrainOptions, TrainState};

#[derive(Parser)]
#[command(
    name = "ctr",
    version,
    about = "Train and serve a field-aware CTR model over sparse categorical data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model and write per-epoch checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Score a labeled dataset with a saved model and print AUC / log loss.
    Eval(EvalArgs),
    /// Write one click probability per input row.
    Predict(PredictArgs),
    /// Measure training and serving throughput on the given data.
    Bench(BenchArgs),
    /// Print the parameter budget of a saved model.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadActArg {
    Linear,
    Relu,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    /// Full model: interaction layer plus MLP tower.
    Full,
    /// Factorization-machine special case (no tower, fixed head).
    Fm,
    /// Field-weighted FM special case.
    Fwfm,
    /// Logistic regression on the raw sparse features.
    Linear,
}

#[derive(Args, Clone)]
struct IoArgs {
    /// Name of the label column in the data header.
    #[arg(long, default_value = "label")]
    label_col: String,
    /// Cell delimiter; a single character, or \t for tab.
    #[arg(long, default_value = ",")]
    delimiter: String,
}

impl IoArgs {
    fn read_options(&self, require_label: bool) -> Result<ReadOptions> {
        let delim = match self.delimiter.as_str() {
            "\\t" | "\t" => b'\t',
            s if s.len() == 1 => s.as_bytes()[0],
            s => {
                return Err(Error::Encode {
                    record: 0,
                    msg: format!("delimiter must be one character, got {s:?}"),
                })
            }
        };
        Ok(ReadOptions {
            delimiter: delim,
            label_col: self.label_col.clone(),
            require_label,
            ..ReadOptions::default()
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training data (delimited text with a header row).
    #[arg(long)]
    data: PathBuf,
    /// Schema document describing fields and hierarchies.
    #[arg(long)]
    schema: PathBuf,
    /// Held-out data evaluated after every epoch.
    #[arg(long)]
    eval: PathBuf,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Comma-separated tower widths; "none" disables the tower.
    #[arg(long, default_value = "64,32")]
    mlp: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Interaction-dimension dropout (full model only).
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    dicefactor: Toggle,
    /// Keep probability for the dropout.
    #[arg(long, default_value_t = 0.7)]
    dicefactor_beta: f64,
    /// Resample the dropout mask per example instead of per batch.
    #[arg(long, default_value_t = false)]
    per_example_mask: bool,
    #[arg(long, value_enum, default_value_t = HeadActArg::Linear)]
    head_activation: HeadActArg,
    #[arg(long, value_enum, default_value_t = ModelKind::Full)]
    model: ModelKind,
    /// Cap on learned vocabulary size per field.
    #[arg(long, default_value_t = 1_000_000)]
    max_vocab: usize,
    /// Also log the running train loss every N optimizer steps.
    #[arg(long)]
    log_every_iters: Option<u64>,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output file, one probability per input row.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Total wall-clock budget split over the timing trials.
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Predict(args) => cmd_predict(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Inspect(args) => cmd_inspect(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn parse_widths(text: &str) -> Result<Vec<usize>> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("none") {
        return Ok(vec![]);
    }
    trimmed
        .split(',')
        .map(|part| {
            part.trim().parse::<usize>().ok().filter(|&w| w > 0).ok_or_else(|| Error::Encode {
                record: 0,
                msg: format!("bad tower width {:?}; expected positive integers", part),
            })
        })
        .collect()
}

fn display_auc(auc: Option<f64>) -> String {
    match auc {
        Some(a) => format!("{a}"),
        None => "nan".to_string(),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let schema = FieldSchema::parse_file(&args.schema)?;
    let opts = args.io.read_options(true)?;
    let vocab = build_vocabulary(&args.data, &schema, &opts, args.max_vocab)?;
    let resolved = schema.resolved(&vocab)?;

    let model_config = ModelConfig {
        embed_dim: args.embed_dim,
        mlp_widths: parse_widths(&args.mlp)?,
        fwbi_activation: Activation::Relu,
        head_activation: match args.head_activation {
            HeadActArg::Linear => HeadActivation::Linear,
            HeadActArg::Relu => HeadActivation::Relu,
        },
        dice: DiceConfig {
            enabled: args.dicefactor == Toggle::On,
            beta: args.dicefactor_beta,
            per_example: args.per_example_mask,
        },
        train_r: true,
        train_w_proj: true,
        train_head: true,
    };
    let mut model: ModelParams<f32> = match args.model {
        ModelKind::Full => ModelParams::new(resolved.clone(), model_config, args.seed)?,
        ModelKind::Fm => ModelParams::new_fm(&resolved, args.embed_dim, args.seed)?,
        ModelKind::Fwfm => ModelParams::new_fwfm(&resolved, args.embed_dim, args.seed)?,
        ModelKind::Linear => ModelParams::new_linear(&resolved, args.seed)?,
    };

    let train_data = read_dataset(&args.data, &resolved, &vocab, &opts)?;
    let eval_data = read_dataset(&args.eval, &resolved, &vocab, &opts)?;
    println!(
        "loaded {} train rows, {} eval rows, {} fields",
        train_data.len(),
        eval_data.len(),
        resolved.n_fields()
    );

    std::fs::create_dir_all(&args.out)?;
    let mut log = BufWriter::new(File::create(args.out.join("metrics.csv"))?);
    writeln!(log, "epoch,train_logloss,eval_auc,eval_logloss,seconds")?;

    let mut state = TrainState::new(&model);
    let train_opts = TrainOptions {
        lr: args.lr,
        batch_size: args.batch_size,
        log_every: args.log_every_iters,
        ..TrainOptions::default()
    };
    // Distinct stream from the init seed so epochs never replay init draws.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut last_ckpt = None;
    for epoch in 1..=args.epochs {
        let start = Instant::now();
        let train_logloss = train_epoch(
            &mut model,
            &mut state,
            &train_data,
            &train_opts,
            &mut rng,
            |step, loss| println!("iter {step}: running train_logloss {loss:.6}"),
        )?;
        let seconds = start.elapsed().as_secs_f64();
        let report = evaluate(&model, &eval_data)?;
        writeln!(
            log,
            "{epoch},{train_logloss},{},{},{seconds:.3}",
            display_auc(report.auc),
            report.mean_logloss
        )?;
        log.flush()?;
        println!(
            "epoch {epoch}: train_logloss {train_logloss:.6} eval_auc {} eval_logloss {:.6} seconds {seconds:.3}",
            display_auc(report.auc),
            report.mean_logloss
        );

        let path = args.out.join(format!("epoch_{epoch}.ckpt"));
        save_parts(&model, &state, &vocab, &path)?;
        last_ckpt = Some(path);
    }

    match last_ckpt {
        Some(path) => {
            std::fs::copy(&path, args.out.join("model.ckpt"))?;
            println!("final model written to {}", args.out.join("model.ckpt").display());
            Ok(())
        }
        None => Err(Error::EmptyData("no epochs requested".into())),
    }
}

fn load_with_data(
    model_path: &Path,
    data_path: &Path,
    io: &IoArgs,
    require_label: bool,
) -> Result<(Checkpoint<f32>, Dataset)> {
    let ckpt = Checkpoint::<f32>::load(model_path)?;
    let opts = io.read_options(require_label)?;
    let data = read_dataset(data_path, &ckpt.model.schema, &ckpt.vocab, &opts)?;
    Ok((ckpt, data))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (ckpt, data) = load_with_data(&args.model, &args.data, &args.io, true)?;
    let report = evaluate(&ckpt.model, &data)?;
    println!("examples {}", report.n_examples);
    match report.auc {
        Some(a) => println!("auc {a}"),
        None => println!("auc undefined (single-class labels)"),
    }
    println!("logloss {}", report.mean_logloss);
    println!("seconds {:.3}", report.wall_seconds);
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (ckpt, data) = load_with_data(&args.model, &args.data, &args.io, false)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    for i in 0..data.len() {
        let p = ckpt.model.predict(&data.get(i))?;
        writeln!(out, "{p}")?;
    }
    out.flush()?;
    println!("wrote {} predictions to {}", data.len(), args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let (ckpt, data) = load_with_data(&args.model, &args.data, &args.io, true)?;
    let report = benchmark_throughput(&ckpt.model, &data, args.seconds)?;
    println!("inference_examples_per_sec {:.0}", report.inference_ips);
    println!("train_examples_per_sec {:.0}", report.train_ips);
    println!(
        "inference_trials {}",
        report.inference_trials.iter().map(|t| format!("{t:.0}")).collect::<Vec<_>>().join(" ")
    );
    println!(
        "train_trials {}",
        report.train_trials.iter().map(|t| format!("{t:.0}")).collect::<Vec<_>>().join(" ")
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&args.model)?;
    let count = param_count(&ckpt.model.schema, &ckpt.model.config)?;
    println!("fields {}", ckpt.model.schema.n_fields());
    println!("hierarchies {}", ckpt.model.schema.n_hierarchies());
    println!("embed_dim {}", ckpt.model.config.embed_dim);
    println!("optimizer_step {}", ckpt.state.step);
    println!("embedding {}", count.embedding);
    println!("linear {}", count.linear);
    println!("pair_weights {}", count.pair_weights);
    println!("projection {}", count.projection);
    println!("mlp {}", count.mlp);
    println!("head {}", count.head);
    println!("total {}", count.total);
    println!("complexity {}", count.complexity);
    Ok(())
}
