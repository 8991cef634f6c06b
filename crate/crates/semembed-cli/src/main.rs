//! Command-line pipeline: synthetic data generation, region mining,
//! embedding training, evaluation, zero-shot inference, and gradient
//! checking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semembed::error::Error;
use semembed::fileio;
use semembed::losses::{DiscMode, LossConfig};
use semembed::sampling::SamplerConfig;
use semembed::synth::{generate_synthetic, SyntheticSpec};
use semembed::trainer::{train, TrainConfig};
use semembed::{eval, gradcheck, mining};

#[derive(Parser)]
#[command(
    name = "semembed",
    about = "Structured visual-semantic embedding experiments",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test/label-table triple.
    Gensynth(GensynthArgs),
    /// Mine best-matched regions from a multi-label region file.
    Mine(MineArgs),
    /// Train the embedding model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test file.
    Eval(EvalArgs),
    /// Zero-shot evaluation against unseen labels.
    Zeroshot(ZeroshotArgs),
    /// Verify analytic gradients against finite differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Args)]
struct GensynthArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for train.tsv, test.tsv, and labels.tsv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// Multi-label region file.
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output single-label instance file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossFlags {
    #[arg(long, default_value = "none")]
    disc_mode: String,
    /// Enable the difference constraint.
    #[arg(long)]
    difference: bool,
    /// Disable the ranking term.
    #[arg(long)]
    no_rank: bool,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda3: f64,
    #[arg(long, default_value_t = 0.1)]
    margin_rank: f64,
    #[arg(long, default_value_t = 1.0)]
    margin_disc: f64,
    #[arg(long, default_value_t = 0.0005)]
    weight_decay: f64,
}

impl LossFlags {
    fn to_config(&self) -> Result<LossConfig, Error> {
        let cfg = LossConfig {
            margin_rank: self.margin_rank,
            margin_disc: self.margin_disc,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            weight_decay: self.weight_decay,
            disc_mode: self.disc_mode.parse()?,
            difference_enabled: self.difference,
            rank_enabled: !self.no_rank,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training instance file.
    #[arg(long = "train")]
    train_file: PathBuf,
    /// Label embedding file.
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    loss: LossFlags,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 80)]
    lr_step_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr_step_factor: f64,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 16)]
    references_per_batch: usize,
    #[arg(long, default_value_t = 10)]
    candidates_per_ref: usize,
    #[arg(long, default_value_t = 0.2)]
    positive_fraction: f64,
    /// Cap on ranking negatives per batch (unlimited when omitted).
    #[arg(long)]
    max_negatives: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    /// Evaluate batch terms on the rayon pool.
    #[arg(long)]
    parallel: bool,
    /// Output checkpoint path.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional per-epoch loss log.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test instance file.
    #[arg(long = "test")]
    test_file: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Comma-separated hit@k values.
    #[arg(long, default_value = "1,2,5,10", value_delimiter = ',')]
    k: Vec<usize>,
    /// k for the top-k multi-label metrics.
    #[arg(long, default_value_t = 3)]
    topk: usize,
    /// Comma-separated N values for mAP@N.
    #[arg(long, default_value = "10", value_delimiter = ',')]
    map_n: Vec<usize>,
    /// Report path (.txt; a .json copy is written beside it).
    #[arg(long, default_value = "report.txt")]
    report: PathBuf,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "test")]
    test_file: PathBuf,
    /// Unseen label embedding file.
    #[arg(long)]
    unseen_labels: PathBuf,
    /// Seen (training) label embedding file.
    #[arg(long)]
    seen_labels: Option<PathBuf>,
    /// Checkpoint of a second model trained against attribute embeddings;
    /// rankings then use the concatenated word+attribute spaces.
    #[arg(long, requires = "attr_unseen_labels")]
    attr_checkpoint: Option<PathBuf>,
    /// Unseen attribute embedding file (same label ids, any dimension).
    #[arg(long, requires = "attr_checkpoint")]
    attr_unseen_labels: Option<PathBuf>,
    /// Seen attribute embedding file (generalized concatenated mode).
    #[arg(long)]
    attr_seen_labels: Option<PathBuf>,
    /// Rank over the joint seen ∪ unseen label space.
    #[arg(long)]
    generalized: bool,
    #[arg(long, default_value = "1,2,5", value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, default_value = "report.txt")]
    report: PathBuf,
}

#[derive(Args)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configurations per loss family.
    #[arg(long, default_value_t = 100)]
    configs: usize,
}

fn clip_ks(ks: &[usize], candidates: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ks.iter().copied().filter(|&k| k <= candidates).collect();
    if out.is_empty() {
        out.push(candidates.max(1));
    }
    out
}

fn effective_rank_only(cfg: &LossConfig) -> bool {
    let disc_active = cfg.disc_mode != DiscMode::None && cfg.lambda2 > 0.0;
    let diff_active = cfg.difference_enabled && cfg.lambda3 > 0.0;
    cfg.rank_enabled && !disc_active && !diff_active
}

fn run_gensynth(args: &GensynthArgs) -> Result<(), Error> {
    let spec = SyntheticSpec {
        classes: args.classes,
        per_class: args.per_class,
        feature_dim: args.feature_dim,
        embed_dim: args.embed_dim,
        noise_sigma: args.noise,
        class_overlap: args.overlap,
        seed: args.seed,
    };
    let (train, test, labels) = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    fileio::write_dataset(args.out_dir.join("train.tsv"), &train)?;
    fileio::write_dataset(args.out_dir.join("test.tsv"), &test)?;
    fileio::write_label_embeddings(args.out_dir.join("labels.tsv"), &labels)?;
    println!(
        "wrote {} train / {} test instances over {} classes to {}",
        train.len(),
        test.len(),
        labels.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_mine(args: &MineArgs) -> Result<(), Error> {
    let images = fileio::load_multilabel(&args.images)?;
    let scorer = mining::train_scorer(&images, args.epochs, args.lr, args.seed)?;
    let mut mined = Vec::new();
    for image in &images {
        mined.extend(mining::mine_regions(image, &scorer)?);
    }
    let dataset = semembed::Dataset::new(mined)?;
    fileio::write_dataset(&args.out, &dataset)?;
    println!(
        "mined {} instances from {} images to {}",
        dataset.len(),
        images.len(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<(), Error> {
    let dataset = fileio::load_dataset(&args.train_file)?;
    let labels = fileio::load_label_embeddings(&args.labels)?;
    let loss_cfg = args.loss.to_config()?;
    let sampler = SamplerConfig {
        batch_size: args.batch_size,
        references_per_batch: args.references_per_batch,
        candidates_per_ref: args.candidates_per_ref,
        positive_fraction: args.positive_fraction,
        max_negatives: args.max_negatives,
    };
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        lr_step_epochs: args.lr_step_epochs,
        lr_step_factor: args.lr_step_factor,
        epochs: args.epochs,
        batches_per_epoch: args.batches_per_epoch,
        sampler,
        rng_seed: args.seed,
        init_scale: args.init_scale,
        parallel: args.parallel,
        progress: true,
    };

    let mode_line = if effective_rank_only(&loss_cfg) {
        "mode: rank-only baseline".to_string()
    } else {
        format!(
            "mode: rank={} disc={:?} difference={}",
            loss_cfg.rank_enabled, loss_cfg.disc_mode, loss_cfg.difference_enabled
        )
    };
    println!("{mode_line}");

    let state = train(&dataset, &labels, &loss_cfg, &train_cfg)?;
    fileio::save_checkpoint(&state, &args.checkpoint)?;
    println!("checkpoint written to {}", args.checkpoint.display());

    if let Some(log_path) = &args.loss_log {
        let mut out = String::new();
        writeln!(out, "# {mode_line}").unwrap();
        for (epoch, loss) in &state.loss_history {
            writeln!(out, "epoch {epoch} loss {loss}").unwrap();
        }
        fs::write(log_path, out).map_err(|e| Error::Io {
            path: log_path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), Error> {
    let state = fileio::load_checkpoint(&args.checkpoint)?;
    let test = fileio::load_dataset(&args.test_file)?;
    let labels = fileio::load_label_embeddings(&args.labels)?;
    let ks = clip_ks(&args.k, labels.len());
    let report = eval::evaluate(&state.model, &test, &labels, &ks, args.topk, &args.map_n)?;
    print!("{}", fileio::render_report_txt(&report));
    fileio::write_report(&report, &args.report)?;
    Ok(())
}

fn run_zeroshot(args: &ZeroshotArgs) -> Result<(), Error> {
    let state = fileio::load_checkpoint(&args.checkpoint)?;
    let test = fileio::load_dataset(&args.test_file)?;
    let unseen = fileio::load_label_embeddings(&args.unseen_labels)?;
    let seen = args
        .seen_labels
        .as_ref()
        .map(fileio::load_label_embeddings)
        .transpose()?;
    let candidate_count = if args.generalized {
        unseen.len() + seen.as_ref().map_or(0, |s| s.len())
    } else {
        unseen.len()
    };
    let ks = clip_ks(&args.k, candidate_count);

    let report = match (&args.attr_checkpoint, &args.attr_unseen_labels) {
        (Some(attr_ckpt), Some(attr_unseen_path)) => {
            let attr_state = fileio::load_checkpoint(attr_ckpt)?;
            let attr_unseen = fileio::load_label_embeddings(attr_unseen_path)?;
            let attr_seen = args
                .attr_seen_labels
                .as_ref()
                .map(fileio::load_label_embeddings)
                .transpose()?;
            let seen_tables = match (&seen, &attr_seen) {
                (Some(w), Some(a)) => Some(vec![w, a]),
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidConfig(
                        "concatenated mode needs seen label files for both spaces or neither"
                            .into(),
                    ))
                }
            };
            eval::zero_shot_eval_concat(
                &[&state.model, &attr_state.model],
                &test,
                &[&unseen, &attr_unseen],
                seen_tables.as_deref(),
                args.generalized,
                &ks,
            )?
        }
        _ => eval::zero_shot_eval(
            &state.model,
            &test,
            &unseen,
            seen.as_ref(),
            args.generalized,
            &ks,
        )?,
    };
    print!("{}", fileio::render_report_txt(&report));
    fileio::write_report(&report, &args.report)?;
    Ok(())
}

fn run_check_grad(args: &CheckGradArgs) -> Result<(), Error> {
    let reports = gradcheck::run_suite(args.seed, args.configs)?;
    let mut failed = false;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<12} configs={} max_rel_err={:.3e} tol={:.0e} {status}",
            r.name, r.configs, r.max_rel_err, r.tolerance
        );
        failed |= !r.passed();
    }
    if failed {
        return Err(Error::GradCheckFailed(
            "analytic gradients disagree with finite differences".into(),
        ));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gensynth(args) => run_gensynth(args),
        Command::Mine(args) => run_mine(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Zeroshot(args) => run_zeroshot(args),
        Command::CheckGrad(args) => run_check_grad(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help requests are successes; anything else is a usage error.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_numerical() {
                3
            } else if matches!(e, Error::InvalidConfig(_)) {
                1
            } else {
                2
            };
            ExitCode::from(code)
        }
    }
}
