use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use condreg::data::{load_mnist, Dataset, Split};
use condreg::experiments::{
    dump_reconstructions, run_checks, run_classify, run_denoise, run_lsq, write_csv,
    ClassifyConfig, CsvRecord, DenoiseConfig, ExperimentError, LsqConfig, LsqRecord,
};
use condreg::regularizer::RegKind;

#[derive(Parser)]
#[command(
    name = "condreg",
    version,
    about = "Condition-number regularization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Small enough for a laptop: 256 hidden units, 10k images, 10 epochs.
    Desk,
    /// Full-size networks on all 60k training images for 50 epochs.
    Full,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "CONDNUM_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long, default_value = "proposed", value_parser = parse_reg)]
    reg: RegKind,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Maximum number of runs executed in parallel.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Per-epoch progress on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Regularized least squares with plain gradient descent.
    Lsq {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        d: usize,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,10,20,30,40,50,60,70,80,90,100"
        )]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
    },
    /// Two-layer MNIST classifier, accuracy under test-time noise.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "inf,1,0.5")]
        snrs: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Denoising autoencoder on noisy MNIST.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        snr: f64,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Also write clean/noisy/reconstructed test images as pixel rows.
        #[arg(long)]
        dump_images: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        dump_count: usize,
    },
    /// Invariant checks for the decomposition and the regularizer.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn parse_reg(s: &str) -> Result<RegKind, String> {
    s.parse()
}

fn emit<R: CsvRecord>(out: &Option<PathBuf>, records: &[R]) -> Result<(), ExperimentError> {
    match out {
        Some(path) => write_csv(std::fs::File::create(path)?, records),
        None => write_csv(io::stdout().lock(), records),
    }
}

fn load(dir: &Path) -> Result<(Dataset, Dataset), ExperimentError> {
    Ok((
        load_mnist(dir, Split::Train)?,
        load_mnist(dir, Split::Test)?,
    ))
}

fn summarize_lsq(records: &[LsqRecord], lambdas: &[f64]) {
    eprintln!(
        "{:>10} {:>12} {:>12} {:>6}",
        "lambda", "mean kappa", "mean ratio", "runs"
    );
    for &l in lambdas {
        let rows: Vec<&LsqRecord> = records.iter().filter(|r| r.lambda == l).collect();
        let mean =
            |f: fn(&LsqRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
        eprintln!(
            "{:>10} {:>12.4} {:>12.4} {:>6}",
            l,
            mean(|r| r.kappa_w),
            mean(|r| r.error_ratio),
            rows.len()
        );
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExperimentError> {
    match cli.command {
        Command::Lsq {
            common,
            n,
            m,
            d,
            steps,
            lambdas,
            repeats,
            lr,
        } => {
            let cfg = LsqConfig {
                n,
                m,
                d,
                steps,
                lambdas: lambdas.clone(),
                repeats,
                base_seed: common.seed,
                reg_kind: common.reg,
                learning_rate: lr,
                jobs: common.jobs,
            };
            let records = run_lsq(&cfg)?;
            summarize_lsq(&records, &lambdas);
            emit(&common.out, &records)?;
        }
        Command::Classify {
            common,
            hidden,
            epochs,
            train_limit,
            batch_size,
            lr,
            lambdas,
            snrs,
            repeats,
        } => {
            let base = match common.profile {
                Profile::Desk => ClassifyConfig::desk(),
                Profile::Full => ClassifyConfig::full(),
            };
            let cfg = ClassifyConfig {
                hidden: hidden.unwrap_or(base.hidden),
                epochs: epochs.unwrap_or(base.epochs),
                train_limit: train_limit.unwrap_or(base.train_limit),
                batch_size: batch_size.unwrap_or(base.batch_size),
                learning_rate: lr.unwrap_or(base.learning_rate),
                lambdas: lambdas.unwrap_or(base.lambdas),
                snrs,
                repeats,
                base_seed: common.seed,
                reg_kind: common.reg,
                jobs: common.jobs,
                verbose: common.verbose,
            };
            let (train, test) = load(&common.data_dir)?;
            let records = run_classify(&cfg, &train, &test)?;
            for r in &records {
                eprintln!(
                    "lambda={} seed={} snr={} kappa_w1={:.3} accuracy={:.4} {}",
                    r.lambda, r.seed, r.snr, r.kappa_w1, r.accuracy, r.status
                );
            }
            emit(&common.out, &records)?;
        }
        Command::Denoise {
            common,
            epochs,
            train_limit,
            batch_size,
            lr,
            lambda1,
            lambda2,
            snr,
            repeats,
            dump_images,
            dump_count,
        } => {
            let base = match common.profile {
                Profile::Desk => DenoiseConfig::desk(),
                Profile::Full => DenoiseConfig::full(),
            };
            let cfg = DenoiseConfig {
                epochs: epochs.unwrap_or(base.epochs),
                train_limit: train_limit.unwrap_or(base.train_limit),
                batch_size: batch_size.unwrap_or(base.batch_size),
                learning_rate: lr.unwrap_or(base.learning_rate),
                lambda1: lambda1.unwrap_or(base.lambda1),
                lambda2: lambda2.unwrap_or(base.lambda2),
                snr,
                repeats,
                base_seed: common.seed,
                reg_kind: common.reg,
                jobs: common.jobs,
                verbose: common.verbose,
                ..base
            };
            let (train, test) = load(&common.data_dir)?;
            let runs = run_denoise(&cfg, &train, &test)?;
            for r in &runs {
                let k = r.record.kappas;
                eprintln!(
                    "seed={} kappa E1={:.3} E2={:.3} D2={:.3} D1={:.3} mse={:.5} {}",
                    r.record.seed, k[0], k[1], k[2], k[3], r.record.mse, r.record.status
                );
            }
            if let Some(path) = &dump_images {
                dump_reconstructions(
                    std::fs::File::create(path)?,
                    &runs,
                    &test.images,
                    cfg.outer,
                    cfg.code,
                    dump_count,
                )?;
            }
            let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
            emit(&common.out, &records)?;
        }
        Command::Check { common, trials } => {
            let report = run_checks(common.seed, trials)?;
            for item in &report.items {
                eprintln!("{item}");
            }
            emit(&common.out, &report.items)?;
            if !report.all_passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ExperimentError::Config(_) => 2,
                ExperimentError::Data(_) => 3,
                _ => 1,
            })
        }
    }
}
