use std::time::Instant;

use crate::data::{add_noise, derive_seed, Dataset, NoiseSpec};
use crate::linalg::kappa;
use crate::nn::{
    evaluate_classifier, init_params, train, LossConfig, LossKind, NetworkSpec, NnError,
    TrainConfig,
};
use crate::regularizer::RegKind;

use super::{num, par_map, require, CsvRecord, ExperimentError, RunStatus, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambdas: Vec<f64>,
    /// Test-time SNRs; `f64::INFINITY` means clean images.
    pub snrs: Vec<f64>,
    pub train_limit: usize,
    pub repeats: usize,
    pub base_seed: u64,
    pub reg_kind: RegKind,
    pub jobs: usize,
    pub verbose: bool,
}

impl ClassifyConfig {
    pub fn desk() -> Self {
        Self {
            hidden: 256,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-4,
            lambdas: vec![0.0, 0.1],
            snrs: vec![f64::INFINITY, 1.0, 0.5],
            train_limit: 10_000,
            repeats: 1,
            base_seed: 0,
            reg_kind: RegKind::Proposed,
            jobs: 1,
            verbose: false,
        }
    }

    pub fn full() -> Self {
        Self {
            hidden: 2048,
            epochs: 50,
            train_limit: 60_000,
            lambdas: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0],
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyRecord {
    pub reg: RegKind,
    pub lambda: f64,
    pub seed: u64,
    pub hidden: usize,
    pub train_limit: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr: f64,
    pub kappa_w1: f64,
    pub accuracy: f64,
    pub epochs: usize,
    pub status: RunStatus,
    pub wall_time_seconds: f64,
}

impl CsvRecord for ClassifyRecord {
    const HEADER: &'static [&'static str] = &[
        "schema_version",
        "experiment",
        "reg",
        "lambda",
        "seed",
        "hidden",
        "train_limit",
        "batch_size",
        "lr",
        "snr",
        "kappa_w1",
        "metric",
        "value",
        "epochs",
        "status",
        "wall_time_seconds",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            "classify".into(),
            self.reg.to_string(),
            num(self.lambda),
            self.seed.to_string(),
            self.hidden.to_string(),
            self.train_limit.to_string(),
            self.batch_size.to_string(),
            num(self.learning_rate),
            num(self.snr),
            num(self.kappa_w1),
            "accuracy".into(),
            num(self.accuracy),
            self.epochs.to_string(),
            self.status.to_string(),
            format!("{:.3}", self.wall_time_seconds),
        ]
    }
}

struct Task {
    lambda: f64,
    seed: u64,
}

/// Trains the sigmoid/softmax classifier once per (λ, repeat) and reports
/// test accuracy at every SNR in `snrs`. Each training run owns its
/// parameters; test noise for SNR index `k` uses `derive_seed(seed, 3 + k)`.
pub fn run_classify(
    cfg: &ClassifyConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<ClassifyRecord>, ExperimentError> {
    require(
        cfg.hidden >= 1 && cfg.epochs >= 1 && cfg.batch_size >= 1,
        "hidden, epochs and batch size must be positive",
    )?;
    require(
        !cfg.lambdas.is_empty() && cfg.lambdas.iter().all(|l| l.is_finite() && *l >= 0.0),
        "lambdas must be nonempty, finite and nonnegative",
    )?;
    require(
        !cfg.snrs.is_empty() && cfg.snrs.iter().all(|s| *s > 0.0),
        "snr list must be nonempty and positive",
    )?;
    require(cfg.repeats >= 1, "repeats must be at least 1")?;
    require(
        !train_set.is_empty() && !test_set.is_empty(),
        "empty dataset",
    )?;

    let train_set = train_set.truncate(cfg.train_limit);
    let targets = train_set.one_hot();
    let input_dim = train_set.images.cols();
    let spec = NetworkSpec::classifier(input_dim, cfg.hidden, 10);
    let noisy_tests: Vec<Vec<_>> = (0..cfg.repeats)
        .map(|r| {
            cfg.snrs
                .iter()
                .enumerate()
                .map(|(k, &snr)| {
                    add_noise(
                        &test_set.images,
                        NoiseSpec {
                            snr,
                            seed: derive_seed(cfg.base_seed + r as u64, 3 + k as u64),
                        },
                    )
                })
                .collect()
        })
        .collect();

    let tasks: Vec<Task> = (0..cfg.repeats)
        .flat_map(|r| {
            cfg.lambdas.iter().map(move |&lambda| Task {
                lambda,
                seed: cfg.base_seed + r as u64,
            })
        })
        .collect();

    let results = par_map(
        cfg.jobs,
        &tasks,
        |t| -> Result<Vec<ClassifyRecord>, ExperimentError> {
            let start = Instant::now();
            let mut params = init_params(&spec, derive_seed(t.seed, 1));
            let loss = LossConfig {
                kind: LossKind::CrossEntropy,
                lambda1: t.lambda,
                lambda2: 0.0,
                reg_kind: cfg.reg_kind,
            };
            let tc = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                seed: derive_seed(t.seed, 2),
                input_snr: None,
            };
            let outcome = train(
                &spec,
                &mut params,
                &train_set.images,
                &targets,
                &loss,
                &tc,
                |e| {
                    if cfg.verbose {
                        eprintln!("classify lambda={} seed={}: {e}", t.lambda, t.seed);
                    }
                },
            );
            let status = match outcome {
                Ok(_) => RunStatus::Ok,
                Err(NnError::TrainingDiverged { step, .. }) => RunStatus::Diverged { step },
                Err(e) => return Err(e.into()),
            };
            let kappa_w1 = kappa(params.weight(0)).unwrap_or(f64::NAN);
            let repeat = (t.seed - cfg.base_seed) as usize;
            let mut records = Vec::with_capacity(cfg.snrs.len());
            for (k, &snr) in cfg.snrs.iter().enumerate() {
                let accuracy = match status {
                    RunStatus::Ok => evaluate_classifier(
                        &spec,
                        &params,
                        &noisy_tests[repeat][k],
                        &test_set.labels,
                    )?,
                    RunStatus::Diverged { .. } => f64::NAN,
                };
                records.push(ClassifyRecord {
                    reg: cfg.reg_kind,
                    lambda: t.lambda,
                    seed: t.seed,
                    hidden: cfg.hidden,
                    train_limit: train_set.len(),
                    batch_size: cfg.batch_size,
                    learning_rate: cfg.learning_rate,
                    snr,
                    kappa_w1,
                    accuracy,
                    epochs: cfg.epochs,
                    status: status.clone(),
                    wall_time_seconds: 0.0,
                });
            }
            let seconds = start.elapsed().as_secs_f64();
            for r in &mut records {
                r.wall_time_seconds = seconds;
            }
            Ok(records)
        },
    )?;

    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
