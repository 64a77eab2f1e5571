use std::io;
use std::time::Instant;

use crate::data::{add_noise, derive_seed, Dataset, NoiseSpec};
use crate::linalg::{kappa, Matrix};
use crate::nn::{
    evaluate_reconstruction, forward, init_params, train, LossConfig, LossKind, NetworkParams,
    NetworkSpec, NnError, TrainConfig,
};
use crate::regularizer::RegKind;

use super::{num, par_map, require, CsvRecord, ExperimentError, RunStatus, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub outer: usize,
    pub code: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Strength on the outer pair `E₁, D₁`.
    pub lambda1: f64,
    /// Strength on the inner pair `E₂, D₂`.
    pub lambda2: f64,
    pub snr: f64,
    pub train_limit: usize,
    pub repeats: usize,
    pub base_seed: u64,
    pub reg_kind: RegKind,
    pub jobs: usize,
    pub verbose: bool,
}

impl DenoiseConfig {
    pub fn desk() -> Self {
        Self {
            outer: 256,
            code: 32,
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            lambda1: 0.1,
            lambda2: 0.005,
            snr: 1.0,
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
            epochs: 50,
            train_limit: 60_000,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseRecord {
    pub reg: RegKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub train_limit: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr: f64,
    /// `κ(E₁), κ(E₂), κ(D₂), κ(D₁)`
    pub kappas: [f64; 4],
    pub mse: f64,
    pub epochs: usize,
    pub status: RunStatus,
    pub wall_time_seconds: f64,
}

impl DenoiseRecord {
    pub fn max_kappa(&self) -> f64 {
        self.kappas
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl CsvRecord for DenoiseRecord {
    const HEADER: &'static [&'static str] = &[
        "schema_version",
        "experiment",
        "reg",
        "lambda1",
        "lambda2",
        "seed",
        "train_limit",
        "batch_size",
        "lr",
        "snr",
        "kappa_e1",
        "kappa_e2",
        "kappa_d2",
        "kappa_d1",
        "metric",
        "value",
        "epochs",
        "status",
        "wall_time_seconds",
    ];

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            SCHEMA_VERSION.to_string(),
            "denoise".into(),
            self.reg.to_string(),
            num(self.lambda1),
            num(self.lambda2),
            self.seed.to_string(),
            self.train_limit.to_string(),
            self.batch_size.to_string(),
            num(self.learning_rate),
            num(self.snr),
        ];
        f.extend(self.kappas.iter().map(|&k| num(k)));
        f.extend([
            "mse".into(),
            num(self.mse),
            self.epochs.to_string(),
            self.status.to_string(),
            format!("{:.3}", self.wall_time_seconds),
        ]);
        f
    }
}

/// A finished run together with what is needed to dump reconstructions.
#[derive(Debug, Clone)]
pub struct DenoiseRun {
    pub record: DenoiseRecord,
    pub params: NetworkParams,
    pub noisy_test: Matrix,
}

/// Trains the 784/256/32 autoencoder on noisy inputs (fresh noise every
/// epoch) against clean targets, once per repeat, and measures the test
/// reconstruction mse at the same SNR.
pub fn run_denoise(
    cfg: &DenoiseConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<DenoiseRun>, ExperimentError> {
    require(
        cfg.epochs >= 1 && cfg.batch_size >= 1,
        "epochs and batch size must be positive",
    )?;
    require(
        cfg.outer >= 1 && cfg.code >= 1,
        "layer widths must be positive",
    )?;
    require(
        [cfg.lambda1, cfg.lambda2]
            .iter()
            .all(|l| l.is_finite() && *l >= 0.0),
        "lambdas must be finite and nonnegative",
    )?;
    require(cfg.snr > 0.0, "snr must be positive")?;
    require(cfg.repeats >= 1, "repeats must be at least 1")?;
    require(
        !train_set.is_empty() && !test_set.is_empty(),
        "empty dataset",
    )?;

    let train_set = train_set.truncate(cfg.train_limit);
    let spec = NetworkSpec::autoencoder(train_set.images.cols(), cfg.outer, cfg.code);
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|r| cfg.base_seed + r).collect();

    let results = par_map(
        cfg.jobs,
        &seeds,
        |&seed| -> Result<DenoiseRun, ExperimentError> {
            let start = Instant::now();
            let mut params = init_params(&spec, derive_seed(seed, 1));
            let loss = LossConfig {
                kind: LossKind::L2,
                lambda1: cfg.lambda1,
                lambda2: cfg.lambda2,
                reg_kind: cfg.reg_kind,
            };
            let tc = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                seed: derive_seed(seed, 2),
                input_snr: Some(cfg.snr),
            };
            let outcome = train(
                &spec,
                &mut params,
                &train_set.images,
                &train_set.images,
                &loss,
                &tc,
                |e| {
                    if cfg.verbose {
                        eprintln!("denoise seed={seed}: {e}");
                    }
                },
            );
            let status = match outcome {
                Ok(_) => RunStatus::Ok,
                Err(NnError::TrainingDiverged { step, .. }) => RunStatus::Diverged { step },
                Err(e) => return Err(e.into()),
            };
            let noisy_test = add_noise(
                &test_set.images,
                NoiseSpec {
                    snr: cfg.snr,
                    seed: derive_seed(seed, 3),
                },
            );
            let mse = match status {
                RunStatus::Ok => {
                    evaluate_reconstruction(&spec, &params, &noisy_test, &test_set.images)?
                }
                RunStatus::Diverged { .. } => f64::NAN,
            };
            let mut kappas = [f64::NAN; 4];
            for (k, slot) in kappas.iter_mut().enumerate() {
                *slot = kappa(params.weight(k)).unwrap_or(f64::NAN);
            }
            let record = DenoiseRecord {
                reg: cfg.reg_kind,
                lambda1: cfg.lambda1,
                lambda2: cfg.lambda2,
                seed,
                train_limit: train_set.len(),
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                snr: cfg.snr,
                kappas,
                mse,
                epochs: cfg.epochs,
                status,
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            Ok(DenoiseRun {
                record,
                params,
                noisy_test,
            })
        },
    )?;
    results.into_iter().collect()
}

/// Writes the first `count` test images as pixel rows: for each image a
/// `clean`, a `noisy` and a `reconstruction` row, prefixed by seed, kind and
/// index.
pub fn dump_reconstructions(
    out: impl io::Write,
    runs: &[DenoiseRun],
    clean: &Matrix,
    outer: usize,
    code: usize,
    count: usize,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let pixels = clean.cols();
    let mut header = vec!["seed".to_string(), "kind".to_string(), "index".to_string()];
    header.extend((0..pixels).map(|p| format!("p{p}")));
    w.write_record(&header)?;
    let spec = NetworkSpec::autoencoder(pixels, outer, code);
    let count = count.min(clean.rows());
    let idx: Vec<usize> = (0..count).collect();
    for run in runs {
        let noisy = run.noisy_test.select_rows(&idx);
        let (recon, _) = forward(&spec, &run.params, &noisy)?;
        for i in 0..count {
            for (kind, m) in [
                ("clean", clean),
                ("noisy", &noisy),
                ("reconstruction", &recon),
            ] {
                let mut row = vec![run.record.seed.to_string(), kind.to_string(), i.to_string()];
                row.extend(m.row(i).into_iter().map(num));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
