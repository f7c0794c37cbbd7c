//! `train`: resolve initialization, λ, and the step constant from the config
//! and dataset, run the tied architecture or the unconstrained baseline, and
//! persist the learned filters, the per-epoch history CSV, and a run
//! manifest.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crsae_core::trainer::lcsc::{train_lcsc_baseline, LcscConfig, LcscParams};
use crsae_core::trainer::residual_noise_estimate;
use crsae_core::{
    estimate_lipschitz, init_perturbed_dictionary, lambda_heuristic, match_filters,
    project_unit_ball, train, CodeMatrix, FilterBank, FistaConfig, LambdaPolicy, SignalWindow,
    TrainReport,
};

use crate::config::{config_hash, ExperimentConfig, FistaSection, LambdaSpec, LipschitzSpec, TrainSection};
use crate::dataset::{load_dataset, read_filter_bank, write_filter_bank, DatasetManifest};
use crate::tensor_file::write_atomic;

/// RNG stream for drawing the initial dictionary.
const INIT_STREAM: u64 = 0xD1C7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Arch {
    Crsae,
    Lcsc3,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Crsae => "crsae",
            Arch::Lcsc3 => "lcsc3",
        }
    }
}

/// How the initial dictionary is produced.
#[derive(Debug, Clone)]
pub enum InitSpec {
    /// Random rotation of the true filters into a recovery-error band.
    Perturbed,
    /// i.i.d. Gaussian entries, projected onto the unit ball.
    Gaussian,
    /// A filter tensor on disk.
    File(std::path::PathBuf),
}

impl InitSpec {
    pub fn parse(s: &str) -> Self {
        match s {
            "perturbed" => InitSpec::Perturbed,
            "gaussian" => InitSpec::Gaussian,
            other => InitSpec::File(other.into()),
        }
    }

    fn describe(&self) -> String {
        match self {
            InitSpec::Perturbed => "perturbed".into(),
            InitSpec::Gaussian => "gaussian".into(),
            InitSpec::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub dataset: DatasetManifest,
    pub arch: String,
    pub init: String,
    pub seed: u64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub sigma_n: Option<f64>,
    pub lipschitz: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub final_recovery_errs: Option<Vec<f64>>,
    pub lcsc_final_lambda: Option<f64>,
    pub files: Vec<String>,
}

pub(crate) struct ResolvedRun {
    pub report: TrainReport,
    pub lambda: f64,
    pub sigma_n: Option<f64>,
    pub lipschitz: f64,
    pub lcsc_final_lambda: Option<f64>,
    pub lcsc_encoder: Option<FilterBank>,
}

pub(crate) fn resolve_init(
    init: &InitSpec,
    truth: &FilterBank,
    init_err_range: [f64; 2],
    seed: u64,
) -> Result<FilterBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    Ok(match init {
        InitSpec::Perturbed => {
            init_perturbed_dictionary(truth, (init_err_range[0], init_err_range[1]), &mut rng)?
        }
        InitSpec::Gaussian => {
            let k = truth.filter_len();
            let dist = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("valid std");
            let rows: Vec<Vec<f64>> = (0..truth.filter_count())
                .map(|_| (0..k).map(|_| dist.sample(&mut rng)).collect())
                .collect();
            project_unit_ball(&FilterBank::from_rows(&rows)?)
        }
        InitSpec::File(path) => read_filter_bank(path)?,
    })
}

pub(crate) fn resolve_lambda_policy(
    spec: &LambdaSpec,
    train_windows: &[SignalWindow],
    train_codes: &[CodeMatrix],
    init_filters: &FilterBank,
) -> Result<(LambdaPolicy, Option<f64>)> {
    Ok(match spec {
        LambdaSpec::Fixed(v) => (LambdaPolicy::Fixed(*v), None),
        LambdaSpec::Heuristic { scale, convention } => {
            let sigma_n =
                residual_noise_estimate(train_windows, train_codes, init_filters, *convention)?;
            (
                LambdaPolicy::Heuristic {
                    sigma_n,
                    scale: *scale,
                },
                Some(sigma_n),
            )
        }
    })
}

pub(crate) fn resolve_lipschitz(
    spec: &LipschitzSpec,
    init_filters: &FilterBank,
    window_len: usize,
) -> Result<f64> {
    Ok(match spec {
        LipschitzSpec::Auto => estimate_lipschitz(init_filters, window_len, 2000, 1e-9)?.value,
        LipschitzSpec::Fixed(v) => *v,
    })
}

/// The shared core of `train` and each sweep cell.
pub(crate) fn run_training(
    dataset: &crate::dataset::Dataset,
    fista_section: &FistaSection,
    train_section: &TrainSection,
    arch: Arch,
    init: &InitSpec,
    lr_override: Option<f64>,
    seed_override: Option<u64>,
    epochs_override: Option<usize>,
) -> Result<ResolvedRun> {
    let mut optimizer = train_section.optimizer.clone();
    if let Some(lr) = lr_override {
        optimizer.learning_rate = lr;
    }
    if let Some(seed) = seed_override {
        optimizer.seed = seed;
    }
    if let Some(epochs) = epochs_override {
        optimizer.max_epochs = epochs;
        optimizer.patience = optimizer.patience.min(epochs);
    }

    let window_len = dataset
        .train_windows
        .first()
        .map(SignalWindow::len)
        .context("dataset has no training windows")?;
    let init_filters = resolve_init(
        init,
        &dataset.true_filters,
        train_section.init_err_range,
        optimizer.seed,
    )?;
    let (lambda_policy, sigma_n) = resolve_lambda_policy(
        &fista_section.lambda,
        &dataset.train_windows,
        &dataset.train_codes,
        &init_filters,
    )?;
    let lipschitz = resolve_lipschitz(&fista_section.lipschitz, &init_filters, window_len)?;

    let positions = window_len - init_filters.filter_len() + 1;
    let lambda = match lambda_policy {
        LambdaPolicy::Fixed(v) => v,
        LambdaPolicy::Heuristic { sigma_n, scale } => {
            lambda_heuristic(sigma_n, init_filters.filter_count(), positions, scale)?
        }
    };

    match arch {
        Arch::Crsae => {
            optimizer.lambda_policy = Some(lambda_policy);
            let fista = FistaConfig {
                lambda,
                lipschitz,
                iterations: fista_section.iterations,
            };
            let report = train(
                &dataset.train_windows,
                &dataset.val_windows,
                &init_filters,
                &fista,
                &optimizer,
                Some(&dataset.true_filters),
            )?;
            Ok(ResolvedRun {
                lambda: report.lambda,
                sigma_n,
                lipschitz,
                report,
                lcsc_final_lambda: None,
                lcsc_encoder: None,
            })
        }
        Arch::Lcsc3 => {
            let lcsc_section = train_section.lcsc.clone().unwrap_or(crate::config::LcscSection {
                ista_iterations: 3,
                train_lambda: true,
                lambda_lr: None,
            });
            let params = LcscParams {
                encoder: init_filters.clone(),
                decoder: init_filters.clone(),
                lambda,
            };
            let cfg = LcscConfig {
                ista_iterations: lcsc_section.ista_iterations,
                lipschitz,
                train_lambda: lcsc_section.train_lambda,
                lambda_lr: lcsc_section.lambda_lr,
            };
            let outcome = train_lcsc_baseline(
                &dataset.train_windows,
                &dataset.val_windows,
                &params,
                &cfg,
                &optimizer,
                Some(&dataset.true_filters),
            )?;
            Ok(ResolvedRun {
                lambda,
                sigma_n,
                lipschitz,
                lcsc_final_lambda: Some(outcome.params.lambda),
                lcsc_encoder: Some(outcome.params.encoder.clone()),
                report: outcome.report,
            })
        }
    }
}

/// history.csv: epoch,train_loss,val_loss plus err_1..err_C when ground
/// truth was available.
pub(crate) fn history_csv(report: &TrainReport) -> String {
    let filter_count = report
        .epochs
        .first()
        .and_then(|e| e.recovery_errs.as_ref())
        .map_or(0, Vec::len);
    let mut out = String::from("epoch,train_loss,val_loss");
    for c in 1..=filter_count {
        out.push_str(&format!(",err_{c}"));
    }
    out.push('\n');
    for epoch in &report.epochs {
        out.push_str(&format!(
            "{},{},{}",
            epoch.epoch, epoch.train_loss, epoch.val_loss
        ));
        if let Some(errs) = &epoch.recovery_errs {
            for e in errs {
                out.push_str(&format!(",{e}"));
            }
        }
        out.push('\n');
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    config_path: &Path,
    data_dir: &Path,
    out_dir: &Path,
    arch: Arch,
    init: &InitSpec,
    lr_override: Option<f64>,
    seed_override: Option<u64>,
) -> Result<()> {
    let (config, raw) = ExperimentConfig::load(config_path)?;
    let fista_section = config.require_fista()?;
    let train_section = config.require_train()?;
    let dataset = load_dataset(data_dir)?;
    if matches!(init, InitSpec::Perturbed) && dataset.true_filters.as_slice().is_empty() {
        bail!("--init perturbed needs true filters in the dataset");
    }

    let run = run_training(
        &dataset,
        fista_section,
        train_section,
        arch,
        init,
        lr_override,
        seed_override,
        None,
    )?;

    std::fs::create_dir_all(out_dir)?;
    let mut files = vec!["learned_filters.tf".to_string(), "history.csv".into()];
    write_filter_bank(&out_dir.join("learned_filters.tf"), &run.report.filters)?;
    write_atomic(&out_dir.join("history.csv"), history_csv(&run.report).as_bytes())?;
    if let Some(encoder) = &run.lcsc_encoder {
        write_filter_bank(&out_dir.join("lcsc_encoder_filters.tf"), encoder)?;
        files.push("lcsc_encoder_filters.tf".into());
    }

    let final_recovery_errs = match match_filters(&dataset.true_filters, &run.report.filters, 0) {
        Ok(report) => Some(report.matches.iter().map(|m| m.raw_err).collect()),
        Err(_) => None,
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&raw),
        dataset: dataset.manifest.clone(),
        arch: arch.as_str().to_string(),
        init: init.describe(),
        seed: seed_override.unwrap_or(train_section.optimizer.seed),
        learning_rate: lr_override.unwrap_or(train_section.optimizer.learning_rate),
        iterations: fista_section.iterations,
        lambda: run.lambda,
        sigma_n: run.sigma_n,
        lipschitz: run.lipschitz,
        best_epoch: run.report.best_epoch,
        best_val_loss: run.report.best_val_loss,
        initial_val_loss: run.report.initial_val_loss,
        final_recovery_errs,
        lcsc_final_lambda: run.lcsc_final_lambda,
        files,
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    println!(
        "{} training done: best epoch {} (val loss {:.6e}), lambda {:.4}, L {:.4} -> {}",
        arch.as_str(),
        run.report.best_epoch,
        run.report.best_val_loss,
        run.lambda,
        run.lipschitz,
        out_dir.display()
    );
    Ok(())
}
