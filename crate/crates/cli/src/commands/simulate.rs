//! `simulate`: draw a filter bank, synthesize every electrode, pool and
//! split the windows, and persist the dataset. The in-memory builder is
//! shared with the sweep command.

use std::path::Path;

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crsae_core::{make_filter_bank, simulate_electrode, window_signal, CodeMatrix, FilterBank, SignalWindow};

use crate::config::{config_hash, default_split, ExperimentConfig, SimSection};
use crate::dataset::{
    write_codes, write_filter_bank, write_manifest, write_windows, DatasetManifest, SplitCounts,
};

/// RNG stream for the filter-bank draw (electrodes use streams 1..=E).
const FILTER_STREAM: u64 = 0xF1;
/// RNG stream for the train/val/test shuffle.
const SPLIT_STREAM: u64 = 0x5B;

pub(crate) struct BuiltDataset {
    pub true_filters: FilterBank,
    pub train_windows: Vec<SignalWindow>,
    pub val_windows: Vec<SignalWindow>,
    pub test_windows: Vec<SignalWindow>,
    pub train_codes: Vec<CodeMatrix>,
    pub val_codes: Vec<CodeMatrix>,
    pub test_codes: Vec<CodeMatrix>,
    pub sigmas: Vec<f64>,
    pub achieved_snr_db: f64,
    pub counts: SplitCounts,
    pub total_windows: usize,
}

/// Simulates every electrode of `sim` and splits the pooled windows.
pub(crate) fn build_dataset(sim: &SimSection) -> Result<BuiltDataset> {
    let recording = &sim.recording;
    recording.validate()?;

    let mut filter_rng = ChaCha8Rng::seed_from_u64(recording.seed);
    filter_rng.set_stream(FILTER_STREAM);
    let true_filters = make_filter_bank(
        recording.neurons,
        recording.filter_len,
        (sim.correlation_range[0], sim.correlation_range[1]),
        &mut filter_rng,
    )?;

    let mut windows: Vec<SignalWindow> = Vec::new();
    let mut codes: Vec<CodeMatrix> = Vec::new();
    let mut sigmas = Vec::new();
    let mut clean_power = 0.0;
    let mut noise_power = 0.0;
    for electrode in 0..recording.electrodes {
        let (_, synth) = simulate_electrode(recording, &true_filters, electrode)?;
        clean_power += synth.clean.iter().map(|v| v * v).sum::<f64>();
        noise_power += synth
            .noisy
            .iter()
            .zip(&synth.clean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        sigmas.push(synth.sigma);
        let electrode_windows = window_signal(&synth.noisy, recording.window_len)?;
        if electrode_windows.len() != synth.window_codes.len() {
            bail!("window/code count mismatch on electrode {electrode}");
        }
        windows.extend(electrode_windows);
        codes.extend(synth.window_codes);
    }
    let achieved_snr_db = if noise_power > 0.0 {
        10.0 * (clean_power / noise_power).log10()
    } else {
        f64::INFINITY
    };

    let total = windows.len();
    let [n_train, n_val, n_test] = match sim.split {
        Some(explicit) => explicit,
        None => default_split(total),
    };
    if n_train + n_val + n_test > total {
        bail!("split {n_train}/{n_val}/{n_test} exceeds the {total} available windows");
    }
    if n_train == 0 || n_val == 0 {
        bail!("split needs at least one training and one validation window");
    }

    let mut order: Vec<usize> = (0..total).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(recording.seed);
    split_rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut split_rng);

    let pick = |range: std::ops::Range<usize>| -> (Vec<SignalWindow>, Vec<CodeMatrix>) {
        let mut w = Vec::with_capacity(range.len());
        let mut c = Vec::with_capacity(range.len());
        for (slot, &src) in order[range].iter().enumerate() {
            // Window indices are re-assigned within each split.
            w.push(SignalWindow::new(windows[src].samples().to_vec(), slot).expect("finite"));
            c.push(codes[src].clone());
        }
        (w, c)
    };
    let (train_windows, train_codes) = pick(0..n_train);
    let (val_windows, val_codes) = pick(n_train..n_train + n_val);
    let (test_windows, test_codes) = pick(n_train + n_val..n_train + n_val + n_test);

    Ok(BuiltDataset {
        true_filters,
        train_windows,
        val_windows,
        test_windows,
        train_codes,
        val_codes,
        test_codes,
        sigmas,
        achieved_snr_db,
        counts: SplitCounts {
            train: n_train,
            val: n_val,
            test: n_test,
        },
        total_windows: total,
    })
}

pub fn cmd_simulate(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let (config, raw) = ExperimentConfig::load(config_path)?;
    let mut sim = config.require_sim()?.clone();
    if let Some(seed) = seed_override {
        sim.recording.seed = seed;
    }
    let built = build_dataset(&sim)?;

    std::fs::create_dir_all(out_dir)?;
    let files = vec![
        "true_filters.tf".to_string(),
        "train_windows.tf".into(),
        "val_windows.tf".into(),
        "test_windows.tf".into(),
        "train_codes.tf".into(),
        "val_codes.tf".into(),
        "test_codes.tf".into(),
    ];
    write_filter_bank(&out_dir.join("true_filters.tf"), &built.true_filters)?;
    write_windows(&out_dir.join("train_windows.tf"), &built.train_windows)?;
    write_windows(&out_dir.join("val_windows.tf"), &built.val_windows)?;
    write_windows(&out_dir.join("test_windows.tf"), &built.test_windows)?;
    write_codes(&out_dir.join("train_codes.tf"), &built.train_codes)?;
    write_codes(&out_dir.join("val_codes.tf"), &built.val_codes)?;
    write_codes(&out_dir.join("test_codes.tf"), &built.test_codes)?;

    let manifest = DatasetManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&raw),
        seed: sim.recording.seed,
        sim,
        achieved_snr_db: built.achieved_snr_db,
        sigmas: built.sigmas,
        counts: built.counts,
        total_windows: built.total_windows,
        files,
    };
    write_manifest(out_dir, &manifest)?;
    println!(
        "simulated {} windows ({} train / {} val / {} test), SNR {:.2} dB -> {}",
        built.total_windows,
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.test,
        built.achieved_snr_db,
        out_dir.display()
    );
    Ok(())
}
