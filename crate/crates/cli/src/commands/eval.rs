//! `eval`: match a learned bank against the truth and emit the recovery
//! report plus a per-sample overlay CSV for plotting.

use std::path::Path;

use anyhow::Result;

use crsae_core::match_filters;

use crate::dataset::read_filter_bank;
use crate::tensor_file::write_atomic;

pub fn cmd_eval(
    learned_path: &Path,
    truth_path: &Path,
    out_dir: &Path,
    max_shift: usize,
) -> Result<()> {
    let learned = read_filter_bank(learned_path)?;
    let truth = read_filter_bank(truth_path)?;
    let report = match_filters(&truth, &learned, max_shift)?;

    std::fs::create_dir_all(out_dir)?;
    write_atomic(
        &out_dir.join("report.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;

    // Overlay: matched learned filter next to each true filter, raw values.
    let mut csv = String::from("filter,sample,true,learned\n");
    for m in &report.matches {
        let t = truth.filter(m.true_index);
        let l = learned.filter(m.learned_index);
        for s in 0..truth.filter_len() {
            csv.push_str(&format!("{},{},{},{}\n", m.true_index + 1, s, t[s], l[s]));
        }
    }
    write_atomic(&out_dir.join("overlay.csv"), csv.as_bytes())?;

    println!(
        "mean err {:.4} (max {:.4}); raw mean {:.4} -> {}",
        report.mean_err,
        report.max_err,
        report.mean_raw_err,
        out_dir.display()
    );
    Ok(())
}
