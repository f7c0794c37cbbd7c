//! Recovery error between true and learned filters, bank matching across the
//! permutation/sign/shift ambiguity, and aggregation for sweep tables.
//!
//! err(h, ĥ) = sqrt(1 − ⟨h,ĥ⟩²/(‖h‖²‖ĥ‖²)) ranges over [0,1]: 0 for
//! collinear filters of either sign, 1 for orthogonal ones, and it is
//! invariant to rescaling either argument.

use serde::{Deserialize, Serialize};

use crate::conv_ops::FilterBank;
use crate::error::{config_err, CrsaeError, Result};

/// One matched pair in a [`RecoveryReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterMatch {
    pub true_index: usize,
    pub learned_index: usize,
    /// Error at the best shift within the search range.
    pub err: f64,
    /// Error with no shift correction.
    pub raw_err: f64,
    /// True when the matched filter correlates negatively.
    pub sign_flipped: bool,
    /// Shift (samples) that achieved `err`.
    pub shift: isize,
}

/// Bijective matching of a learned bank onto the true bank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub matches: Vec<FilterMatch>,
    pub mean_err: f64,
    pub max_err: f64,
    pub mean_raw_err: f64,
    pub max_raw_err: f64,
}

/// sqrt(1 − ⟨h,ĥ⟩²/(‖h‖²‖ĥ‖²)).
pub fn recovery_err(h: &[f64], h_hat: &[f64]) -> Result<f64> {
    if h.len() != h_hat.len() {
        return Err(CrsaeError::ShapeMismatch(format!(
            "filters differ in length: {} vs {}",
            h.len(),
            h_hat.len()
        )));
    }
    let (mut hh, mut gg, mut hg) = (0.0, 0.0, 0.0);
    for (&a, &b) in h.iter().zip(h_hat) {
        hh += a * a;
        gg += b * b;
        hg += a * b;
    }
    if hh == 0.0 || gg == 0.0 {
        return Err(config_err("recovery error is undefined for a zero filter"));
    }
    let cos2 = (hg * hg) / (hh * gg);
    Ok((1.0 - cos2).clamp(0.0, 1.0).sqrt())
}

/// Strategy for assigning learned filters to true filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStrategy {
    /// All C! permutations; limited to C ≤ 6.
    Exhaustive,
    /// Repeatedly take the globally best remaining pair.
    Greedy,
}

const MAX_EXHAUSTIVE_FILTERS: usize = 6;

/// Matches `learned` onto `truth`, searching shifts in [−max_shift, max_shift]
/// (zero-filled linear shifts) and minimizing the mean shift-corrected error
/// over all permutations.
pub fn match_filters(
    truth: &FilterBank,
    learned: &FilterBank,
    max_shift: usize,
) -> Result<RecoveryReport> {
    match_filters_with(truth, learned, max_shift, MatchStrategy::Exhaustive)
}

pub fn match_filters_with(
    truth: &FilterBank,
    learned: &FilterBank,
    max_shift: usize,
    strategy: MatchStrategy,
) -> Result<RecoveryReport> {
    if truth.filter_count() != learned.filter_count() || truth.filter_len() != learned.filter_len()
    {
        return Err(CrsaeError::ShapeMismatch(format!(
            "banks differ: {}x{} vs {}x{}",
            truth.filter_count(),
            truth.filter_len(),
            learned.filter_count(),
            learned.filter_len()
        )));
    }
    let c = truth.filter_count();
    if strategy == MatchStrategy::Exhaustive && c > MAX_EXHAUSTIVE_FILTERS {
        return Err(CrsaeError::TooManyFilters {
            max: MAX_EXHAUSTIVE_FILTERS,
            got: c,
        });
    }

    // Pairwise table: best shifted error for every (true, learned) pair.
    let mut table: Vec<Vec<PairFit>> = (0..c).map(|_| Vec::with_capacity(c)).collect();
    for i in 0..c {
        for j in 0..c {
            table[i].push(best_shift(truth.filter(i), learned.filter(j), max_shift)?);
        }
    }

    let assignment = match strategy {
        MatchStrategy::Exhaustive => best_permutation(&table, c),
        MatchStrategy::Greedy => greedy_assignment(&table, c),
    };

    let mut matches = Vec::with_capacity(c);
    for (i, &j) in assignment.iter().enumerate() {
        let cell = &table[i][j];
        matches.push(FilterMatch {
            true_index: i,
            learned_index: j,
            err: cell.err,
            raw_err: cell.raw_err,
            sign_flipped: cell.sign_flipped,
            shift: cell.shift,
        });
    }
    let mean = |f: fn(&FilterMatch) -> f64| matches.iter().map(f).sum::<f64>() / c as f64;
    let max = |f: fn(&FilterMatch) -> f64| matches.iter().map(f).fold(0.0, f64::max);
    Ok(RecoveryReport {
        mean_err: mean(|m| m.err),
        max_err: max(|m| m.err),
        mean_raw_err: mean(|m| m.raw_err),
        max_raw_err: max(|m| m.raw_err),
        matches,
    })
}

struct PairFit {
    err: f64,
    raw_err: f64,
    shift: isize,
    sign_flipped: bool,
}

fn best_shift(truth: &[f64], learned: &[f64], max_shift: usize) -> Result<PairFit> {
    let k = truth.len();
    let mut best: Option<PairFit> = None;
    let mut raw_err = f64::NAN;
    let span = max_shift as isize;
    for shift in -span..=span {
        let mut shifted = vec![0.0; k];
        for i in 0..k {
            let src = i as isize - shift;
            if src >= 0 && (src as usize) < k {
                shifted[i] = learned[src as usize];
            }
        }
        // A large shift can push every nonzero entry out of range.
        if shifted.iter().all(|&v| v == 0.0) {
            continue;
        }
        let err = recovery_err(truth, &shifted)?;
        let inner: f64 = truth.iter().zip(&shifted).map(|(a, b)| a * b).sum();
        if shift == 0 {
            raw_err = err;
        }
        if best.as_ref().map_or(true, |b| err < b.err) {
            best = Some(PairFit {
                err,
                raw_err: f64::NAN,
                shift,
                sign_flipped: inner < 0.0,
            });
        }
    }
    let mut fit = best.ok_or_else(|| config_err("all shifts of the learned filter are zero"))?;
    fit.raw_err = if raw_err.is_nan() {
        // shift 0 was degenerate (zero filter); report the worst case.
        1.0
    } else {
        raw_err
    };
    Ok(fit)
}

fn best_permutation(table: &[Vec<PairFit>], c: usize) -> Vec<usize> {
    let mut best_perm: Vec<usize> = (0..c).collect();
    let mut best_cost = f64::INFINITY;
    let mut perm: Vec<usize> = (0..c).collect();
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = p.iter().enumerate().map(|(i, &j)| table[i][j].err).sum();
        if cost < best_cost {
            best_cost = cost;
            best_perm = p.to_vec();
        }
    });
    best_perm
}

fn permute(perm: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

fn greedy_assignment(table: &[Vec<PairFit>], c: usize) -> Vec<usize> {
    let mut assignment = vec![usize::MAX; c];
    let mut used_true = vec![false; c];
    let mut used_learned = vec![false; c];
    for _ in 0..c {
        let mut best = (0usize, 0usize, f64::INFINITY);
        for i in 0..c {
            if used_true[i] {
                continue;
            }
            for j in 0..c {
                if used_learned[j] {
                    continue;
                }
                if table[i][j].err < best.2 {
                    best = (i, j, table[i][j].err);
                }
            }
        }
        assignment[best.0] = best.1;
        used_true[best.0] = true;
        used_learned[best.1] = true;
    }
    assignment
}

/// One sweep cell: an SNR level, the simulation seed, and its recovery report.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub snr_db: f64,
    pub seed: u64,
    pub report: RecoveryReport,
}

/// Aggregate row: per-filter when `filter` is set, pooled across filters
/// otherwise. `std_err` is the population standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub snr_db: f64,
    pub filter: Option<usize>,
    pub mean_err: f64,
    pub std_err: f64,
    pub count: usize,
}

/// Groups sweep entries by SNR and reduces to mean/std per filter and pooled.
pub fn sweep_aggregate(entries: &[SweepEntry]) -> Result<Vec<AggregateRow>> {
    if entries.is_empty() {
        return Err(CrsaeError::EmptyInput("sweep aggregate".into()));
    }
    let mut snrs: Vec<f64> = entries.iter().map(|e| e.snr_db).collect();
    snrs.sort_by(|a, b| a.partial_cmp(b).expect("finite SNR"));
    snrs.dedup();

    let filter_count = entries[0].report.matches.len();
    let mut rows = Vec::new();
    for &snr in &snrs {
        let group: Vec<&SweepEntry> = entries.iter().filter(|e| e.snr_db == snr).collect();
        for f in 0..filter_count {
            let errs: Vec<f64> = group.iter().map(|e| e.report.matches[f].err).collect();
            rows.push(stats_row(snr, Some(f), &errs));
        }
        let pooled: Vec<f64> = group
            .iter()
            .flat_map(|e| e.report.matches.iter().map(|m| m.err))
            .collect();
        rows.push(stats_row(snr, None, &pooled));
    }
    Ok(rows)
}

fn stats_row(snr_db: f64, filter: Option<usize>, errs: &[f64]) -> AggregateRow {
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    AggregateRow {
        snr_db,
        filter,
        mean_err: mean,
        std_err: var.sqrt(),
        count: errs.len(),
    }
}
