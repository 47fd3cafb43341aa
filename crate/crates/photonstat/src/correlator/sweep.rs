//! Pair-counting inner loops shared by the public correlator entry points.
//!
//! Both streams are sorted, so candidate B-events for consecutive A-events
//! form advancing windows; one pass with two monotonic cursors visits each
//! qualifying pair exactly once. Counting into bins is exact integer
//! arithmetic, which is what makes chunked parallel runs merge back into
//! the sequential result bit for bit.

use rayon::prelude::*;

use super::{BinGrid, PairMode};

/// Counts pairs whose A-event index lies in `[a_start, a_end)`.
pub(super) fn sweep(
    a: &[u64],
    b: &[u64],
    grid: BinGrid,
    mode: PairMode,
    exclude_self: bool,
    a_start: usize,
    a_end: usize,
) -> Vec<u64> {
    let mut counts = vec![0u64; grid.bin_count()];
    if a_start >= a_end || b.is_empty() {
        return counts;
    }
    match mode {
        PairMode::AllPairs => {
            let reach = grid.reach_ps();
            let mut lo = b.partition_point(|&t| t < a[a_start].saturating_sub(reach));
            for i in a_start..a_end {
                let ta = a[i];
                let lower = ta.saturating_sub(reach);
                while lo < b.len() && b[lo] < lower {
                    lo += 1;
                }
                let upper = ta.saturating_add(reach);
                let mut j = lo;
                while j < b.len() && b[j] <= upper {
                    if !(exclude_self && j == i) {
                        let lag = b[j] as i128 - ta as i128;
                        if let Some(k) = grid.bin_index(lag) {
                            counts[k] += 1;
                        }
                    }
                    j += 1;
                }
            }
        }
        PairMode::StartStop => {
            let mut next = b.partition_point(|&t| t <= a[a_start]);
            for &ta in &a[a_start..a_end] {
                while next < b.len() && b[next] <= ta {
                    next += 1;
                }
                if next < b.len() {
                    let lag = b[next] as i128 - ta as i128;
                    if let Some(k) = grid.bin_index(lag) {
                        counts[k] += 1;
                    }
                }
            }
        }
    }
    counts
}

/// Same counting, with the A-stream split into index chunks processed in
/// parallel. Each pair belongs to exactly one chunk (its A-event's), and
/// chunk histograms merge by addition, so the result never depends on the
/// chunk size or the scheduling order.
pub(super) fn sweep_parallel(
    a: &[u64],
    b: &[u64],
    grid: BinGrid,
    mode: PairMode,
    exclude_self: bool,
) -> Vec<u64> {
    let chunk = (a.len() / (4 * rayon::current_num_threads().max(1))).max(4096);
    let ranges: Vec<(usize, usize)> = (0..a.len())
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(a.len())))
        .collect();
    ranges
        .into_par_iter()
        .map(|(s, e)| sweep(a, b, grid, mode, exclude_self, s, e))
        .reduce(
            || vec![0u64; grid.bin_count()],
            |mut acc, part| {
                for (x, y) in acc.iter_mut().zip(part) {
                    *x += y;
                }
                acc
            },
        )
}
