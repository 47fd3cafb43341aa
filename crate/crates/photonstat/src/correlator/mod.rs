//! Second-order correlation histograms from timestamp streams.
//!
//! The correlator counts coincidences between two detector streams as a
//! function of signed lag `tau = t_B - t_A`. Two pairing modes are offered:
//! `AllPairs` counts every ordered pair inside the lag window (the unbiased
//! estimator of the intensity correlation), `StartStop` counts for each
//! A-event only the first B-event after it (the classic coincidence-timer
//! measurement, which underestimates long lags and can be compensated with
//! [`start_stop_correction`]).
//!
//! Histograms come on two kinds of lag grid: a fine grid of equal bins
//! tiling a symmetric window, and a per-period grid for pulsed excitation
//! with one bin per integer multiple of the repetition period. Counting is
//! exact integer arithmetic; parallel runs chunk the A-stream and merge by
//! addition, so they reproduce the sequential result bit for bit.

mod sweep;

use crate::error::{Error, Result};
use crate::synth::PhotonStream;

/// Most bins a histogram may allocate (1 GiB of counters).
const MAX_BINS: u128 = 1 << 27;

/// How timestamp pairs are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Every ordered pair with lag inside the grid.
    AllPairs,
    /// For each A-event, only the first B-event strictly after it.
    StartStop,
}

/// Lag axis of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinGrid {
    /// Equal bins of `bin_width_ps` tiling `[-window_ps, +window_ps)`,
    /// half-open on the right.
    Lag { bin_width_ps: u64, window_ps: u64 },
    /// One bin per pulse period: bin `n` covers
    /// `[n*delta_t - delta_t/2, n*delta_t + delta_t/2)` for
    /// `n in [-period_count, +period_count]`.
    Period { delta_t_ps: u64, period_count: u32 },
}

impl BinGrid {
    pub(crate) fn validate(&self) -> Result<()> {
        let bins = match *self {
            BinGrid::Lag {
                bin_width_ps,
                window_ps,
            } => {
                if bin_width_ps == 0 {
                    return Err(Error::invalid("bin_width_ps must be positive"));
                }
                if window_ps < bin_width_ps {
                    return Err(Error::invalid("window_ps must be at least one bin wide"));
                }
                if window_ps % bin_width_ps != 0 {
                    return Err(Error::invalid(
                        "window_ps must be an integer multiple of bin_width_ps",
                    ));
                }
                2 * (window_ps / bin_width_ps) as u128
            }
            BinGrid::Period {
                delta_t_ps,
                period_count,
            } => {
                if delta_t_ps == 0 {
                    return Err(Error::invalid("delta_t_ps must be positive"));
                }
                2 * period_count as u128 + 1
            }
        };
        if bins > MAX_BINS {
            return Err(Error::HistogramTooLarge {
                requested: bins as u64,
                limit: MAX_BINS as u64,
            });
        }
        Ok(())
    }

    /// Number of bins on this grid.
    pub fn bin_count(&self) -> usize {
        match *self {
            BinGrid::Lag {
                bin_width_ps,
                window_ps,
            } => 2 * (window_ps / bin_width_ps) as usize,
            BinGrid::Period { period_count, .. } => 2 * period_count as usize + 1,
        }
    }

    /// Largest |lag| the pair sweep must consider (inclusive bound, ps).
    pub(crate) fn reach_ps(&self) -> u64 {
        match *self {
            BinGrid::Lag { window_ps, .. } => window_ps,
            BinGrid::Period {
                delta_t_ps,
                period_count,
            } => delta_t_ps * (period_count as u64 + 1),
        }
    }

    /// Bin index for a signed lag, or None outside the grid. Bins are
    /// half-open `[low, high)` in integer picoseconds.
    #[inline]
    pub fn bin_index(&self, lag_ps: i128) -> Option<usize> {
        match *self {
            BinGrid::Lag {
                bin_width_ps,
                window_ps,
            } => {
                let w = window_ps as i128;
                if lag_ps < -w || lag_ps >= w {
                    return None;
                }
                Some(((lag_ps + w) / bin_width_ps as i128) as usize)
            }
            BinGrid::Period {
                delta_t_ps,
                period_count,
            } => {
                let dt = delta_t_ps as i128;
                let n = (2 * lag_ps + dt).div_euclid(2 * dt);
                let p = period_count as i128;
                if n < -p || n > p {
                    return None;
                }
                Some((n + p) as usize)
            }
        }
    }

    /// Center of a bin, ps.
    pub fn bin_center_ps(&self, index: usize) -> f64 {
        match *self {
            BinGrid::Lag {
                bin_width_ps,
                window_ps,
            } => (index as f64 + 0.5) * bin_width_ps as f64 - window_ps as f64,
            BinGrid::Period {
                delta_t_ps,
                period_count,
            } => (index as f64 - period_count as f64) * delta_t_ps as f64,
        }
    }

    /// Half-open edges `[low, high)` of a bin, ps.
    pub fn bin_edges_ps(&self, index: usize) -> (f64, f64) {
        match *self {
            BinGrid::Lag {
                bin_width_ps,
                window_ps,
            } => {
                let low = index as f64 * bin_width_ps as f64 - window_ps as f64;
                (low, low + bin_width_ps as f64)
            }
            BinGrid::Period {
                delta_t_ps,
                period_count,
            } => {
                let center = (index as f64 - period_count as f64) * delta_t_ps as f64;
                let half = 0.5 * delta_t_ps as f64;
                (center - half, center + half)
            }
        }
    }
}

/// Provenance of one input stream, carried on the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSummary {
    pub channel_id: u16,
    pub events: u64,
    pub duration_ps: u64,
}

impl From<&PhotonStream> for StreamSummary {
    fn from(stream: &PhotonStream) -> Self {
        Self {
            channel_id: stream.channel_id(),
            events: stream.len() as u64,
            duration_ps: stream.duration_ps(),
        }
    }
}

impl StreamSummary {
    /// Mean event rate, per ps.
    pub fn rate_per_ps(&self) -> f64 {
        if self.duration_ps == 0 {
            0.0
        } else {
            self.events as f64 / self.duration_ps as f64
        }
    }
}

/// Raw coincidence histogram.
///
/// `counts` are exact pair counts per bin. After
/// [`start_stop_correction`] the histogram additionally carries
/// `corrected`, a real-valued estimate of the all-pairs counts; the raw
/// integers stay untouched so statistical errors can always be derived
/// from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    grid: BinGrid,
    mode: PairMode,
    counts: Vec<u64>,
    corrected: Option<Vec<f64>>,
    pub source_a: StreamSummary,
    pub source_b: StreamSummary,
}

impl CorrelationHistogram {
    /// Reassembles a histogram from stored parts, e.g. when reading one
    /// back from a file. The counts-match-pairs invariant is the caller's
    /// responsibility here; histograms built by the correlate functions
    /// satisfy it by construction.
    pub fn from_parts(
        grid: BinGrid,
        mode: PairMode,
        counts: Vec<u64>,
        source_a: StreamSummary,
        source_b: StreamSummary,
    ) -> Result<Self> {
        grid.validate()?;
        if counts.len() != grid.bin_count() {
            return Err(Error::invalid(format!(
                "count vector has {} bins, grid needs {}",
                counts.len(),
                grid.bin_count()
            )));
        }
        Ok(Self {
            grid,
            mode,
            counts,
            corrected: None,
            source_a,
            source_b,
        })
    }

    /// Attaches envelope-corrected counts, e.g. when reading back a file
    /// that stored them.
    pub fn with_corrected(mut self, corrected: Vec<f64>) -> Result<Self> {
        if corrected.len() != self.counts.len() {
            return Err(Error::invalid(format!(
                "corrected vector has {} bins, histogram has {}",
                corrected.len(),
                self.counts.len()
            )));
        }
        self.corrected = Some(corrected);
        Ok(self)
    }

    pub fn grid(&self) -> BinGrid {
        self.grid
    }

    pub fn mode(&self) -> PairMode {
        self.mode
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Envelope-corrected counts, present only after
    /// [`start_stop_correction`].
    pub fn corrected(&self) -> Option<&[f64]> {
        self.corrected.as_deref()
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// Total number of recorded pairs.
    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-bin value used by downstream analysis: corrected counts when
    /// present, raw counts otherwise.
    pub fn value(&self, index: usize) -> f64 {
        match &self.corrected {
            Some(c) => c[index],
            None => self.counts[index] as f64,
        }
    }
}

/// Normalized correlation curve, g2 versus lag.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    /// Bin centers, ps.
    pub lag_ps: Vec<f64>,
    /// Normalized coincidence rate per bin.
    pub g2: Vec<f64>,
    /// Statistical standard error per bin (Poisson counting).
    pub sigma: Vec<f64>,
    /// Mean counts per tail bin that the histogram was divided by.
    pub normalization: f64,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.lag_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lag_ps.is_empty()
    }

    /// Index of the bin whose center is nearest the given lag.
    pub fn nearest_bin(&self, lag_ps: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &c) in self.lag_ps.iter().enumerate() {
            let d = (c - lag_ps).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

fn correlate_on_grid(
    a: &PhotonStream,
    b: &PhotonStream,
    grid: BinGrid,
    mode: PairMode,
    exclude_self: bool,
    parallel: bool,
) -> Result<CorrelationHistogram> {
    grid.validate()?;
    let counts = if parallel {
        sweep::sweep_parallel(a.timestamps(), b.timestamps(), grid, mode, exclude_self)
    } else {
        sweep::sweep(
            a.timestamps(),
            b.timestamps(),
            grid,
            mode,
            exclude_self,
            0,
            a.timestamps().len(),
        )
    };
    Ok(CorrelationHistogram {
        grid,
        mode,
        counts,
        corrected: None,
        source_a: a.into(),
        source_b: b.into(),
    })
}

/// Correlates two streams on a fine lag grid.
///
/// Pairs with `t_B - t_A` in `[-window_ps, +window_ps)` are counted into
/// equal bins of `bin_width_ps`; `window_ps` must be a positive integer
/// multiple of the bin width. Cost is linear in events plus qualifying
/// pairs. Passing the same stream object for both inputs computes an
/// autocorrelation: see [`autocorrelate`].
pub fn cross_correlate(
    a: &PhotonStream,
    b: &PhotonStream,
    bin_width_ps: u64,
    window_ps: u64,
    mode: PairMode,
) -> Result<CorrelationHistogram> {
    let grid = BinGrid::Lag {
        bin_width_ps,
        window_ps,
    };
    let same = std::ptr::eq(a, b);
    correlate_on_grid(a, b, grid, mode, same, false)
}

/// [`cross_correlate`] with the A-stream chunked across threads. The merge
/// is exact integer addition, so the result is bit-identical to the
/// sequential function.
pub fn cross_correlate_par(
    a: &PhotonStream,
    b: &PhotonStream,
    bin_width_ps: u64,
    window_ps: u64,
    mode: PairMode,
) -> Result<CorrelationHistogram> {
    let grid = BinGrid::Lag {
        bin_width_ps,
        window_ps,
    };
    let same = std::ptr::eq(a, b);
    correlate_on_grid(a, b, grid, mode, same, true)
}

/// Correlates a stream with itself, excluding each event's pairing with
/// itself. In all-pairs mode the result is symmetric under lag negation
/// whenever no pair lag falls exactly on a bin edge.
pub fn autocorrelate(
    stream: &PhotonStream,
    bin_width_ps: u64,
    window_ps: u64,
    mode: PairMode,
) -> Result<CorrelationHistogram> {
    let grid = BinGrid::Lag {
        bin_width_ps,
        window_ps,
    };
    correlate_on_grid(stream, stream, grid, mode, true, false)
}

/// Correlates two streams onto the per-period grid for pulsed excitation:
/// one bin per integer pulse index `n` in `[-period_count, period_count]`,
/// each covering `n*delta_t +- delta_t/2` (half-open on the right). Bins
/// aggregate raw timestamp pairs directly rather than re-binning a fine
/// histogram.
pub fn rebin_to_periods(
    a: &PhotonStream,
    b: &PhotonStream,
    delta_t_ps: u64,
    period_count: u32,
    mode: PairMode,
) -> Result<CorrelationHistogram> {
    let grid = BinGrid::Period {
        delta_t_ps,
        period_count,
    };
    let same = std::ptr::eq(a, b);
    correlate_on_grid(a, b, grid, mode, same, false)
}

/// [`rebin_to_periods`] parallelized over A-stream chunks, bit-identical to
/// the sequential result.
pub fn rebin_to_periods_par(
    a: &PhotonStream,
    b: &PhotonStream,
    delta_t_ps: u64,
    period_count: u32,
    mode: PairMode,
) -> Result<CorrelationHistogram> {
    let grid = BinGrid::Period {
        delta_t_ps,
        period_count,
    };
    let same = std::ptr::eq(a, b);
    correlate_on_grid(a, b, grid, mode, same, true)
}

/// Divides a histogram by its mean count over a tail region where the
/// correlation has decayed to its uncorrelated plateau, yielding g2 with
/// per-bin Poisson errors.
///
/// The tail covers lags with `tail_start < |lag| <= tail_start + tail_span`
/// on both sides, selected by bin center; with the period grid and the
/// convention "periods beyond 1.3 us, 256 of them per side" this picks
/// exactly the intended bins. Start-stop histograms never populate
/// negative lags, so their tail is taken on the positive side alone. The
/// uncertainty of a bin with raw count N is `sqrt(N) / normalization`,
/// zero where N = 0.
pub fn normalize(
    hist: &CorrelationHistogram,
    tail_start_ps: u64,
    tail_span_ps: u64,
) -> Result<CorrelationCurve> {
    if tail_span_ps == 0 {
        return Err(Error::invalid("tail_span_ps must be positive"));
    }
    let lo = tail_start_ps as f64;
    let hi = (tail_start_ps + tail_span_ps) as f64;
    let mut tail_sum = 0.0;
    let mut tail_bins = 0usize;
    for k in 0..hist.bin_count() {
        let center = hist.grid.bin_center_ps(k);
        if hist.mode == PairMode::StartStop && center < 0.0 {
            continue;
        }
        let c = center.abs();
        if c > lo && c <= hi {
            tail_sum += hist.value(k);
            tail_bins += 1;
        }
    }
    if tail_bins == 0 || tail_sum <= 0.0 {
        return Err(Error::EmptyTail {
            tail_start_ps,
            tail_span_ps,
        });
    }
    let normalization = tail_sum / tail_bins as f64;
    let mut lag_ps = Vec::with_capacity(hist.bin_count());
    let mut g2 = Vec::with_capacity(hist.bin_count());
    let mut sigma = Vec::with_capacity(hist.bin_count());
    for k in 0..hist.bin_count() {
        let value = hist.value(k);
        let raw = hist.counts[k] as f64;
        lag_ps.push(hist.grid.bin_center_ps(k));
        g2.push(value / normalization);
        // For corrected histograms the Poisson error scales with the bin's
        // correction factor value/raw.
        let s = if raw > 0.0 {
            raw.sqrt() * (value / raw) / normalization
        } else {
            0.0
        };
        sigma.push(s);
    }
    Ok(CorrelationCurve {
        lag_ps,
        g2,
        sigma,
        normalization,
    })
}

/// Compensates the exponential envelope of a start-stop histogram.
///
/// A start-stop pair at lag `tau` is recorded only if no B-event arrived
/// earlier, which for a B-stream of mean rate R happens with probability
/// `exp(-R tau)`. The expected start-stop count in a bin `[l, h)` is then
/// `N_A (exp(-R l) - exp(-R h))` against `N_A R (h - l)` for all pairs, so
/// each bin is divided by the ratio of those two. Bins entirely at negative
/// lag are left as they are (start-stop never populates them), and
/// all-pairs input passes through unchanged.
pub fn start_stop_correction(hist: &CorrelationHistogram) -> CorrelationHistogram {
    if hist.mode == PairMode::AllPairs {
        return hist.clone();
    }
    let rate = hist.source_b.rate_per_ps();
    let mut corrected = Vec::with_capacity(hist.bin_count());
    for k in 0..hist.bin_count() {
        let (low, high) = hist.grid.bin_edges_ps(k);
        if high <= 0.0 || rate <= 0.0 {
            corrected.push(hist.counts[k] as f64);
            continue;
        }
        // The bin containing zero only collects lags from its positive
        // part, while the all-pairs reference spans the full bin width.
        let width = high - low;
        let low = low.max(0.0);
        // exp(-R l) - exp(-R h) via expm1 to survive the low-rate limit.
        let survival =
            -libm::exp(-rate * low) * libm::expm1(-rate * (high - low)) / (rate * width);
        if survival.is_finite() && survival > 0.0 {
            corrected.push(hist.counts[k] as f64 / survival);
        } else {
            corrected.push(hist.counts[k] as f64);
        }
    }
    CorrelationHistogram {
        corrected: Some(corrected),
        ..hist.clone()
    }
}

#[cfg(test)]
mod tests;
