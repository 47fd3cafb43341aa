use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;

fn stream(timestamps: Vec<u64>, duration_ps: u64) -> PhotonStream {
    PhotonStream::new(0, timestamps, duration_ps).unwrap()
}

fn random_stream(rng: &mut StdRng, events: usize, duration_ps: u64) -> PhotonStream {
    let mut ts: Vec<u64> = (0..events).map(|_| rng.random_range(0..duration_ps)).collect();
    ts.sort_unstable();
    ts.dedup();
    stream(ts, duration_ps)
}

/// Reference implementation: loop over every ordered pair.
fn brute_force(
    a: &[u64],
    b: &[u64],
    grid: BinGrid,
    mode: PairMode,
    exclude_self: bool,
) -> Vec<u64> {
    let mut counts = vec![0u64; grid.bin_count()];
    match mode {
        PairMode::AllPairs => {
            for (i, &ta) in a.iter().enumerate() {
                for (j, &tb) in b.iter().enumerate() {
                    if exclude_self && i == j {
                        continue;
                    }
                    if let Some(k) = grid.bin_index(tb as i128 - ta as i128) {
                        counts[k] += 1;
                    }
                }
            }
        }
        PairMode::StartStop => {
            for &ta in a {
                if let Some(&tb) = b.iter().find(|&&tb| tb > ta) {
                    if let Some(k) = grid.bin_index(tb as i128 - ta as i128) {
                        counts[k] += 1;
                    }
                }
            }
        }
    }
    counts
}

#[test]
fn single_pair_lands_in_expected_bin() {
    // One event at 0, one at +3 ns; window +-10 ns, 1 ns bins.
    let a = stream(vec![0], 20_000);
    let b = stream(vec![3_000], 20_000);
    let hist = cross_correlate(&a, &b, 1_000, 10_000, PairMode::AllPairs).unwrap();
    assert_eq!(hist.total_counts(), 1);
    let k = hist.grid().bin_index(3_000).unwrap();
    assert_eq!(hist.counts()[k], 1);
    let (low, high) = hist.grid().bin_edges_ps(k);
    assert!(low <= 3_000.0 && 3_000.0 < high);
}

#[test]
fn matches_brute_force_across_seeds_and_grids() {
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = random_stream(&mut rng, 1_500, 1_000_000);
        let b = random_stream(&mut rng, 1_500, 1_000_000);
        for (bw, window) in [(1_000, 50_000), (1_280, 12_800), (7, 700_000)] {
            for mode in [PairMode::AllPairs, PairMode::StartStop] {
                let grid = BinGrid::Lag {
                    bin_width_ps: bw,
                    window_ps: window,
                };
                let hist = cross_correlate(&a, &b, bw, window, mode).unwrap();
                let oracle = brute_force(a.timestamps(), b.timestamps(), grid, mode, false);
                assert_eq!(hist.counts(), &oracle[..], "seed {seed} bw {bw} mode {mode:?}");
            }
        }
    }
}

#[test]
fn period_grid_matches_brute_force() {
    for seed in 30..40u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = random_stream(&mut rng, 1_000, 2_000_000);
        let b = random_stream(&mut rng, 1_000, 2_000_000);
        let grid = BinGrid::Period {
            delta_t_ps: 25_000,
            period_count: 12,
        };
        for mode in [PairMode::AllPairs, PairMode::StartStop] {
            let hist = rebin_to_periods(&a, &b, 25_000, 12, mode).unwrap();
            let oracle = brute_force(a.timestamps(), b.timestamps(), grid, mode, false);
            assert_eq!(hist.counts(), &oracle[..], "seed {seed} mode {mode:?}");
        }
    }
}

#[test]
fn period_bin_boundaries_are_half_open_at_half_delta_t() {
    let grid = BinGrid::Period {
        delta_t_ps: 25_000,
        period_count: 3,
    };
    let zero = grid.bin_index(0).unwrap();
    assert_eq!(grid.bin_center_ps(zero), 0.0);
    // 0.4 ns and -12.4 ns stay in the zero bin; 24.9 ns belongs to n=1.
    assert_eq!(grid.bin_index(400), Some(zero));
    assert_eq!(grid.bin_index(24_900), Some(zero + 1));
    assert_eq!(grid.bin_index(-12_400), Some(zero));
    assert_eq!(grid.bin_index(-12_600), Some(zero - 1));
    // The lower edge -delta_t/2 is inclusive, the upper edge exclusive.
    assert_eq!(grid.bin_index(-12_500), Some(zero));
    assert_eq!(grid.bin_index(12_500), Some(zero + 1));
    // Outside +-(period_count + 1/2) periods nothing is counted.
    assert_eq!(grid.bin_index(87_500), None);
    assert_eq!(grid.bin_index(-87_501), None);
}

#[test]
fn autocorrelation_excludes_self_pairs_and_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(7);
    let s = random_stream(&mut rng, 2_000, 500_000);
    let hist = autocorrelate(&s, 500, 20_000, PairMode::AllPairs).unwrap();
    let grid = hist.grid();
    let oracle = brute_force(s.timestamps(), s.timestamps(), grid, PairMode::AllPairs, true);
    assert_eq!(hist.counts(), &oracle[..]);
    // Passing the same object twice is the same computation.
    let via_cross = cross_correlate(&s, &s, 500, 20_000, PairMode::AllPairs).unwrap();
    assert_eq!(via_cross.counts(), hist.counts());
}

#[test]
fn autocorrelation_is_symmetric_when_no_lag_hits_a_bin_edge() {
    // Distinct residues modulo the bin width keep every pair lag strictly
    // inside a bin, which is when mirror symmetry is exact.
    let bw = 1_000u64;
    let mut rng = StdRng::seed_from_u64(11);
    let mut ts = Vec::new();
    let mut base = 0u64;
    for i in 0..600u64 {
        base += bw * rng.random_range(1..40);
        ts.push(base + i % bw);
    }
    let duration = ts.last().unwrap() + 1_000_000;
    let s = stream(ts, duration);
    let hist = autocorrelate(&s, bw, 40_000, PairMode::AllPairs).unwrap();
    let n = hist.bin_count();
    for k in 0..n {
        assert_eq!(hist.counts()[k], hist.counts()[n - 1 - k], "bin {k}");
    }
}

#[test]
fn parallel_run_is_bit_identical_to_sequential() {
    let mut rng = StdRng::seed_from_u64(3);
    let a = random_stream(&mut rng, 30_000, 10_000_000);
    let b = random_stream(&mut rng, 30_000, 10_000_000);
    for mode in [PairMode::AllPairs, PairMode::StartStop] {
        let seq = cross_correlate(&a, &b, 1_280, 128_000, mode).unwrap();
        let par = cross_correlate_par(&a, &b, 1_280, 128_000, mode).unwrap();
        assert_eq!(seq.counts(), par.counts());
        let seq_p = rebin_to_periods(&a, &b, 25_000, 40, mode).unwrap();
        let par_p = rebin_to_periods_par(&a, &b, 25_000, 40, mode).unwrap();
        assert_eq!(seq_p.counts(), par_p.counts());
    }
}

#[test]
fn chunked_sweeps_merge_to_the_single_pass_result() {
    let mut rng = StdRng::seed_from_u64(5);
    let a = random_stream(&mut rng, 4_000, 3_000_000);
    let b = random_stream(&mut rng, 4_000, 3_000_000);
    let grid = BinGrid::Lag {
        bin_width_ps: 640,
        window_ps: 64_000,
    };
    let n = a.len();
    let whole = sweep::sweep(a.timestamps(), b.timestamps(), grid, PairMode::AllPairs, false, 0, n);
    for splits in [vec![0, 1, n], vec![0, n / 13, n / 3, 2 * n / 3, n]] {
        let mut merged = vec![0u64; grid.bin_count()];
        for w in splits.windows(2) {
            let part = sweep::sweep(
                a.timestamps(),
                b.timestamps(),
                grid,
                PairMode::AllPairs,
                false,
                w[0],
                w[1],
            );
            for (x, y) in merged.iter_mut().zip(part) {
                *x += y;
            }
        }
        assert_eq!(merged, whole);
    }
}

#[test]
fn normalize_scales_by_tail_mean() {
    let grid = BinGrid::Lag {
        bin_width_ps: 1_000,
        window_ps: 10_000,
    };
    let src = StreamSummary {
        channel_id: 0,
        events: 100,
        duration_ps: 1_000_000,
    };
    // Flat histogram normalizes to exactly one everywhere.
    let flat =
        CorrelationHistogram::from_parts(grid, PairMode::AllPairs, vec![200; 20], src, src)
            .unwrap();
    let curve = normalize(&flat, 2_000, 8_000).unwrap();
    assert!(curve.g2.iter().all(|&v| v == 1.0));
    assert_eq!(curve.normalization, 200.0);

    // Tail mean 200 with a zero-lag bin of 60 gives g2(0) = 0.30.
    let zero = grid.bin_index(0).unwrap();
    let mut counts = vec![200u64; 20];
    counts[zero] = 60;
    let dip = CorrelationHistogram::from_parts(grid, PairMode::AllPairs, counts, src, src)
        .unwrap();
    let curve = normalize(&dip, 2_000, 8_000).unwrap();
    assert!((curve.g2[zero] - 0.30).abs() < 1e-12);
    assert!((curve.sigma[zero] - (60.0f64).sqrt() / 200.0).abs() < 1e-12);
}

#[test]
fn normalize_rejects_empty_or_dead_tails() {
    let grid = BinGrid::Lag {
        bin_width_ps: 1_000,
        window_ps: 10_000,
    };
    let src = StreamSummary {
        channel_id: 0,
        events: 1,
        duration_ps: 1,
    };
    let hist =
        CorrelationHistogram::from_parts(grid, PairMode::AllPairs, vec![5; 20], src, src)
            .unwrap();
    // Tail entirely outside the window.
    assert!(matches!(
        normalize(&hist, 50_000, 10_000),
        Err(Error::EmptyTail { .. })
    ));
    // Tail bins exist but hold no counts.
    let dead =
        CorrelationHistogram::from_parts(grid, PairMode::AllPairs, vec![0; 20], src, src)
            .unwrap();
    assert!(matches!(
        normalize(&dead, 2_000, 8_000),
        Err(Error::EmptyTail { .. })
    ));
}

#[test]
fn start_stop_correction_is_identity_on_all_pairs() {
    let mut rng = StdRng::seed_from_u64(9);
    let a = random_stream(&mut rng, 500, 1_000_000);
    let b = random_stream(&mut rng, 500, 1_000_000);
    let hist = cross_correlate(&a, &b, 1_000, 20_000, PairMode::AllPairs).unwrap();
    let corrected = start_stop_correction(&hist);
    assert_eq!(corrected, hist);
    assert!(corrected.corrected().is_none());
}

#[test]
fn start_stop_correction_flattens_a_poisson_stream() {
    use crate::synth::{simulate_cw, EmitterModel};
    // Background-only streams: the true correlation is flat. The start-stop
    // histogram decays as exp(-R tau); after correction it must be flat
    // again within counting errors.
    let emitter = EmitterModel::cw(20_000.0, 0.0);
    let (a, b) = simulate_cw(&emitter, 4e-6, 50_000_000_000, 21).unwrap();
    let hist = cross_correlate(&a, &b, 10_000, 1_000_000, PairMode::StartStop).unwrap();

    // Uncorrected: strong decay, first positive bin several times the last.
    let zero = hist.grid().bin_index(5_000).unwrap();
    let first = hist.counts()[zero] as f64;
    let last = hist.counts()[hist.bin_count() - 1] as f64;
    assert!(first > 3.0 * last, "expected visible decay, {first} vs {last}");

    let corrected = start_stop_correction(&hist);
    let curve = normalize(&corrected, 0, 1_000_000).unwrap();
    let mut inside3 = 0usize;
    let mut positive = 0usize;
    for k in 0..curve.len() {
        if curve.lag_ps[k] < 0.0 {
            continue;
        }
        positive += 1;
        if (curve.g2[k] - 1.0).abs() <= 3.0 * curve.sigma[k] {
            inside3 += 1;
        }
        assert!(
            (curve.g2[k] - 1.0).abs() <= 5.0 * curve.sigma[k],
            "bin {k}: g2 {} sigma {}",
            curve.g2[k],
            curve.sigma[k]
        );
    }
    assert!(inside3 as f64 >= 0.97 * positive as f64, "{inside3}/{positive}");
}

#[test]
fn start_stop_correction_factor_tends_to_one_at_low_rate() {
    let grid = BinGrid::Lag {
        bin_width_ps: 1_000,
        window_ps: 10_000,
    };
    let sparse = StreamSummary {
        channel_id: 1,
        events: 10,
        duration_ps: 10_000_000_000,
    };
    let hist = CorrelationHistogram {
        grid,
        mode: PairMode::StartStop,
        counts: vec![1_000; 20],
        corrected: None,
        source_a: sparse,
        source_b: sparse,
    };
    let corrected = start_stop_correction(&hist);
    for (k, &v) in corrected.corrected().unwrap().iter().enumerate() {
        if corrected.grid().bin_center_ps(k) > 0.0 {
            assert!((v - 1_000.0).abs() / 1_000.0 < 0.01, "bin {k}: {v}");
        }
    }
}

#[test]
fn oversized_histograms_are_rejected_with_the_limit() {
    let a = stream(vec![0], 10);
    let err = cross_correlate(&a, &a, 1, 1 << 40, PairMode::AllPairs).unwrap_err();
    match err {
        Error::HistogramTooLarge { requested, limit } => {
            assert_eq!(requested, 1 << 41);
            assert_eq!(limit, 1 << 27);
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn invalid_grids_are_rejected() {
    let a = stream(vec![0], 10);
    assert!(cross_correlate(&a, &a, 0, 1_000, PairMode::AllPairs).is_err());
    assert!(cross_correlate(&a, &a, 1_000, 500, PairMode::AllPairs).is_err());
    assert!(cross_correlate(&a, &a, 1_000, 1_500, PairMode::AllPairs).is_err());
    assert!(rebin_to_periods(&a, &a, 0, 5, PairMode::AllPairs).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_sweep_matches_brute_force(
        seed in 0u64..1_000_000,
        bw in 1u64..2_000,
        bins_half in 1u64..40,
        na in 1usize..300,
        nb in 1usize..300,
        start_stop in proptest::bool::ANY,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = random_stream(&mut rng, na, 80_000);
        let b = random_stream(&mut rng, nb, 80_000);
        let window = bw * bins_half;
        let mode = if start_stop { PairMode::StartStop } else { PairMode::AllPairs };
        let grid = BinGrid::Lag { bin_width_ps: bw, window_ps: window };
        let hist = cross_correlate(&a, &b, bw, window, mode).unwrap();
        let oracle = brute_force(a.timestamps(), b.timestamps(), grid, mode, false);
        prop_assert_eq!(hist.counts(), &oracle[..]);
        let par = cross_correlate_par(&a, &b, bw, window, mode).unwrap();
        prop_assert_eq!(par.counts(), hist.counts());
    }

    #[test]
    fn prop_total_counts_match_pair_count(
        seed in 0u64..1_000_000,
        na in 1usize..200,
        nb in 1usize..200,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = random_stream(&mut rng, na, 50_000);
        let b = random_stream(&mut rng, nb, 50_000);
        let hist = cross_correlate(&a, &b, 100, 10_000, PairMode::AllPairs).unwrap();
        let mut expected = 0u64;
        for &ta in a.timestamps() {
            for &tb in b.timestamps() {
                let lag = tb as i128 - ta as i128;
                if (-10_000..10_000).contains(&lag) {
                    expected += 1;
                }
            }
        }
        prop_assert_eq!(hist.total_counts(), expected);
    }
}
