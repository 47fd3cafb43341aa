//! Seeded Monte Carlo generation of detector click streams.
//!
//! All sampling goes through ChaCha12 with explicit inverse-CDF transforms
//! (`libm` for the transcendentals), so streams are reproducible bit for bit
//! across platforms. The emitter, the background, and the beamsplitter
//! routing each draw from their own ChaCha stream derived from the master
//! seed; interleaving one process's draws can therefore never perturb
//! another's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rand_util::unit_open;
use crate::synth::stream::{Origin, PhotonStream, StreamMetadata};
use crate::synth::{Drive, EmitterModel, PulseTrain};

/// Identifier recorded in stream metadata for the sampling scheme used here.
pub(crate) const RNG_ALGORITHM: &str = "chacha12/u64-inverse-cdf";

/// Smallest permitted mean inter-event gap, in picoseconds.
const MIN_MEAN_GAP_PS: f64 = 10.0;

const EMITTER_STREAM: u64 = 1;
const BACKGROUND_STREAM: u64 = 2;
const ROUTING_STREAM: u64 = 3;

/// Optional simulation knobs. Detector dead time and afterpulsing default to
/// off; the analyses in this crate never correct for them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Keep per-event origin tags for diagnostics.
    pub keep_origins: bool,
    /// Drop events closer than this to the previous detected event on the
    /// same channel.
    pub dead_time_ps: Option<u64>,
    /// Probability that a detected event spawns one spurious afterpulse.
    pub afterpulse_probability: f64,
    /// Delay of a spurious afterpulse relative to the event that caused it.
    pub afterpulse_delay_ps: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            keep_origins: false,
            dead_time_ps: None,
            afterpulse_probability: 0.0,
            afterpulse_delay_ps: 1_000,
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exponential waiting time with the given mean, via inverse CDF.
#[inline]
fn exp_wait(rng: &mut ChaCha12Rng, mean: f64) -> f64 {
    -mean * libm::log(unit_open(rng))
}

#[inline]
fn bernoulli(rng: &mut ChaCha12Rng, p: f64) -> bool {
    unit_open(rng) <= p
}

/// Knuth's product method; fine for the per-pulse means used here.
fn poisson_count(rng: &mut ChaCha12Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let limit = libm::exp(-mean);
    let mut count = 0;
    let mut product = 1.0;
    loop {
        product *= unit_open(rng);
        if product <= limit {
            return count;
        }
        count += 1;
    }
}

/// Steady-state detected emission rate of the level scheme, per picosecond.
fn cw_emission_rate(emitter: &EmitterModel) -> f64 {
    let pump = match emitter.drive {
        Drive::Cw { pump_rate_per_ps } => pump_rate_per_ps,
        Drive::Pulsed { .. } => return 0.0,
    };
    let decay = 1.0 / emitter.excited_lifetime_ps;
    let shelve = emitter.shelving_rate_per_ps.unwrap_or(0.0);
    if pump == 0.0 {
        return 0.0;
    }
    // Occupations from detailed balance of ground -> excited -> (ground | shelf).
    let excited_per_ground = pump / (decay + shelve);
    let shelf_per_ground = if shelve > 0.0 {
        // Shelf relaxes at the shelving rate, so inflow pi_e * shelve equals
        // outflow pi_s * shelve and pi_s = pi_e.
        excited_per_ground
    } else {
        0.0
    };
    let ground = 1.0 / (1.0 + excited_per_ground + shelf_per_ground);
    ground * excited_per_ground * decay * emitter.detected_fraction
}

/// Continuous-time Markov chain over the emitter's level scheme, yielding
/// detected emission times in (0, duration).
fn cw_emitter_times(
    emitter: &EmitterModel,
    duration_ps: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let pump = match emitter.drive {
        Drive::Cw { pump_rate_per_ps } => pump_rate_per_ps,
        Drive::Pulsed { .. } => unreachable!("checked by caller"),
    };
    let mut times = Vec::new();
    if pump == 0.0 {
        return times;
    }
    let decay = 1.0 / emitter.excited_lifetime_ps;
    let shelve = emitter.shelving_rate_per_ps.unwrap_or(0.0);
    let total_excited = decay + shelve;
    let radiative_branch = decay / total_excited;

    #[derive(Clone, Copy)]
    enum Level {
        Ground,
        Excited,
        Shelved,
    }

    let mut t = 0.0_f64;
    let mut level = Level::Ground;
    loop {
        match level {
            Level::Ground => {
                t += exp_wait(rng, 1.0 / pump);
                level = Level::Excited;
            }
            Level::Excited => {
                t += exp_wait(rng, 1.0 / total_excited);
                if t >= duration_ps {
                    break;
                }
                if bernoulli(rng, radiative_branch) {
                    if bernoulli(rng, emitter.detected_fraction) {
                        times.push(t);
                    }
                    level = Level::Ground;
                } else {
                    level = Level::Shelved;
                }
            }
            Level::Shelved => {
                t += exp_wait(rng, 1.0 / shelve);
                level = Level::Ground;
            }
        }
        if t >= duration_ps {
            break;
        }
    }
    times
}

/// Homogeneous Poisson arrivals on (0, duration).
fn poisson_times(rate_per_ps: f64, duration_ps: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut times = Vec::new();
    if rate_per_ps <= 0.0 {
        return times;
    }
    let mean_gap = 1.0 / rate_per_ps;
    let mut t = exp_wait(rng, mean_gap);
    while t < duration_ps {
        times.push(t);
        t += exp_wait(rng, mean_gap);
    }
    times
}

/// Merge emitter and background arrival times, route every event through a
/// 50/50 beamsplitter, and integerize to strictly increasing picosecond
/// stamps per channel.
fn route_and_build(
    emitter_times: Vec<f64>,
    background_times: Vec<f64>,
    duration_ps: u64,
    seed: u64,
    options: &SimOptions,
    source: String,
) -> Result<(PhotonStream, PhotonStream)> {
    let mut routing = stream_rng(seed, ROUTING_STREAM);

    // Merge the two sorted arrival lists, keeping origins.
    let mut merged: Vec<(f64, Origin)> =
        Vec::with_capacity(emitter_times.len() + background_times.len());
    let (mut i, mut j) = (0, 0);
    while i < emitter_times.len() || j < background_times.len() {
        let take_emitter = match (emitter_times.get(i), background_times.get(j)) {
            (Some(&e), Some(&b)) => e <= b,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!(),
        };
        if take_emitter {
            merged.push((emitter_times[i], Origin::Emitter));
            i += 1;
        } else {
            merged.push((background_times[j], Origin::Background));
            j += 1;
        }
    }

    let mut channels: [Vec<(u64, Origin)>; 2] = [vec![], vec![]];
    let mut afterpulses: [Vec<(u64, Origin)>; 2] = [vec![], vec![]];
    for (t, origin) in merged {
        let channel = (routing.random::<u64>() & 1) as usize;
        let ts = t as u64;
        channels[channel].push((ts, origin));
        if options.afterpulse_probability > 0.0
            && bernoulli(&mut routing, options.afterpulse_probability)
        {
            afterpulses[channel].push((ts + options.afterpulse_delay_ps.max(1), origin));
        }
    }

    let mut finished: [(Vec<u64>, Vec<Origin>); 2] = [(vec![], vec![]), (vec![], vec![])];
    for channel in 0..2 {
        let mut events = std::mem::take(&mut channels[channel]);
        let extra = std::mem::take(&mut afterpulses[channel]);
        if !extra.is_empty() {
            events.extend(extra);
            events.sort_by_key(|&(t, _)| t);
        }
        let (stamps, origins) = &mut finished[channel];
        stamps.reserve(events.len());
        origins.reserve(events.len());
        let mut last: Option<u64> = None;
        for (mut ts, origin) in events {
            // Collisions after integerizing are nudged forward by 1 ps.
            if let Some(prev) = last {
                if ts <= prev {
                    ts = prev + 1;
                }
            }
            if ts >= duration_ps {
                continue;
            }
            if let Some(dead) = options.dead_time_ps {
                if last.is_some_and(|prev| ts - prev <= dead) {
                    continue;
                }
            }
            stamps.push(ts);
            origins.push(origin);
            last = Some(ts);
        }
    }

    let metadata = StreamMetadata {
        rng: RNG_ALGORITHM.to_string(),
        seed: Some(seed),
        source,
    };
    let [(t0, o0), (t1, o1)] = finished;
    let mut s0 = PhotonStream::new(0, t0, duration_ps)?;
    let mut s1 = PhotonStream::new(1, t1, duration_ps)?;
    s0.metadata = metadata.clone();
    s1.metadata = metadata;
    if options.keep_origins {
        s0 = s0.with_origins(o0);
        s1 = s1.with_origins(o1);
    }
    Ok((s0, s1))
}

fn check_rate(total_rate_per_ps: f64) -> Result<()> {
    if total_rate_per_ps > 0.0 {
        let mean_gap = 1.0 / total_rate_per_ps;
        if mean_gap < MIN_MEAN_GAP_PS {
            return Err(Error::RateTooHigh {
                mean_gap_ps: mean_gap,
            });
        }
    }
    Ok(())
}

/// Simulates continuous excitation: emitter fluorescence from the rate
/// equations plus a homogeneous Poisson background, split 50/50 onto two
/// detector channels.
pub fn simulate_cw(
    emitter: &EmitterModel,
    background_rate_per_ps: f64,
    duration_ps: u64,
    seed: u64,
) -> Result<(PhotonStream, PhotonStream)> {
    simulate_cw_with(
        emitter,
        background_rate_per_ps,
        duration_ps,
        seed,
        &SimOptions::default(),
    )
}

pub fn simulate_cw_with(
    emitter: &EmitterModel,
    background_rate_per_ps: f64,
    duration_ps: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<(PhotonStream, PhotonStream)> {
    emitter.validate()?;
    if !matches!(emitter.drive, Drive::Cw { .. }) {
        return Err(Error::invalid("simulate_cw needs an emitter with Cw drive"));
    }
    if duration_ps == 0 {
        return Err(Error::invalid("duration_ps must be positive"));
    }
    if !(background_rate_per_ps >= 0.0) {
        return Err(Error::invalid("background_rate_per_ps must be >= 0"));
    }
    check_rate(cw_emission_rate(emitter) + background_rate_per_ps)?;

    let duration = duration_ps as f64;
    let emitter_times = cw_emitter_times(emitter, duration, &mut stream_rng(seed, EMITTER_STREAM));
    let background_times = poisson_times(
        background_rate_per_ps,
        duration,
        &mut stream_rng(seed, BACKGROUND_STREAM),
    );
    let source = format!(
        "simulate_cw lifetime_ps={} shelving_per_ps={:?} drive={:?} detected={} bg_per_ps={} duration_ps={}",
        emitter.excited_lifetime_ps,
        emitter.shelving_rate_per_ps,
        emitter.drive,
        emitter.detected_fraction,
        background_rate_per_ps,
        duration_ps
    );
    route_and_build(
        emitter_times,
        background_times,
        duration_ps,
        seed,
        options,
        source,
    )
}

/// Simulates pulsed excitation at the train's repetition period.
///
/// Per pulse the emitter is excited with its configured probability and emits
/// at most one photon, delayed exponentially by the excited-state lifetime.
/// Background events are drawn per pulse from a Poisson count with the given
/// mean and the same exponential delay envelope, so they are correlated with
/// the pulse train but statistically independent of the emitter.
pub fn simulate_pulsed(
    emitter: &EmitterModel,
    pulses: &PulseTrain,
    background_per_pulse: f64,
    seed: u64,
) -> Result<(PhotonStream, PhotonStream)> {
    simulate_pulsed_with(
        emitter,
        pulses,
        background_per_pulse,
        seed,
        &SimOptions::default(),
    )
}

pub fn simulate_pulsed_with(
    emitter: &EmitterModel,
    pulses: &PulseTrain,
    background_per_pulse: f64,
    seed: u64,
    options: &SimOptions,
) -> Result<(PhotonStream, PhotonStream)> {
    emitter.validate()?;
    let excitation_probability = match emitter.drive {
        Drive::Pulsed {
            excitation_probability,
        } => excitation_probability,
        Drive::Cw { .. } => {
            return Err(Error::invalid(
                "simulate_pulsed needs an emitter with Pulsed drive",
            ))
        }
    };
    if !(background_per_pulse >= 0.0) {
        return Err(Error::invalid("background_per_pulse must be >= 0"));
    }
    let duration_ps = pulses.duration_ps();
    let period = pulses.repetition_period_ps as f64;
    let mean_per_pulse =
        excitation_probability * emitter.detected_fraction + background_per_pulse;
    check_rate(mean_per_pulse / period)?;

    let decay = 1.0 / emitter.excited_lifetime_ps;
    let shelve = emitter.shelving_rate_per_ps.unwrap_or(0.0);
    let total_excited = decay + shelve;
    let radiative_branch = decay / total_excited;

    // Emitter: at most one excitation per pulse; a shelved emitter skips
    // pulses until the shelf has relaxed.
    let mut emitter_rng = stream_rng(seed, EMITTER_STREAM);
    let mut emitter_times = Vec::new();
    let mut shelved_until = f64::NEG_INFINITY;
    for k in 0..pulses.pulse_count {
        let t0 = k as f64 * period;
        if t0 < shelved_until {
            continue;
        }
        if !bernoulli(&mut emitter_rng, excitation_probability) {
            continue;
        }
        let delay = exp_wait(&mut emitter_rng, 1.0 / total_excited);
        if bernoulli(&mut emitter_rng, radiative_branch) {
            if bernoulli(&mut emitter_rng, emitter.detected_fraction) {
                emitter_times.push(t0 + delay);
            }
        } else {
            shelved_until = t0 + delay + exp_wait(&mut emitter_rng, 1.0 / shelve);
        }
    }

    // Background: per-pulse Poisson count, same delay envelope.
    let mut background_rng = stream_rng(seed, BACKGROUND_STREAM);
    let mut background_times = Vec::new();
    for k in 0..pulses.pulse_count {
        let t0 = k as f64 * period;
        let n = poisson_count(&mut background_rng, background_per_pulse);
        for _ in 0..n {
            background_times.push(t0 + exp_wait(&mut background_rng, emitter.excited_lifetime_ps));
        }
    }
    // Delays can spill past the following pulse, so re-sort; order stays
    // deterministic because times are a pure function of the draws.
    emitter_times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    background_times.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let source = format!(
        "simulate_pulsed lifetime_ps={} shelving_per_ps={:?} p_exc={} detected={} bg_per_pulse={} period_ps={} pulses={}",
        emitter.excited_lifetime_ps,
        emitter.shelving_rate_per_ps,
        excitation_probability,
        emitter.detected_fraction,
        background_per_pulse,
        pulses.repetition_period_ps,
        pulses.pulse_count
    );
    route_and_build(
        emitter_times,
        background_times,
        duration_ps,
        seed,
        options,
        source,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DEFAULT_LIFETIME_PS;

    #[test]
    fn fixed_seed_reproduces_streams_bit_identically() {
        let emitter = EmitterModel::cw(DEFAULT_LIFETIME_PS, 2e-5).with_detected_fraction(0.1);
        let (a1, b1) = simulate_cw(&emitter, 1e-6, 1_000_000_000, 7).unwrap();
        let (a2, b2) = simulate_cw(&emitter, 1e-6, 1_000_000_000, 7).unwrap();
        assert_eq!(a1.timestamps(), a2.timestamps());
        assert_eq!(b1.timestamps(), b2.timestamps());
        let (a3, _) = simulate_cw(&emitter, 1e-6, 1_000_000_000, 8).unwrap();
        assert_ne!(a1.timestamps(), a3.timestamps());
    }

    #[test]
    fn pure_background_matches_poisson_expectations() {
        // 1e4 events/s for 10 s -> 1e5 events total, split about evenly.
        let emitter = EmitterModel::cw(DEFAULT_LIFETIME_PS, 0.0);
        let rate_per_ps = 1e4 * 1e-12;
        let duration = 10_000_000_000_000; // 10 s
        let (a, b) = simulate_cw(&emitter, rate_per_ps, duration, 42).unwrap();
        let total = (a.len() + b.len()) as f64;
        let expected = 1e5;
        assert!(
            (total - expected).abs() < 3.0 * expected.sqrt(),
            "total {total} vs expected {expected}"
        );
        let imbalance = (a.len() as f64 - b.len() as f64).abs() / total;
        assert!(imbalance < 3.0 / total.sqrt(), "imbalance {imbalance}");
    }

    #[test]
    fn zero_excitation_pulsed_yields_background_only() {
        let emitter = EmitterModel::pulsed(DEFAULT_LIFETIME_PS, 0.0);
        let pulses = PulseTrain::new(25_000, 1_000_000).unwrap();
        let (a, b) = simulate_pulsed(&emitter, &pulses, 0.01, 11).unwrap();
        let total = (a.len() + b.len()) as f64;
        let expected = 1e4;
        assert!(
            (total - expected).abs() < 4.0 * expected.sqrt(),
            "total {total} vs expected {expected}"
        );
    }

    #[test]
    fn pulsed_intensity_ratio_tracks_configuration() {
        // a:b = 1:2 within 2% over 1e7 pulses, checked via origin tags.
        let emitter = EmitterModel::pulsed(2_000.0, 0.02);
        let pulses = PulseTrain::new(25_000, 10_000_000).unwrap();
        let options = SimOptions {
            keep_origins: true,
            ..SimOptions::default()
        };
        let (a, b) = simulate_pulsed_with(&emitter, &pulses, 0.04, 5, &options).unwrap();
        let mut emitter_events = 0usize;
        let mut background_events = 0usize;
        for stream in [&a, &b] {
            for origin in stream.origins().unwrap() {
                match origin {
                    Origin::Emitter => emitter_events += 1,
                    Origin::Background => background_events += 1,
                }
            }
        }
        let ratio = background_events as f64 / emitter_events as f64;
        assert!((ratio - 2.0).abs() / 2.0 < 0.02, "ratio {ratio}");
    }

    #[test]
    fn rejects_rates_beyond_timestamp_resolution() {
        let emitter = EmitterModel::cw(DEFAULT_LIFETIME_PS, 0.0);
        // 0.2 events per ps -> 5 ps mean gap.
        let err = simulate_cw(&emitter, 0.2, 1_000_000, 1).unwrap_err();
        assert!(matches!(err, Error::RateTooHigh { .. }));
    }

    #[test]
    fn rejects_zero_duration_and_wrong_drive() {
        let cw = EmitterModel::cw(DEFAULT_LIFETIME_PS, 1e-5);
        assert!(simulate_cw(&cw, 0.0, 0, 1).is_err());
        let pulsed = EmitterModel::pulsed(DEFAULT_LIFETIME_PS, 0.1);
        assert!(simulate_cw(&pulsed, 0.0, 1000, 1).is_err());
        let train = PulseTrain::new(25_000, 10).unwrap();
        assert!(simulate_pulsed(&cw, &train, 0.0, 1).is_err());
    }

    #[test]
    fn dead_time_enforces_minimum_gap() {
        let emitter = EmitterModel::cw(DEFAULT_LIFETIME_PS, 0.0);
        let options = SimOptions {
            dead_time_ps: Some(50_000),
            ..SimOptions::default()
        };
        let (a, _) =
            simulate_cw_with(&emitter, 1e-4, 1_000_000_000, 3, &options).unwrap();
        assert!(a.len() > 100);
        for w in a.timestamps().windows(2) {
            assert!(w[1] - w[0] > 50_000);
        }
    }
}
