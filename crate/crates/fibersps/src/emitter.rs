//! Monte Carlo photon streams for a saturable single-photon emitter and the
//! detector chain that turns emitted photons into timestamped clicks.
//!
//! Generation happens in two stages. [`simulate_emission`] draws the photons
//! that actually enter the observed fiber direction (channel 3, plus sync
//! records on channel 2 under pulsed pumping). [`apply_detection`] then plays
//! those photons through losses, a 50:50 splitter, Gaussian timing jitter,
//! dark counts, and per-detector dead time, producing clicks on channels 0
//! and 1. Both stages are deterministic for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Gamma, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::FWHM_PER_SIGMA;
use crate::tags::{TagRecord, TagStream};

/// Detector A behind the splitter.
pub const CHANNEL_A: u8 = 0;
/// Detector B behind the splitter.
pub const CHANNEL_B: u8 = 1;
/// Excitation sync (pulsed mode only).
pub const CHANNEL_SYNC: u8 = 2;
/// As-emitted photons, before any detection losses.
pub const CHANNEL_EMISSION: u8 = 3;

const PS_PER_S: f64 = 1e12;
const PS_PER_NS: f64 = 1e3;

/// Product of the default chain efficiencies: fiber-to-detector transmission,
/// spectral filter, and detector quantum efficiency.
const DEFAULT_CHAIN_SURVIVAL: f64 = 0.83 * 0.83 * 0.60;

#[derive(Debug, Error)]
pub enum EmitterError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("emission stream must be sorted by timestamp")]
    UnsortedInput,
}

/// Parameters of the emitter itself.
///
/// The emitter is a pumped two-level system: excitation waits are exponential
/// with mean `lifetime * sat_intensity / intensity` and emission delays
/// exponential with mean `lifetime`, which makes the long-run emission rate
/// `(1/lifetime) * I/(I + sat_intensity)`. A slow telegraph process switches
/// between a bright state and a gray state whose cycles emit only with
/// probability `trion_qe`. Each cycle yields a second photon with probability
/// `biexciton_prob`, and each emitted photon enters the observed fiber
/// direction with probability `collection_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterModel {
    /// Radiative lifetime in ns.
    pub lifetime_ns: f64,
    /// Saturation intensity in W/cm².
    pub sat_intensity: f64,
    /// Degree of linear polarization of the emitted photons.
    pub dipole_dop: f64,
    /// Probability that an excitation cycle yields a second photon.
    pub biexciton_prob: f64,
    /// Telegraph rate out of the gray state, 1/s.
    pub blink_on_rate_hz: f64,
    /// Telegraph rate out of the bright state, 1/s.
    pub blink_off_rate_hz: f64,
    /// Emission probability per cycle while in the gray state.
    pub trion_qe: f64,
    /// Probability that an emitted photon enters the observed fiber side.
    pub collection_fraction: f64,
}

impl EmitterModel {
    /// Plasmon-enhanced emitter: fast decay, bright saturated output, high
    /// polarization, and blinking masked by a near-unit gray-state yield.
    /// The collection fraction is calibrated so the saturated one-sided rate
    /// through the default detector chain is 2.50 Mc/s.
    pub fn coupled() -> Self {
        EmitterModel {
            lifetime_ns: 2.6,
            sat_intensity: 387.0,
            dipole_dop: 0.955,
            biexciton_prob: biexciton_prob_for_purity(0.20),
            blink_on_rate_hz: 1.4,
            blink_off_rate_hz: 0.6,
            trion_qe: 0.98,
            collection_fraction: 2.50e6 * 2.6e-9 / DEFAULT_CHAIN_SURVIVAL,
        }
    }

    /// Bare emitter on the same fiber: slow decay, weak polarization, and a
    /// dim gray state that produces visible blinking. Saturated one-sided
    /// rate through the default chain is 0.37 Mc/s.
    pub fn uncoupled() -> Self {
        EmitterModel {
            lifetime_ns: 61.0,
            sat_intensity: 122.0,
            dipole_dop: 0.42,
            biexciton_prob: biexciton_prob_for_purity(0.07),
            blink_on_rate_hz: 1.4,
            blink_off_rate_hz: 0.6,
            trion_qe: 0.08,
            collection_fraction: 0.37e6 * 61.0e-9 / DEFAULT_CHAIN_SURVIVAL,
        }
    }

    /// Same emitter pinned to the bright state forever.
    pub fn without_blinking(mut self) -> Self {
        self.blink_off_rate_hz = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), EmitterError> {
        let positive = [
            ("lifetime_ns", self.lifetime_ns),
            ("sat_intensity", self.sat_intensity),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(EmitterError::InvalidModel(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let unit = [
            ("dipole_dop", self.dipole_dop),
            ("biexciton_prob", self.biexciton_prob),
            ("trion_qe", self.trion_qe),
            ("collection_fraction", self.collection_fraction),
        ];
        for (name, v) in unit {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(EmitterError::InvalidModel(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        let rates = [
            ("blink_on_rate_hz", self.blink_on_rate_hz),
            ("blink_off_rate_hz", self.blink_off_rate_hz),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(EmitterError::InvalidModel(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Collected photon rate at full saturation, bright state, in Hz.
    pub fn saturated_collected_rate_hz(&self) -> f64 {
        self.collection_fraction / (self.lifetime_ns * 1e-9)
    }

    /// Time-averaged emission multiplier of the telegraph process: 1 while
    /// bright, `trion_qe` while gray, weighted by the stationary duty cycle.
    pub fn mean_brightness(&self) -> f64 {
        if self.blink_off_rate_hz <= 0.0 {
            return 1.0;
        }
        let duty = self.blink_on_rate_hz / (self.blink_on_rate_hz + self.blink_off_rate_hz);
        duty + (1.0 - duty) * self.trion_qe
    }

    /// Long-run collected photon rate for the given excitation, including
    /// blinking. Multiply by the chain survival for the detected rate.
    pub fn expected_collected_rate_hz(&self, excitation: &ExcitationSpec) -> f64 {
        let i = excitation.intensity;
        if i <= 0.0 {
            return 0.0;
        }
        let p = i / (i + self.sat_intensity);
        let brightness = self.mean_brightness();
        match excitation.mode {
            ExcitationMode::Cw => self.saturated_collected_rate_hz() * p * brightness,
            ExcitationMode::Pulsed => {
                excitation.rep_rate_mhz
                    * 1e6
                    * p
                    * (1.0 + self.biexciton_prob)
                    * self.collection_fraction
                    * brightness
            }
        }
    }
}

/// Second-photon probability that makes a fully saturated pulsed coincidence
/// histogram show a central-to-side ratio of `target`.
///
/// With two photons per cycle occurring with probability `b`, that ratio is
/// `2b/(1+b)²`, bounded by 1/2; this inverts the map on [0, 1/2).
pub fn biexciton_prob_for_purity(target: f64) -> f64 {
    assert!(
        (0.0..0.5).contains(&target),
        "central-to-side ratio 2b/(1+b)^2 never reaches 1/2"
    );
    if target == 0.0 {
        0.0
    } else {
        (1.0 - target - (1.0 - 2.0 * target).sqrt()) / target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationMode {
    Cw,
    Pulsed,
}

/// Pump configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    pub mode: ExcitationMode,
    /// Pump intensity in W/cm².
    pub intensity: f64,
    /// Pulse repetition rate in MHz; ignored under CW.
    #[serde(default = "default_rep_rate")]
    pub rep_rate_mhz: f64,
    /// Laser pulse width in ps. Far shorter than any lifetime handled here,
    /// so pulses are treated as instantaneous; kept for provenance.
    #[serde(default = "default_pulse_width")]
    pub pulse_width_ps: f64,
    /// Pump wavelength in nm, informational.
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
}

fn default_rep_rate() -> f64 {
    10.0
}

fn default_pulse_width() -> f64 {
    20.0
}

fn default_wavelength() -> f64 {
    532.0
}

impl ExcitationSpec {
    pub fn cw(intensity: f64) -> Self {
        ExcitationSpec {
            mode: ExcitationMode::Cw,
            intensity,
            rep_rate_mhz: default_rep_rate(),
            pulse_width_ps: default_pulse_width(),
            wavelength_nm: default_wavelength(),
        }
    }

    pub fn pulsed(intensity: f64, rep_rate_mhz: f64) -> Self {
        ExcitationSpec {
            mode: ExcitationMode::Pulsed,
            intensity,
            rep_rate_mhz,
            pulse_width_ps: default_pulse_width(),
            wavelength_nm: default_wavelength(),
        }
    }

    /// Pulse period in ps.
    pub fn period_ps(&self) -> f64 {
        1e6 / self.rep_rate_mhz
    }

    pub fn validate(&self) -> Result<(), EmitterError> {
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            return Err(EmitterError::InvalidModel(format!(
                "intensity must be non-negative, got {}",
                self.intensity
            )));
        }
        if self.mode == ExcitationMode::Pulsed
            && (!self.rep_rate_mhz.is_finite() || self.rep_rate_mhz <= 0.0)
        {
            return Err(EmitterError::InvalidModel(format!(
                "rep_rate_mhz must be positive in pulsed mode, got {}",
                self.rep_rate_mhz
            )));
        }
        if !self.pulse_width_ps.is_finite() || self.pulse_width_ps < 0.0 {
            return Err(EmitterError::InvalidModel(format!(
                "pulse_width_ps must be non-negative, got {}",
                self.pulse_width_ps
            )));
        }
        Ok(())
    }

    /// Warns when the pulse period does not comfortably exceed the lifetime,
    /// in which case decay tails wrap into the following pulse slot.
    pub fn lifetime_warning(&self, lifetime_ns: f64) -> Option<String> {
        if self.mode != ExcitationMode::Pulsed {
            return None;
        }
        let period_ns = self.period_ps() / PS_PER_NS;
        if period_ns < 3.0 * lifetime_ns {
            Some(format!(
                "pulse period {period_ns:.1} ns is under 3 lifetimes ({lifetime_ns} ns); \
                 decay tails will fold into later pulse slots"
            ))
        } else {
            None
        }
    }
}

/// Everything between the fiber output and the time tagger: losses, a
/// splitter feeding two detectors, timing jitter, dark counts, dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorChain {
    /// Fiber-to-detector transmission.
    pub fiber_to_apd: f64,
    /// Spectral filter transmission.
    pub filter_transmission: f64,
    /// Detector quantum efficiency.
    pub apd_qe: f64,
    /// FWHM of the Gaussian timing jitter, ps.
    pub jitter_fwhm_ps: f64,
    /// Dark count rate per detector, counts/s.
    pub dark_rate_hz: f64,
    /// Non-paralyzable dead time per detector, ns.
    pub dead_time_ns: f64,
    /// Fraction of survivors routed to detector A.
    pub splitter_ratio: f64,
}

impl Default for DetectorChain {
    fn default() -> Self {
        DetectorChain {
            fiber_to_apd: 0.83,
            filter_transmission: 0.83,
            apd_qe: 0.60,
            jitter_fwhm_ps: 290.0,
            dark_rate_hz: 100.0,
            dead_time_ns: 50.0,
            splitter_ratio: 0.5,
        }
    }
}

impl DetectorChain {
    /// Lossless, noiseless, instantaneous chain; only the 50:50 split remains.
    pub fn transparent() -> Self {
        DetectorChain {
            fiber_to_apd: 1.0,
            filter_transmission: 1.0,
            apd_qe: 1.0,
            jitter_fwhm_ps: 0.0,
            dark_rate_hz: 0.0,
            dead_time_ns: 0.0,
            splitter_ratio: 0.5,
        }
    }

    /// Probability that a photon reaching the chain produces a click.
    pub fn survival(&self) -> f64 {
        self.fiber_to_apd * self.filter_transmission * self.apd_qe
    }

    pub fn validate(&self) -> Result<(), EmitterError> {
        let unit = [
            ("fiber_to_apd", self.fiber_to_apd),
            ("filter_transmission", self.filter_transmission),
            ("apd_qe", self.apd_qe),
            ("splitter_ratio", self.splitter_ratio),
        ];
        for (name, v) in unit {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(EmitterError::InvalidModel(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        let non_negative = [
            ("jitter_fwhm_ps", self.jitter_fwhm_ps),
            ("dark_rate_hz", self.dark_rate_hz),
            ("dead_time_ns", self.dead_time_ns),
        ];
        for (name, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return Err(EmitterError::InvalidModel(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Generates the collected emission stream for `duration_s` seconds.
///
/// CW mode produces a stationary renewal stream: the gap to the next
/// collected photon is a sum over the intervening excitation cycles of
/// pump wait plus decay delay, with the cycle count geometric in the
/// collection fraction. Pulsed mode fires at the repetition rate; each pulse
/// excites with probability `I/(I+I_sat)` and decays with the exponential
/// lifetime, with an optional second photon per cycle. Gray-state cycles
/// emit with probability `trion_qe`. Returns channel 3 photons, plus a
/// channel 2 sync record for every pulse that put a photon into the fiber.
///
/// A duration of zero is allowed and yields an empty stream.
pub fn simulate_emission(
    model: &EmitterModel,
    excitation: &ExcitationSpec,
    duration_s: f64,
    seed: u64,
) -> Result<TagStream, EmitterError> {
    model.validate()?;
    excitation.validate()?;
    if !duration_s.is_finite() || duration_s < 0.0 {
        return Err(EmitterError::InvalidModel(format!(
            "duration must be non-negative, got {duration_s}"
        )));
    }
    let duration_ps = (duration_s * PS_PER_S).round() as u64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let switches = telegraph_switches(model, duration_ps, &mut rng);
    let mut records = Vec::new();
    if duration_ps > 0 && excitation.intensity > 0.0 && model.collection_fraction > 0.0 {
        match excitation.mode {
            ExcitationMode::Cw => cw_records(
                model,
                excitation,
                duration_ps,
                &switches,
                &mut rng,
                &mut records,
            ),
            ExcitationMode::Pulsed => pulsed_records(
                model,
                excitation,
                duration_ps,
                &switches,
                &mut rng,
                &mut records,
            ),
        }
    }
    records.sort_unstable_by_key(|r| (r.timestamp, r.channel));
    Ok(TagStream::new(4, records).with_duration(duration_ps))
}

/// Telegraph switch times in ps; the emitter starts bright, so an even
/// number of switches before t means bright at t.
fn telegraph_switches(model: &EmitterModel, duration_ps: u64, rng: &mut ChaCha12Rng) -> Vec<u64> {
    let mut switches = Vec::new();
    let mut t = 0.0;
    let mut bright = true;
    loop {
        let rate_hz = if bright {
            model.blink_off_rate_hz
        } else {
            model.blink_on_rate_hz
        };
        if rate_hz <= 0.0 {
            break;
        }
        t += Exp::new(rate_hz).expect("positive rate").sample(rng) * PS_PER_S;
        if t >= duration_ps as f64 {
            break;
        }
        switches.push(t.round() as u64);
        bright = !bright;
    }
    switches
}

/// Whether a cycle at time t emits, given the telegraph trajectory.
fn emits(model: &EmitterModel, switches: &[u64], t: u64, rng: &mut ChaCha12Rng) -> bool {
    let flips = switches.partition_point(|&s| s <= t);
    flips % 2 == 0 || rng.gen::<f64>() < model.trion_qe
}

fn cw_records(
    model: &EmitterModel,
    excitation: &ExcitationSpec,
    duration_ps: u64,
    switches: &[u64],
    rng: &mut ChaCha12Rng,
    records: &mut Vec<TagRecord>,
) {
    let tau_ps = model.lifetime_ns * PS_PER_NS;
    let pump_wait_ps = tau_ps * model.sat_intensity / excitation.intensity;
    let cycles_per_photon =
        Geometric::new(model.collection_fraction).expect("collection fraction in (0, 1]");
    let mut t = 0.0;
    loop {
        // Cycles up to and including the one whose photon gets collected.
        let cycles = (cycles_per_photon.sample(rng) + 1) as f64;
        t += Gamma::new(cycles, pump_wait_ps)
            .expect("valid gamma")
            .sample(rng);
        t += Gamma::new(cycles, tau_ps).expect("valid gamma").sample(rng);
        if t > duration_ps as f64 {
            break;
        }
        let tick = t.round() as u64;
        if tick > duration_ps {
            break;
        }
        if emits(model, switches, tick, rng) {
            records.push(TagRecord::new(CHANNEL_EMISSION, tick));
        }
    }
}

fn pulsed_records(
    model: &EmitterModel,
    excitation: &ExcitationSpec,
    duration_ps: u64,
    switches: &[u64],
    rng: &mut ChaCha12Rng,
    records: &mut Vec<TagRecord>,
) {
    let tau_ps = model.lifetime_ns * PS_PER_NS;
    let period_ps = excitation.period_ps();
    let pulse_count = (duration_ps as f64 / period_ps).floor() as u64 + 1;
    let p_exc = excitation.intensity / (excitation.intensity + model.sat_intensity);
    let c = model.collection_fraction;
    let b = model.biexciton_prob;
    // Joint collection outcome of the (up to two) photons of one cycle.
    let p_both = b * c * c;
    let p_first_only = c * (1.0 - b * c);
    let p_second_only = (1.0 - c) * b * c;
    let p_any = p_both + p_first_only + p_second_only;
    let p_candidate = p_exc * p_any;
    if p_candidate <= 0.0 {
        return;
    }
    let skip = Geometric::new(p_candidate).expect("candidate probability in (0, 1]");
    let delay = Exp::new(1.0 / tau_ps).expect("positive rate");
    let mut pulse = skip.sample(rng);
    while pulse < pulse_count {
        let t_pulse = (pulse as f64 * period_ps).round() as u64;
        if t_pulse > duration_ps {
            break;
        }
        records.push(TagRecord::new(CHANNEL_SYNC, t_pulse));
        let u = rng.gen::<f64>() * p_any;
        let (first, second) = if u < p_both {
            (true, true)
        } else if u < p_both + p_first_only {
            (true, false)
        } else {
            (false, true)
        };
        for collected in [first, second] {
            if !collected {
                continue;
            }
            let tick = t_pulse + delay.sample(rng).round() as u64;
            if tick <= duration_ps && emits(model, switches, tick, rng) {
                records.push(TagRecord::new(CHANNEL_EMISSION, tick));
            }
        }
        pulse += 1 + skip.sample(rng);
    }
}

/// Plays an emission stream through the detector chain.
///
/// Channel 3 photons survive with probability `survival()`, are routed by the
/// splitter, and get Gaussian timing jitter; dark counts are injected
/// uniformly over the stream duration on both detector channels; events
/// landing within the dead time after an accepted click on the same detector
/// are dropped. Sync records pass through untouched (the sync path is
/// electronic), as does anything already on a detector channel.
pub fn apply_detection(
    stream: &TagStream,
    chain: &DetectorChain,
    seed: u64,
) -> Result<TagStream, EmitterError> {
    chain.validate()?;
    stream
        .check_sorted()
        .map_err(|_| EmitterError::UnsortedInput)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let survival = chain.survival();
    let sigma_ps = chain.jitter_fwhm_ps / FWHM_PER_SIGMA;
    let jitter = (sigma_ps > 0.0).then(|| Normal::new(0.0, sigma_ps).expect("positive sigma"));
    let duration_ps = stream.duration_ticks();
    let mut out = Vec::with_capacity(stream.len() / 2);
    for rec in &stream.records {
        if rec.channel != CHANNEL_EMISSION {
            out.push(*rec);
            continue;
        }
        if rng.gen::<f64>() >= survival {
            continue;
        }
        let channel = if rng.gen::<f64>() < chain.splitter_ratio {
            CHANNEL_A
        } else {
            CHANNEL_B
        };
        let mut t = rec.timestamp as f64;
        if let Some(j) = &jitter {
            t += j.sample(&mut rng);
        }
        out.push(TagRecord::new(channel, t.max(0.0).round() as u64));
    }
    if chain.dark_rate_hz > 0.0 && duration_ps > 0 {
        let mean = chain.dark_rate_hz * duration_ps as f64 / PS_PER_S;
        let darks = Poisson::new(mean).expect("positive mean");
        for channel in [CHANNEL_A, CHANNEL_B] {
            let n = darks.sample(&mut rng) as u64;
            for _ in 0..n {
                out.push(TagRecord::new(channel, rng.gen_range(0..=duration_ps)));
            }
        }
    }
    out.sort_unstable_by_key(|r| (r.timestamp, r.channel));
    if chain.dead_time_ns > 0.0 {
        let dead_ps = (chain.dead_time_ns * PS_PER_NS).round() as u64;
        let mut last: [Option<u64>; 2] = [None, None];
        out.retain(|r| {
            let idx = match r.channel {
                CHANNEL_A => 0,
                CHANNEL_B => 1,
                _ => return true,
            };
            if let Some(prev) = last[idx] {
                if r.timestamp < prev + dead_ps {
                    return false;
                }
            }
            last[idx] = Some(r.timestamp);
            true
        });
    }
    let duration = duration_ps.max(out.last().map_or(0, |r| r.timestamp));
    Ok(TagStream::new(4, out).with_duration(duration))
}

/// Expected relative count rate behind a linear analyzer rotated
/// `analyzer_angle_deg` from the emitter's polarization axis: a Malus
/// cosine-squared modulation riding on an unpolarized floor, mixed by
/// `dipole_dop`. The analyzer contrast (max−min)/(max+min) equals the DOP.
pub fn polarized_counts(model: &EmitterModel, analyzer_angle_deg: f64) -> f64 {
    let c = analyzer_angle_deg.to_radians().cos();
    model.dipole_dop * c * c + (1.0 - model.dipole_dop) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn photon_count(stream: &TagStream) -> usize {
        stream.channel_count_of(CHANNEL_EMISSION)
    }

    #[test]
    fn same_seed_reproduces_streams_bit_for_bit() {
        let model = EmitterModel::coupled();
        for exc in [
            ExcitationSpec::cw(50.0),
            ExcitationSpec::pulsed(400.0, 10.0),
        ] {
            let a = simulate_emission(&model, &exc, 0.05, 9).unwrap();
            let b = simulate_emission(&model, &exc, 0.05, 9).unwrap();
            assert_eq!(a.records, b.records);
            assert!(!a.is_empty());
            let c = simulate_emission(&model, &exc, 0.05, 10).unwrap();
            assert_ne!(a.records, c.records);
            let da = apply_detection(&a, &DetectorChain::default(), 3).unwrap();
            let db = apply_detection(&b, &DetectorChain::default(), 3).unwrap();
            assert_eq!(da.records, db.records);
        }
    }

    #[test]
    fn zero_intensity_or_zero_duration_gives_empty_stream() {
        let model = EmitterModel::coupled();
        let dark = simulate_emission(&model, &ExcitationSpec::cw(0.0), 1.0, 1).unwrap();
        assert!(dark.is_empty());
        assert_eq!(dark.duration_seconds(), 1.0);
        let instant = simulate_emission(&model, &ExcitationSpec::cw(100.0), 0.0, 1).unwrap();
        assert!(instant.is_empty());
        let pulsed_dark =
            simulate_emission(&model, &ExcitationSpec::pulsed(0.0, 10.0), 1.0, 1).unwrap();
        assert!(pulsed_dark.is_empty());
    }

    #[test]
    fn cw_rate_follows_the_saturation_law() {
        // 6 W/cm² against a 387 W/cm² saturation intensity: the mean rate
        // must sit at the saturated rate times 6/393 within 3 sigma.
        let model = EmitterModel::coupled().without_blinking();
        let exc = ExcitationSpec::cw(6.0);
        let stream = simulate_emission(&model, &exc, 60.0, 21).unwrap();
        let expected = model.saturated_collected_rate_hz() * 6.0 / 393.0 * 60.0;
        let got = photon_count(&stream) as f64;
        assert!(
            (got - expected).abs() < 3.0 * expected.sqrt(),
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn saturated_pulses_emit_at_most_one_photon_each() {
        let mut model = EmitterModel::coupled().without_blinking();
        model.biexciton_prob = 0.0;
        model.collection_fraction = 1.0;
        let exc = ExcitationSpec::pulsed(1e9, 10.0);
        let stream = simulate_emission(&model, &exc, 0.01, 5).unwrap();
        let photons = stream.channel_timestamps(CHANNEL_EMISSION);
        let period = exc.period_ps();
        let pulses: Vec<u64> = photons
            .iter()
            .map(|&t| (t as f64 / period).floor() as u64)
            .collect();
        for pair in pulses.windows(2) {
            assert!(pair[1] > pair[0], "two photons share pulse {}", pair[0]);
        }
        // Deeply saturated with unit collection: photons per pulse -> 1.
        let n_pulses = (0.01 * PS_PER_S / period).floor() + 1.0;
        assert!(photons.len() as f64 > 0.99 * n_pulses);
    }

    #[test]
    fn two_photon_pulses_appear_at_the_biexciton_rate() {
        let mut model = EmitterModel::coupled().without_blinking();
        model.biexciton_prob = 0.3;
        model.collection_fraction = 0.5;
        let exc = ExcitationSpec::pulsed(1e9, 10.0);
        let stream = simulate_emission(&model, &exc, 0.02, 8).unwrap();
        let period = exc.period_ps();
        let mut singles = 0u64;
        let mut doubles = 0u64;
        let mut last_pulse = u64::MAX;
        for &t in &stream.channel_timestamps(CHANNEL_EMISSION) {
            let pulse = (t as f64 / period).floor() as u64;
            if pulse == last_pulse {
                doubles += 1;
                singles -= 1;
            } else {
                singles += 1;
                last_pulse = pulse;
            }
        }
        // P(2 collected | >=1 collected) = bc² / (c + bc − bc²).
        let expected = 0.3 * 0.25 / (0.5 + 0.15 - 0.075);
        let total = (singles + doubles) as f64;
        let got = doubles as f64 / total;
        let sigma = (expected * (1.0 - expected) / total).sqrt();
        assert!(
            (got - expected).abs() < 3.0 * sigma,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn every_photon_is_preceded_by_its_sync() {
        let model = EmitterModel::coupled();
        let exc = ExcitationSpec::pulsed(200.0, 10.0);
        let stream = simulate_emission(&model, &exc, 0.2, 13).unwrap();
        assert!(stream.channel_count_of(CHANNEL_SYNC) > 0);
        let mut last_sync = None;
        for rec in &stream.records {
            match rec.channel {
                CHANNEL_SYNC => last_sync = Some(rec.timestamp),
                CHANNEL_EMISSION => {
                    let sync = last_sync.expect("photon before any sync");
                    assert!(sync <= rec.timestamp);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn short_pulse_period_warns_against_slow_emitters() {
        let exc = ExcitationSpec::pulsed(100.0, 10.0);
        assert!(exc.lifetime_warning(61.0).is_some());
        assert!(exc.lifetime_warning(2.6).is_none());
        assert!(ExcitationSpec::cw(100.0).lifetime_warning(61.0).is_none());
    }

    #[test]
    fn survival_fraction_matches_the_chain_product() {
        let n = 200_000u64;
        let records: Vec<TagRecord> = (0..n)
            .map(|i| TagRecord::new(CHANNEL_EMISSION, 10_000 * i))
            .collect();
        let stream = TagStream::new(4, records).with_duration(10_000 * n);
        let chain = DetectorChain {
            jitter_fwhm_ps: 0.0,
            dark_rate_hz: 0.0,
            dead_time_ns: 0.0,
            ..DetectorChain::default()
        };
        let detected = apply_detection(&stream, &chain, 2).unwrap();
        assert!(detected.len() <= stream.len());
        let alpha = chain.survival();
        let got = detected.len() as f64;
        let expected = alpha * n as f64;
        let sigma = (n as f64 * alpha * (1.0 - alpha)).sqrt();
        assert!(
            (got - expected).abs() < 3.0 * sigma,
            "got {got}, expected {expected}"
        );
        assert!(detected
            .records
            .iter()
            .all(|r| r.channel == CHANNEL_A || r.channel == CHANNEL_B));
    }

    #[test]
    fn transparent_chain_only_routes() {
        let records: Vec<TagRecord> = (0..1000)
            .map(|i| TagRecord::new(CHANNEL_EMISSION, 77 + 5_000 * i))
            .collect();
        let stream = TagStream::new(4, records.clone()).with_duration(5_000_000);
        let detected = apply_detection(&stream, &DetectorChain::transparent(), 4).unwrap();
        let times: Vec<u64> = detected.records.iter().map(|r| r.timestamp).collect();
        let original: Vec<u64> = records.iter().map(|r| r.timestamp).collect();
        assert_eq!(times, original);
        let on_a = detected.channel_count_of(CHANNEL_A);
        assert!(on_a > 400 && on_a < 600);
    }

    #[test]
    fn dead_time_keeps_the_first_of_a_close_pair() {
        let stream = TagStream::new(
            4,
            vec![
                TagRecord::new(CHANNEL_EMISSION, 1_000),
                TagRecord::new(CHANNEL_EMISSION, 1_001),
                TagRecord::new(CHANNEL_EMISSION, 200_000),
            ],
        )
        .with_duration(1_000_000);
        let chain = DetectorChain {
            fiber_to_apd: 1.0,
            filter_transmission: 1.0,
            apd_qe: 1.0,
            jitter_fwhm_ps: 0.0,
            dark_rate_hz: 0.0,
            dead_time_ns: 50.0,
            splitter_ratio: 1.0,
        };
        let detected = apply_detection(&stream, &chain, 1).unwrap();
        let times = detected.channel_timestamps(CHANNEL_A);
        assert_eq!(times, vec![1_000, 200_000]);
    }

    #[test]
    fn jitter_spreads_timestamps_by_the_stated_width() {
        let spacing = 10_000u64;
        let n = 200_000u64;
        let records: Vec<TagRecord> = (1..=n)
            .map(|i| TagRecord::new(CHANNEL_EMISSION, spacing * i))
            .collect();
        let stream = TagStream::new(4, records.clone()).with_duration(spacing * (n + 1));
        let chain = DetectorChain {
            fiber_to_apd: 1.0,
            filter_transmission: 1.0,
            apd_qe: 1.0,
            dark_rate_hz: 0.0,
            dead_time_ns: 0.0,
            ..DetectorChain::default()
        };
        let detected = apply_detection(&stream, &chain, 6).unwrap();
        assert_eq!(detected.len(), records.len());
        let diffs: Vec<f64> = detected
            .records
            .iter()
            .zip(&records)
            .map(|(d, o)| d.timestamp as f64 - o.timestamp as f64)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        let sigma = chain.jitter_fwhm_ps / FWHM_PER_SIGMA;
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt());
        assert!((var.sqrt() - sigma).abs() < 0.05 * sigma);
    }

    #[test]
    fn dark_counts_fill_an_empty_stream_at_their_rate() {
        let stream = TagStream::new(4, Vec::new()).with_duration(10 * PS_PER_S as u64);
        let chain = DetectorChain {
            dark_rate_hz: 1000.0,
            dead_time_ns: 0.0,
            ..DetectorChain::default()
        };
        let detected = apply_detection(&stream, &chain, 14).unwrap();
        for channel in [CHANNEL_A, CHANNEL_B] {
            let got = detected.channel_count_of(channel) as f64;
            assert!((got - 10_000.0).abs() < 3.0 * 100.0, "got {got}");
        }
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let stream = TagStream::new(
            4,
            vec![
                TagRecord::new(CHANNEL_EMISSION, 500),
                TagRecord::new(CHANNEL_EMISSION, 100),
            ],
        );
        let err = apply_detection(&stream, &DetectorChain::default(), 0).unwrap_err();
        assert!(matches!(err, EmitterError::UnsortedInput));
    }

    #[test]
    fn blinking_duty_cycle_scales_the_output_rate() {
        let model = EmitterModel {
            lifetime_ns: 10.0,
            sat_intensity: 100.0,
            dipole_dop: 0.5,
            biexciton_prob: 0.0,
            blink_on_rate_hz: 1.0,
            blink_off_rate_hz: 0.5,
            trion_qe: 0.0,
            collection_fraction: 5e-5,
        };
        let exc = ExcitationSpec::cw(300.0);
        let stream = simulate_emission(&model, &exc, 600.0, 33).unwrap();
        let bright_rate = model.saturated_collected_rate_hz() * 300.0 / 400.0;
        let duty = photon_count(&stream) as f64 / (bright_rate * 600.0);
        // Telegraph averaging noise dominates: sigma ≈ sqrt(2 f(1−f) τc / T).
        assert!((duty - 2.0 / 3.0).abs() < 0.07, "duty {duty}");
        assert!((model.mean_brightness() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rate_versus_intensity_recovers_the_saturation_parameters() {
        let model = EmitterModel::uncoupled().without_blinking();
        let chain = DetectorChain {
            jitter_fwhm_ps: 0.0,
            dark_rate_hz: 0.0,
            dead_time_ns: 0.0,
            ..DetectorChain::default()
        };
        let mut points = Vec::new();
        for (k, &i) in [10.0, 30.0, 60.0, 120.0, 240.0, 480.0, 960.0, 1920.0]
            .iter()
            .enumerate()
        {
            let stream =
                simulate_emission(&model, &ExcitationSpec::cw(i), 2.0, 100 + k as u64).unwrap();
            let detected = apply_detection(&stream, &chain, 200 + k as u64).unwrap();
            let rate = (detected.channel_count_of(CHANNEL_A) + detected.channel_count_of(CHANNEL_B))
                as f64
                / 2.0;
            points.push((i, rate));
        }
        let fit = crate::inference::fit_saturation(&points).unwrap();
        let n_max = fit.value("n_max").unwrap();
        let i_sat = fit.value("i_sat").unwrap();
        let expected_n_max = model.saturated_collected_rate_hz() * chain.survival();
        assert!((i_sat - 122.0).abs() < 0.1 * 122.0, "i_sat {i_sat}");
        assert!(
            (n_max - expected_n_max).abs() < 0.05 * expected_n_max,
            "n_max {n_max}, expected {expected_n_max}"
        );
    }

    #[test]
    fn analyzer_sweep_has_malus_contrast() {
        let mut model = EmitterModel::coupled();
        model.dipole_dop = 1.0;
        assert!(polarized_counts(&model, 90.0) < 1e-12);
        assert!((polarized_counts(&model, 0.0) - 1.0).abs() < 1e-12);
        model.dipole_dop = 0.0;
        for angle in [0.0, 30.0, 77.0, 160.0] {
            assert!((polarized_counts(&model, angle) - 0.5).abs() < 1e-12);
        }
        model.dipole_dop = 0.6;
        let max = polarized_counts(&model, 0.0);
        let min = polarized_counts(&model, 90.0);
        assert!(((max - min) / (max + min) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn calibration_helpers_are_consistent() {
        let b = biexciton_prob_for_purity(0.20);
        assert!((2.0 * b / (1.0 + b) / (1.0 + b) - 0.20).abs() < 1e-12);
        assert_eq!(biexciton_prob_for_purity(0.0), 0.0);
        let coupled = EmitterModel::coupled();
        let chain = DetectorChain::default();
        let n_max = coupled.saturated_collected_rate_hz() * chain.survival();
        assert!((n_max - 2.50e6).abs() < 1.0);
        let uncoupled = EmitterModel::uncoupled();
        let n_max_u = uncoupled.saturated_collected_rate_hz() * chain.survival();
        assert!((n_max_u - 0.37e6).abs() < 1.0);
        coupled.validate().unwrap();
        uncoupled.validate().unwrap();
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut model = EmitterModel::coupled();
        model.lifetime_ns = 0.0;
        assert!(model.validate().is_err());
        let mut model = EmitterModel::coupled();
        model.trion_qe = 1.5;
        assert!(model.validate().is_err());
        let mut chain = DetectorChain::default();
        chain.splitter_ratio = -0.1;
        assert!(chain.validate().is_err());
        let mut exc = ExcitationSpec::pulsed(10.0, 0.0);
        assert!(exc.validate().is_err());
        exc.rep_rate_mhz = 10.0;
        exc.intensity = -1.0;
        assert!(exc.validate().is_err());
        assert!(
            simulate_emission(&EmitterModel::coupled(), &ExcitationSpec::cw(10.0), -1.0, 0)
                .is_err()
        );
    }
}
