//! Block-fading channel model, achievable rates and feedback quantization.
//!
//! Power gains are exponentially distributed (Rayleigh amplitude) and drawn
//! once per frame. Draws come from a ChaCha stream keyed by `(seed, frame)`,
//! with users consuming the stream in index order, so any single frame can be
//! regenerated without replaying the ones before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise level, SNR gap and the constant transmit power used by the
/// time-sharing policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    noise_power: f64,
    snr_gap_db: f64,
    transmit_power: f64,
}

impl LinkBudget {
    pub fn new(noise_power: f64, snr_gap_db: f64, transmit_power: f64) -> Result<Self> {
        if !(noise_power > 0.0) || !noise_power.is_finite() {
            return Err(Error::invalid("noise_power", format!("must be positive, got {noise_power}")));
        }
        if !(snr_gap_db >= 0.0) || !snr_gap_db.is_finite() {
            return Err(Error::invalid(
                "snr_gap_db",
                format!("linear gap must be at least 1 (>= 0 dB), got {snr_gap_db} dB"),
            ));
        }
        if !(transmit_power >= 0.0) || !transmit_power.is_finite() {
            return Err(Error::invalid("transmit_power", format!("must be >= 0, got {transmit_power}")));
        }
        Ok(Self { noise_power, snr_gap_db, transmit_power })
    }

    /// Unit noise and unit transmit power with the given gap.
    pub fn normalized(snr_gap_db: f64) -> Result<Self> {
        Self::new(1.0, snr_gap_db, 1.0)
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn snr_gap_db(&self) -> f64 {
        self.snr_gap_db
    }

    pub fn snr_gap(&self) -> f64 {
        db_to_linear(self.snr_gap_db)
    }

    pub fn transmit_power(&self) -> f64 {
        self.transmit_power
    }

    /// Effective SNR per unit power for a given gain: `g / (β N0)`.
    pub fn gain_to_noise(&self, gain: f64) -> f64 {
        gain / (self.snr_gap() * self.noise_power)
    }
}

/// Achievable rate in bits/s/Hz: `log2(1 + p g / (β N0))`.
pub fn achievable_rate(gain: f64, power: f64, link: &LinkBudget) -> f64 {
    if gain <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    (power * link.gain_to_noise(gain)).ln_1p() / std::f64::consts::LN_2
}

/// One frame's channel power gains, one entry per user.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGain(Vec<f64>);

impl NetworkGain {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::invalid("gains", "at least one user required"));
        }
        if let Some(g) = gains.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("gains", format!("gains must be finite and >= 0, got {g}")));
        }
        Ok(Self(gains))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Per-user rates at a common transmit power.
    pub fn rates(&self, link: &LinkBudget) -> Vec<f64> {
        self.0.iter().map(|&g| achievable_rate(g, link.transmit_power(), link)).collect()
    }
}

/// Independent Rayleigh fading per user, parameterized by mean power gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    mean_gains: Vec<f64>,
}

impl ChannelModel {
    pub fn new(mean_gains: Vec<f64>) -> Result<Self> {
        if mean_gains.is_empty() {
            return Err(Error::invalid("mean_gains", "at least one user required"));
        }
        if let Some(m) = mean_gains.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::invalid("mean_gains", format!("mean gains must be positive, got {m}")));
        }
        Ok(Self { mean_gains })
    }

    /// Builds a model whose users see the given average SNRs (dB) at the
    /// link's transmit power, i.e. `E[g] = N0 · snr / p`.
    pub fn from_mean_snr_db(mean_snr_db: &[f64], link: &LinkBudget) -> Result<Self> {
        if !(link.transmit_power() > 0.0) {
            return Err(Error::invalid("transmit_power", "average SNR needs a positive transmit power"));
        }
        let gains = mean_snr_db
            .iter()
            .map(|&db| db_to_linear(db) * link.noise_power() / link.transmit_power())
            .collect();
        Self::new(gains)
    }

    pub fn users(&self) -> usize {
        self.mean_gains.len()
    }

    pub fn mean_gains(&self) -> &[f64] {
        &self.mean_gains
    }

    /// Gains for `frame_index` under `seed`. Pure in its arguments.
    pub fn sample_gains(&self, seed: u64, frame_index: u64) -> NetworkGain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(frame_index);
        NetworkGain(
            self.mean_gains
                .iter()
                .map(|&m| {
                    let e: f64 = rng.sample(Exp1);
                    m * e
                })
                .collect(),
        )
    }
}

/// Equal-probability gain thresholds `G_1 = 0 < ... < G_{K+1} = ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    feedback_bits: u32,
    thresholds: Vec<f64>,
}

impl Quantizer {
    /// Thresholds splitting an exponential(mean) gain into `2^bits`
    /// equiprobable bins.
    pub fn equal_probability(mean_gain: f64, feedback_bits: u32) -> Result<Self> {
        if feedback_bits > 16 {
            return Err(Error::invalid("feedback_bits", format!("at most 16 bits supported, got {feedback_bits}")));
        }
        let thresholds = equal_prob_thresholds(mean_gain, 1usize << feedback_bits)?;
        Ok(Self { feedback_bits, thresholds })
    }

    pub fn feedback_bits(&self) -> u32 {
        self.feedback_bits
    }

    /// Number of channel states `K`.
    pub fn states(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Bin `[G_k, G_{k+1})` for the 1-based state `k`.
    pub fn bin(&self, state: usize) -> (f64, f64) {
        (self.thresholds[state - 1], self.thresholds[state])
    }

    /// 1-based state index of `gain`.
    pub fn quantize(&self, gain: f64) -> usize {
        // number of thresholds <= gain, excluding the +inf terminator
        let k = self.thresholds.partition_point(|&t| t <= gain);
        k.clamp(1, self.states())
    }
}

/// Inverse-CDF thresholds `G_k = -m ln(1 - (k-1)/K)`, with `G_{K+1} = ∞`.
pub fn equal_prob_thresholds(mean_gain: f64, states: usize) -> Result<Vec<f64>> {
    if states == 0 || !states.is_power_of_two() {
        return Err(Error::invalid("states", format!("K must be a power of two, got {states}")));
    }
    if !(mean_gain > 0.0) || !mean_gain.is_finite() {
        return Err(Error::invalid("mean_gain", format!("must be positive, got {mean_gain}")));
    }
    let k = states as f64;
    let mut out: Vec<f64> = (0..states)
        .map(|j| if j == 0 { 0.0 } else { -mean_gain * (-(j as f64) / k).ln_1p() })
        .collect();
    out.push(f64::INFINITY);
    Ok(out)
}
