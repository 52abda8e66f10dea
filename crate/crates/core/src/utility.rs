//! Concave utilities of instantaneous rate and the marginals the allocators
//! need.
//!
//! A [`Utility`] only has to describe `U(r)` and its first two derivatives
//! plus the inverse of `U'`. Everything else (marginal utility of time
//! share, marginal utility of energy under the `s = ρ p` substitution, and
//! their inverses) is derived here once for all families.

use std::f64::consts::LN_2;
use std::fmt;

use crate::channel::LinkBudget;
use crate::error::{Error, Result};

/// Increasing, differentiable, strictly concave utility of rate.
pub trait Utility: fmt::Debug + Send + Sync {
    /// `U(r)` for `r >= 0`, with `U(0) = 0`.
    fn utility(&self, rate: f64) -> f64;

    /// `U'(r)`.
    fn derivative(&self, rate: f64) -> f64;

    /// `U''(r)`, strictly negative.
    fn second_derivative(&self, rate: f64) -> f64;

    /// The `r` with `U'(r) = slope`. May be negative when `slope > U'(0)`.
    fn inverse_derivative(&self, slope: f64) -> f64;

    /// When the share inverse has the form `[1/λ - b]^+`, the offset `b` for
    /// a user with rate `c`. Enables the closed-form active-set solve.
    fn water_level_offset(&self, _rate: f64) -> Option<f64> {
        None
    }

    /// Checked `U(r)`.
    fn value(&self, rate: f64) -> Result<f64> {
        if !(rate >= 0.0) {
            return Err(Error::Domain(format!("utility of negative rate {rate}")));
        }
        Ok(self.utility(rate))
    }

    /// `∂U(ρc)/∂ρ = c U'(ρc)`.
    fn marginal_share(&self, rate: f64, share: f64) -> f64 {
        if rate <= 0.0 {
            return 0.0;
        }
        rate * self.derivative(share * rate)
    }

    /// The share whose marginal equals `lambda`, clamped at zero.
    fn inverse_marginal_share(&self, rate: f64, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("multiplier must be positive, got {lambda}")));
        }
        if rate <= 0.0 {
            return Ok(0.0);
        }
        Ok((self.inverse_derivative(lambda / rate) / rate).max(0.0))
    }

    /// Utility of the rate delivered by energy `s` over share `ρ` at `gain`.
    fn energy_value(&self, share: f64, energy: f64, gain: f64, link: &LinkBudget) -> f64 {
        self.utility(energy_rate(share, energy, link.gain_to_noise(gain)))
    }

    /// `∂U/∂s` at `(ρ, s)`.
    fn marginal_energy(&self, share: f64, energy: f64, gain: f64, link: &LinkBudget) -> Result<f64> {
        if !(share >= 0.0) || !(energy >= 0.0) {
            return Err(Error::Domain(format!("share {share} and energy {energy} must be >= 0")));
        }
        if share == 0.0 && energy > 0.0 {
            return Err(Error::Domain("energy spent over zero time share".into()));
        }
        let k = link.gain_to_noise(gain);
        if k <= 0.0 {
            return Ok(0.0);
        }
        if share == 0.0 {
            return Ok(self.derivative(0.0) * k / LN_2);
        }
        Ok(d_energy(self, share, energy, k))
    }

    /// `∂U/∂ρ` at `(ρ, s)`, holding energy fixed.
    fn marginal_share_at_energy(&self, share: f64, energy: f64, gain: f64, link: &LinkBudget) -> f64 {
        let k = link.gain_to_noise(gain);
        if share <= 0.0 {
            return if energy > 0.0 && k > 0.0 { f64::INFINITY } else { 0.0 };
        }
        d_share(self, share, energy, k)
    }
}

/// `U(r) = ln(1 + r/A)` with concavity indicator `A > 0`.
///
/// Small `A` penalizes rate oscillation strongly; large `A` approaches a
/// linear (throughput-maximizing) objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogUtility {
    concavity: f64,
}

impl LogUtility {
    pub fn new(concavity: f64) -> Result<Self> {
        if !(concavity > 0.0) || !concavity.is_finite() {
            return Err(Error::invalid("concavity", format!("must be positive, got {concavity}")));
        }
        Ok(Self { concavity })
    }

    pub fn concavity(&self) -> f64 {
        self.concavity
    }
}

impl Utility for LogUtility {
    fn utility(&self, rate: f64) -> f64 {
        (rate / self.concavity).ln_1p()
    }

    fn derivative(&self, rate: f64) -> f64 {
        1.0 / (self.concavity + rate)
    }

    fn second_derivative(&self, rate: f64) -> f64 {
        let d = self.concavity + rate;
        -1.0 / (d * d)
    }

    fn inverse_derivative(&self, slope: f64) -> f64 {
        1.0 / slope - self.concavity
    }

    fn water_level_offset(&self, rate: f64) -> Option<f64> {
        (rate > 0.0).then(|| self.concavity / rate)
    }
}

/// `(U(x + h) - U(x - h)) / 2h`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

// Energy-parameterized helpers. `k = g / (β N0)` is the SNR per unit power,
// `x = s k / ρ` is the SNR seen while transmitting.

/// `ρ log2(1 + s k / ρ)`, zero when `ρ = 0`.
pub(crate) fn energy_rate(share: f64, energy: f64, k: f64) -> f64 {
    if share <= 0.0 || energy <= 0.0 || k <= 0.0 {
        return 0.0;
    }
    share * (energy * k / share).ln_1p() / LN_2
}

/// `∂r/∂ρ = log2(1+x) - x/((1+x) ln 2)`, evaluated without cancellation for
/// small `x`.
pub(crate) fn share_rate_slope(x: f64) -> f64 {
    if x < 1e-3 {
        // sum_{n>=2} (-1)^n (n-1)/n x^n
        let mut term = x * x;
        let mut acc = 0.0;
        for n in 2..10 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * (n as f64 - 1.0) / n as f64 * term;
            term *= x;
        }
        acc / LN_2
    } else {
        (x.ln_1p() - x / (1.0 + x)) / LN_2
    }
}

/// `∂U/∂s` for `ρ > 0`.
pub(crate) fn d_energy<U: Utility + ?Sized>(u: &U, share: f64, energy: f64, k: f64) -> f64 {
    let x = energy * k / share;
    u.derivative(energy_rate(share, energy, k)) * k / ((1.0 + x) * LN_2)
}

/// `∂U/∂ρ` at fixed energy, for `ρ > 0`.
pub(crate) fn d_share<U: Utility + ?Sized>(u: &U, share: f64, energy: f64, k: f64) -> f64 {
    if energy <= 0.0 || k <= 0.0 {
        return 0.0;
    }
    let x = energy * k / share;
    u.derivative(energy_rate(share, energy, k)) * share_rate_slope(x)
}
