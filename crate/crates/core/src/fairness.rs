//! Time-average utility max-min fairness through weighted time sharing.
//!
//! Each frame is split to maximize `Σ w_i U_i(ρ_i c_i)`. The weights are then
//! adapted until every user's time-average utility is the same, measured on
//! a fixed seeded set of channel draws so the estimate is a deterministic
//! function of the weights.

use rayon::prelude::*;

use crate::channel::{ChannelModel, LinkBudget};
use crate::error::{Error, Result};
use crate::ts::{solve_shares, ShareSolver, TimeShareVector};
use crate::utility::Utility;

/// Nonnegative weights on the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weights", "at least one user required"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights", "weights must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(users: usize) -> Self {
        Self(vec![1.0 / users as f64; users])
    }

    /// Scales positive weights onto the simplex.
    pub fn normalize(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::invalid("weights", "weights need a positive finite sum"));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One weight iterate and the utilities it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessStep {
    pub weights: Vec<f64>,
    pub utilities: Vec<f64>,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    /// Time-average utility per user at the final weights.
    pub utilities: Vec<f64>,
    /// Mean of `utilities`; the common value when equalized.
    pub common: f64,
    /// `max - min` of `utilities`.
    pub spread: f64,
    /// Weight updates performed.
    pub iterations: usize,
    pub history: Vec<FairnessStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessConfig {
    pub tolerance: f64,
    /// Multiplicative step `η` in `w_i ← w_i exp(η (ā - Ê_i))`.
    pub step: f64,
    pub samples: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self { tolerance: 1e-3, step: 0.5, samples: 10_000, seed: 1, max_iterations: 100 }
    }
}

/// Per-frame maximizer of `Σ w_i U_i(ρ_i c_i)`.
pub fn weighted_allocate<U: Utility>(rates: &[f64], utilities: &[U], weights: &WeightVector) -> Result<TimeShareVector> {
    solve_shares(rates, utilities, Some(weights.as_slice()), ShareSolver::Auto).map(|(s, _)| s)
}

/// Constant-power rates for `count` frames drawn from `model`.
pub fn rate_samples(model: &ChannelModel, link: &LinkBudget, seed: u64, count: usize) -> Vec<Vec<f64>> {
    (0..count as u64).into_par_iter().map(|t| model.sample_gains(seed, t).rates(link)).collect()
}

/// Time-average utility per user under weighted allocation on `samples`.
pub fn expected_utilities<U: Utility>(samples: &[Vec<f64>], utilities: &[U], weights: &WeightVector) -> Result<Vec<f64>> {
    let n = utilities.len();
    let per_frame: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|rates| {
            let shares = match weighted_allocate(rates, utilities, weights) {
                Ok(s) => s,
                Err(Error::DegenerateFrame) => TimeShareVector::uniform(n),
                Err(e) => return Err(e),
            };
            Ok(shares.as_slice().iter().zip(rates).zip(utilities).map(|((r, c), u)| u.utility(r * c)).collect())
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; n];
    for row in &per_frame {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(sums.into_iter().map(|s| s / samples.len() as f64).collect())
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Adapts weights until the time-average utilities agree within
/// `config.tolerance`.
pub fn adapt_weights<U: Utility>(
    model: &ChannelModel,
    utilities: &[U],
    link: &LinkBudget,
    config: &FairnessConfig,
) -> Result<(WeightVector, FairnessReport)> {
    let n = model.users();
    if utilities.len() != n {
        return Err(Error::invalid("utilities", format!("expected {n} utilities, got {}", utilities.len())));
    }
    if !(config.tolerance > 0.0) {
        return Err(Error::invalid("tolerance", "must be positive"));
    }
    if !(config.step > 0.0) || config.samples == 0 {
        return Err(Error::invalid("step", "need a positive step and at least one sample"));
    }
    let samples = rate_samples(model, link, config.seed, config.samples);
    adapt_weights_on(&samples, utilities, config)
}

/// [`adapt_weights`] on a precomputed rate sample set.
pub fn adapt_weights_on<U: Utility>(
    samples: &[Vec<f64>],
    utilities: &[U],
    config: &FairnessConfig,
) -> Result<(WeightVector, FairnessReport)> {
    let n = utilities.len();
    let mut weights = WeightVector::uniform(n);
    let mut history = Vec::new();
    loop {
        let est = expected_utilities(samples, utilities, &weights)?;
        let spread_now = spread(&est);
        history.push(FairnessStep { weights: weights.0.clone(), utilities: est.clone(), spread: spread_now });
        let iterations = history.len() - 1;
        let common = est.iter().sum::<f64>() / n as f64;
        if spread_now <= config.tolerance {
            let report = FairnessReport { utilities: est, common, spread: spread_now, iterations, history };
            return Ok((weights, report));
        }
        if iterations >= config.max_iterations {
            let report = FairnessReport { utilities: est, common, spread: spread_now, iterations, history };
            return Err(Error::FairnessCap { spread: spread_now, report: Box::new(report) });
        }
        let next: Vec<f64> =
            weights.0.iter().zip(&est).map(|(w, e)| w * (config.step * (common - e)).exp()).collect();
        weights = WeightVector::normalize(next)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ts::allocate_ts;
    use crate::utility::LogUtility;
    use proptest::prelude::*;

    fn logs(a: &[f64]) -> Vec<LogUtility> {
        a.iter().map(|&a| LogUtility::new(a).unwrap()).collect()
    }

    #[test]
    fn uniform_weights_match_plain_allocation() {
        let u = logs(&[0.1, 0.4, 2.0]);
        let rates = [1.0, 2.5, 0.3];
        let (plain, _) = allocate_ts(&rates, &u).unwrap();
        let weighted = weighted_allocate(&rates, &u, &WeightVector::uniform(3)).unwrap();
        for (a, b) in plain.as_slice().iter().zip(weighted.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weight_user_gets_nothing() {
        let u = logs(&[0.1, 0.1]);
        let w = WeightVector::new(vec![1.0, 0.0]).unwrap();
        let s = weighted_allocate(&[0.5, 9.0], &u, &w).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 0.0]);
        assert!(matches!(weighted_allocate(&[0.0, 9.0], &u, &w), Err(Error::DegenerateFrame)));
    }

    #[test]
    fn weight_vector_must_be_on_simplex() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn symmetric_users_stay_uniform() {
        let link = LinkBudget::new(1.0, 8.2, 1.0).unwrap();
        let model = ChannelModel::new(vec![10.0, 10.0]).unwrap();
        // common random numbers make the users exchangeable only in law, so
        // allow the sampling gap as tolerance
        let cfg = FairnessConfig { samples: 20_000, tolerance: 0.02, ..Default::default() };
        let (w, report) = adapt_weights(&model, &logs(&[0.1, 0.1]), &link, &cfg).unwrap();
        assert!(report.iterations <= 1);
        assert!((w.as_slice()[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn single_user_weight_is_one() {
        let link = LinkBudget::new(1.0, 8.2, 1.0).unwrap();
        let model = ChannelModel::new(vec![3.0]).unwrap();
        let (w, report) = adapt_weights(&model, &logs(&[0.1]), &link, &FairnessConfig::default()).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(report.spread, 0.0);
    }

    #[test]
    fn utility_rises_with_own_weight() {
        let link = LinkBudget::new(1.0, 8.2, 1.0).unwrap();
        let model = ChannelModel::new(vec![1.0, 10.0]).unwrap();
        let samples = rate_samples(&model, &link, 3, 2000);
        let u = logs(&[0.1, 0.1]);
        let mut prev = f64::NEG_INFINITY;
        for k in 1..20 {
            let w1 = k as f64 / 20.0;
            let e = expected_utilities(&samples, &u, &WeightVector::new(vec![w1, 1.0 - w1]).unwrap()).unwrap();
            assert!(e[0] > prev);
            prev = e[0];
        }
    }

    proptest! {
        #[test]
        fn two_user_weighted_matches_grid(w1 in 0.01f64..0.99, c1 in 0.01f64..8.0, c2 in 0.01f64..8.0, a1 in 0.05f64..5.0, a2 in 0.05f64..5.0) {
            let u = logs(&[a1, a2]);
            let w = WeightVector::normalize(vec![w1, 1.0 - w1]).unwrap();
            let s = weighted_allocate(&[c1, c2], &u, &w).unwrap();
            let obj = |r: f64| w.as_slice()[0] * u[0].utility(r * c1) + w.as_slice()[1] * u[1].utility((1.0 - r) * c2);
            let coarse = (0..=1000).map(|k| k as f64 * 1e-3).max_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
            let fine = (-1000..=1000)
                .map(|k| (coarse + k as f64 * 1e-6).clamp(0.0, 1.0))
                .max_by(|a, b| obj(*a).total_cmp(&obj(*b)))
                .unwrap();
            prop_assert!((s.as_slice()[0] - fine).abs() <= 1e-6 + 1e-9, "{} vs {}", s.as_slice()[0], fine);
        }
    }
}
