//! Monte Carlo harness: draws frames, applies a policy and accumulates rate
//! and utility statistics.
//!
//! Frames for memoryless policies are evaluated in parallel chunks and
//! folded in frame order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::channel::{achievable_rate, ChannelModel, LinkBudget, NetworkGain};
use crate::error::{Error, Result};
use crate::fairness::WeightVector;
use crate::gs::{gs_select, GsState};
use crate::jtpc::{evaluate_policy, gauss_seidel, JtpcConfig, PowerConstraint};
use crate::qtsl::QtslPlanner;
use crate::ts::{solve_shares, ShareSolver, TimeShareVector};
use crate::utility::{LogUtility, Utility};

const CHUNK: u64 = 4096;

/// Which allocator runs each frame, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Ts,
    Gs { alpha: f64, initial_rate: f64 },
    Jtpc { delta: f64, max_iterations: usize, train_samples: usize, downlink: bool },
    Qtsl { slots: usize, feedback_bits: u32 },
    WeightedTs { weights: Vec<f64> },
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Ts => "ts",
            PolicySpec::Gs { .. } => "gs",
            PolicySpec::Jtpc { .. } => "jtpc",
            PolicySpec::Qtsl { .. } => "qtsl",
            PolicySpec::WeightedTs { .. } => "weighted-ts",
        }
    }
}

/// One simulation run. Average SNR is `p E[g] / N0` with `N0 = 1` and
/// `p = power_budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mean_snr_db: Vec<f64>,
    pub snr_gap_db: f64,
    pub concavity: Vec<f64>,
    /// Constant transmit power for TS-type policies, per-user (uplink) or
    /// total (downlink) average budget for JTPC.
    pub power_budget: f64,
    pub policy: PolicySpec,
    pub frames: u64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// `users` symmetric users.
    pub fn symmetric(users: usize, mean_snr_db: f64, concavity: f64, policy: PolicySpec) -> Self {
        Self {
            mean_snr_db: vec![mean_snr_db; users],
            snr_gap_db: 8.2,
            concavity: vec![concavity; users],
            power_budget: 1.0,
            policy,
            frames: 10_000,
            seed: 1,
        }
    }

    pub fn users(&self) -> usize {
        self.mean_snr_db.len()
    }

    pub fn link(&self) -> Result<LinkBudget> {
        LinkBudget::new(1.0, self.snr_gap_db, self.power_budget)
    }

    pub fn model(&self) -> Result<ChannelModel> {
        ChannelModel::from_mean_snr_db(&self.mean_snr_db, &self.link()?)
    }

    pub fn utilities(&self) -> Result<Vec<LogUtility>> {
        self.concavity.iter().map(|&a| LogUtility::new(a)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.users();
        if n == 0 {
            return Err(Error::invalid("users", "at least one user required"));
        }
        if self.concavity.len() != n {
            return Err(Error::invalid("concavity", format!("expected {n} values, got {}", self.concavity.len())));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frames", "at least one frame required"));
        }
        if !(self.power_budget > 0.0) || !self.power_budget.is_finite() {
            return Err(Error::invalid("power_budget", "must be positive"));
        }
        self.link()?;
        self.model()?;
        self.utilities()?;
        match &self.policy {
            PolicySpec::Gs { alpha, initial_rate } => {
                if !(*initial_rate >= 0.0) || !initial_rate.is_finite() {
                    return Err(Error::invalid("initial_rate", "must be finite and >= 0"));
                }
                GsState::with_initial(n, *initial_rate, *alpha)?;
            }
            PolicySpec::Jtpc { delta, max_iterations, train_samples, .. } => {
                if !(*delta > 0.0) {
                    return Err(Error::invalid("delta", "must be positive"));
                }
                if *max_iterations == 0 {
                    return Err(Error::invalid("max_iterations", "must be at least 1"));
                }
                if *train_samples == 0 {
                    return Err(Error::invalid("train_samples", "must be at least 1"));
                }
            }
            PolicySpec::Qtsl { slots, feedback_bits } => {
                if *slots == 0 {
                    return Err(Error::invalid("slots", "need at least one slot"));
                }
                if *feedback_bits > 16 {
                    return Err(Error::invalid("feedback_bits", "at most 16 bits supported"));
                }
            }
            PolicySpec::WeightedTs { weights } => {
                if weights.len() != n {
                    return Err(Error::invalid("weights", format!("expected {n} weights, got {}", weights.len())));
                }
                WeightVector::normalize(weights.clone())?;
            }
            PolicySpec::Ts => {}
        }
        Ok(())
    }
}

/// Statistics of one run. Rates in bits/s/Hz, utilities in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub frames: u64,
    /// Frame average of `Σ_i U_i(r_i(t))`.
    pub taur: f64,
    pub mean_utility: Vec<f64>,
    pub mean_rate: Vec<f64>,
    /// Population standard deviation of `r_i(t)` over frames.
    pub rate_std: Vec<f64>,
    pub mean_share: Vec<f64>,
    /// Fraction of frames in which the user got any time.
    pub occupancy: Vec<f64>,
    /// Average energy `ρ_i p_i` per frame.
    pub mean_energy: Vec<f64>,
    /// Frames where no user could carry traffic.
    pub degenerate_frames: u64,
    /// Largest `|Σ ρ_i(t) - 1|` seen.
    pub max_simplex_residual: f64,
}

impl SimStats {
    pub fn users(&self) -> usize {
        self.mean_rate.len()
    }

    /// Mean rate averaged over users.
    pub fn avg_mean_rate(&self) -> f64 {
        self.mean_rate.iter().sum::<f64>() / self.users() as f64
    }

    /// Rate standard deviation averaged over users.
    pub fn avg_rate_std(&self) -> f64 {
        self.rate_std.iter().sum::<f64>() / self.users() as f64
    }
}

/// What one frame produced.
#[derive(Debug, Clone)]
struct FrameOutcome {
    shares: Vec<f64>,
    /// Transmit power while scheduled.
    powers: Vec<f64>,
    degenerate: bool,
}

struct Accumulator {
    frames: u64,
    taur_sum: f64,
    utility_sum: Vec<f64>,
    rate_mean: Vec<f64>,
    rate_m2: Vec<f64>,
    share_sum: Vec<f64>,
    occupied: Vec<u64>,
    energy_sum: Vec<f64>,
    degenerate: u64,
    max_residual: f64,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            frames: 0,
            taur_sum: 0.0,
            utility_sum: vec![0.0; n],
            rate_mean: vec![0.0; n],
            rate_m2: vec![0.0; n],
            share_sum: vec![0.0; n],
            occupied: vec![0; n],
            energy_sum: vec![0.0; n],
            degenerate: 0,
            max_residual: 0.0,
        }
    }

    fn push<U: Utility>(&mut self, gains: &NetworkGain, outcome: &FrameOutcome, utilities: &[U], link: &LinkBudget) {
        self.frames += 1;
        let t = self.frames as f64;
        let mut aggregate = 0.0;
        for (i, &g) in gains.as_slice().iter().enumerate() {
            let rho = outcome.shares[i];
            let rate = rho * achievable_rate(g, outcome.powers[i], link);
            let util = utilities[i].utility(rate);
            aggregate += util;
            self.utility_sum[i] += util;
            let delta = rate - self.rate_mean[i];
            self.rate_mean[i] += delta / t;
            self.rate_m2[i] += delta * (rate - self.rate_mean[i]);
            self.share_sum[i] += rho;
            if rho > 0.0 {
                self.occupied[i] += 1;
            }
            self.energy_sum[i] += rho * outcome.powers[i];
        }
        self.taur_sum += aggregate;
        if outcome.degenerate {
            self.degenerate += 1;
        }
        let residual = (outcome.shares.iter().sum::<f64>() - 1.0).abs();
        self.max_residual = self.max_residual.max(residual);
    }

    fn finish(self) -> SimStats {
        let t = self.frames as f64;
        SimStats {
            frames: self.frames,
            taur: self.taur_sum / t,
            mean_utility: self.utility_sum.iter().map(|s| s / t).collect(),
            rate_std: self.rate_m2.iter().map(|m| (m / t).max(0.0).sqrt()).collect(),
            mean_rate: self.rate_mean,
            mean_share: self.share_sum.iter().map(|s| s / t).collect(),
            occupancy: self.occupied.iter().map(|&c| c as f64 / t).collect(),
            mean_energy: self.energy_sum.iter().map(|s| s / t).collect(),
            degenerate_frames: self.degenerate,
            max_simplex_residual: self.max_residual,
        }
    }
}

/// Seed for the JTPC training set, distinct from the evaluation stream.
fn training_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29) ^ 0x7261_7465_616C_6C63
}

fn constant_power(shares: TimeShareVector, degenerate: bool, link: &LinkBudget) -> FrameOutcome {
    let n = shares.len();
    FrameOutcome { shares: shares.into_inner(), powers: vec![link.transmit_power(); n], degenerate }
}

/// Runs frames `0..frames` through a memoryless per-frame policy.
fn run_memoryless<U, F>(config: &ExperimentConfig, utilities: &[U], link: &LinkBudget, policy: F) -> Result<SimStats>
where
    U: Utility,
    F: Fn(&NetworkGain) -> Result<FrameOutcome> + Sync,
{
    let model = config.model()?;
    let mut acc = Accumulator::new(config.users());
    let mut start = 0;
    while start < config.frames {
        let end = (start + CHUNK).min(config.frames);
        let chunk: Vec<(NetworkGain, FrameOutcome)> = (start..end)
            .into_par_iter()
            .map(|t| {
                let gains = model.sample_gains(config.seed, t);
                let outcome = policy(&gains).map_err(|e| e.at_frame(t))?;
                Ok((gains, outcome))
            })
            .collect::<Result<_>>()?;
        for (gains, outcome) in &chunk {
            acc.push(gains, outcome, utilities, link);
        }
        start = end;
    }
    Ok(acc.finish())
}

/// Runs one experiment. Deterministic in `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SimStats> {
    config.validate()?;
    let link = config.link()?;
    let utilities = config.utilities()?;
    let n = config.users();

    match &config.policy {
        PolicySpec::Ts => run_memoryless(config, &utilities, &link, |g| {
            let rates = g.rates(&link);
            match solve_shares(&rates, &utilities, None, ShareSolver::Auto) {
                Ok((s, _)) => Ok(constant_power(s, false, &link)),
                Err(Error::DegenerateFrame) => Ok(constant_power(TimeShareVector::uniform(n), true, &link)),
                Err(e) => Err(e),
            }
        }),
        PolicySpec::WeightedTs { weights } => {
            let w = WeightVector::normalize(weights.clone())?;
            run_memoryless(config, &utilities, &link, |g| {
                let rates = g.rates(&link);
                match solve_shares(&rates, &utilities, Some(w.as_slice()), ShareSolver::Auto) {
                    Ok((s, _)) => Ok(constant_power(s, false, &link)),
                    Err(Error::DegenerateFrame) => Ok(constant_power(TimeShareVector::uniform(n), true, &link)),
                    Err(e) => Err(e),
                }
            })
        }
        PolicySpec::Qtsl { slots, feedback_bits } => {
            let planner = QtslPlanner::new(&config.model()?, &utilities, *feedback_bits, *slots, &link)?;
            run_memoryless(config, &utilities, &link, |g| {
                let grid = planner.greedy(&planner.states(g));
                Ok(FrameOutcome { shares: grid.shares(), powers: vec![link.transmit_power(); n], degenerate: false })
            })
        }
        PolicySpec::Jtpc { delta, max_iterations, train_samples, downlink } => {
            let model = config.model()?;
            let train_seed = training_seed(config.seed);
            let samples: Vec<NetworkGain> =
                (0..*train_samples as u64).into_par_iter().map(|t| model.sample_gains(train_seed, t)).collect();
            let constraint = if *downlink {
                PowerConstraint::Total(config.power_budget)
            } else {
                PowerConstraint::PerUser(vec![config.power_budget; n])
            };
            let jtpc = JtpcConfig { delta: *delta, max_iterations: *max_iterations };
            let (policy, _) = gauss_seidel(&samples, &utilities, constraint, &link, &jtpc)?;
            let multipliers = policy.multipliers;
            run_memoryless(config, &utilities, &link, |g| {
                let (shares, energies) = evaluate_policy(g, &utilities, &multipliers, &link);
                let powers = shares.iter().zip(&energies).map(|(&r, &s)| if r > 0.0 { s / r } else { 0.0 }).collect();
                Ok(FrameOutcome { shares, powers, degenerate: false })
            })
        }
        PolicySpec::Gs { alpha, initial_rate } => {
            let model = config.model()?;
            let mut state = GsState::with_initial(n, *initial_rate, *alpha)?;
            let mut acc = Accumulator::new(n);
            for t in 0..config.frames {
                let gains = model.sample_gains(config.seed, t);
                let rates = gains.rates(&link);
                let i = gs_select(&state, &rates, &utilities);
                state.update_in_place(i, rates[i]);
                let outcome = constant_power(TimeShareVector::indicator(n, i), false, &link);
                acc.push(&gains, &outcome, &utilities, &link);
            }
            Ok(acc.finish())
        }
    }
}

/// Runs every config; independent entries run concurrently. Results keep
/// the input order and failures stay per entry.
pub fn sweep(configs: &[ExperimentConfig]) -> Vec<Result<SimStats>> {
    configs.par_iter().map(run_experiment).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(policy: PolicySpec) -> ExperimentConfig {
        ExperimentConfig { frames: 2000, ..ExperimentConfig::symmetric(3, 10.0, 0.1, policy) }
    }

    #[test]
    fn single_user_ts_serves_every_frame() {
        let cfg = ExperimentConfig { frames: 5000, ..ExperimentConfig::symmetric(1, 5.0, 0.5, PolicySpec::Ts) };
        let stats = run_experiment(&cfg).unwrap();
        assert_eq!(stats.occupancy, vec![1.0]);

        let link = cfg.link().unwrap();
        let model = cfg.model().unwrap();
        let u = LogUtility::new(0.5).unwrap();
        let rates: Vec<f64> = (0..5000).map(|t| model.sample_gains(cfg.seed, t).rates(&link)[0]).collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rates.len() as f64).sqrt();
        let taur = rates.iter().map(|&r| u.utility(r)).sum::<f64>() / rates.len() as f64;
        assert!((stats.mean_rate[0] - mean).abs() < 1e-12);
        assert!((stats.rate_std[0] - std).abs() < 1e-12);
        assert!((stats.taur - taur).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic() {
        for policy in [
            PolicySpec::Ts,
            PolicySpec::Gs { alpha: 0.01, initial_rate: 0.0 },
            PolicySpec::Qtsl { slots: 3, feedback_bits: 2 },
            PolicySpec::WeightedTs { weights: vec![0.2, 0.3, 0.5] },
        ] {
            let cfg = small(policy);
            assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
        }
    }

    #[test]
    fn taur_is_sum_of_user_utilities() {
        let stats = run_experiment(&small(PolicySpec::Ts)).unwrap();
        let sum: f64 = stats.mean_utility.iter().sum();
        assert!((stats.taur - sum).abs() < 1e-12);
        assert!(stats.max_simplex_residual <= 1e-12);
    }

    #[test]
    fn sweep_keeps_order_and_matches_single_runs() {
        let configs: Vec<_> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&a| ExperimentConfig { frames: 500, ..ExperimentConfig::symmetric(4, 10.0, a, PolicySpec::Ts) })
            .collect();
        let rows = sweep(&configs);
        assert_eq!(rows.len(), 3);
        for (cfg, row) in configs.iter().zip(&rows) {
            assert_eq!(row.as_ref().unwrap(), &run_experiment(cfg).unwrap());
        }
    }

    #[test]
    fn symmetric_users_get_equal_mean_rates() {
        let cfg = ExperimentConfig { frames: 20_000, ..ExperimentConfig::symmetric(4, 10.0, 0.1, PolicySpec::Ts) };
        let stats = run_experiment(&cfg).unwrap();
        let grand = stats.avg_mean_rate();
        for (m, s) in stats.mean_rate.iter().zip(&stats.rate_std) {
            let se = s / (cfg.frames as f64).sqrt();
            // differences of two user means: allow 3 standard errors of the difference
            assert!((m - grand).abs() <= 3.0 * se * 2f64.sqrt(), "{m} vs {grand}");
        }
    }

    #[test]
    fn gs_selection_frequencies_are_balanced() {
        let cfg = ExperimentConfig {
            frames: 100_000,
            ..ExperimentConfig::symmetric(4, 10.0, 0.1, PolicySpec::Gs { alpha: 0.01, initial_rate: 0.0 })
        };
        let stats = run_experiment(&cfg).unwrap();
        let p = 0.25;
        let se = (p * (1.0 - p) / cfg.frames as f64).sqrt();
        for f in &stats.occupancy {
            assert!((f - p).abs() <= 3.0 * se, "{f}");
        }
    }

    #[test]
    fn gs_trades_oscillation_for_mean_rate() {
        let ts = run_experiment(&ExperimentConfig { seed: 7, ..ExperimentConfig::symmetric(8, 10.0, 0.1, PolicySpec::Ts) })
            .unwrap();
        let gs = run_experiment(&ExperimentConfig {
            seed: 7,
            ..ExperimentConfig::symmetric(8, 10.0, 0.1, PolicySpec::Gs { alpha: 0.01, initial_rate: 0.0 })
        })
        .unwrap();
        assert!(gs.avg_mean_rate() >= ts.avg_mean_rate(), "{} vs {}", gs.avg_mean_rate(), ts.avg_mean_rate());
        assert!(gs.avg_rate_std() >= ts.avg_rate_std());
    }

    #[test]
    fn single_entry_sweep_equals_run() {
        let cfg = small(PolicySpec::Ts);
        assert_eq!(sweep(std::slice::from_ref(&cfg))[0].as_ref().unwrap(), &run_experiment(&cfg).unwrap());
    }

    #[test]
    fn snr_sweep_has_seven_increasing_rows() {
        let configs: Vec<_> = (0..=6)
            .map(|k| ExperimentConfig { frames: 300, ..ExperimentConfig::symmetric(2, 5.0 * k as f64, 0.1, PolicySpec::Ts) })
            .collect();
        let rows = sweep(&configs);
        assert_eq!(rows.len(), 7);
        assert!(configs.windows(2).all(|w| w[1].mean_snr_db[0] > w[0].mean_snr_db[0]));
        let taur: Vec<f64> = rows.iter().map(|r| r.as_ref().unwrap().taur).collect();
        assert!(taur.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sweep_errors_stay_per_entry() {
        let good = small(PolicySpec::Ts);
        let bad = ExperimentConfig { frames: 0, ..good.clone() };
        let rows = sweep(&[good, bad]);
        assert!(rows[0].is_ok());
        assert!(rows[1].is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(PolicySpec::Ts);
        cfg.frames = 0;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small(PolicySpec::Ts);
        cfg.concavity.pop();
        assert!(run_experiment(&cfg).is_err());
        let cfg = small(PolicySpec::Gs { alpha: 1.5, initial_rate: 0.0 });
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn jtpc_runs_and_roughly_meets_budget() {
        let cfg = ExperimentConfig {
            frames: 2000,
            ..ExperimentConfig::symmetric(
                2,
                10.0,
                0.1,
                PolicySpec::Jtpc { delta: 1e-6, max_iterations: 100, train_samples: 2000, downlink: false },
            )
        };
        let stats = run_experiment(&cfg).unwrap();
        for e in &stats.mean_energy {
            assert!((e - 1.0).abs() < 0.1, "{e}");
        }
        assert!(stats.max_simplex_residual <= 1e-12);
    }
}
