//! Joint time sharing and power control.
//!
//! The expectation over channel states is replaced by an average over a
//! fixed set of gain samples. With energy `s = ρ p` as the power variable
//! the per-sample utility `U(ρ log2(1 + s k / ρ))` is jointly concave, and
//! the problem is solved by nonlinear Gauss-Seidel: alternately re-solve
//! every sample's time split with energies fixed, then re-solve energies
//! with the splits fixed, until the objective stops improving by `Δ`.
//!
//! Energy steps use positive multipliers `μ`: a (sample, user) pair receives
//! the energy where `∂U/∂s = μ`, or nothing if `∂U/∂s` at zero energy is
//! already below `μ`. Uplink has one `μ_i` per user; downlink a single `μ`
//! for the summed budget.

use rayon::prelude::*;

use crate::channel::{achievable_rate, LinkBudget, NetworkGain};
use crate::error::{Error, Result};
use crate::roots::illinois;
use crate::ts::{allocate_ts, TimeShareVector};
use crate::utility::{d_energy, d_share, energy_rate, share_rate_slope, Utility};

const MAX_ROOT_ITERS: usize = 200;

/// Average power budgets.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerConstraint {
    /// Uplink: `avg_n s_{n,i} = p̄_i` for every user.
    PerUser(Vec<f64>),
    /// Downlink: `avg_n Σ_i s_{n,i} = p̄`.
    Total(f64),
}

impl PowerConstraint {
    fn validate(&self, users: usize) -> Result<()> {
        match self {
            PowerConstraint::PerUser(b) => {
                if b.len() != users {
                    return Err(Error::invalid("budgets", format!("expected {users} budgets, got {}", b.len())));
                }
                if b.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
                    return Err(Error::invalid("budgets", "power budgets must be positive"));
                }
            }
            PowerConstraint::Total(p) => {
                if !(*p > 0.0) || !p.is_finite() {
                    return Err(Error::invalid("budget", format!("total power budget must be positive, got {p}")));
                }
            }
        }
        Ok(())
    }

    /// Energies of the first Gauss-Seidel iterate: power `N p̄` over a
    /// `1/N` share.
    fn initial_energy(&self, user: usize, users: usize) -> f64 {
        match self {
            PowerConstraint::PerUser(b) => b[user],
            PowerConstraint::Total(p) => p / users as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JtpcConfig {
    /// Stop when the objective improves by less than this.
    pub delta: f64,
    pub max_iterations: usize,
}

impl Default for JtpcConfig {
    fn default() -> Self {
        Self { delta: 1e-6, max_iterations: 100 }
    }
}

/// Objective values `I^(0), I^(1), ...` of the Gauss-Seidel run.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussSeidelTrace {
    pub objective: Vec<f64>,
    pub delta: f64,
    pub converged: bool,
}

impl GaussSeidelTrace {
    pub fn iterations(&self) -> usize {
        self.objective.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(f64::NAN)
    }

    /// Largest decrease between consecutive iterates (zero when monotone).
    pub fn max_decrease(&self) -> f64 {
        self.objective.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// Solved shares and energies over the sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPolicy {
    pub samples: Vec<NetworkGain>,
    /// `shares[n][i]`.
    pub shares: Vec<Vec<f64>>,
    /// `energies[n][i] = ρ p`.
    pub energies: Vec<Vec<f64>>,
    pub constraint: PowerConstraint,
    /// Energy multiplier per user (repeated for a total budget).
    pub multipliers: Vec<f64>,
}

impl PowerPolicy {
    pub fn users(&self) -> usize {
        self.shares.first().map_or(0, Vec::len)
    }

    /// Transmit powers `s / ρ`, reported as zero where `ρ = 0`.
    pub fn powers(&self) -> Vec<Vec<f64>> {
        self.shares
            .iter()
            .zip(&self.energies)
            .map(|(rho, s)| rho.iter().zip(s).map(|(&r, &e)| if r > 0.0 { e / r } else { 0.0 }).collect())
            .collect()
    }

    pub fn average_energy(&self, user: usize) -> f64 {
        self.energies.iter().map(|s| s[user]).sum::<f64>() / self.energies.len() as f64
    }

    /// Largest relative violation of the power budgets.
    pub fn budget_residual(&self) -> f64 {
        match &self.constraint {
            PowerConstraint::PerUser(b) => b
                .iter()
                .enumerate()
                .map(|(i, p)| (self.average_energy(i) - p).abs() / p)
                .fold(0.0, f64::max),
            PowerConstraint::Total(p) => {
                let used: f64 = (0..self.users()).map(|i| self.average_energy(i)).sum();
                (used - p).abs() / p
            }
        }
    }
}

/// Gains converted to SNR per unit energy, `k = g / (β N0)`, per sample.
fn snr_per_energy(samples: &[NetworkGain], link: &LinkBudget) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|g| g.as_slice().iter().map(|&g| link.gain_to_noise(g)).collect())
        .collect()
}

fn check_inputs<U: Utility>(samples: &[NetworkGain], utilities: &[U]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::invalid("samples", "at least one sample required"))?;
    let n = first.len();
    if samples.iter().any(|g| g.len() != n) {
        return Err(Error::invalid("samples", "all samples must have the same user count"));
    }
    if utilities.len() != n {
        return Err(Error::invalid("utilities", format!("expected {n} utilities, got {}", utilities.len())));
    }
    Ok(n)
}

/// Sample-average aggregate utility `(1/M) Σ_n Σ_i U_i(ρ, s, g)`.
pub fn sample_objective<U: Utility>(
    samples: &[NetworkGain],
    shares: &[Vec<f64>],
    energies: &[Vec<f64>],
    utilities: &[U],
    link: &LinkBudget,
) -> f64 {
    let total: f64 = samples
        .iter()
        .zip(shares.iter().zip(energies))
        .map(|(g, (rho, s))| {
            g.as_slice()
                .iter()
                .enumerate()
                .map(|(i, &g)| utilities[i].utility(energy_rate(rho[i], s[i], link.gain_to_noise(g))))
                .sum::<f64>()
        })
        .sum();
    total / samples.len() as f64
}

/// Sample-average utility of optimal time sharing at constant power `p̄_i`
/// (uplink) or `p̄` (downlink). Feasible for both constraint kinds.
pub fn constant_power_ts_objective<U: Utility>(
    samples: &[NetworkGain],
    utilities: &[U],
    constraint: &PowerConstraint,
    link: &LinkBudget,
) -> Result<f64> {
    let n = check_inputs(samples, utilities)?;
    constraint.validate(n)?;
    let power = |i: usize| match constraint {
        PowerConstraint::PerUser(b) => b[i],
        PowerConstraint::Total(p) => *p,
    };
    let mut total = 0.0;
    for g in samples {
        let rates: Vec<f64> = g.as_slice().iter().enumerate().map(|(i, &g)| achievable_rate(g, power(i), link)).collect();
        let shares = match allocate_ts(&rates, utilities) {
            Ok((s, _)) => s,
            Err(Error::DegenerateFrame) => TimeShareVector::uniform(n),
            Err(e) => return Err(e),
        };
        total += crate::ts::taur_contribution(&shares, &rates, utilities);
    }
    Ok(total / samples.len() as f64)
}

// ---------------------------------------------------------------------------
// Share step
// ---------------------------------------------------------------------------

/// Share `ρ ∈ [0, 1]` with `f(ρ) = λ` for a marginal `f` decreasing on
/// `(0, 1]` that diverges (or exceeds `λ`) near zero.
fn invert_share_marginal(f: impl Fn(f64) -> f64, lambda: f64) -> f64 {
    if f(1.0) >= lambda {
        return 1.0;
    }
    let mut lo = 1.0f64;
    while f(lo) <= lambda {
        lo /= 16.0;
        if lo < 1e-300 {
            return 0.0;
        }
    }
    let (a, b) = (lo.ln(), (lo * 16.0).min(1.0).ln());
    let t = illinois(|t| f(t.exp()) - lambda, a, b, 1e-15, 1e-15 * lambda, MAX_ROOT_ITERS).unwrap_or(0.5 * (a + b));
    t.exp()
}

/// Optimal split of one sample with energies fixed.
fn share_step_sample<U: Utility>(k: &[f64], energies: &[f64], utilities: &[U]) -> Result<Vec<f64>> {
    let n = k.len();
    let live: Vec<usize> = (0..n).filter(|&i| energies[i] > 0.0 && k[i] > 0.0).collect();
    match live.len() {
        0 => return Ok(vec![1.0 / n as f64; n]),
        1 => {
            let mut out = vec![0.0; n];
            out[live[0]] = 1.0;
            return Ok(out);
        }
        _ => {}
    }
    let marginal = |i: usize, rho: f64| d_share(&utilities[i], rho, energies[i], k[i]);
    let shares_at = |lambda: f64| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &i in &live {
            out[i] = invert_share_marginal(|rho| marginal(i, rho), lambda);
        }
        out
    };

    let m = live.len() as f64;
    let hi = live.iter().map(|&i| marginal(i, 1.0 / m)).fold(f64::NEG_INFINITY, f64::max);
    let lo = live.iter().map(|&i| marginal(i, 1.0)).fold(f64::INFINITY, f64::min);
    let shares = if hi > lo {
        let t = illinois(
            |t| shares_at(t.exp()).iter().sum::<f64>() - 1.0,
            lo.ln(),
            hi.ln(),
            1e-16,
            1e-14,
            MAX_ROOT_ITERS,
        )
        .ok_or(Error::NoConvergence { what: "share multiplier", iterations: MAX_ROOT_ITERS })?;
        shares_at(t.exp())
    } else {
        let mut out = vec![0.0; n];
        for &i in &live {
            out[i] = 1.0 / m;
        }
        out
    };
    Ok(TimeShareVector::normalized(shares).into_inner())
}

/// Gauss-Seidel share step: per sample, the time split maximizing the
/// aggregate utility for the given energies.
pub fn update_shares<U: Utility>(
    samples: &[NetworkGain],
    energies: &[Vec<f64>],
    utilities: &[U],
    link: &LinkBudget,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(samples, utilities)?;
    let k = snr_per_energy(samples, link);
    k.par_iter().zip(energies).map(|(k, s)| share_step_sample(k, s, utilities)).collect()
}

// ---------------------------------------------------------------------------
// Energy step
// ---------------------------------------------------------------------------

/// Energy with `∂U/∂s = μ` at share `ρ`, zero if the marginal at zero
/// energy is already at most `μ`.
fn energy_for_multiplier<U: Utility + ?Sized>(u: &U, share: f64, k: f64, mu: f64) -> f64 {
    if share <= 0.0 || k <= 0.0 {
        return 0.0;
    }
    let at_zero = u.derivative(0.0) * k / std::f64::consts::LN_2;
    if at_zero <= mu {
        return 0.0;
    }
    let f = |s: f64| d_energy(u, share, s, k) - mu;
    let mut hi = share / k;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::MAX;
        }
    }
    illinois(f, 0.0, hi, 1e-15, 1e-15 * mu, MAX_ROOT_ITERS).unwrap_or(hi)
}

/// One multiplier group: the (sample, user) cells sharing a budget.
struct EnergyGroup {
    users: Vec<usize>,
    budget_sum: f64,
    label: String,
}

fn solve_energy_group<U: Utility>(
    group: &EnergyGroup,
    k: &[Vec<f64>],
    shares: &[Vec<f64>],
    utilities: &[U],
    energies: &mut [Vec<f64>],
) -> Result<f64> {
    let cells: Vec<(usize, usize)> = (0..k.len())
        .flat_map(|n| group.users.iter().map(move |&i| (n, i)))
        .filter(|&(n, i)| shares[n][i] > 0.0 && k[n][i] > 0.0)
        .collect();
    let at_zero = |(n, i): (usize, usize)| utilities[i].derivative(0.0) * k[n][i] / std::f64::consts::LN_2;
    let Some(&top) = cells.iter().max_by(|a, b| at_zero(**a).total_cmp(&at_zero(**b))) else {
        return Err(Error::DegenerateBudget(group.label.clone()));
    };

    let solve_at = |mu: f64| -> Vec<f64> {
        cells.par_iter().map(|&(n, i)| energy_for_multiplier(&utilities[i], shares[n][i], k[n][i], mu)).collect()
    };
    let budget = group.budget_sum;
    let hi = at_zero(top);
    let excess = |t: f64| solve_at(t.exp()).iter().sum::<f64>() - budget;
    // at this multiplier the top cell alone spends the budget; step down
    // until rounding no longer hides the overshoot
    let mut lo = d_energy(&utilities[top.1], shares[top.0][top.1], budget, k[top.0][top.1]).ln();
    for _ in 0..64 {
        if excess(lo) >= 0.0 {
            break;
        }
        lo -= std::f64::consts::LN_2;
    }
    let t = illinois(
        excess,
        lo,
        hi.ln(),
        1e-16,
        1e-13 * budget,
        MAX_ROOT_ITERS,
    )
    .ok_or(Error::NoConvergence { what: "energy multiplier", iterations: MAX_ROOT_ITERS })?;
    let mu = t.exp();
    let solved = solve_at(mu);

    // exact budget: rescaling perturbs the optimum only at second order
    let used: f64 = solved.iter().sum();
    let scale = budget / used;
    for &i in &group.users {
        for row in energies.iter_mut() {
            row[i] = 0.0;
        }
    }
    for (&(n, i), s) in cells.iter().zip(solved) {
        energies[n][i] = s * scale;
    }
    Ok(mu)
}

/// Gauss-Seidel energy step: energies maximizing the sample-average utility
/// for the given shares, meeting the budgets exactly. Returns the energies
/// and the per-user multipliers.
pub fn update_energies<U: Utility>(
    samples: &[NetworkGain],
    shares: &[Vec<f64>],
    utilities: &[U],
    constraint: &PowerConstraint,
    link: &LinkBudget,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = check_inputs(samples, utilities)?;
    constraint.validate(n)?;
    let m = samples.len() as f64;
    let k = snr_per_energy(samples, link);
    let mut energies = vec![vec![0.0; n]; samples.len()];
    let mut multipliers = vec![0.0; n];
    match constraint {
        PowerConstraint::PerUser(b) => {
            for (i, &p) in b.iter().enumerate() {
                let group = EnergyGroup { users: vec![i], budget_sum: p * m, label: format!("user {}", i + 1) };
                multipliers[i] = solve_energy_group(&group, &k, shares, utilities, &mut energies)?;
            }
        }
        PowerConstraint::Total(p) => {
            let group = EnergyGroup { users: (0..n).collect(), budget_sum: p * m, label: "total".into() };
            let mu = solve_energy_group(&group, &k, shares, utilities, &mut energies)?;
            multipliers.fill(mu);
        }
    }
    Ok((energies, multipliers))
}

// ---------------------------------------------------------------------------
// Gauss-Seidel driver
// ---------------------------------------------------------------------------

/// Uplink: per-user average power budgets.
pub fn jtpc_solve<U: Utility>(
    samples: &[NetworkGain],
    utilities: &[U],
    budgets: &[f64],
    link: &LinkBudget,
    config: &JtpcConfig,
) -> Result<(PowerPolicy, GaussSeidelTrace)> {
    gauss_seidel(samples, utilities, PowerConstraint::PerUser(budgets.to_vec()), link, config)
}

/// Downlink: a single budget on the summed average power.
pub fn jtpc_solve_downlink<U: Utility>(
    samples: &[NetworkGain],
    utilities: &[U],
    total_budget: f64,
    link: &LinkBudget,
    config: &JtpcConfig,
) -> Result<(PowerPolicy, GaussSeidelTrace)> {
    gauss_seidel(samples, utilities, PowerConstraint::Total(total_budget), link, config)
}

pub fn gauss_seidel<U: Utility>(
    samples: &[NetworkGain],
    utilities: &[U],
    constraint: PowerConstraint,
    link: &LinkBudget,
    config: &JtpcConfig,
) -> Result<(PowerPolicy, GaussSeidelTrace)> {
    let n = check_inputs(samples, utilities)?;
    constraint.validate(n)?;
    if !(config.delta > 0.0) || config.max_iterations == 0 {
        return Err(Error::invalid("delta", "need delta > 0 and at least one iteration"));
    }

    let mut energies: Vec<Vec<f64>> =
        samples.iter().map(|_| (0..n).map(|i| constraint.initial_energy(i, n)).collect()).collect();
    let mut multipliers = vec![0.0; n];
    let mut trace = GaussSeidelTrace { objective: Vec::new(), delta: config.delta, converged: false };

    loop {
        let shares = update_shares(samples, &energies, utilities, link)?;
        let objective = sample_objective(samples, &shares, &energies, utilities, link);
        let improved = trace.objective.last().map_or(f64::INFINITY, |prev| objective - prev);
        trace.objective.push(objective);
        if improved < config.delta {
            trace.converged = true;
            let policy = PowerPolicy { samples: samples.to_vec(), shares, energies, constraint, multipliers };
            return Ok((policy, trace));
        }
        if trace.objective.len() >= config.max_iterations {
            return Err(Error::GaussSeidel(Box::new(trace)));
        }
        let (next, mu) = update_energies(samples, &shares, utilities, &constraint, link)?;
        energies = next;
        multipliers = mu;
    }
}

// ---------------------------------------------------------------------------
// Policy evaluation with fixed multipliers
// ---------------------------------------------------------------------------

/// Shares and energies for an arbitrary frame, holding the energy
/// multipliers fixed: maximizes `Σ_i U_i(ρ_i, s_i, g_i) - μ_i s_i` over the
/// simplex and `s ≥ 0`.
///
/// With `s` optimized out, each user's value of time `V_i(ρ)` is concave and
/// `V_i'(ρ) = ∂U/∂ρ` at the optimal energy, so the time split is again a
/// single-multiplier equalization. Each user is parameterized by its in-slot
/// SNR `x = s k / ρ`: the energy optimality condition gives the rate
/// `r = U'^{-1}(μ (1+x) ln2 / k)` in closed form, then `ρ = r / log2(1+x)` and
/// `V'(ρ) = μ (1+x) ln2 ψ(x) / k`, increasing in `x`.
pub fn evaluate_policy<U: Utility>(
    gains: &NetworkGain,
    utilities: &[U],
    multipliers: &[f64],
    link: &LinkBudget,
) -> (Vec<f64>, Vec<f64>) {
    let n = gains.len();
    let k: Vec<f64> = gains.as_slice().iter().map(|&g| link.gain_to_noise(g)).collect();
    let ln2 = std::f64::consts::LN_2;
    let slope_scale = |i: usize, x: f64| multipliers[i] * (1.0 + x) * ln2 / k[i];
    let value_slope = |i: usize, x: f64| slope_scale(i, x) * share_rate_slope(x);
    let share_of = |i: usize, x: f64| {
        let r = utilities[i].inverse_derivative(slope_scale(i, x)).max(0.0);
        r / x.ln_1p() * ln2
    };
    // in-slot SNR at which the optimal energy, and so the share, vanishes
    let x_zero = |i: usize| utilities[i].derivative(0.0) * k[i] / (multipliers[i] * ln2) - 1.0;
    // in-slot SNR with V_i'(ρ(x)) = λ, found on (0, x_zero]
    let snr_for = |i: usize, lambda: f64| -> f64 {
        let top = x_zero(i);
        if value_slope(i, top) <= lambda {
            return top;
        }
        illinois(|t| value_slope(i, top * t) - lambda, 0.0, 1.0, 1e-15, 1e-15 * lambda, MAX_ROOT_ITERS)
            .map_or(top, |t| top * t)
    };

    let active: Vec<usize> = (0..n).filter(|&i| k[i] > 0.0 && x_zero(i) > 0.0).collect();
    let mut shares = vec![0.0; n];
    let mut snr = vec![0.0; n];
    match active.len() {
        0 => return (vec![1.0 / n as f64; n], vec![0.0; n]),
        1 => {
            let i = active[0];
            shares[i] = 1.0;
            // x with ρ(x) = 1
            let top = x_zero(i);
            snr[i] = illinois(|t| share_of(i, top * t) - 1.0, 0.0, 1.0, 1e-15, 1e-15, MAX_ROOT_ITERS)
                .map_or(top, |t| top * t);
        }
        _ => {
            // λ range: V_i'(1) below, V_i'(0) above
            let slope_at_full = |i: usize| {
                let top = x_zero(i);
                let t = illinois(|t| share_of(i, top * t) - 1.0, 0.0, 1.0, 1e-15, 1e-15, MAX_ROOT_ITERS).unwrap_or(1.0);
                value_slope(i, top * t)
            };
            let hi = active.iter().map(|&i| value_slope(i, x_zero(i))).fold(f64::NEG_INFINITY, f64::max);
            let lo = active.iter().map(|&i| slope_at_full(i)).fold(f64::INFINITY, f64::min);
            let total = |lambda: f64| active.iter().map(|&i| share_of(i, snr_for(i, lambda))).sum::<f64>() - 1.0;
            let lambda = if hi > lo && lo > 0.0 {
                illinois(|t| total(t.exp()), lo.ln(), hi.ln(), 1e-15, 1e-13, MAX_ROOT_ITERS)
                    .map_or(0.5 * (lo + hi), f64::exp)
            } else {
                lo.max(f64::MIN_POSITIVE)
            };
            for &i in &active {
                snr[i] = snr_for(i, lambda);
                shares[i] = share_of(i, snr[i]);
            }
            if shares.iter().sum::<f64>() <= 0.0 {
                for &i in &active {
                    shares[i] = 1.0 / active.len() as f64;
                }
            }
            shares = TimeShareVector::normalized(shares).into_inner();
        }
    }
    let energies = (0..n).map(|i| if shares[i] > 0.0 { shares[i] * snr[i] / k[i] } else { 0.0 }).collect();
    (shares, energies)
}
