//! Oracle-equivalence suites run by `ratealloc selfcheck`.
//!
//! Instance `j` of a run with seed `S` draws its inputs from seed `S + j`,
//! so a failing instance is replayed alone with `--seed S+j --instances 1`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelModel, LinkBudget};
use crate::error::{Error, Result};
use crate::qtsl::{exhaustive_allocate, greedy_allocate, EnumerationCap, QtslPlanner, StateVector};
use crate::ts::{allocate_ts, kkt_violation, taur_contribution};
use crate::utility::{central_difference, LogUtility, Utility};

pub const SUITES: &[&str] = &["ts-grid", "greedy", "derivatives"];

const GRID_STEP: f64 = 1e-3;
const GRID_TOL: f64 = 1e-6;
const KKT_TOL: f64 = 1e-9;
const DERIVATIVE_RTOL: f64 = 1e-6;
const CONCAVITY_TOL: f64 = 1e-8;

/// A failing instance with everything needed to rerun it.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub seed: u64,
    pub inputs: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub instances: usize,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} ({} instances", self.suite, self.instances)?;
        if !self.passed() {
            write!(f, ", {} failed", self.failures.len())?;
        }
        write!(f, ")")?;
        for fail in &self.failures {
            write!(
                f,
                "\n  seed {}: {}\n    inputs: {}\n    replay: ratealloc selfcheck --suite {} --seed {} --instances 1",
                fail.seed, fail.reason, fail.inputs, self.suite, fail.seed
            )?;
        }
        Ok(())
    }
}

pub fn default_instances(suite: &str) -> usize {
    match suite {
        "ts-grid" => 200,
        _ => 100,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn logs(a: &[f64]) -> Vec<LogUtility> {
    a.iter().map(|&a| LogUtility::new(a).expect("positive concavity")).collect()
}

fn ts_grid_instance(seed: u64) -> Result<Option<Failure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=3);
    let rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..8.0)).collect();
    let a: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 0.05, 10.0)).collect();
    let u = logs(&a);
    let (shares, solve) = allocate_ts(&rates, &u)?;
    let got = taur_contribution(&shares, &rates, &u);

    let steps = (1.0 / GRID_STEP).round() as usize;
    let value = |rho: &[f64]| rho.iter().zip(&rates).zip(&u).map(|((r, c), u)| u.utility(r * c)).sum::<f64>();
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        let r1 = i as f64 * GRID_STEP;
        if n == 2 {
            best = best.max(value(&[r1, 1.0 - r1]));
        } else {
            for j in 0..=(steps - i) {
                let r2 = j as f64 * GRID_STEP;
                best = best.max(value(&[r1, r2, (1.0 - r1 - r2).max(0.0)]));
            }
        }
    }
    let (active, inactive) = kkt_violation(&shares, &rates, &u, None, solve.lambda);
    let inputs = format!("rates = {rates:?}, concavity = {a:?}");
    let reason = if best - got > GRID_TOL {
        Some(format!("grid beats allocation by {:.3e}", best - got))
    } else if active > KKT_TOL || inactive > KKT_TOL {
        Some(format!("KKT violated: active spread {active:.3e}, inactive excess {inactive:.3e}"))
    } else {
        None
    };
    Ok(reason.map(|reason| Failure { seed, inputs, reason }))
}

fn greedy_instance(seed: u64) -> Result<Option<Failure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let slots = rng.random_range(1..=6);
    let bits = rng.random_range(1..=3u32);
    let snr: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
    let a: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 0.05, 10.0)).collect();
    let states: Vec<usize> = (0..n).map(|_| rng.random_range(1..=(1usize << bits))).collect();

    let link = LinkBudget::new(1.0, 8.2, 1.0)?;
    let model = ChannelModel::from_mean_snr_db(&snr, &link)?;
    let planner = QtslPlanner::new(&model, &logs(&a), bits, slots, &link)?;
    let table = planner.table(&StateVector::new(states.clone(), 1 << bits)?);
    let greedy = greedy_allocate(&table);
    let best = exhaustive_allocate(&table, EnumerationCap::default())?;
    let (g, e) = (table.objective(greedy.allocation()), table.objective(best.allocation()));
    if g == e {
        return Ok(None);
    }
    Ok(Some(Failure {
        seed,
        inputs: format!("mean_snr_db = {snr:?}, concavity = {a:?}, slots = {slots}, feedback_bits = {bits}, states = {states:?}"),
        reason: format!(
            "greedy {:?} scores {g:.17e}, exhaustive {:?} scores {e:.17e}",
            greedy.allocation(),
            best.allocation()
        ),
    }))
}

fn derivatives_instance(seed: u64) -> Result<Option<Failure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = log_uniform(&mut rng, 0.05, 10.0);
    let gain = log_uniform(&mut rng, 0.1, 100.0);
    let rho: f64 = rng.random_range(0.05..1.0);
    let s = log_uniform(&mut rng, 0.05, 5.0);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let u = LogUtility::new(a)?;
    let link = LinkBudget::new(1.0, 8.2, 1.0)?;

    let fd_s = central_difference(|x| u.energy_value(rho, x, gain, &link), s, 1e-5 * s);
    let fd_r = central_difference(|x| u.energy_value(x, s, gain, &link), rho, 1e-5 * rho);
    let an_s = u.marginal_energy(rho, s, gain, &link)?;
    let an_r = u.marginal_share_at_energy(rho, s, gain, &link);
    let err_s = (an_s - fd_s).abs() / an_s.abs();
    let err_r = (an_r - fd_r).abs() / an_r.abs();

    let h = 0.01 * rho.min(s);
    let (dr, ds) = (h * angle.cos(), h * angle.sin());
    let f = |t: f64| u.energy_value(rho + t * dr, s + t * ds, gain, &link);
    let second = f(1.0) - 2.0 * f(0.0) + f(-1.0);

    let reason = if err_s > DERIVATIVE_RTOL || err_r > DERIVATIVE_RTOL {
        Some(format!("relative error vs finite differences: energy {err_s:.3e}, share {err_r:.3e}"))
    } else if second > CONCAVITY_TOL {
        Some(format!("directional second difference {second:.3e} > 0"))
    } else {
        None
    };
    Ok(reason.map(|reason| Failure {
        seed,
        inputs: format!("concavity = {a}, gain = {gain}, share = {rho}, energy = {s}, direction = {angle} rad"),
        reason,
    }))
}

/// Runs `instances` instances of `suite`, the `j`-th from seed `seed + j`.
pub fn run_suite(suite: &str, seed: u64, instances: usize) -> Result<SuiteReport> {
    let (name, check): (&'static str, fn(u64) -> Result<Option<Failure>>) = match suite {
        "ts-grid" => ("ts-grid", ts_grid_instance),
        "greedy" => ("greedy", greedy_instance),
        "derivatives" => ("derivatives", derivatives_instance),
        other => {
            return Err(Error::invalid("suite", format!("unknown suite `{other}`, expected one of {}", SUITES.join(", "))))
        }
    };
    let mut failures = Vec::new();
    for j in 0..instances as u64 {
        let s = seed.wrapping_add(j);
        match check(s) {
            Ok(None) => {}
            Ok(Some(f)) => failures.push(f),
            Err(e) => failures.push(Failure { seed: s, inputs: String::new(), reason: e.to_string() }),
        }
    }
    Ok(SuiteReport { suite: name, instances, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suites_pass() {
        for suite in SUITES {
            let report = run_suite(suite, 1, 20).unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn reruns_are_identical() {
        assert_eq!(run_suite("greedy", 42, 5).unwrap(), run_suite("greedy", 42, 5).unwrap());
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("bogus", 1, 1).unwrap_err().is_config());
    }

    #[test]
    fn failure_report_lists_replay_command() {
        let report = SuiteReport {
            suite: "greedy",
            instances: 3,
            failures: vec![Failure { seed: 17, inputs: "x".into(), reason: "y".into() }],
        };
        let text = report.to_string();
        assert!(text.starts_with("FAIL greedy"));
        assert!(text.contains("--suite greedy --seed 17 --instances 1"));
    }
}
