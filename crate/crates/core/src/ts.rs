//! Per-frame optimal time sharing at constant power.
//!
//! Maximizes `Σ w_i U_i(ρ_i c_i)` over the unit simplex for one frame. The
//! optimum equalizes weighted marginals `w_i c_i U_i'(ρ_i c_i) = λ` over the
//! users that get time; everyone else has a marginal at zero share below
//! `λ`. The multiplier is found either by a closed-form active-set sweep
//! (utilities that expose [`Utility::water_level_offset`]) or by bisection
//! on the monotone share sum.

use crate::error::{Error, Result};
use crate::utility::Utility;

const SIMPLEX_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

/// Frame fractions `ρ_1..ρ_N`, each in `[0, 1]`, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeShareVector(Vec<f64>);

impl TimeShareVector {
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        if shares.is_empty() {
            return Err(Error::invalid("shares", "at least one user required"));
        }
        if shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("shares", "every share must lie in [0, 1]"));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("shares", format!("shares sum to {sum}, not 1")));
        }
        Ok(Self(shares))
    }

    pub fn uniform(users: usize) -> Self {
        Self(vec![1.0 / users as f64; users])
    }

    /// Whole frame to `user`.
    pub fn indicator(users: usize, user: usize) -> Self {
        let mut v = vec![0.0; users];
        v[user] = 1.0;
        Self(v)
    }

    /// Shares `n_i / L` from slot counts.
    pub fn from_slots(slots: &[usize]) -> Self {
        let total: usize = slots.iter().sum();
        Self(slots.iter().map(|&n| n as f64 / total as f64).collect())
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

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Normalizes a nonnegative vector with positive sum onto the simplex.
    pub(crate) fn normalized(mut shares: Vec<f64>) -> Self {
        let sum: f64 = shares.iter().sum();
        for s in &mut shares {
            *s = (*s / sum).clamp(0.0, 1.0);
        }
        Self(shares)
    }
}

/// Multiplier found for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSolve {
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

/// How the share multiplier is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShareSolver {
    /// Closed form when every utility supports it, bisection otherwise.
    #[default]
    Auto,
    Bisection,
}

/// Optimal time sharing for one frame with rates `c`.
pub fn allocate_ts<U: Utility>(rates: &[f64], utilities: &[U]) -> Result<(TimeShareVector, MultiplierSolve)> {
    solve_shares(rates, utilities, None, ShareSolver::Auto)
}

/// Maximizes `Σ w_i U_i(ρ_i c_i)` on the simplex. `weights = None` means
/// all ones.
pub fn solve_shares<U: Utility>(
    rates: &[f64],
    utilities: &[U],
    weights: Option<&[f64]>,
    solver: ShareSolver,
) -> Result<(TimeShareVector, MultiplierSolve)> {
    let n = rates.len();
    if n == 0 {
        return Err(Error::invalid("rates", "at least one user required"));
    }
    if utilities.len() != n {
        return Err(Error::invalid("utilities", format!("expected {n} utilities, got {}", utilities.len())));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::invalid("weights", format!("expected {n} weights, got {}", w.len())));
        }
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("weights", "weights must be finite and >= 0"));
        }
    }
    if rates.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::invalid("rates", "rates must be finite and >= 0"));
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let candidates: Vec<usize> = (0..n).filter(|&i| weight(i) > 0.0 && rates[i] > 0.0).collect();
    match candidates.len() {
        0 => return Err(Error::DegenerateFrame),
        1 => {
            let i = candidates[0];
            let lambda = weight(i) * utilities[i].marginal_share(rates[i], 1.0);
            let solve = MultiplierSolve { lambda, active_set: vec![i], iterations: 0 };
            return Ok((TimeShareVector::indicator(n, i), solve));
        }
        _ => {}
    }

    let closed_form = solver == ShareSolver::Auto
        && candidates.iter().all(|&i| utilities[i].water_level_offset(rates[i]).is_some());
    if closed_form {
        Ok(water_fill(rates, utilities, &candidates, weight))
    } else {
        bisect(rates, utilities, &candidates, weight)
    }
}

/// Active-set sweep for shares of the form `ρ_i = w_i/λ - b_i`.
fn water_fill<U: Utility>(
    rates: &[f64],
    utilities: &[U],
    candidates: &[usize],
    weight: impl Fn(usize) -> f64,
) -> (TimeShareVector, MultiplierSolve) {
    let offset = |i: usize| utilities[i].water_level_offset(rates[i]).unwrap_or(f64::INFINITY);
    let mut order = candidates.to_vec();
    // decreasing marginal at zero share, w/b; index breaks ties
    order.sort_by(|&i, &j| {
        let (mi, mj) = (weight(i) / offset(i), weight(j) / offset(j));
        mj.total_cmp(&mi).then(i.cmp(&j))
    });

    let (mut w_sum, mut b_sum) = (0.0, 0.0);
    let mut inv_lambda = 0.0;
    let mut active = 0;
    for (k, &i) in order.iter().enumerate() {
        if k > 0 && weight(i) * inv_lambda <= offset(i) {
            break;
        }
        w_sum += weight(i);
        b_sum += offset(i);
        inv_lambda = (1.0 + b_sum) / w_sum;
        active = k + 1;
    }

    let mut shares = vec![0.0; rates.len()];
    for &i in &order[..active] {
        shares[i] = (weight(i) * inv_lambda - offset(i)).max(0.0);
    }
    let mut active_set: Vec<usize> = order[..active].iter().copied().filter(|&i| shares[i] > 0.0).collect();
    active_set.sort_unstable();
    let solve = MultiplierSolve { lambda: 1.0 / inv_lambda, active_set, iterations: active };
    (TimeShareVector::normalized(shares), solve)
}

fn bisect<U: Utility>(
    rates: &[f64],
    utilities: &[U],
    candidates: &[usize],
    weight: impl Fn(usize) -> f64,
) -> Result<(TimeShareVector, MultiplierSolve)> {
    let n = rates.len();
    let shares_at = |lambda: f64| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &i in candidates {
            // λ > 0 and w_i > 0 here, so the inverse cannot fail
            out[i] = utilities[i].inverse_marginal_share(rates[i], lambda / weight(i)).unwrap_or(0.0);
        }
        out
    };

    let mut hi = candidates
        .iter()
        .map(|&i| weight(i) * utilities[i].marginal_share(rates[i], 0.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = candidates
        .iter()
        .map(|&i| weight(i) * utilities[i].marginal_share(rates[i], 1.0))
        .fold(f64::INFINITY, f64::min);

    let mut iterations = 0;
    let mut lambda = 0.5 * (lo + hi);
    let mut shares = shares_at(lambda);
    loop {
        let residual = shares.iter().sum::<f64>() - 1.0;
        if residual.abs() <= SIMPLEX_TOL || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        if iterations == MAX_BISECTIONS {
            return Err(Error::NoConvergence { what: "share multiplier bisection", iterations });
        }
        // share sum decreases in λ
        if residual > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        lambda = 0.5 * (lo + hi);
        shares = shares_at(lambda);
        iterations += 1;
    }

    let active_set = (0..n).filter(|&i| shares[i] > 0.0).collect();
    Ok((TimeShareVector::normalized(shares), MultiplierSolve { lambda, active_set, iterations }))
}

/// Aggregate utility `Σ U_i(ρ_i c_i)` of one frame.
pub fn taur_contribution<U: Utility>(shares: &TimeShareVector, rates: &[f64], utilities: &[U]) -> f64 {
    shares
        .as_slice()
        .iter()
        .zip(rates)
        .zip(utilities)
        .map(|((rho, c), u)| u.utility(rho * c))
        .sum()
}

/// Largest KKT violations of `shares` against `lambda`: spread of weighted
/// marginals around `λ` on the active set, and excess of inactive marginals
/// over `λ`.
pub fn kkt_violation<U: Utility>(
    shares: &TimeShareVector,
    rates: &[f64],
    utilities: &[U],
    weights: Option<&[f64]>,
    lambda: f64,
) -> (f64, f64) {
    let mut active = 0.0f64;
    let mut inactive = 0.0f64;
    for (i, &rho) in shares.as_slice().iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let m = w * utilities[i].marginal_share(rates[i], rho);
        if rho > 0.0 {
            active = active.max((m - lambda).abs());
        } else {
            inactive = inactive.max(m - lambda);
        }
    }
    (active, inactive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::LogUtility;
    use proptest::prelude::*;

    fn logs(a: &[f64]) -> Vec<LogUtility> {
        a.iter().map(|&a| LogUtility::new(a).unwrap()).collect()
    }

    /// Best `U_1(ρ c_1) + U_2((1-ρ) c_2)` over a uniform grid on `ρ`.
    fn grid_two(rates: [f64; 2], u: &[LogUtility], step: f64) -> (f64, f64) {
        let steps = (1.0 / step).round() as usize;
        (0..=steps)
            .map(|k| {
                let r = k as f64 * step;
                (r, u[0].utility(r * rates[0]) + u[1].utility((1.0 - r) * rates[1]))
            })
            .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    #[test]
    fn single_user_takes_the_frame() {
        let (s, _) = allocate_ts(&[1.3], &logs(&[0.1])).unwrap();
        assert_eq!(s.as_slice(), &[1.0]);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let (s, _) = allocate_ts(&[2.0, 2.0], &logs(&[0.1, 0.1])).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn two_user_example_matches_grid_oracle() {
        let u = logs(&[0.1, 0.1]);
        let (grid_rho, _) = grid_two([2.0, 1.0], &u, 1e-6);
        assert!((grid_rho - 0.525).abs() < 2e-6);

        for solver in [ShareSolver::Auto, ShareSolver::Bisection] {
            let (s, solve) = solve_shares(&[2.0, 1.0], &u, None, solver).unwrap();
            assert!((s.as_slice()[0] - 0.525).abs() < 1e-9, "{solver:?} {s:?}");
            assert!((s.as_slice()[1] - 0.475).abs() < 1e-9);
            assert!((solve.lambda - 1.0 / 0.575).abs() < 1e-9);
            assert_eq!(solve.active_set, vec![0, 1]);
        }
    }

    #[test]
    fn weak_user_is_excluded() {
        let u = logs(&[0.1, 0.1]);
        for solver in [ShareSolver::Auto, ShareSolver::Bisection] {
            let (s, solve) = solve_shares(&[4.0, 0.01], &u, None, solver).unwrap();
            assert_eq!(s.as_slice(), &[1.0, 0.0]);
            let lambda = 4.0 / 4.1;
            assert!(u[1].marginal_share(0.01, 0.0) < lambda);
            assert_eq!(solve.active_set, vec![0]);
        }
    }

    #[test]
    fn all_zero_rates_are_degenerate() {
        assert!(matches!(allocate_ts(&[0.0, 0.0], &logs(&[0.1, 0.1])), Err(Error::DegenerateFrame)));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(allocate_ts(&[], &logs(&[])).is_err());
        assert!(allocate_ts(&[1.0], &logs(&[0.1, 0.1])).is_err());
        assert!(allocate_ts(&[-1.0, 1.0], &logs(&[0.1, 0.1])).is_err());
    }

    #[test]
    fn taur_examples() {
        let u = logs(&[1.0]);
        let one = TimeShareVector::uniform(1);
        assert!((taur_contribution(&one, &[std::f64::consts::E - 1.0], &u) - 1.0).abs() < 1e-15);
        let u = logs(&[0.1, 0.2, 0.3]);
        let s = TimeShareVector::uniform(3);
        assert_eq!(taur_contribution(&s, &[0.0; 3], &u), 0.0);
        let rates = [1.0, 2.0, 3.0];
        let direct: f64 = (0..3).map(|i| u[i].value(rates[i] / 3.0).unwrap()).sum();
        assert!((taur_contribution(&s, &rates, &u) - direct).abs() < 1e-15);
    }

    #[test]
    fn time_share_vector_validation() {
        assert!(TimeShareVector::new(vec![0.5, 0.6]).is_err());
        assert!(TimeShareVector::new(vec![-0.1, 1.1]).is_err());
        assert!(TimeShareVector::new(vec![0.25, 0.75]).is_ok());
    }

    fn instance(max_users: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_users).prop_flat_map(|n| {
            (proptest::collection::vec(0.0f64..10.0, n), proptest::collection::vec(0.01f64..10.0, n))
        })
    }

    proptest! {
        #[test]
        fn kkt_certificate_holds((rates, a) in instance(8)) {
            prop_assume!(rates.iter().any(|&c| c > 0.0));
            let u = logs(&a);
            for solver in [ShareSolver::Auto, ShareSolver::Bisection] {
                let (s, solve) = solve_shares(&rates, &u, None, solver).unwrap();
                let sum: f64 = s.as_slice().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                let (act, inact) = kkt_violation(&s, &rates, &u, None, solve.lambda);
                prop_assert!(act <= 1e-9, "{:?} active {} lambda {}", solver, act, solve.lambda);
                prop_assert!(inact <= 1e-9, "inactive {}", inact);
            }
        }

        #[test]
        fn zero_rate_user_changes_nothing((rates, a) in instance(6), extra_a in 0.01f64..10.0) {
            prop_assume!(rates.iter().any(|&c| c > 0.0));
            let u = logs(&a);
            let (base, _) = allocate_ts(&rates, &u).unwrap();
            let mut rates2 = rates.clone();
            rates2.push(0.0);
            let mut a2 = a.clone();
            a2.push(extra_a);
            let (more, _) = allocate_ts(&rates2, &logs(&a2)).unwrap();
            prop_assert_eq!(more.as_slice()[rates.len()], 0.0);
            for (x, y) in base.as_slice().iter().zip(more.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn huge_concavity_concentrates_on_best_user(rates in proptest::collection::vec(0.1f64..10.0, 2..6)) {
            let mut sorted = rates.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(sorted[0] > sorted[1] * (1.0 + 1e-3));
            let a = 1e6 * sorted[0];
            let u = logs(&vec![a; rates.len()]);
            let (s, _) = allocate_ts(&rates, &u).unwrap();
            let best = rates.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            prop_assert!(s.as_slice()[best] >= 1.0 - 1e-3);
        }

        #[test]
        fn two_users_beat_grid(c1 in 0.0f64..10.0, c2 in 0.01f64..10.0, a1 in 0.01f64..10.0, a2 in 0.01f64..10.0) {
            let u = logs(&[a1, a2]);
            let (s, _) = allocate_ts(&[c1, c2], &u).unwrap();
            let got = taur_contribution(&s, &[c1, c2], &u);
            let (_, best) = grid_two([c1, c2], &u, 1e-3);
            prop_assert!(got >= best - 1e-6);
        }
    }
}
