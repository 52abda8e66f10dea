//! Gradient scheduling baseline: one user per frame, chosen by the marginal
//! utility of its exponentially averaged rate times its instantaneous rate.

use crate::error::{Error, Result};
use crate::utility::Utility;

/// Smoothed average rates `R_i` and the smoothing factor `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct GsState {
    avg_rates: Vec<f64>,
    alpha: f64,
}

impl GsState {
    pub fn new(avg_rates: Vec<f64>, alpha: f64) -> Result<Self> {
        if avg_rates.is_empty() {
            return Err(Error::invalid("avg_rates", "at least one user required"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        if avg_rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("avg_rates", "average rates must be finite and >= 0"));
        }
        Ok(Self { avg_rates, alpha })
    }

    /// All users start from the same average rate.
    pub fn with_initial(users: usize, initial_rate: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![initial_rate; users], alpha)
    }

    pub fn avg_rates(&self) -> &[f64] {
        &self.avg_rates
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `argmax_i U_i'(R_i) c_i`, lowest index on ties. Returns a 0-based index.
pub fn gs_select<U: Utility>(state: &GsState, rates: &[f64], utilities: &[U]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, ((&r, &c), u)) in state.avg_rates.iter().zip(rates).zip(utilities).enumerate() {
        let score = u.derivative(r) * c;
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// `R_i ← (1-α) R_i + α c_i` for the served user, `(1-α) R_i` otherwise.
pub fn gs_update(state: &GsState, selected: usize, served_rate: f64) -> GsState {
    let mut next = state.clone();
    next.update_in_place(selected, served_rate);
    next
}

impl GsState {
    pub(crate) fn update_in_place(&mut self, selected: usize, served_rate: f64) {
        let keep = 1.0 - self.alpha;
        for (i, r) in self.avg_rates.iter_mut().enumerate() {
            *r *= keep;
            if i == selected {
                *r += self.alpha * served_rate;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::LogUtility;
    use proptest::prelude::*;

    fn logs(n: usize, a: f64) -> Vec<LogUtility> {
        vec![LogUtility::new(a).unwrap(); n]
    }

    #[test]
    fn select_examples() {
        let one = GsState::with_initial(1, 0.0, 0.1).unwrap();
        assert_eq!(gs_select(&one, &[0.7], &logs(1, 1.0)), 0);

        let s = GsState::with_initial(2, 1.0, 0.1).unwrap();
        assert_eq!(gs_select(&s, &[1.0, 3.0], &logs(2, 0.1)), 1);

        let s = GsState::new(vec![1.0, 3.0], 0.1).unwrap();
        assert_eq!(gs_select(&s, &[2.0, 2.0], &logs(2, 1.0)), 0);

        let s = GsState::with_initial(3, 0.0, 0.1).unwrap();
        assert_eq!(gs_select(&s, &[2.0, 2.0, 2.0], &logs(3, 1.0)), 0);
    }

    #[test]
    fn update_examples() {
        let s = GsState::new(vec![1.0, 1.0], 0.1).unwrap();
        let next = gs_update(&s, 0, 3.0);
        assert!((next.avg_rates()[0] - 1.2).abs() < 1e-15);
        assert!((next.avg_rates()[1] - 0.9).abs() < 1e-15);

        let s = GsState::new(vec![2.5, 4.0], 0.3).unwrap();
        let next = gs_update(&s, 0, 2.5);
        assert!((next.avg_rates()[0] - 2.5).abs() < 1e-15);
        assert_eq!(next.avg_rates()[1], 4.0 * (1.0 - 0.3));
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        assert!(GsState::with_initial(2, 0.0, 0.0).is_err());
        assert!(GsState::with_initial(2, 0.0, 1.0).is_err());
        assert!(GsState::with_initial(2, -1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn selection_ignores_common_rate_scale(
            rates in proptest::collection::vec(0.0f64..10.0, 1..8),
            scale in 0.01f64..100.0,
            r0 in 0.0f64..5.0,
        ) {
            let n = rates.len();
            let s = GsState::new((0..n).map(|i| r0 + i as f64 * 0.1).collect(), 0.05).unwrap();
            let u = logs(n, 0.5);
            let scaled: Vec<f64> = rates.iter().map(|c| c * scale).collect();
            prop_assert_eq!(gs_select(&s, &rates, &u), gs_select(&s, &scaled, &u));
        }

        #[test]
        fn averages_stay_within_observed_range(trace in proptest::collection::vec(proptest::collection::vec(0.0f64..8.0, 3), 1..200)) {
            let u = logs(3, 1.0);
            let mut s = GsState::with_initial(3, 0.0, 0.05).unwrap();
            let mut max_c = 0.0f64;
            for c in &trace {
                max_c = max_c.max(c.iter().cloned().fold(0.0, f64::max));
                let i = gs_select(&s, c, &u);
                s = gs_update(&s, i, c[i]);
                for r in s.avg_rates() {
                    prop_assert!(*r >= 0.0 && *r <= max_c + 1e-12);
                }
            }
        }
    }
}
