//! Quantized time sharing with limited feedback.
//!
//! Each user reports only which of `K = 2^M` equiprobable gain bins it is
//! in, and the frame is cut into `L` equal slots. The scheduler maximizes the
//! sum of per-user utilities expected under the reported bins. Because users
//! are independent, that objective separates into per-user terms
//! `Ũ_i(n_i / L)`, each concave in the slot count, and assigning slots one by
//! one to the largest increment is optimal: the `L` picks are exactly the `L`
//! largest increments overall.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;

use crate::channel::{achievable_rate, ChannelModel, LinkBudget, NetworkGain, Quantizer};
use crate::error::{Error, Result};
use crate::utility::Utility;

/// Gauss-Legendre nodes per bin.
pub const QUADRATURE_NODES: usize = 64;
/// The unbounded top bin is integrated up to this quantile.
pub const TAIL_QUANTILE: f64 = 1.0 - 1e-9;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(QUADRATURE_NODES).unwrap()))
}

/// Reported channel states `S_1..S_N`, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateVector(Vec<usize>);

impl StateVector {
    pub fn new(states: Vec<usize>, levels: usize) -> Result<Self> {
        if states.iter().any(|&s| s == 0 || s > levels) {
            return Err(Error::invalid("states", format!("states must lie in 1..={levels}")));
        }
        Ok(Self(states))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// `n_i` slots per user out of `L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotGrid {
    slots: usize,
    allocation: Vec<usize>,
}

impl SlotGrid {
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn allocation(&self) -> &[usize] {
        &self.allocation
    }

    /// `ρ_i = n_i / L`.
    pub fn shares(&self) -> Vec<f64> {
        self.allocation.iter().map(|&n| n as f64 / self.slots as f64).collect()
    }
}

/// `E[U(ρ c(g)) | g ∈ [G_k, G_{k+1})]` for an exponential gain with the
/// given mean, at the link's constant transmit power.
pub fn bin_expected_utility<U: Utility + ?Sized>(
    utility: &U,
    share: f64,
    state: usize,
    quantizer: &Quantizer,
    mean_gain: f64,
    link: &LinkBudget,
) -> f64 {
    if share <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = quantizer.bin(state);
    let tail = -mean_gain * (1.0 - TAIL_QUANTILE).ln();
    let hi = if hi.is_finite() { hi } else { tail.max(lo + mean_gain) };
    let mass = (-lo / mean_gain).exp() - (-hi / mean_gain).exp();
    let power = link.transmit_power();
    let integral = rule().integrate(lo, hi, |g| {
        utility.utility(share * achievable_rate(g, power, link)) * (-g / mean_gain).exp() / mean_gain
    });
    integral / mass
}

/// Expected utilities `Ũ_i(n/L)`, `n = 0..=L`, for the users of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    slots: usize,
    expected: Vec<Vec<f64>>,
}

impl MarginalTable {
    /// `expected[i][n]` must hold `Ũ_i(n / L)` for `n = 0..=L`.
    pub fn from_expected(slots: usize, expected: Vec<Vec<f64>>) -> Result<Self> {
        if slots == 0 {
            return Err(Error::invalid("slots", "need at least one slot"));
        }
        if expected.is_empty() || expected.iter().any(|row| row.len() != slots + 1) {
            return Err(Error::invalid("expected", format!("each user needs {} entries", slots + 1)));
        }
        Ok(Self { slots, expected })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn users(&self) -> usize {
        self.expected.len()
    }

    pub fn expected(&self, user: usize, slots: usize) -> f64 {
        self.expected[user][slots]
    }

    /// `d_i(n/L) = Ũ_i(n/L) - Ũ_i((n-1)/L)` for `n ≥ 1`.
    pub fn increment(&self, user: usize, n: usize) -> f64 {
        self.expected[user][n] - self.expected[user][n - 1]
    }

    /// Whether every user's increments strictly decrease in `n`.
    pub fn increments_strictly_decreasing(&self) -> bool {
        (0..self.users()).all(|i| (2..=self.slots).all(|n| self.increment(i, n) < self.increment(i, n - 1)))
    }

    /// `Σ_i Ũ_i(n_i / L)`, summed in sorted order so permuted allocations of
    /// identical users compare equal bit for bit.
    pub fn objective(&self, allocation: &[usize]) -> f64 {
        let mut terms: Vec<f64> = allocation.iter().enumerate().map(|(i, &n)| self.expected[i][n]).collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    }
}

/// Greedy slot assignment; also returns the number of increments evaluated.
pub fn greedy_allocate_counted(table: &MarginalTable) -> (SlotGrid, usize) {
    let n = table.users();
    let mut allocation = vec![0usize; n];
    let mut evaluations = 0;
    for _ in 0..table.slots {
        let mut best = 0;
        let mut best_inc = f64::NEG_INFINITY;
        for (i, &cur) in allocation.iter().enumerate() {
            evaluations += 1;
            let inc = table.increment(i, cur + 1);
            if inc > best_inc {
                best = i;
                best_inc = inc;
            }
        }
        allocation[best] += 1;
    }
    (SlotGrid { slots: table.slots, allocation }, evaluations)
}

/// Assigns the `L` slots one at a time to the largest expected-utility
/// increment, lowest index on ties.
pub fn greedy_allocate(table: &MarginalTable) -> SlotGrid {
    greedy_allocate_counted(table).0
}

/// Limits on brute-force enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationCap {
    pub max_users: usize,
    pub max_slots: usize,
}

impl Default for EnumerationCap {
    fn default() -> Self {
        Self { max_users: 4, max_slots: 6 }
    }
}

/// Best allocation over every composition of `L` into `N` parts. Among
/// equal objectives the lexicographically largest slot vector wins, which
/// favors low user indices like the greedy tie-break.
pub fn exhaustive_allocate(table: &MarginalTable, cap: EnumerationCap) -> Result<SlotGrid> {
    let (n, l) = (table.users(), table.slots);
    if n > cap.max_users || l > cap.max_slots {
        return Err(Error::TooLarge(format!(
            "{n} users and {l} slots exceed the cap of {} users and {} slots",
            cap.max_users, cap.max_slots
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = vec![0usize; n];
    enumerate(&mut current, 0, l, &mut |alloc| {
        let value = table.objective(alloc);
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, alloc.to_vec()));
        }
    });
    let (_, allocation) = best.expect("at least one composition");
    Ok(SlotGrid { slots: l, allocation })
}

/// Visits compositions of `remaining` into `current[pos..]` in
/// lexicographically decreasing order.
fn enumerate(current: &mut [usize], pos: usize, remaining: usize, visit: &mut impl FnMut(&[usize])) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        visit(current);
        return;
    }
    for take in (0..=remaining).rev() {
        current[pos] = take;
        enumerate(current, pos + 1, remaining - take, visit);
    }
    current[pos] = 0;
}

/// Per-user quantizers and cached `Ũ_i(n/L)` for every state, built once
/// per experiment.
#[derive(Debug, Clone)]
pub struct QtslPlanner {
    slots: usize,
    quantizers: Vec<Quantizer>,
    /// `cache[i][k-1][n] = Ũ_i(n/L)` given `S_i = k`.
    cache: Vec<Vec<Vec<f64>>>,
}

impl QtslPlanner {
    pub fn new<U: Utility>(
        model: &ChannelModel,
        utilities: &[U],
        feedback_bits: u32,
        slots: usize,
        link: &LinkBudget,
    ) -> Result<Self> {
        if slots == 0 {
            return Err(Error::invalid("slots", "need at least one slot"));
        }
        if utilities.len() != model.users() {
            return Err(Error::invalid("utilities", format!("expected {} utilities", model.users())));
        }
        let quantizers = model
            .mean_gains()
            .iter()
            .map(|&m| Quantizer::equal_probability(m, feedback_bits))
            .collect::<Result<Vec<_>>>()?;
        let cache = (0..model.users())
            .into_par_iter()
            .map(|i| {
                let q = &quantizers[i];
                (1..=q.states())
                    .map(|k| {
                        (0..=slots)
                            .map(|n| {
                                let share = n as f64 / slots as f64;
                                bin_expected_utility(&utilities[i], share, k, q, model.mean_gains()[i], link)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { slots, quantizers, cache })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn quantizers(&self) -> &[Quantizer] {
        &self.quantizers
    }

    /// Reported states for a frame.
    pub fn states(&self, gains: &NetworkGain) -> StateVector {
        StateVector(gains.as_slice().iter().zip(&self.quantizers).map(|(&g, q)| q.quantize(g)).collect())
    }

    pub fn table(&self, states: &StateVector) -> MarginalTable {
        let expected = states.0.iter().enumerate().map(|(i, &k)| self.cache[i][k - 1].clone()).collect();
        MarginalTable { slots: self.slots, expected }
    }

    pub fn greedy(&self, states: &StateVector) -> SlotGrid {
        greedy_allocate(&self.table(states))
    }

    pub fn exhaustive(&self, states: &StateVector, cap: EnumerationCap) -> Result<SlotGrid> {
        exhaustive_allocate(&self.table(states), cap)
    }
}
