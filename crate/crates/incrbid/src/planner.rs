//! Finite-horizon dynamic programming for the bidding MDP.
//!
//! States are `l ∈ 1..=h` at round `h`. Bidding `b` wins with probability
//! `F_h(b)`, earns `β_h(l) v − p_h(b)` and moves to state 1; losing earns
//! nothing and moves to `l + 1`.

use crate::error::{Error, Result};
use crate::hob::HobTable;
use crate::model::{BidGrid, Policy, Triangular};

/// One bidding MDP: incrementality, tabulated HOB law and value per conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    pub beta: Triangular<f64>,
    pub hob: HobTable,
    pub value: f64,
}

impl MdpSpec {
    pub fn new(beta: Triangular<f64>, hob: HobTable, value: f64) -> Result<Self> {
        if beta.horizon() != hob.horizon() {
            return Err(Error::InvalidArgument(format!(
                "beta covers {} rounds, HOB table {}",
                beta.horizon(),
                hob.horizon()
            )));
        }
        if let Some(((h, l), b)) = beta.iter().find(|(_, &b)| !(0.0..=1.0).contains(&b)) {
            return Err(Error::InvalidArgument(format!("beta({h},{l}) = {b} outside [0, 1]")));
        }
        Ok(MdpSpec { beta, hob, value })
    }

    pub fn horizon(&self) -> usize {
        self.beta.horizon()
    }

    pub fn grid(&self) -> &BidGrid {
        self.hob.grid()
    }

    /// Expected reward of bid index `i` in state `(h, l)`: `F(b)(β v − p(b))`.
    pub fn expected_reward(&self, h: usize, l: usize, i: usize) -> f64 {
        self.hob.win_prob(h, i) * (self.beta[(h, l)] * self.value - self.hob.payment(h, i))
    }

    /// Same MDP with a different incrementality triangle.
    pub fn with_beta(&self, beta: Triangular<f64>) -> Result<Self> {
        MdpSpec::new(beta, self.hob.clone(), self.value)
    }
}

/// Optimal policy with its value table `V_h(l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub policy: Policy,
    pub values: Triangular<f64>,
    /// `V_1(1)`.
    pub value: f64,
}

/// Backward induction; ties go to the lowest bid.
pub fn plan(spec: &MdpSpec) -> Plan {
    let horizon = spec.horizon();
    let bids = spec.grid().bids();
    let mut values = Triangular::filled(horizon, 0.0);
    let mut table = Triangular::filled(horizon, 0.0);
    // V_{h+1}(l) for l in 1..=h+1, stored at index l-1; all zero past the horizon
    let mut next = vec![0.0; horizon + 1];
    for h in (1..=horizon).rev() {
        let mut current = vec![0.0; h];
        for l in 1..=h {
            let beta_v = spec.beta[(h, l)] * spec.value;
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..bids.len() {
                let f = spec.hob.win_prob(h, i);
                let q = f * (beta_v - spec.hob.payment(h, i) + next[0]) + (1.0 - f) * next[l];
                if q > best {
                    best = q;
                    arg = i;
                }
            }
            current[l - 1] = best;
            values[(h, l)] = best;
            table[(h, l)] = bids[arg];
        }
        next = current;
    }
    Plan {
        policy: Policy { table },
        value: values[(1, 1)],
        values,
    }
}

/// Exact expected total reward of `policy`, by propagating the state
/// distribution forward from `l_1 = 1`.
pub fn evaluate_policy(policy: &Policy, spec: &MdpSpec) -> Result<f64> {
    let horizon = spec.horizon();
    if policy.horizon() != horizon {
        return Err(Error::InvalidArgument(format!(
            "policy covers {} rounds, MDP {horizon}",
            policy.horizon()
        )));
    }
    let grid = spec.grid();
    let mut dist = vec![0.0; horizon + 1];
    dist[0] = 1.0;
    let mut total = 0.0;
    for h in 1..=horizon {
        let mut next = vec![0.0; horizon + 1];
        for l in 1..=h {
            let mass = dist[l - 1];
            if mass == 0.0 {
                continue;
            }
            let bid = policy.bid(h, l);
            if bid.is_nan() {
                return Err(Error::UndefinedPolicy { round: h, gap: l });
            }
            let i = grid.index_of(bid).ok_or(Error::OffGrid {
                round: h,
                gap: l,
                bid,
            })?;
            let f = spec.hob.win_prob(h, i);
            total += mass * spec.expected_reward(h, l, i);
            next[0] += mass * f;
            next[l] += mass * (1.0 - f);
        }
        dist = next;
    }
    Ok(total)
}

/// Expected reward of a state-independent bid vector.
pub fn evaluate_bids(bids: &[f64], spec: &MdpSpec) -> Result<f64> {
    evaluate_policy(&Policy::open_loop(bids), spec)
}

/// `OPT`: optimal expected utility of one episode from `l_1 = 1`.
pub fn opt_value(spec: &MdpSpec) -> f64 {
    plan(spec).value
}

/// Checks the Bellman recursion at every state; returns the largest residual.
pub fn bellman_residual(spec: &MdpSpec, values: &Triangular<f64>) -> f64 {
    let horizon = spec.horizon();
    let n = spec.grid().len();
    let v = |h: usize, l: usize| if h > horizon { 0.0 } else { values[(h, l)] };
    let mut worst: f64 = 0.0;
    for h in 1..=horizon {
        for l in 1..=h {
            let best = (0..n)
                .map(|i| {
                    let f = spec.hob.win_prob(h, i);
                    spec.expected_reward(h, l, i) + f * v(h + 1, 1) + (1.0 - f) * v(h + 1, l + 1)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((best - values[(h, l)]).abs());
        }
    }
    worst
}
