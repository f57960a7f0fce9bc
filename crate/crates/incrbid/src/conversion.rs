//! The conversion process: a superposition of exponentially decaying rate
//! impulses, one per won impression.
//!
//! A win at round `w` entered from state `l` adds
//! `β_w(l) λ_w exp(-(τ - w) λ_w)` to the conversion rate for `τ ≥ w`. The
//! impulse integrates to `β_w(l)`, the expected number of conversions that win
//! triggers.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::model::IncrementalityParams;

/// A win at `round`, `gap` rounds after the previous win (or the fake win at 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WinRecord {
    pub round: usize,
    pub gap: usize,
}

/// Turns an increasing list of winning rounds into win records.
pub fn win_records(wins: &[usize]) -> Vec<WinRecord> {
    let mut prev = 0;
    wins.iter()
        .map(|&w| {
            let r = WinRecord {
                round: w,
                gap: w - prev,
            };
            prev = w;
            r
        })
        .collect()
}

pub fn check_records(wins: &[WinRecord], horizon: usize) -> Result<()> {
    let mut prev = 0;
    for r in wins {
        if r.round <= prev || r.round > horizon {
            return Err(Error::InconsistentWins(format!(
                "round {} after {prev} (H = {horizon})",
                r.round
            )));
        }
        if r.gap != r.round - prev {
            return Err(Error::InconsistentWins(format!(
                "win at {} has gap {}, expected {}",
                r.round,
                r.gap,
                r.round - prev
            )));
        }
        prev = r.round;
    }
    Ok(())
}

/// Rate contribution of a single win at time `tau`.
pub fn impulse_rate(tau: f64, win: WinRecord, params: &IncrementalityParams) -> f64 {
    let start = win.round as f64;
    if tau < start {
        return 0.0;
    }
    let lam = params.lambda(win.round);
    params.beta(win.round, win.gap) * lam * (-(tau - start) * lam).exp()
}

/// Total conversion rate at `tau` for the given win set.
pub fn rate_at(tau: f64, wins: &[WinRecord], params: &IncrementalityParams) -> Result<f64> {
    check_records(wins, params.horizon())?;
    Ok(wins.iter().map(|&w| impulse_rate(tau, w, params)).sum())
}

/// Exact expected number of conversions in `[a, b]`; `b` may be infinite.
pub fn expected_count(a: f64, b: f64, wins: &[WinRecord], params: &IncrementalityParams) -> f64 {
    debug_assert!(0.0 <= a && a <= b);
    wins.iter()
        .filter(|w| (w.round as f64) < b)
        .map(|w| {
            let start = w.round as f64;
            let lam = params.lambda(w.round);
            let lo = (a - start).max(0.0);
            params.beta(w.round, w.gap) * ((-lam * lo).exp() - (-lam * (b - start)).exp())
        })
        .sum()
}

/// Draws conversion timestamps on `[0, horizon_end)`.
///
/// Each win independently contributes `Poisson(β)` conversions at
/// `round + Exp(λ)`; the union is an exact draw of the superposed process.
pub fn sample_conversions<R: Rng + ?Sized>(
    wins: &[WinRecord],
    params: &IncrementalityParams,
    horizon_end: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::new();
    for w in wins {
        let beta = params.beta(w.round, w.gap);
        if beta <= 0.0 {
            continue;
        }
        let count = Poisson::new(beta).expect("positive Poisson mean").sample(rng) as u64;
        let delay = Exp::new(params.lambda(w.round)).expect("positive decay rate");
        for _ in 0..count {
            let t = w.round as f64 + delay.sample(rng);
            if t < horizon_end {
                out.push(t);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Number of timestamps in `[a, b)`; `conversions` must be sorted.
pub fn count_in(conversions: &[f64], a: f64, b: f64) -> usize {
    let lo = conversions.partition_point(|&c| c < a);
    let hi = conversions.partition_point(|&c| c < b);
    hi.saturating_sub(lo)
}
