//! Pairwise moment matching.
//!
//! For a level `h`, an episode that wins at `h` is paired with an earlier or
//! later episode that has exactly the same wins before `h` but does not win at
//! `h`. Both share the same residual rate from the common prefix, so the
//! differences of their conversion counts on `[h, h+½)` and `[h+½, h+1)`,
//!
//! ```text
//! X = N - N',   Y = N̄ - N̄',
//! ```
//!
//! have means `β_h(l)(1 - e^{-λ_h/2})` and `β_h(l)(1 - e^{-λ_h/2}) e^{-λ_h/2}`
//! where `l` is the winner's state at `h`. Inverting the first moments gives
//!
//! ```text
//! λ̂_h = 2 (ln μ̂ - ln η̂),   β̂_h(l) = μ̂² / (μ̂ - η̂).
//! ```
//!
//! Matching is online and greedy: within a prefix class a newcomer pairs with
//! the oldest waiting episode of the opposite kind. This pairs the k-th winner
//! with the k-th non-winner of each class, which is what a batch pass over the
//! same episodes in arrival order produces, so the statistics do not depend on
//! when they are read.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use crate::conversion::count_in;
use crate::error::{Error, Result};
use crate::hob::csv_err;
use crate::model::{Bounds, EpisodeLog, Triangular};

/// Running sums of `X`, `Y` and the number of matched pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairSums {
    pub sum_x: i64,
    pub sum_y: i64,
    pub count: u64,
}

impl PairSums {
    fn add(&mut self, x: i64, y: i64) {
        self.sum_x += x;
        self.sum_y += y;
        self.count += 1;
    }

    /// `(μ̂, η̂)`, or `None` without pairs.
    pub fn moments(&self) -> Option<(f64, f64)> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            (self.sum_x as f64 / n, self.sum_y as f64 / n)
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Waiting {
    episode: u64,
    gap: usize,
    head: i64,
    tail: i64,
}

#[derive(Debug, Clone, Default)]
struct Level {
    winners: HashMap<Vec<usize>, VecDeque<Waiting>>,
    candidates: HashMap<Vec<usize>, VecDeque<Waiting>>,
    pairs: Vec<(u64, u64)>,
}

/// Matching pools and sufficient statistics for every level `h`.
#[derive(Debug, Clone)]
pub struct MatchState {
    horizon: usize,
    episodes: u64,
    levels: Vec<Level>,
    by_state: Triangular<PairSums>,
    by_round: Vec<PairSums>,
}

/// Window counts `(N_h, N̄_h)` of an episode at level `h`.
fn window_counts(conversions: &[f64], h: usize) -> (i64, i64) {
    let h = h as f64;
    (
        count_in(conversions, h, h + 0.5) as i64,
        count_in(conversions, h + 0.5, h + 1.0) as i64,
    )
}

impl MatchState {
    pub fn new(horizon: usize) -> Self {
        MatchState {
            horizon,
            episodes: 0,
            levels: vec![Level::default(); horizon],
            by_state: Triangular::filled(horizon, PairSums::default()),
            by_round: vec![PairSums::default(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// `n_h(l)`: matched pairs whose winner was in state `l` at round `h`.
    pub fn pairs(&self, h: usize, l: usize) -> u64 {
        self.by_state[(h, l)].count
    }

    pub fn state_sums(&self, h: usize, l: usize) -> PairSums {
        self.by_state[(h, l)]
    }

    pub fn round_sums(&self, h: usize) -> PairSums {
        self.by_round[h - 1]
    }

    /// Matched `(winner, partner)` episode indices at level `h`, in match order.
    pub fn matched_pairs(&self, h: usize) -> &[(u64, u64)] {
        &self.levels[h - 1].pairs
    }

    /// Adds one finished episode; returns its index.
    pub fn ingest_episode(&mut self, log: &EpisodeLog) -> u64 {
        let id = self.episodes;
        self.episodes += 1;
        let mut prefix: Vec<usize> = Vec::new();
        let mut wins = log.wins.iter().copied().peekable();
        for h in 1..=self.horizon {
            let won = wins.next_if_eq(&h).is_some();
            let (head, tail) = window_counts(&log.conversions, h);
            let gap = h - prefix.last().copied().unwrap_or(0);
            let me = Waiting {
                episode: id,
                gap,
                head,
                tail,
            };
            let level = &mut self.levels[h - 1];
            let (mine, theirs) = if won {
                (&mut level.winners, &mut level.candidates)
            } else {
                (&mut level.candidates, &mut level.winners)
            };
            match theirs.get_mut(&prefix).and_then(|q| q.pop_front()) {
                Some(other) => {
                    let (winner, partner) = if won { (me, other) } else { (other, me) };
                    let x = winner.head - partner.head;
                    let y = winner.tail - partner.tail;
                    level.pairs.push((winner.episode, partner.episode));
                    self.by_state[(h, winner.gap)].add(x, y);
                    self.by_round[h - 1].add(x, y);
                }
                None => mine.entry(prefix.clone()).or_default().push_back(me),
            }
            if won {
                prefix.push(h);
            }
        }
        id
    }

    /// Point estimate of `λ_h`.
    pub fn estimate_lambda(&self, h: usize, bounds: &Bounds) -> Result<Estimate> {
        let sums = self.round_sums(h);
        let (mu, eta) = sums
            .moments()
            .ok_or_else(|| Error::NoPairs(format!("round {h}")))?;
        Ok(Estimate::from_pair(lambda_from_moments(mu, eta, bounds), sums.count))
    }

    /// Point estimate of `β_h(l)`.
    pub fn estimate_beta(&self, h: usize, l: usize, bounds: &Bounds) -> Result<Estimate> {
        let sums = self.state_sums(h, l);
        let (mu, eta) = sums
            .moments()
            .ok_or_else(|| Error::NoPairs(format!("(h={h}, l={l})")))?;
        Ok(Estimate::from_pair(beta_from_moments(mu, eta, bounds), sums.count))
    }

    /// Estimates for every entry that has at least one matched pair.
    pub fn snapshot(&self, bounds: &Bounds) -> PammEstimate {
        PammEstimate {
            lambda: (1..=self.horizon)
                .map(|h| self.estimate_lambda(h, bounds).ok())
                .collect(),
            beta: Triangular::from_fn(self.horizon, |h, l| self.estimate_beta(h, l, bounds).ok()),
        }
    }
}

/// A clamped moment estimate with its sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// The raw moment inversion was undefined and a fallback was used.
    pub protected: bool,
    pub pairs: u64,
}

impl Estimate {
    fn from_pair((value, protected): (f64, bool), pairs: u64) -> Self {
        Estimate {
            value,
            protected,
            pairs,
        }
    }
}

/// `2 (ln μ − ln η)` clamped to `[c_λ, C_λ]`; midpoint fallback when undefined.
pub fn lambda_from_moments(mu: f64, eta: f64, bounds: &Bounds) -> (f64, bool) {
    if mu > 0.0 && eta > 0.0 && mu > eta {
        let raw = 2.0 * (mu.ln() - eta.ln());
        (raw.clamp(bounds.c_lambda, bounds.cap_lambda), false)
    } else {
        (0.5 * (bounds.c_lambda + bounds.cap_lambda), true)
    }
}

/// `μ² / (μ − η)` clamped to `[c_β, C_β]`; `c_β` fallback when undefined.
pub fn beta_from_moments(mu: f64, eta: f64, bounds: &Bounds) -> (f64, bool) {
    if mu > 0.0 && mu > eta {
        let raw = mu * mu / (mu - eta);
        (raw.clamp(bounds.c_beta, bounds.cap_beta), false)
    } else {
        (bounds.c_beta, true)
    }
}

/// Output of a PAMM pass; `None` where no pairs exist yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PammEstimate {
    pub lambda: Vec<Option<Estimate>>,
    pub beta: Triangular<Option<Estimate>>,
}

impl PammEstimate {
    pub fn is_complete(&self) -> bool {
        self.beta.values().iter().all(Option::is_some)
    }

    /// `h,l,beta_hat,n,protected` rows.
    pub fn write_beta_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "l", "beta_hat", "n", "protected"])
            .map_err(csv_err)?;
        for ((h, l), e) in self.beta.iter() {
            let row = match e {
                Some(e) => [
                    h.to_string(),
                    l.to_string(),
                    e.value.to_string(),
                    e.pairs.to_string(),
                    e.protected.to_string(),
                ],
                None => [h.to_string(), l.to_string(), String::new(), "0".into(), String::new()],
            };
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `h,lambda_hat,n` rows.
    pub fn write_lambda_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "lambda_hat", "n"]).map_err(csv_err)?;
        for (i, e) in self.lambda.iter().enumerate() {
            let h = (i + 1).to_string();
            let row = match e {
                Some(e) => [h, e.value.to_string(), e.pairs.to_string()],
                None => [h, String::new(), "0".into()],
            };
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
