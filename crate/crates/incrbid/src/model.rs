//! Domain types shared by the simulator, the estimator and the planner.
//!
//! Rounds are 1-based (`h ∈ 1..=H`) and so are states: `l` counts rounds since
//! the last win, with an implicit win at round 0 so that `l_1 = 1`. Everything
//! indexed by `(h, l)` lives in a [`Triangular`] table with `1 ≤ l ≤ h`.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Equality tolerance used when matching a bid against the grid.
pub const GRID_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AuctionFormat {
    #[default]
    SecondPrice,
    FirstPrice,
}

/// Finite bidding space: sorted, distinct, inside `[0, 1]`, containing both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidGrid {
    bids: Vec<f64>,
}

impl BidGrid {
    pub fn new(bids: Vec<f64>) -> Result<Self> {
        let grid = BidGrid { bids };
        let violations = grid.violations();
        if violations.is_empty() {
            Ok(grid)
        } else {
            Err(Error::InvalidScenario(violations))
        }
    }

    /// Wraps `bids` without checking; [`BidGrid::violations`] reports problems later.
    pub fn from_unchecked(bids: Vec<f64>) -> Self {
        BidGrid { bids }
    }

    /// `points` equally spaced bids from 0 to 1 inclusive.
    pub fn uniform(points: usize) -> Self {
        assert!(points >= 2, "a grid needs at least the bids 0 and 1");
        let step = (points - 1) as f64;
        BidGrid {
            bids: (0..points).map(|i| i as f64 / step).collect(),
        }
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn index_of(&self, bid: f64) -> Option<usize> {
        let i = self.bids.partition_point(|&b| b < bid - GRID_EPS);
        (i < self.bids.len() && (self.bids[i] - bid).abs() <= GRID_EPS).then_some(i)
    }

    pub fn contains(&self, bid: f64) -> bool {
        self.index_of(bid).is_some()
    }

    pub fn is_subset_of(&self, other: &BidGrid) -> bool {
        self.bids.iter().all(|&b| other.contains(b))
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for &b in &self.bids {
            if !(0.0..=1.0).contains(&b) {
                out.push(Violation::GridOutOfRange(b));
            }
        }
        if self.bids.windows(2).any(|w| !(w[0] < w[1])) {
            out.push(Violation::GridUnsorted);
        }
        if !self.bids.iter().any(|&b| b == 0.0) {
            out.push(Violation::GridMissingZero);
        }
        if !self.bids.iter().any(|&b| b == 1.0) {
            out.push(Violation::GridMissingOne);
        }
        out
    }
}

/// Run-level settings of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Rounds per episode, `H`.
    pub horizon: usize,
    /// Number of episodes, `T`.
    pub episodes: usize,
    /// Value per conversion, `v ∈ [0, 1]`.
    pub value: f64,
    #[serde(default)]
    pub auction_format: AuctionFormat,
    pub bid_grid: BidGrid,
    #[serde(default)]
    pub seed: u64,
    /// Confidence parameter `δ ∈ (0, 1/2)`.
    pub delta: f64,
}

/// Lower-triangular table indexed by `(h, l)` with `1 ≤ l ≤ h ≤ H`.
///
/// Indexing outside the triangle panics: asking for `l > h` is a bug in the
/// caller, never a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangular<T> {
    horizon: usize,
    data: Vec<T>,
}

impl<T: Clone> Triangular<T> {
    pub fn filled(horizon: usize, value: T) -> Self {
        Triangular {
            horizon,
            data: vec![value; horizon * (horizon + 1) / 2],
        }
    }
}

impl<T> Triangular<T> {
    pub fn from_fn(horizon: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(horizon * (horizon + 1) / 2);
        for h in 1..=horizon {
            for l in 1..=h {
                data.push(f(h, l));
            }
        }
        Triangular { horizon, data }
    }

    /// Builds from ragged rows; row `h-1` must have exactly `h` entries.
    pub fn from_rows(rows: Vec<Vec<T>>) -> std::result::Result<Self, Violation> {
        let horizon = rows.len();
        let mut data = Vec::with_capacity(horizon * (horizon + 1) / 2);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Violation::DimensionMismatch(format!(
                    "row for round {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    i + 1
                )));
            }
            data.extend(row);
        }
        Ok(Triangular { horizon, data })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn offset(&self, h: usize, l: usize) -> usize {
        assert!(
            h >= 1 && h <= self.horizon && l >= 1 && l <= h,
            "triangular index (h={h}, l={l}) outside 1 ≤ l ≤ h ≤ {}",
            self.horizon
        );
        h * (h - 1) / 2 + (l - 1)
    }

    pub fn get(&self, h: usize, l: usize) -> Option<&T> {
        (h >= 1 && h <= self.horizon && l >= 1 && l <= h).then(|| &self.data[self.offset(h, l)])
    }

    /// Iterates `((h, l), value)` in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &T)> + '_ {
        (1..=self.horizon)
            .flat_map(|h| (1..=h).map(move |l| (h, l)))
            .zip(self.data.iter())
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, mut f: impl FnMut((usize, usize), &T) -> U) -> Triangular<U> {
        Triangular {
            horizon: self.horizon,
            data: self.iter().map(|(k, v)| f(k, v)).collect(),
        }
    }

    pub fn rows(&self) -> Vec<&[T]> {
        (1..=self.horizon)
            .map(|h| {
                let start = h * (h - 1) / 2;
                &self.data[start..start + h]
            })
            .collect()
    }
}

impl<T> Index<(usize, usize)> for Triangular<T> {
    type Output = T;

    fn index(&self, (h, l): (usize, usize)) -> &T {
        &self.data[self.offset(h, l)]
    }
}

impl<T> IndexMut<(usize, usize)> for Triangular<T> {
    fn index_mut(&mut self, (h, l): (usize, usize)) -> &mut T {
        let i = self.offset(h, l);
        &mut self.data[i]
    }
}

/// Known bounds on the incrementality parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub c_beta: f64,
    pub cap_beta: f64,
    pub c_lambda: f64,
    pub cap_lambda: f64,
    /// Upper bound on expected conversions in any unit interval `[h, h+1)`.
    pub cap_interval: f64,
}

impl Bounds {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.c_beta > 0.0 && self.c_beta <= self.cap_beta && self.cap_beta <= 1.0) {
            out.push(Violation::Bounds(format!(
                "need 0 < c_beta ≤ C_beta ≤ 1, got c_beta = {}, C_beta = {}",
                self.c_beta, self.cap_beta
            )));
        }
        if !(self.c_lambda > 0.0 && self.c_lambda <= self.cap_lambda) {
            out.push(Violation::Bounds(format!(
                "need 0 < c_lambda ≤ C_lambda, got c_lambda = {}, C_lambda = {}",
                self.c_lambda, self.cap_lambda
            )));
        }
        if !(self.cap_interval > 0.0) {
            out.push(Violation::Bounds(format!(
                "C_T must be positive, got {}",
                self.cap_interval
            )));
        }
        out
    }
}

/// Ground-truth or estimated `θ`: a `β_h(l)` triangle and one decay rate `λ_h` per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalityParams {
    pub beta: Triangular<f64>,
    pub lambda: Vec<f64>,
    pub bounds: Bounds,
}

impl IncrementalityParams {
    pub fn horizon(&self) -> usize {
        self.lambda.len()
    }

    pub fn beta(&self, h: usize, l: usize) -> f64 {
        self.beta[(h, l)]
    }

    pub fn lambda(&self, h: usize) -> f64 {
        self.lambda[h - 1]
    }

    /// Largest expected conversion count in `[h, h+1)` over all win sets.
    ///
    /// Exact maximisation by dynamic programming over the position of the
    /// previous win, so the `C_T` check is neither optimistic nor loose.
    pub fn max_interval_mass(&self, h: usize) -> f64 {
        let contribution = |w: usize, gap: usize| {
            let lam = self.lambda(w);
            let a = (h - w) as f64;
            self.beta(w, gap) * ((-lam * a).exp() - (-lam * (a + 1.0)).exp())
        };
        // best[w] = best total with the latest counted win at w (0 = the fake win)
        let mut best = vec![f64::NEG_INFINITY; h + 1];
        best[0] = 0.0;
        for w in 1..=h.min(self.horizon()) {
            best[w] = (0..w)
                .filter(|&p| best[p].is_finite())
                .map(|p| best[p] + contribution(w, w - p))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        best.into_iter().fold(0.0, f64::max)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = self.bounds.violations();
        let b = &self.bounds;
        for ((h, l), &v) in self.beta.iter() {
            if !(v >= b.c_beta && v <= b.cap_beta) {
                out.push(Violation::BetaBound {
                    round: h,
                    gap: l,
                    value: v,
                });
            }
        }
        for (i, &lam) in self.lambda.iter().enumerate() {
            if !(lam >= b.c_lambda && lam <= b.cap_lambda) {
                out.push(Violation::LambdaBound {
                    round: i + 1,
                    value: lam,
                });
            }
        }
        if self.beta.horizon() == self.horizon() {
            for h in 1..=self.horizon() {
                let mass = self.max_interval_mass(h);
                if mass > b.cap_interval + 1e-12 {
                    out.push(Violation::IntervalMass {
                        round: h,
                        mass,
                        cap: b.cap_interval,
                    });
                }
            }
        }
        out
    }
}

/// Next MDP state: back to 1 on a win, one further from the last win otherwise.
pub fn state_transition(gap: usize, won: bool) -> usize {
    debug_assert!(gap >= 1);
    if won {
        1
    } else {
        gap + 1
    }
}

/// A scenario whose configuration and parameters passed [`validate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub params: IncrementalityParams,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }
}

/// Checks every invariant and returns all violations at once.
pub fn validate_scenario(
    config: ScenarioConfig,
    params: IncrementalityParams,
) -> std::result::Result<Scenario, Vec<Violation>> {
    let mut out = Vec::new();
    if config.horizon == 0 {
        out.push(Violation::EmptyHorizon);
    }
    if config.episodes == 0 {
        out.push(Violation::EmptyEpisodes);
    }
    if !(0.0..=1.0).contains(&config.value) {
        out.push(Violation::ValueOutOfRange(config.value));
    }
    if !(config.delta > 0.0 && config.delta < 0.5) {
        out.push(Violation::DeltaOutOfRange(config.delta));
    }
    if params.beta.horizon() != config.horizon {
        out.push(Violation::DimensionMismatch(format!(
            "beta has {} rows, H = {}",
            params.beta.horizon(),
            config.horizon
        )));
    }
    if params.lambda.len() != config.horizon {
        out.push(Violation::DimensionMismatch(format!(
            "lambda has {} entries, H = {}",
            params.lambda.len(),
            config.horizon
        )));
    }
    out.extend(params.violations());
    out.extend(config.bid_grid.violations());
    if out.is_empty() {
        Ok(Scenario { config, params })
    } else {
        Err(out)
    }
}

/// One episode's trajectory as the learner observes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EpisodeLog {
    /// Winning rounds in increasing order.
    pub wins: Vec<usize>,
    /// Sorted conversion timestamps in `[0, H+1)`.
    pub conversions: Vec<f64>,
    /// Realized highest other bid per round.
    pub hobs: Vec<f64>,
    pub bids: Vec<f64>,
    /// State `l_h` at each round.
    pub states: Vec<usize>,
    /// Payment at each winning round, aligned with `wins`.
    pub payments: Vec<f64>,
}

impl EpisodeLog {
    pub fn horizon(&self) -> usize {
        self.bids.len()
    }

    pub fn won(&self, h: usize) -> bool {
        self.wins.binary_search(&h).is_ok()
    }

    /// Replays [`state_transition`] over the win set.
    pub fn replay_states(wins: &[usize], horizon: usize) -> Vec<usize> {
        let mut states = Vec::with_capacity(horizon);
        let mut gap = 1;
        for h in 1..=horizon {
            states.push(gap);
            gap = state_transition(gap, wins.binary_search(&h).is_ok());
        }
        states
    }

    /// Checks the structural invariants of a finished episode.
    pub fn check(&self) -> Result<()> {
        let horizon = self.horizon();
        let bad = |msg: String| Err(Error::InconsistentWins(msg));
        if self.hobs.len() != horizon || self.states.len() != horizon {
            return bad("bids, hobs and states must all have length H".into());
        }
        if self.wins.windows(2).any(|w| w[0] >= w[1]) {
            return bad("wins must be strictly increasing".into());
        }
        for h in 1..=horizon {
            let won = self.bids[h - 1] >= self.hobs[h - 1];
            if won != self.won(h) {
                return bad(format!("round {h}: win flag disagrees with bid vs HOB"));
            }
        }
        if self.states != Self::replay_states(&self.wins, horizon) {
            return bad("states do not follow the win set".into());
        }
        if self.payments.len() != self.wins.len() {
            return bad("one payment per winning round".into());
        }
        match self.wins.first() {
            None if !self.conversions.is_empty() => bad("conversions without any win".into()),
            Some(&first) if self.conversions.iter().any(|&c| c < first as f64) => {
                bad("conversion before the first win".into())
            }
            _ => Ok(()),
        }
    }
}

/// A deterministic bidding policy `π_h(l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub table: Triangular<f64>,
}

impl Policy {
    pub fn constant(horizon: usize, bid: f64) -> Self {
        Policy {
            table: Triangular::filled(horizon, bid),
        }
    }

    /// State-independent policy bidding `bids[h-1]` at round `h`.
    pub fn open_loop(bids: &[f64]) -> Self {
        Policy {
            table: Triangular::from_fn(bids.len(), |h, _| bids[h - 1]),
        }
    }

    pub fn horizon(&self) -> usize {
        self.table.horizon()
    }

    pub fn bid(&self, h: usize, l: usize) -> f64 {
        self.table[(h, l)]
    }

    pub fn check_grid(&self, grid: &BidGrid) -> Result<()> {
        for ((h, l), &b) in self.table.iter() {
            if !grid.contains(b) {
                return Err(Error::OffGrid {
                    round: h,
                    gap: l,
                    bid: b,
                });
            }
        }
        Ok(())
    }
}
