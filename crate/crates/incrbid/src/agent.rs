//! The online bidding agent: forced exploration until every `(h, l)` has
//! enough wins, then optimistic replanning after each episode.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hob::{GridTally, HobTable};
use crate::model::{AuctionFormat, BidGrid, Bounds, EpisodeLog, Policy, ScenarioConfig, Triangular};
use crate::pamm::MatchState;
use crate::planner::{plan, MdpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub delta: f64,
    /// Absolute constant of Bernstein's inequality.
    pub bernstein_c: f64,
    /// Multiplier `κ` on the confidence widths.
    pub confidence_scale: f64,
    /// Wins per `(h, l)` required before exploiting; replaces the theoretical threshold.
    pub exploration_override: Option<u64>,
    pub bounds: Bounds,
}

impl AgentConfig {
    pub fn new(delta: f64, bounds: Bounds) -> Self {
        AgentConfig {
            delta,
            bernstein_c: 0.5,
            confidence_scale: 1.0,
            exploration_override: None,
            bounds,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad(format!("delta {} outside (0, 0.5)", self.delta));
        }
        if !(self.bernstein_c > 0.0) {
            return bad(format!("Bernstein constant {} must be positive", self.bernstein_c));
        }
        if !(self.confidence_scale > 0.0) {
            return bad(format!("confidence scale {} must be positive", self.confidence_scale));
        }
        if self.exploration_override == Some(0) {
            return bad("exploration override must be at least 1".into());
        }
        let b = &self.bounds;
        if !(b.c_beta > 0.0 && b.c_lambda > 0.0 && b.cap_interval > 0.0) {
            return bad("c_beta, c_lambda and C_T must be positive".into());
        }
        Ok(())
    }
}

/// Constants of the estimation error bounds and the exploration threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub exploration_threshold: u64,
}

/// `⌈ln(4T/δ) / C0⌉`.
pub fn exploration_threshold(episodes: usize, delta: f64, c0: f64) -> u64 {
    ((4.0 * episodes as f64 / delta).ln() / c0).ceil().max(1.0) as u64
}

pub fn compute_constants(config: &AgentConfig, episodes: usize) -> Result<ConstantsBundle> {
    config.check()?;
    let b = &config.bounds;
    let cp = config.bernstein_c;
    let half = 1.0 - (-b.c_lambda / 2.0).exp();
    let full = 1.0 - (-b.c_lambda).exp();
    let ct = b.cap_interval;
    let sqrt3 = 3f64.sqrt();

    let c1 = 12.0 * sqrt3 * ct / (b.c_beta * half * cp.sqrt());
    let c2 = (18.0 + 10.0 / b.c_beta) / half.powi(4) * sqrt3 * ct / cp.sqrt();
    let c0 = cp
        * 4f64
            .min(b.c_beta.powi(2) * half.powi(4) / (64.0 * ct * ct))
            .min(b.c_beta * full / (3.0 * ct));
    let exploration_threshold = match config.exploration_override {
        Some(k) => k,
        None => exploration_threshold(episodes, config.delta, c0),
    };
    Ok(ConstantsBundle {
        c0,
        c1,
        c2,
        exploration_threshold,
    })
}

/// Lexicographically first `(h, l)` with fewer than `threshold` wins.
pub fn needs_exploration(counts: &Triangular<u64>, threshold: u64) -> Option<(usize, usize)> {
    counts
        .iter()
        .find(|(_, &n)| n < threshold)
        .map(|(key, _)| key)
}

/// Bids that force a win at `h` from state `l`: 1 at rounds `h − l` and `h`,
/// 0 elsewhere. With `l = h` the earlier win is the fake one at round 0.
pub fn exploration_bids(h: usize, l: usize, horizon: usize) -> Result<Vec<f64>> {
    if l == 0 || l > h || h > horizon {
        return Err(Error::InvalidArgument(format!(
            "no exploration pattern for (h={h}, l={l}) with H = {horizon}"
        )));
    }
    let mut bids = vec![0.0; horizon];
    bids[h - 1] = 1.0;
    if l < h {
        bids[h - l - 1] = 1.0;
    }
    Ok(bids)
}

/// `min(1, β̂ + c √(log_term / n))`.
pub fn optimistic_entry(beta_hat: f64, scaled_c2: f64, pairs: u64, log_term: f64) -> f64 {
    if pairs == 0 {
        return 1.0;
    }
    (beta_hat + scaled_c2 * (log_term / pairs as f64).sqrt()).min(1.0)
}

/// What to bid in the next episode.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Explore {
        round: usize,
        gap: usize,
        bids: Vec<f64>,
    },
    Exploit(Policy),
}

impl Decision {
    pub fn phase(&self) -> &'static str {
        match self {
            Decision::Explore { .. } => "explore",
            Decision::Exploit(_) => "exploit",
        }
    }
}

/// One line of verbose agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTelemetry {
    pub t: usize,
    pub phase: String,
    pub target: Option<(usize, usize)>,
    pub policy_hash: Option<String>,
    /// `None` while some state has no win yet.
    pub max_width: Option<f64>,
    pub mean_width: Option<f64>,
    /// States without a matched pair.
    pub unmatched: usize,
}

pub fn policy_hash(policy: &Policy) -> String {
    let mut hasher = DefaultHasher::new();
    for &b in policy.table.values() {
        b.to_bits().hash(&mut hasher);
    }
    format!("{:016x}", hasher.finish())
}

#[derive(Debug, Clone)]
pub struct OnlineAgent {
    config: AgentConfig,
    constants: ConstantsBundle,
    horizon: usize,
    episodes: usize,
    value: f64,
    format: AuctionFormat,
    grid: BidGrid,
    pamm: MatchState,
    hob: GridTally,
    wins: Triangular<u64>,
    seen: u64,
}

impl OnlineAgent {
    pub fn new(scenario: &ScenarioConfig, config: AgentConfig) -> Result<Self> {
        let constants = compute_constants(&config, scenario.episodes)?;
        let horizon = scenario.horizon;
        Ok(OnlineAgent {
            config,
            constants,
            horizon,
            episodes: scenario.episodes,
            value: scenario.value,
            format: scenario.auction_format,
            grid: scenario.bid_grid.clone(),
            pamm: MatchState::new(horizon),
            hob: GridTally::new(scenario.bid_grid.clone(), horizon),
            wins: Triangular::filled(horizon, 0),
            seen: 0,
        })
    }

    pub fn constants(&self) -> &ConstantsBundle {
        &self.constants
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn grid(&self) -> &BidGrid {
        &self.grid
    }

    pub fn matches(&self) -> &MatchState {
        &self.pamm
    }

    /// `n_h(l)`: wins observed at round `h` from state `l`.
    pub fn win_counts(&self) -> &Triangular<u64> {
        &self.wins
    }

    pub fn episodes_seen(&self) -> u64 {
        self.seen
    }

    pub fn exploring(&self) -> Option<(usize, usize)> {
        needs_exploration(&self.wins, self.constants.exploration_threshold)
    }

    pub fn decide(&self) -> Result<Decision> {
        match self.exploring() {
            Some((h, l)) => Ok(Decision::Explore {
                round: h,
                gap: l,
                bids: exploration_bids(h, l, self.horizon)?,
            }),
            None => self.next_policy().map(Decision::Exploit),
        }
    }

    /// Feeds a finished episode to the estimator, the HOB tally and the win counts.
    pub fn update(&mut self, log: &EpisodeLog) {
        self.pamm.ingest_episode(log);
        for (h, &m) in (1..=self.horizon).zip(&log.hobs) {
            self.hob.ingest(h, m);
        }
        for &h in &log.wins {
            self.wins[(h, log.states[h - 1])] += 1;
        }
        self.seen += 1;
    }

    pub fn hob_table(&self) -> Result<HobTable> {
        self.hob.table(self.format)
    }

    /// PAMM point estimates of `β`, `None` where no pair was matched yet.
    pub fn point_beta(&self) -> Triangular<Option<f64>> {
        let b = &self.config.bounds;
        Triangular::from_fn(self.horizon, |h, l| {
            self.pamm.estimate_beta(h, l, b).ok().map(|e| e.value)
        })
    }

    /// `log(T/δ)`, the confidence-region log term.
    pub fn log_term(&self) -> f64 {
        (self.episodes as f64 / self.config.delta).ln()
    }

    /// Confidence half-widths `κ C2 √(log(T/δ) / n_h(l))`; infinite without wins.
    pub fn widths(&self) -> Triangular<f64> {
        let scale = self.config.confidence_scale * self.constants.c2;
        let log_term = self.log_term();
        self.wins.map(|_, &n| match n {
            0 => f64::INFINITY,
            n => scale * (log_term / n as f64).sqrt(),
        })
    }

    /// Upper end of the confidence region, capped at 1.
    ///
    /// States without a matched pair start from `c_β`, the estimator's own
    /// fallback, so that bidding there can still lose and produce pairs.
    pub fn optimistic_beta(&self) -> Triangular<f64> {
        let scale = self.config.confidence_scale * self.constants.c2;
        let log_term = self.log_term();
        let point = self.point_beta();
        Triangular::from_fn(self.horizon, |h, l| {
            let base = point[(h, l)].unwrap_or(self.config.bounds.c_beta);
            optimistic_entry(base, scale, self.wins[(h, l)], log_term)
        })
    }

    /// Plans against `beta` and the empirical HOB law.
    pub fn plan_for(&self, beta: Triangular<f64>) -> Result<Policy> {
        let spec = MdpSpec::new(beta, self.hob_table()?, self.value)?;
        Ok(plan(&spec).policy)
    }

    /// Optimistic policy for the next episode.
    pub fn next_policy(&self) -> Result<Policy> {
        if let Some(((h, l), _)) = self.wins.iter().find(|(_, &n)| n == 0) {
            return Err(Error::NoPairs(format!(
                "no win observed yet at (h={h}, l={l})"
            )));
        }
        self.plan_for(self.optimistic_beta())
    }

    pub fn telemetry(&self, t: usize, decision: &Decision) -> AgentTelemetry {
        let widths = self.widths();
        let finite: Vec<f64> = widths.values().iter().copied().filter(|w| w.is_finite()).collect();
        let max_width = (finite.len() == widths.values().len())
            .then(|| finite.iter().copied().fold(0.0, f64::max));
        let mean_width =
            (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        let unmatched = self.wins.iter().filter(|&((h, l), _)| self.pamm.pairs(h, l) == 0).count();
        let (target, policy_hash) = match decision {
            Decision::Explore { round, gap, .. } => (Some((*round, *gap)), None),
            Decision::Exploit(p) => (None, Some(policy_hash(p))),
        };
        AgentTelemetry {
            t,
            phase: decision.phase().to_string(),
            target,
            policy_hash,
            max_width,
            mean_width,
            unmatched,
        }
    }
}
