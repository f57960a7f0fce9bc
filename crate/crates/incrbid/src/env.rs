//! Ground-truth episodic auction environment.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conversion::{sample_conversions, win_records};
use crate::error::{Error, Result};
use crate::hob::HobModel;
use crate::model::{
    state_transition, AuctionFormat, BidGrid, EpisodeLog, IncrementalityParams, Policy, Scenario,
    ScenarioConfig,
};

/// Independent RNG stream for episode `t` of a run seeded with `seed`.
pub fn episode_rng(seed: u64, t: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    rng
}

/// One uniformly random grid bid per round.
pub fn random_bids<R: Rng + ?Sized>(grid: &BidGrid, horizon: usize, rng: &mut R) -> Vec<f64> {
    (0..horizon)
        .map(|_| grid.bids()[rng.random_range(0..grid.len())])
        .collect()
}

/// Where the bids of an episode come from.
#[derive(Debug, Clone, Copy)]
pub enum BidSource<'a> {
    Policy(&'a Policy),
    /// One bid per round regardless of state.
    Bids(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvOutcome {
    pub log: EpisodeLog,
    /// `v · (conversions triggered) − Σ payments`.
    pub realized_utility: f64,
    /// All triggered conversions, including those after the observation window.
    pub total_conversions: usize,
}

/// The true environment: scenario parameters plus a parametric HOB law.
#[derive(Debug, Clone)]
pub struct Environment {
    pub config: ScenarioConfig,
    pub params: IncrementalityParams,
    pub hob: HobModel,
}

impl Environment {
    pub fn new(scenario: Scenario, hob: HobModel) -> Result<Self> {
        if !matches!(hob, HobModel::Parametric(_)) {
            return Err(Error::NotParametric);
        }
        if hob.horizon() != scenario.horizon() {
            return Err(Error::InvalidArgument(format!(
                "HOB model covers {} rounds, scenario has H = {}",
                hob.horizon(),
                scenario.horizon()
            )));
        }
        Ok(Environment {
            config: scenario.config,
            params: scenario.params,
            hob,
        })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// End of the observation window, `H + 1`.
    pub fn observation_end(&self) -> f64 {
        (self.horizon() + 1) as f64
    }

    /// Plays one episode and samples its conversions.
    pub fn run_episode<R: Rng + ?Sized>(
        &self,
        source: BidSource<'_>,
        rng: &mut R,
    ) -> Result<EnvOutcome> {
        let horizon = self.horizon();
        let grid = &self.config.bid_grid;
        match source {
            BidSource::Policy(p) => {
                if p.horizon() != horizon {
                    return Err(Error::InvalidArgument("policy horizon differs from H".into()));
                }
                p.check_grid(grid)?;
            }
            BidSource::Bids(b) if b.len() != horizon => {
                return Err(Error::InvalidArgument(format!(
                    "{} bids for H = {horizon} rounds",
                    b.len()
                )));
            }
            BidSource::Bids(_) => {}
        }

        let mut log = EpisodeLog {
            wins: Vec::new(),
            conversions: Vec::new(),
            hobs: Vec::with_capacity(horizon),
            bids: Vec::with_capacity(horizon),
            states: Vec::with_capacity(horizon),
            payments: Vec::new(),
        };
        let mut gap = 1;
        for h in 1..=horizon {
            let bid = match source {
                BidSource::Policy(p) => p.bid(h, gap),
                BidSource::Bids(b) => b[h - 1],
            };
            let m = self.hob.sample(h, rng)?;
            let won = bid >= m;
            log.states.push(gap);
            log.bids.push(bid);
            log.hobs.push(m);
            if won {
                log.wins.push(h);
                log.payments.push(match self.config.auction_format {
                    AuctionFormat::SecondPrice => m,
                    AuctionFormat::FirstPrice => bid,
                });
            }
            gap = state_transition(gap, won);
        }

        let all = sample_conversions(&win_records(&log.wins), &self.params, f64::INFINITY, rng);
        let end = self.observation_end();
        let total_conversions = all.len();
        log.conversions = all.into_iter().filter(|&c| c < end).collect();
        let realized_utility =
            self.config.value * total_conversions as f64 - log.payments.iter().sum::<f64>();
        Ok(EnvOutcome {
            log,
            realized_utility,
            total_conversions,
        })
    }

    /// Runs `count` independent episodes, episode `t` on stream `t` of `seed`.
    ///
    /// Output depends only on `(seed, inputs)`, not on thread scheduling.
    pub fn run_batch<'a, F>(&self, count: usize, seed: u64, source_for: F) -> Result<Vec<EnvOutcome>>
    where
        F: Fn(usize) -> BidSource<'a> + Sync,
    {
        (0..count)
            .into_par_iter()
            .map(|t| self.run_episode(source_for(t), &mut episode_rng(seed, t as u64)))
            .collect()
    }
}

/// One line of the episode trace format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub bids: Vec<f64>,
    pub hobs: Vec<f64>,
    pub wins: Vec<usize>,
    pub conversions: Vec<f64>,
}

impl TraceRecord {
    pub fn from_log(t: usize, log: &EpisodeLog) -> Self {
        TraceRecord {
            t,
            bids: log.bids.clone(),
            hobs: log.hobs.clone(),
            wins: log.wins.clone(),
            conversions: log.conversions.clone(),
        }
    }

    /// Rebuilds the episode log; states and payments follow from the record.
    pub fn to_log(&self, format: AuctionFormat) -> Result<EpisodeLog> {
        let horizon = self.bids.len();
        let payments = self
            .wins
            .iter()
            .map(|&h| match format {
                AuctionFormat::SecondPrice => self.hobs[h - 1],
                AuctionFormat::FirstPrice => self.bids[h - 1],
            })
            .collect();
        let log = EpisodeLog {
            wins: self.wins.clone(),
            conversions: self.conversions.clone(),
            hobs: self.hobs.clone(),
            bids: self.bids.clone(),
            states: EpisodeLog::replay_states(&self.wins, horizon),
            payments,
        };
        log.check()?;
        Ok(log)
    }
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
