//! Regret experiments: run a bidder against the true environment, score every
//! episode exactly, and compare with simple baselines.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentTelemetry, Decision, OnlineAgent};
use crate::env::{episode_rng, BidSource, Environment};
use crate::error::{Error, Result};
use crate::hob::HobTable;
use crate::model::{EpisodeLog, Policy};
use crate::planner::{evaluate_bids, evaluate_policy, plan, MdpSpec};

/// Anything that picks bids episode by episode and learns from the outcome.
pub trait Bidder {
    fn decide(&mut self) -> Result<Decision>;
    fn observe(&mut self, log: &EpisodeLog) -> Result<()>;
    fn telemetry(&self, _t: usize, _decision: &Decision) -> Option<AgentTelemetry> {
        None
    }
}

impl Bidder for OnlineAgent {
    fn decide(&mut self) -> Result<Decision> {
        OnlineAgent::decide(self)
    }

    fn observe(&mut self, log: &EpisodeLog) -> Result<()> {
        self.update(log);
        Ok(())
    }

    fn telemetry(&self, t: usize, decision: &Decision) -> Option<AgentTelemetry> {
        Some(OnlineAgent::telemetry(self, t, decision))
    }
}

/// Plays the same policy every episode and ignores feedback.
#[derive(Debug, Clone)]
pub struct FixedBidder(pub Policy);

impl Bidder for FixedBidder {
    fn decide(&mut self) -> Result<Decision> {
        Ok(Decision::Exploit(self.0.clone()))
    }

    fn observe(&mut self, _log: &EpisodeLog) -> Result<()> {
        Ok(())
    }
}

/// The true MDP of an environment.
pub fn true_spec(env: &Environment) -> Result<MdpSpec> {
    let hob = HobTable::tabulate(&env.hob, &env.config.bid_grid, env.config.auction_format)?;
    MdpSpec::new(env.params.beta.clone(), hob, env.config.value)
}

/// One row of the per-episode results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub replication: usize,
    pub t: usize,
    pub phase: String,
    pub policy_value: f64,
    pub opt_value: f64,
    pub cum_regret: f64,
    pub realized_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub replication: usize,
    pub seed: u64,
    pub opt_value: f64,
    pub final_regret: f64,
    pub regret_exponent: Option<f64>,
    pub exploration_episodes: usize,
    /// Mean expected reward over the last 10% of episodes.
    pub tail_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub summary: Summary,
    pub rows: Vec<EpisodeRow>,
    pub telemetry: Vec<AgentTelemetry>,
}

const REGRET_TIE: f64 = 1e-12;

/// Seed of replication `r`, derived from the run seed.
pub fn replication_seed(seed: u64, replication: usize) -> u64 {
    episode_rng(seed, u64::MAX - replication as u64).random()
}

/// Plays `episodes` episodes with `bidder`; episode `t` draws from stream `t`
/// of `seed`.
pub fn run_replication<B: Bidder>(
    env: &Environment,
    spec: &MdpSpec,
    bidder: &mut B,
    replication: usize,
    seed: u64,
    verbose: bool,
) -> Result<Replication> {
    let episodes = env.config.episodes;
    let opt = plan(spec).value;
    let mut rows = Vec::with_capacity(episodes);
    let mut telemetry = Vec::new();
    let mut cum = 0.0;
    let mut exploration = 0;
    for t in 1..=episodes {
        let decision = bidder.decide()?;
        if verbose {
            telemetry.extend(bidder.telemetry(t, &decision));
        }
        let (value, source) = match &decision {
            Decision::Explore { bids, .. } => {
                exploration += 1;
                (evaluate_bids(bids, spec)?, BidSource::Bids(bids))
            }
            Decision::Exploit(p) => (evaluate_policy(p, spec)?, BidSource::Policy(p)),
        };
        let outcome = env.run_episode(source, &mut episode_rng(seed, t as u64))?;
        bidder.observe(&outcome.log)?;
        // differences at rounding level are ties, not regret
        let gap = opt - value;
        if gap.abs() > REGRET_TIE * opt.abs().max(1.0) {
            cum += gap;
        }
        rows.push(EpisodeRow {
            replication,
            t,
            phase: decision.phase().to_string(),
            policy_value: value,
            opt_value: opt,
            cum_regret: cum,
            realized_utility: outcome.realized_utility,
        });
    }
    let cum_series: Vec<f64> = rows.iter().map(|r| r.cum_regret).collect();
    let tail = (episodes / 10).max(1).min(episodes);
    let tail_mean = if episodes == 0 {
        0.0
    } else {
        rows[episodes - tail..].iter().map(|r| r.policy_value).sum::<f64>() / tail as f64
    };
    Ok(Replication {
        summary: Summary {
            replication,
            seed,
            opt_value: opt,
            final_regret: cum,
            regret_exponent: fit_regret_exponent(&cum_series).map(|f| f.slope),
            exploration_episodes: exploration,
            tail_mean,
        },
        rows,
        telemetry,
    })
}

/// Runs independent replications in parallel; output depends only on `seed`.
pub fn run_with<B, F>(
    env: &Environment,
    replications: usize,
    seed: u64,
    verbose: bool,
    make: F,
) -> Result<Vec<Replication>>
where
    B: Bidder,
    F: Fn(usize) -> Result<B> + Sync,
{
    let spec = true_spec(env)?;
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut bidder = make(r)?;
            run_replication(env, &spec, &mut bidder, r, replication_seed(seed, r), verbose)
        })
        .collect()
}

/// Runs the online agent.
pub fn run_experiment(
    env: &Environment,
    agent: &AgentConfig,
    replications: usize,
    seed: u64,
    verbose: bool,
) -> Result<Vec<Replication>> {
    run_with(env, replications, seed, verbose, |_| {
        OnlineAgent::new(&env.config, agent.clone())
    })
}

/// `log R(t) ≈ intercept + slope · log t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares fit of `log R(t)` on `log t` over the last 80% of episodes.
///
/// `None` when fewer than two of those points have positive regret.
pub fn fit_regret_exponent(cum_regret: &[f64]) -> Option<PowerFit> {
    let skip = cum_regret.len() / 5;
    let pts: Vec<(f64, f64)> = cum_regret
        .iter()
        .enumerate()
        .skip(skip)
        .filter(|(_, &r)| r > 0.0)
        .map(|(i, &r)| (((i + 1) as f64).ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(PowerFit {
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub expected_reward: f64,
    pub opt_value: f64,
    pub regret_per_episode: f64,
}

/// Expected reward of bidding uniformly at random over the grid each round.
pub fn evaluate_random(spec: &MdpSpec) -> f64 {
    let horizon = spec.horizon();
    let n = spec.grid().len() as f64;
    let mut dist = vec![0.0; horizon + 1];
    dist[0] = 1.0;
    let mut total = 0.0;
    for h in 1..=horizon {
        let win: f64 = (0..spec.grid().len()).map(|i| spec.hob.win_prob(h, i)).sum::<f64>() / n;
        let mut next = vec![0.0; horizon + 1];
        for l in 1..=h {
            let mass = dist[l - 1];
            let reward: f64 =
                (0..spec.grid().len()).map(|i| spec.expected_reward(h, l, i)).sum::<f64>() / n;
            total += mass * reward;
            next[0] += mass * win;
            next[l] += mass * (1.0 - win);
        }
        dist = next;
    }
    total
}

/// Best constant bid, uniformly random bids and the optimal policy.
pub fn run_baselines(env: &Environment) -> Result<Vec<BaselineRow>> {
    let spec = true_spec(env)?;
    let opt = plan(&spec).value;
    let mut best = f64::NEG_INFINITY;
    for &b in spec.grid().bids() {
        best = best.max(evaluate_policy(&Policy::constant(spec.horizon(), b), &spec)?);
    }
    let row = |name: &str, reward: f64| BaselineRow {
        name: name.to_string(),
        expected_reward: reward,
        opt_value: opt,
        regret_per_episode: opt - reward,
    };
    Ok(vec![
        row("best_fixed_bid", best),
        row("random_bid", evaluate_random(&spec)),
        row("oracle", opt),
    ])
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::hob::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-episode results of all replications.
pub fn write_results_csv<W: Write>(out: W, reps: &[Replication]) -> Result<()> {
    write_rows(out, reps.iter().flat_map(|r| &r.rows))
}

pub fn write_summary_csv<W: Write>(out: W, reps: &[Replication]) -> Result<()> {
    write_rows(out, reps.iter().map(|r| &r.summary))
}

pub fn write_baselines_csv<W: Write>(out: W, rows: &[BaselineRow]) -> Result<()> {
    write_rows(out, rows)
}

pub fn write_telemetry<W: Write>(mut out: W, reps: &[Replication]) -> Result<()> {
    for r in reps {
        for line in &r.telemetry {
            serde_json::to_writer(&mut out, line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn check_replications(replications: usize) -> Result<()> {
    if replications == 0 {
        return Err(Error::InvalidArgument("at least one replication required".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hob::HobModel;
    use crate::model::{
        validate_scenario, AuctionFormat, BidGrid, Bounds, IncrementalityParams, ScenarioConfig,
        Triangular,
    };

    fn env(episodes: usize) -> Environment {
        let config = ScenarioConfig {
            horizon: 3,
            episodes,
            value: 1.0,
            auction_format: AuctionFormat::SecondPrice,
            bid_grid: BidGrid::uniform(11),
            seed: 1,
            delta: 0.1,
        };
        let params = IncrementalityParams {
            beta: Triangular::from_fn(3, |_, l| 0.3 + 0.2 * l as f64),
            lambda: vec![1.5; 3],
            bounds: Bounds {
                c_beta: 0.1,
                cap_beta: 1.0,
                c_lambda: 0.5,
                cap_lambda: 3.0,
                cap_interval: 5.0,
            },
        };
        Environment::new(validate_scenario(config, params).unwrap(), HobModel::uniform(3)).unwrap()
    }

    #[test]
    fn oracle_has_zero_regret() {
        let e = env(50);
        let policy = plan(&true_spec(&e).unwrap()).policy;
        let reps = run_with(&e, 2, 5, false, |_| Ok(FixedBidder(policy.clone()))).unwrap();
        for r in &reps {
            assert!(r.rows.iter().all(|row| row.cum_regret.abs() < 1e-12));
            assert_eq!(r.summary.regret_exponent, None);
        }
    }

    #[test]
    fn zero_agent_regret_is_linear() {
        let e = env(200);
        let reps = run_with(&e, 1, 5, false, |_| Ok(FixedBidder(Policy::constant(3, 0.0)))).unwrap();
        let s = &reps[0].summary;
        assert!((s.final_regret - 200.0 * s.opt_value).abs() < 1e-9);
        assert!((s.regret_exponent.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exponent_of_power_law() {
        let r: Vec<f64> = (1..=1000).map(|t| 3.0 * (t as f64).powf(0.5)).collect();
        let fit = fit_regret_exponent(&r).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        let linear: Vec<f64> = (1..=1000).map(|t| t as f64).collect();
        assert!((fit_regret_exponent(&linear).unwrap().slope - 1.0).abs() < 1e-12);
        assert_eq!(fit_regret_exponent(&[0.0; 10]), None);
    }

    #[test]
    fn random_baseline_matches_mixture_by_enumeration() {
        let spec = true_spec(&env(1)).unwrap();
        let bids = spec.grid().bids().to_vec();
        // every open-loop bid vector is equally likely; average their exact values
        let mut acc = 0.0;
        let mut count = 0;
        for &a in &bids {
            for &b in &bids {
                for &c in &bids {
                    acc += evaluate_bids(&[a, b, c], &spec).unwrap();
                    count += 1;
                }
            }
        }
        assert!((evaluate_random(&spec) - acc / count as f64).abs() < 1e-12);
    }

    #[test]
    fn baselines_are_ordered() {
        let rows = run_baselines(&env(1)).unwrap();
        let by = |n: &str| rows.iter().find(|r| r.name == n).unwrap().expected_reward;
        assert!(by("oracle") >= by("best_fixed_bid"));
        assert!(by("best_fixed_bid") >= by("random_bid"));
        assert_eq!(rows.iter().find(|r| r.name == "oracle").unwrap().regret_per_episode, 0.0);
    }

    #[test]
    fn results_csv_columns() {
        let e = env(5);
        let reps = run_with(&e, 1, 1, false, |_| Ok(FixedBidder(Policy::constant(3, 0.5)))).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &reps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "replication,t,phase,policy_value,opt_value,cum_regret,realized_utility"
        );
        assert_eq!(text.lines().count(), 6);
    }
}
