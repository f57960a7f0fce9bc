use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use incrbid::agent::{AgentConfig, Decision, OnlineAgent};
use incrbid::env::{episode_rng, random_bids, BidSource, Environment};
use incrbid::harness::{run_experiment, true_spec};
use incrbid::hob::HobModel;
use incrbid::model::{
    validate_scenario, AuctionFormat, BidGrid, Bounds, EpisodeLog, IncrementalityParams,
    ScenarioConfig, Triangular,
};
use incrbid::pamm::MatchState;
use incrbid::planner::{plan, MdpSpec};

fn bounds() -> Bounds {
    Bounds {
        c_beta: 0.1,
        cap_beta: 1.0,
        c_lambda: 0.5,
        cap_lambda: 5.0,
        cap_interval: 5.0,
    }
}

fn env_with(horizon: usize, episodes: usize, beta: Triangular<f64>, lambda: Vec<f64>) -> Environment {
    let config = ScenarioConfig {
        horizon,
        episodes,
        value: 1.0,
        auction_format: AuctionFormat::SecondPrice,
        bid_grid: BidGrid::uniform(11),
        seed: 3,
        delta: 0.05,
    };
    let params = IncrementalityParams {
        beta,
        lambda,
        bounds: bounds(),
    };
    Environment::new(validate_scenario(config, params).unwrap(), HobModel::uniform(horizon)).unwrap()
}

fn env(horizon: usize, episodes: usize) -> Environment {
    env_with(
        horizon,
        episodes,
        Triangular::from_fn(horizon, |h, l| 0.3 + 0.1 * l as f64 + 0.01 * h as f64),
        (0..horizon).map(|h| 2.0 + 0.3 * h as f64).collect(),
    )
}

fn random_logs(env: &Environment, count: usize, seed: u64) -> Vec<EpisodeLog> {
    (0..count)
        .map(|t| {
            let mut rng = episode_rng(seed, t as u64);
            let bids = random_bids(&env.config.bid_grid, env.horizon(), &mut rng);
            env.run_episode(BidSource::Bids(&bids), &mut rng).unwrap().log
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn states_replay_from_wins(seed in any::<u64>(), horizon in 1usize..7) {
        let e = env(horizon, 1);
        for log in random_logs(&e, 20, seed) {
            prop_assert_eq!(EpisodeLog::replay_states(&log.wins, horizon), log.states.clone());
            prop_assert!(log.check().is_ok());
        }
    }
}

/// Batch matching: at each level and prefix class, the k-th winner is paired
/// with the k-th non-winner, in arrival order.
fn batch_pairs(logs: &[EpisodeLog], h: usize) -> Vec<(u64, u64)> {
    let mut winners: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
    let mut others: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
    for (i, log) in logs.iter().enumerate() {
        let prefix: Vec<usize> = log.wins.iter().copied().filter(|&w| w < h).collect();
        let bucket = if log.wins.contains(&h) { &mut winners } else { &mut others };
        bucket.entry(prefix).or_default().push(i as u64);
    }
    let mut out = Vec::new();
    for (prefix, ws) in &winners {
        if let Some(cs) = others.get(prefix) {
            out.extend(ws.iter().copied().zip(cs.iter().copied()));
        }
    }
    out.sort();
    out
}

#[test]
fn online_matching_equals_batch_pass() {
    let e = env(4, 1);
    let logs = random_logs(&e, 3_000, 17);
    let mut m = MatchState::new(4);
    for log in &logs {
        m.ingest_episode(log);
    }
    for h in 1..=4 {
        let mut online = m.matched_pairs(h).to_vec();
        online.sort();
        assert_eq!(online, batch_pairs(&logs, h), "level {h}");

        // sufficient statistics recomputed from the batch pairs
        let count = |log: &EpisodeLog, a: f64, b: f64| {
            log.conversions.iter().filter(|&&c| a <= c && c < b).count() as i64
        };
        let hf = h as f64;
        let mut by_state = vec![(0i64, 0i64, 0u64); h];
        for (w, c) in batch_pairs(&logs, h) {
            let (w, c) = (&logs[w as usize], &logs[c as usize]);
            let gap = w.states[h - 1];
            let s = &mut by_state[gap - 1];
            s.0 += count(w, hf, hf + 0.5) - count(c, hf, hf + 0.5);
            s.1 += count(w, hf + 0.5, hf + 1.0) - count(c, hf + 0.5, hf + 1.0);
            s.2 += 1;
        }
        for l in 1..=h {
            let s = m.state_sums(h, l);
            assert_eq!((s.sum_x, s.sum_y, s.count), by_state[l - 1], "({h},{l})");
        }
    }
}

#[test]
fn prefix_background_cancels() {
    // same β_3(1) and λ_3, very different conversions carried over from round 2
    let lambda = vec![1.0, 0.6, 2.0];
    let target = 0.5;
    let expected = target * (1.0 - (-1.0f64).exp());
    for background in [0.1, 0.95] {
        let beta = Triangular::from_rows(vec![
            vec![0.2],
            vec![background, background],
            vec![target, 0.3, 0.3],
        ])
        .unwrap();
        let e = env_with(3, 1, beta, lambda.clone());
        let mut m = MatchState::new(3);
        let n = 40_000;
        for t in 0..2 * n {
            let bids: &[f64] = if t % 2 == 0 { &[0.0, 1.0, 1.0] } else { &[0.0, 1.0, 0.0] };
            let log = e.run_episode(BidSource::Bids(bids), &mut episode_rng(21, t as u64)).unwrap().log;
            m.ingest_episode(&log);
        }
        let s = m.state_sums(3, 1);
        assert_eq!(s.count, n as u64);
        let mean = s.sum_x as f64 / n as f64;
        // X is a difference of two Poisson counts; its variance is their sum
        let var_bound = (2.0 * background + 2.0 * target) / n as f64;
        assert!(
            (mean - expected).abs() < 4.0 * var_bound.sqrt(),
            "background {background}: mean {mean}, expected {expected}"
        );
    }
}

#[test]
fn exploration_takes_exactly_k_per_state() {
    let k = 7;
    let e = env(4, 400);
    let mut cfg = AgentConfig::new(0.05, bounds());
    cfg.exploration_override = Some(k);
    cfg.confidence_scale = 1e-3;
    let reps = run_experiment(&e, &cfg, 2, 9, false).unwrap();
    for r in &reps {
        assert_eq!(r.summary.exploration_episodes, k as usize * 4 * 5 / 2);
        let first_exploit = r.rows.iter().position(|row| row.phase == "exploit").unwrap();
        assert!(r.rows[first_exploit..].iter().all(|row| row.phase == "exploit"));
    }

    let mut agent = OnlineAgent::new(&e.config, cfg).unwrap();
    let mut explored = 0;
    for t in 0..100 {
        match agent.decide().unwrap() {
            Decision::Explore { bids, .. } => {
                explored += 1;
                let log = e.run_episode(BidSource::Bids(&bids), &mut episode_rng(1, t)).unwrap().log;
                agent.update(&log);
            }
            Decision::Exploit(_) => break,
        }
    }
    assert_eq!(explored, 70);
    assert!(agent.win_counts().values().iter().all(|&n| n >= k));
}

#[test]
fn exploration_within_theoretical_budget() {
    // loose bounds keep the theoretical threshold small
    let agent_bounds = Bounds {
        c_beta: 1.0,
        cap_beta: 1.0,
        c_lambda: 20.0,
        cap_lambda: 30.0,
        cap_interval: 0.1,
    };
    let e = env(3, 10);
    let cfg = AgentConfig::new(0.1, agent_bounds);
    let mut agent = OnlineAgent::new(&e.config, cfg).unwrap();
    let k = agent.constants().exploration_threshold;
    let c0 = agent.constants().c0;
    let mut tau = 0u64;
    while let Decision::Explore { bids, .. } = agent.decide().unwrap() {
        let log = e.run_episode(BidSource::Bids(&bids), &mut episode_rng(2, tau)).unwrap().log;
        agent.update(&log);
        tau += 1;
    }
    assert_eq!(tau, k * 6);
    let budget = 9.0 * (4.0 * 10.0 / 0.1f64).ln() / c0;
    assert!((tau as f64) <= budget, "tau {tau} above {budget}");
}

#[test]
fn regret_terms_nonnegative_and_cumulative_monotone() {
    let e = env(3, 600);
    let mut cfg = AgentConfig::new(0.05, bounds());
    cfg.exploration_override = Some(5);
    cfg.confidence_scale = 1e-4;
    let reps = run_experiment(&e, &cfg, 3, 4, false).unwrap();
    for r in &reps {
        let mut prev = 0.0;
        for row in &r.rows {
            assert!(row.opt_value - row.policy_value >= -1e-12);
            assert!(row.cum_regret >= prev);
            prev = row.cum_regret;
        }
    }
}

fn trained_agent(scale: f64) -> OnlineAgent {
    let e = env(3, 1_000);
    let mut cfg = AgentConfig::new(0.05, bounds());
    cfg.exploration_override = Some(20);
    cfg.confidence_scale = scale;
    let mut agent = OnlineAgent::new(&e.config, cfg).unwrap();
    for log in random_logs(&e, 1_500, 5) {
        agent.update(&log);
    }
    agent
}

#[test]
fn optimistic_value_grows_with_kappa() {
    let mut last = f64::NEG_INFINITY;
    for scale in [1e-6, 1e-4, 1e-3, 1e-2, 1.0] {
        let agent = trained_agent(scale);
        let spec = MdpSpec::new(agent.optimistic_beta(), agent.hob_table().unwrap(), 1.0).unwrap();
        let v = plan(&spec).value;
        assert!(v >= last, "value {v} below {last} at kappa {scale}");
        last = v;
    }
}

#[test]
fn vanishing_widths_give_plug_in_plan() {
    let agent = trained_agent(1e-300);
    let c_beta = agent.config().bounds.c_beta;
    let point = agent.point_beta().map(|_, b| b.unwrap_or(c_beta));
    assert_eq!(agent.next_policy().unwrap(), agent.plan_for(point).unwrap());
}

#[test]
fn oracle_plan_uses_true_tables() {
    let e = env(4, 1);
    let spec = true_spec(&e).unwrap();
    let p = plan(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // no random table policy beats the plan
    for _ in 0..200 {
        let table = Triangular::from_fn(4, |_, _| e.config.bid_grid.bids()[rng.random_range(0..11)]);
        let v = incrbid::planner::evaluate_policy(&incrbid::model::Policy { table }, &spec).unwrap();
        assert!(v <= p.value + 1e-12);
    }
}
