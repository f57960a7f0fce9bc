//! Scenario files and policy tables on disk.
//!
//! A scenario is one JSON document:
//!
//! ```json
//! {
//!   "config": { "horizon": 2, "episodes": 1000, "value": 1.0,
//!               "auction_format": "second_price",
//!               "bid_grid": [0.0, 0.5, 1.0], "seed": 7, "delta": 0.05 },
//!   "params": { "beta": [[0.4], [0.3, 0.6]], "lambda": [1.0, 2.0],
//!               "bounds": { "c_beta": 0.1, "cap_beta": 1.0, "c_lambda": 0.5,
//!                           "cap_lambda": 4.0, "cap_interval": 2.0 } },
//!   "hob": { "kind": "uniform" },
//!   "agent": { "confidence_scale": 0.01, "exploration_override": 20 }
//! }
//! ```
//!
//! `beta` row `h` lists `β_h(1..=h)`. `hob` is one distribution for every
//! round or a list with one per round. `agent` is optional.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::Environment;
use crate::error::{Error, Result, Violation};
use crate::hob::{csv_err, HobDist, HobModel};
use crate::model::{validate_scenario, Bounds, IncrementalityParams, Policy, ScenarioConfig, Triangular};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub beta: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HobSpec {
    Shared(HobDist),
    PerRound(Vec<HobDist>),
}

/// Optional agent settings; missing fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    pub confidence_scale: Option<f64>,
    pub exploration_override: Option<u64>,
    pub bernstein_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub config: ScenarioConfig,
    pub params: ParamsFile,
    pub hob: HobSpec,
    #[serde(default)]
    pub agent: AgentSettings,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub env: Environment,
    pub agent: AgentConfig,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates everything and reports all problems at once.
    pub fn build(&self) -> Result<LoadedScenario> {
        let horizon = self.config.horizon;
        let mut violations = Vec::new();

        let beta = Triangular::from_rows(self.params.beta.clone()).unwrap_or_else(|v| {
            violations.push(v);
            Triangular::filled(0, 0.0)
        });
        let dists = match &self.hob {
            HobSpec::Shared(d) => vec![*d; horizon],
            HobSpec::PerRound(v) => {
                if v.len() != horizon {
                    violations.push(Violation::DimensionMismatch(format!(
                        "hob lists {} rounds, H = {horizon}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        for (i, d) in dists.iter().enumerate() {
            if !d.is_valid() {
                violations.push(Violation::InvalidHob { round: i + 1 });
            }
        }

        let params = IncrementalityParams {
            beta,
            lambda: self.params.lambda.clone(),
            bounds: self.params.bounds,
        };
        let scenario = match validate_scenario(self.config.clone(), params) {
            Ok(s) if violations.is_empty() => s,
            Ok(_) => return Err(Error::InvalidScenario(violations)),
            Err(more) => {
                violations.extend(more);
                return Err(Error::InvalidScenario(violations));
            }
        };
        let env = Environment::new(scenario, HobModel::Parametric(dists))?;

        let mut agent = AgentConfig::new(self.config.delta, self.params.bounds);
        if let Some(k) = self.agent.confidence_scale {
            agent.confidence_scale = k;
        }
        if let Some(c) = self.agent.bernstein_c {
            agent.bernstein_c = c;
        }
        agent.exploration_override = self.agent.exploration_override;
        agent.check()?;
        Ok(LoadedScenario { env, agent })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyRow {
    h: usize,
    l: usize,
    bid: f64,
}

pub fn write_policy_csv<W: Write>(out: W, policy: &Policy) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for ((h, l), &bid) in policy.table.iter() {
        w.serialize(PolicyRow { h, l, bid }).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a policy table; every `(h, l)` with `l ≤ h ≤ H` must appear once.
pub fn read_policy_csv<R: Read>(input: R) -> Result<Policy> {
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(input).deserialize() {
        let r: PolicyRow = r.map_err(csv_err)?;
        rows.push(r);
    }
    let horizon = rows.iter().map(|r| r.h).max().unwrap_or(0);
    let mut table = Triangular::filled(horizon, f64::NAN);
    for r in &rows {
        if r.l == 0 || r.l > r.h {
            return Err(Error::InvalidArgument(format!("policy row (h={}, l={}) outside the triangle", r.h, r.l)));
        }
        if !table[(r.h, r.l)].is_nan() {
            return Err(Error::InvalidArgument(format!("duplicate policy row (h={}, l={})", r.h, r.l)));
        }
        table[(r.h, r.l)] = r.bid;
    }
    if let Some(((h, l), _)) = table.iter().find(|(_, b)| b.is_nan()) {
        return Err(Error::UndefinedPolicy { round: h, gap: l });
    }
    Ok(Policy { table })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
      "config": { "horizon": 2, "episodes": 1000, "value": 1.0,
                  "auction_format": "second_price",
                  "bid_grid": [0.0, 0.5, 1.0], "seed": 7, "delta": 0.05 },
      "params": { "beta": [[0.4], [0.3, 0.6]], "lambda": [1.0, 2.0],
                  "bounds": { "c_beta": 0.1, "cap_beta": 1.0, "c_lambda": 0.5,
                              "cap_lambda": 4.0, "cap_interval": 2.0 } },
      "hob": { "kind": "uniform" },
      "agent": { "confidence_scale": 0.01, "exploration_override": 20 }
    }"#;

    #[test]
    fn example_loads() {
        let s = ScenarioFile::from_json(EXAMPLE).unwrap();
        let loaded = s.build().unwrap();
        assert_eq!(loaded.env.params.beta(2, 2), 0.6);
        assert_eq!(loaded.agent.exploration_override, Some(20));
        assert_eq!(loaded.agent.confidence_scale, 0.01);
        assert_eq!(loaded.agent.bernstein_c, 0.5);
        let back = ScenarioFile::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn all_violations_reported() {
        let mut s = ScenarioFile::from_json(EXAMPLE).unwrap();
        s.params.beta[1][1] = 1.5;
        s.config.delta = 0.7;
        s.hob = HobSpec::PerRound(vec![HobDist::Beta { alpha: -1.0, beta: 1.0 }]);
        match s.build().unwrap_err() {
            Error::InvalidScenario(v) => {
                assert!(v.contains(&Violation::DeltaOutOfRange(0.7)));
                assert!(v.contains(&Violation::InvalidHob { round: 1 }));
                assert!(v.iter().any(|x| matches!(x, Violation::DimensionMismatch(_))));
                assert!(v.iter().any(|x| matches!(x, Violation::BetaBound { round: 2, gap: 2, .. })));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_beta_rejected() {
        let mut s = ScenarioFile::from_json(EXAMPLE).unwrap();
        s.params.beta[1].pop();
        assert!(matches!(s.build(), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn policy_round_trip() {
        let p = Policy {
            table: Triangular::from_fn(3, |h, l| (h * 10 + l) as f64 / 100.0),
        };
        let mut buf = Vec::new();
        write_policy_csv(&mut buf, &p).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("h,l,bid\n1,1,0.11\n"));
        assert_eq!(read_policy_csv(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn incomplete_policy_rejected() {
        let text = "h,l,bid\n1,1,0.5\n2,1,0.5\n";
        assert!(matches!(
            read_policy_csv(text.as_bytes()),
            Err(Error::UndefinedPolicy { round: 2, gap: 2 })
        ));
    }
}
