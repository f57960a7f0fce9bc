use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use incrbid::env::{episode_rng, random_bids, read_trace, write_trace, BidSource, TraceRecord};
use incrbid::harness::{
    check_replications, run_baselines, run_experiment, true_spec, write_baselines_csv,
    write_results_csv, write_summary_csv, write_telemetry,
};
use incrbid::pamm::MatchState;
use incrbid::planner::plan;
use incrbid::scenario::{read_policy_csv, write_policy_csv, LoadedScenario, ScenarioFile};

#[derive(Parser)]
#[command(name = "incrbid", version, about = "Incrementality-aware bidding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes and write a JSONL trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy CSV to bid with; random grid bids when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Estimate incrementality parameters from a trace.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Trace to read; defaults to `<out>/trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Optimal policy for the true parameters.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Run the online agent and record regret.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        replications: usize,
        /// Confidence width multiplier.
        #[arg(long)]
        kappa: Option<f64>,
        /// Wins per state required before exploiting.
        #[arg(long)]
        explore_override: Option<u64>,
        /// Write per-episode agent telemetry.
        #[arg(long)]
        verbose: bool,
    },
    /// Best fixed bid, random bids and the oracle.
    Baselines {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<(ScenarioFile, LoadedScenario, u64)> {
        let file = ScenarioFile::load(&self.scenario)
            .with_context(|| format!("reading {}", self.scenario.display()))?;
        let loaded = file.build()?;
        let seed = self.seed.unwrap_or(file.config.seed);
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok((file, loaded, seed))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, policy } => {
            let (_, s, seed) = common.load()?;
            let policy = match policy {
                Some(p) => Some(read_policy_csv(open(&p)?)?),
                None => None,
            };
            let env = &s.env;
            let mut records = Vec::with_capacity(env.config.episodes);
            for t in 0..env.config.episodes {
                let mut rng = episode_rng(seed, t as u64);
                let bids;
                let source = match &policy {
                    Some(p) => BidSource::Policy(p),
                    None => {
                        bids = random_bids(&env.config.bid_grid, env.horizon(), &mut rng);
                        BidSource::Bids(&bids)
                    }
                };
                let out = env.run_episode(source, &mut rng)?;
                records.push(TraceRecord::from_log(t, &out.log));
            }
            write_trace(common.create("trace.jsonl")?, &records)?;
            println!("wrote {} episodes to {}", records.len(), common.out.join("trace.jsonl").display());
        }
        Command::Estimate { common, trace } => {
            let (_, s, _) = common.load()?;
            let path = trace.unwrap_or_else(|| common.out.join("trace.jsonl"));
            let records = read_trace(open(&path)?)?;
            let mut pamm = MatchState::new(s.env.horizon());
            for r in &records {
                pamm.ingest_episode(&r.to_log(s.env.config.auction_format)?);
            }
            let est = pamm.snapshot(&s.env.params.bounds);
            est.write_beta_csv(common.create("beta.csv")?)?;
            est.write_lambda_csv(common.create("lambda.csv")?)?;
            println!(
                "estimated from {} episodes; complete: {}",
                records.len(),
                est.is_complete()
            );
        }
        Command::Plan { common } => {
            let (_, s, _) = common.load()?;
            let p = plan(&true_spec(&s.env)?);
            write_policy_csv(common.create("policy.csv")?, &p.policy)?;
            println!("{}", p.value);
        }
        Command::Run {
            common,
            replications,
            kappa,
            explore_override,
            verbose,
        } => {
            let (_, s, seed) = common.load()?;
            check_replications(replications)?;
            let mut agent = s.agent.clone();
            if let Some(k) = kappa {
                agent.confidence_scale = k;
            }
            if explore_override.is_some() {
                agent.exploration_override = explore_override;
            }
            let reps = run_experiment(&s.env, &agent, replications, seed, verbose)?;
            for r in &reps {
                let name = format!("results_{}.csv", r.summary.replication);
                write_results_csv(common.create(&name)?, std::slice::from_ref(r))?;
            }
            write_summary_csv(common.create("summary.csv")?, &reps)?;
            write_baselines_csv(common.create("baselines.csv")?, &run_baselines(&s.env)?)?;
            if verbose {
                write_telemetry(common.create("telemetry.jsonl")?, &reps)?;
            }
            write_summary_csv(io::stdout().lock(), &reps)?;
        }
        Command::Baselines { common } => {
            let (_, s, _) = common.load()?;
            let rows = run_baselines(&s.env)?;
            write_baselines_csv(common.create("baselines.csv")?, &rows)?;
            let mut stdout = io::stdout().lock();
            write_baselines_csv(&mut stdout, &rows)?;
            stdout.flush()?;
        }
    }
    Ok(())
}
