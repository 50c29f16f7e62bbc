use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use policy_fusion::check;
use policy_fusion::gridworld::{
    Channel, EnvKind, EnvSpec, ExpertKind, Feature, FeatureSet, ARENA_FEATURES, COLLECT_STATES,
};
use policy_fusion::harness::{self, run_use_case, write_artifacts, Budget, ExperimentSpec, UseCase};
use policy_fusion::irl::{train_deairl, AirlConfig};
use policy_fusion::trainer::{train, Architecture, ChannelReward, Checkpoint, PpoConfig, RolloutEnv};

#[derive(Parser)]
#[command(name = "policy-fusion", version, about = "Train, fuse and evaluate gridworld policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Collect,
    Arena,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from scratch on built-in reward channels.
    Train {
        #[arg(long, value_enum)]
        env: Env,
        /// Arena design features, e.g. `orb,death-tile`.
        #[arg(long, value_delimiter = ',')]
        flags: Vec<String>,
        /// Reward channel(s) to optimize, e.g. `R0_red`.
        #[arg(long = "channel", required = true)]
        channels: Vec<String>,
        /// PPO configuration (JSON). Defaults depend on the environment.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a sub-policy with DE-AIRL from a scripted expert. The reward
    /// model is written next to the policy as `<out>.reward.json`.
    IrlTrain {
        #[arg(long)]
        expert: ExpertKind,
        #[arg(long, value_delimiter = ',')]
        flags: Vec<String>,
        /// AIRL configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// PPO configuration for the inner forward RL (JSON).
        #[arg(long)]
        ppo: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a spec file.
    FuseEval {
        spec: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run one of the built-in use-cases with default settings.
    UseCase {
        name: UseCase,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        flags: Option<Vec<String>>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Directory caching trained checkpoints between runs.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Tiny budgets; exercises the pipeline only.
        #[arg(long)]
        smoke: bool,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Serve interactive sessions over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Directory holding the checkpoints sessions may load.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Run the fusion property, gradient and identity self-checks.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_flags(list: &[String]) -> Result<FeatureSet> {
    let features = list
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| serde_json::from_value::<Feature>(serde_json::Value::String(s.clone())))
        .collect::<Result<Vec<_>, _>>()
        .context("unknown design feature")?;
    Ok(FeatureSet::from_list(&features))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn env_spec(kind: EnvKind, flags: FeatureSet) -> Result<EnvSpec> {
    match kind {
        EnvKind::CollectWorld if flags != FeatureSet::NONE => bail!("collect-world has no design features"),
        EnvKind::CollectWorld => Ok(EnvSpec::collect()),
        EnvKind::ArenaWorld => Ok(EnvSpec::arena(flags)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let budget = Budget::default();
    match cli.command {
        Command::Train {
            env,
            flags,
            channels,
            config,
            iterations,
            seed,
            out,
        } => {
            let kind = match env {
                Env::Collect => EnvKind::CollectWorld,
                Env::Arena => EnvKind::ArenaWorld,
            };
            let spec = env_spec(kind, parse_flags(&flags)?)?;
            let channels = channels
                .iter()
                .map(|c| Channel::parse(c).with_context(|| format!("unknown channel `{c}`")))
                .collect::<Result<Vec<_>>>()?;
            if let Some(c) = channels.iter().find(|c| !kind.channels().contains(c)) {
                bail!("{kind} has no channel {}", c.name());
            }
            let mut ppo = match config {
                Some(p) => read_json(&p)?,
                None if kind == EnvKind::CollectWorld => budget.collect.clone(),
                None => budget.arena.clone(),
            };
            if let Some(n) = iterations {
                ppo.iterations = n;
            }
            let arch = match kind {
                EnvKind::CollectWorld => Architecture::Tabular { states: COLLECT_STATES },
                EnvKind::ArenaWorld => Architecture::mlp(ARENA_FEATURES, &budget.arena_hidden),
            };
            let t = train(arch, RolloutEnv::procedural(spec, seed)?, &ChannelReward(channels), ppo, seed)?;
            Checkpoint::new(&t.policy, &t.value, t.config(), seed, &spec, spec.flags, t.env_steps()).save(&out)?;
            println!("wrote {} ({} env steps)", out.display(), t.env_steps());
        }
        Command::IrlTrain {
            expert,
            flags,
            config,
            ppo,
            seed,
            out,
        } => {
            let kind = expert.env_kind().context("the random opponent is not a demonstrator")?;
            let spec = env_spec(kind, parse_flags(&flags)?)?;
            let airl: AirlConfig = match config {
                Some(p) => read_json(&p)?,
                None if kind == EnvKind::CollectWorld => budget.collect_airl(),
                None => budget.airl.clone(),
            };
            let ppo: PpoConfig = match ppo {
                Some(p) => read_json(&p)?,
                None if kind == EnvKind::CollectWorld => budget.collect.clone(),
                None => budget.sub.clone(),
            };
            let arch = match kind {
                EnvKind::CollectWorld => Architecture::Tabular { states: COLLECT_STATES },
                EnvKind::ArenaWorld => Architecture::mlp(ARENA_FEATURES, &budget.arena_hidden),
            };
            let outcome = train_deairl(&spec, expert, &airl, &ppo, arch, seed)?;
            outcome.checkpoint().save(&out)?;
            let reward_path = out.with_extension("reward.json");
            outcome.reward_checkpoint().save(&reward_path)?;
            println!(
                "wrote {} and {} ({} env steps)",
                out.display(),
                reward_path.display(),
                outcome.trainer.env_steps()
            );
        }
        Command::FuseEval { spec, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            report(&spec, &out)?;
        }
        Command::UseCase {
            name,
            seed,
            flags,
            episodes,
            checkpoints,
            smoke,
            out,
        } => {
            let mut spec = ExperimentSpec::new(name, seed);
            if let Some(f) = flags {
                spec.flags = Some(parse_flags(&f)?);
            }
            if let Some(n) = episodes {
                spec.episodes = n;
            }
            if smoke {
                spec.budget = Budget::smoke();
            }
            spec.checkpoints = checkpoints;
            report(&spec, &out)?;
        }
        Command::Serve { bind, checkpoints } => harness::serve(&bind, &checkpoints)?,
        Command::Check { seed } => {
            let results = check::run_all(seed);
            for r in &results {
                let mark = if r.passed { "PASS" } else { "FAIL" };
                println!("{mark} {:<26} {:>7.2}s  {}", r.name, r.seconds, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                bail!("self-checks failed");
            }
        }
    }
    Ok(())
}

fn report(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let (report, ledger) = run_use_case(spec)?;
    write_artifacts(&report, &ledger, out)?;
    for c in report.members.iter().chain(&report.configurations) {
        let channels: Vec<String> = c
            .channels
            .iter()
            .map(|x| match x.normalized {
                Some(n) => format!("{} {:.3} ({:.3})", x.channel, x.mean, n),
                None => format!("{} {:.3}", x.channel, x.mean),
            })
            .collect();
        let win = c.win.map(|w| format!("  win {:.3} [{:.3}, {:.3}]", w.win_rate, w.ci_low, w.ci_high));
        println!("{:<40} {}{}", c.id, channels.join("  "), win.unwrap_or_default());
    }
    if let Some(r) = report.cost_ratio {
        println!("sub-policy / from-scratch env steps: {r:.3}");
    }
    for f in &report.failures {
        eprintln!("failed: {f}");
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
