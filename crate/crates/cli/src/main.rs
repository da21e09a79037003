use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rlmpc::bench::bench;
use rlmpc::checkpoint;
use rlmpc::episode::{run_episode, Mode, NetResidual, OracleResidual, Residual, ZeroResidual};
use rlmpc::log::EpisodeLog;
use rlmpc::metrics::{compare, MetricsReport};
use rlmpc::par;
use rlmpc::policy::{PolicyNet, RewardWeights};
use rlmpc::ppo::{train, PpoConfig, TrainConfig};
use rlmpc::robot::RobotPreset;
use rlmpc::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(name = "rlmpc", version, about = "Residual-policy convex MPC for quadrupeds, in simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode and write its log and metrics.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train a residual policy with PPO.
    Train {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Environment steps to collect.
        #[arg(long, default_value_t = 2_000_000)]
        budget: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare two episode logs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the MPC solve and policy inference on this host.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        ticks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one episode per seed and summarize.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print a preset scenario as TOML.
    Scenario {
        name: String,
        #[arg(long, value_enum, default_value_t = Robot::A1)]
        robot: Robot,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Robot {
    A1,
    Go1,
    Aliengo,
}

impl From<Robot> for RobotPreset {
    fn from(r: Robot) -> Self {
        match r {
            Robot::A1 => RobotPreset::A1,
            Robot::Go1 => RobotPreset::Go1,
            Robot::Aliengo => RobotPreset::AlienGo,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    Augmented,
    Oracle,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario preset.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_enum)]
    robot: Option<Robot>,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Baseline)]
    mode: ModeArg,
    /// Policy checkpoint, required in augmented mode.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self, default: &str) -> Result<ScenarioConfig> {
        let robot = self.robot.map(RobotPreset::from);
        match &self.config {
            Some(path) => {
                let mut sc = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
                if let Some(r) = robot {
                    if sc.reward == RewardWeights::for_robot(sc.robot) {
                        sc.reward = RewardWeights::for_robot(r);
                    }
                    sc.robot = r;
                }
                Ok(sc)
            }
            None => {
                let name = self.scenario.as_deref().unwrap_or(default);
                Ok(ScenarioConfig::preset(name, robot.unwrap_or(RobotPreset::A1))?)
            }
        }
    }
}

enum Source {
    Zero,
    Net(PolicyNet),
    Oracle,
}

impl PolicyArgs {
    fn load(&self) -> Result<(Mode, Source)> {
        Ok(match self.mode {
            ModeArg::Baseline => (Mode::Baseline, Source::Zero),
            ModeArg::Oracle => (Mode::Oracle, Source::Oracle),
            ModeArg::Augmented => {
                let Some(path) = &self.checkpoint else {
                    bail!("augmented mode needs --checkpoint");
                };
                let net = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
                (Mode::Augmented, Source::Net(net))
            }
        })
    }
}

fn episode(sc: &ScenarioConfig, mode: Mode, src: &Source, seed: u64) -> Result<EpisodeLog> {
    let mut residual: Box<dyn Residual + '_> = match src {
        Source::Zero => Box::new(ZeroResidual),
        Source::Net(net) => Box::new(NetResidual(net)),
        Source::Oracle => Box::new(OracleResidual),
    };
    Ok(run_episode(sc, mode, residual.as_mut(), seed)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_episode(dir: &Path, stem: &str, log: &EpisodeLog) -> Result<MetricsReport> {
    log.save(&dir.join(format!("{stem}.csv")))?;
    let report = MetricsReport::from_log(log);
    report.save(&dir.join(format!("{stem}_metrics.txt")))?;
    Ok(report)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { scenario, policy, seed, out } => {
            let sc = scenario.load("flat_trot")?;
            let (mode, src) = policy.load()?;
            create_dir(&out)?;
            sc.save(&out.join("scenario.toml"))?;
            let log = episode(&sc, mode, &src, seed)?;
            let report = write_episode(&out, "episode", &log)?;
            print!("{}", report.to_kv());
        }
        Cmd::Train { scenario, seed, budget, out } => {
            let sc = scenario.load("uncertainty")?;
            create_dir(&out)?;
            sc.save(&out.join("scenario.toml"))?;
            let cfg = TrainConfig { ppo: PpoConfig::default(), budget, seed, out_dir: Some(out.clone()) };
            let (net, curve) = train(&sc, &cfg, |p| {
                eprintln!(
                    "update {:>4} steps {:>8} episodes {:>3} reward {:>9.3} length {:>6.1} kl {:.4}",
                    p.update, p.env_steps, p.episodes, p.mean_reward, p.mean_episode_length, p.approx_kl
                );
            })?;
            checkpoint::save(&net, &out.join("policy.ckpt"))?;
            curve.save(&out.join("learning_curve.csv"))?;
            println!("wrote {}", out.join("policy.ckpt").display());
        }
        Cmd::Compare { a, b, out } => {
            let la = EpisodeLog::load(&a).with_context(|| format!("loading {}", a.display()))?;
            let lb = EpisodeLog::load(&b).with_context(|| format!("loading {}", b.display()))?;
            let text = compare(&la, &lb)?.to_kv();
            if let Some(dir) = out {
                create_dir(&dir)?;
                std::fs::write(dir.join("comparison.txt"), &text)?;
            }
            print!("{text}");
        }
        Cmd::Bench { scenario, checkpoint: ckpt, ticks, seed, out } => {
            let sc = scenario.load("flat_trot")?;
            let net = match ckpt {
                Some(p) => checkpoint::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => PolicyNet::new(sc.bounds, seed),
            };
            let report = bench(&sc, ticks, &net, seed)?;
            if let Some(dir) = out {
                create_dir(&dir)?;
                std::fs::write(dir.join("bench.txt"), report.to_kv())?;
            }
            print!("{}", report.to_kv());
        }
        Cmd::Sweep { scenario, policy, seed, seeds, out } => {
            let sc = scenario.load("flat_trot")?;
            let (mode, src) = policy.load()?;
            create_dir(&out)?;
            sc.save(&out.join("scenario.toml"))?;
            let seed_list: Vec<u64> = (seed..seed + seeds).collect();
            let results = par::map(&seed_list, |_, &s| -> Result<MetricsReport> {
                let log = episode(&sc, mode, &src, s)?;
                write_episode(&out, &format!("seed_{s}"), &log)
            });
            let mut summary = String::from("seed,survival_time,fall,mean_velocity_error,foot_trap_events,mean_reward\n");
            for r in results {
                let r = r?;
                summary.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.seed, r.survival_time, r.fall as u8, r.mean_velocity_error, r.foot_trap_events, r.mean_reward
                ));
            }
            std::fs::write(out.join("summary.csv"), &summary)?;
            print!("{summary}");
        }
        Cmd::Scenario { name, robot } => {
            print!("{}", ScenarioConfig::preset(&name, robot.into())?.to_toml()?);
        }
    }
    Ok(())
}
