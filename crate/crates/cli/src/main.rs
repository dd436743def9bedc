use std::path::PathBuf;
use std::process::ExitCode;

use catheter_cli::{dispatch, AgentKind, Command, Layout, RunConfig, OUTPUT_ROOT_ENV};
use clap::{Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(name = "catheter", version, about = "Catheter plant simulation, surrogate identification and RL control")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output root. Takes precedence over the environment variable and the config file.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Config override such as `dqn.episodes=200`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the acquisition campaign and write trial CSVs.
    GenData,
    /// Fit the LSTM surrogate on the recorded campaign.
    TrainSurrogate,
    /// Report surrogate error on the held-out trials.
    ValidateSurrogate,
    /// Compare surrogate and plant on the three approach branches.
    HysteresisTest,
    /// Train the discrete-action Q-network agent on the surrogate.
    TrainDqn,
    /// Train the TD3 actor-critic agent on the surrogate.
    TrainTd3,
    /// Fixed-goal regulation benchmark.
    EvalRegulation {
        #[arg(long, value_delimiter = ',', default_value = "dqn,td3")]
        agent: Vec<AgentKind>,
        /// Goal as `x,y` in millimetres.
        #[arg(long, value_parser = parse_goal, allow_hyphen_values = true)]
        goal: Option<[f64; 2]>,
    },
    /// Line and half-sinusoid path following.
    EvalPath {
        #[arg(long, value_delimiter = ',', default_value = "dqn,td3")]
        agent: Vec<AgentKind>,
    },
    /// Every stage in order.
    Pipeline,
}

fn parse_goal(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([p(x)?, p(y)?])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let command = match cli.command {
        Cmd::GenData => Command::GenData,
        Cmd::TrainSurrogate => Command::TrainSurrogate,
        Cmd::ValidateSurrogate => Command::ValidateSurrogate,
        Cmd::HysteresisTest => Command::HysteresisTest,
        Cmd::TrainDqn => Command::TrainDqn,
        Cmd::TrainTd3 => Command::TrainTd3,
        Cmd::EvalRegulation { agent, goal } => Command::EvalRegulation { agents: agent, goal },
        Cmd::EvalPath { agent } => Command::EvalPath { agents: agent },
        Cmd::Pipeline => Command::Pipeline,
    };
    let mut cfg = match RunConfig::load(cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Some(root) = cli.out.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from)) {
        cfg.out_dir = root;
    }
    let layout = Layout::new(&cfg.out_dir);
    match dispatch(&command, &cfg, &layout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{} failed: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
