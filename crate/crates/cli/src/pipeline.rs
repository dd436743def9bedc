//! Stage runners and the output directory layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use catheter_core::agent::{training_log_csv, EpisodeLog, Policy};
use catheter_core::dqn::{train_dqn, DqnAgent};
use catheter_core::env::{Backend, BackendKind, CatheterEnv};
use catheter_core::eval::{
    emit_path_report, emit_regulation_report, eval_path_following, eval_regulation, gen_reference_path,
    regulation_starts, write_json, AgentRegulation, PathKind, PathReport, RegulationReport,
};
use catheter_core::protocol::{load_campaign, plan_campaign, run_acquisition, windowize_and_split, DatasetSplits};
use catheter_core::surrogate::hysteresis::{plant_branches, separations, Separation};
use catheter_core::surrogate::{hysteresis_branch_test, train_surrogate, validate, HysteresisReport, SurrogateModel, ValidationReport};
use catheter_core::td3::{train_td3, Td3Agent};
use catheter_core::{Plant, PlantParams, ServoAngles};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Stage};
use crate::error::{CliError, CliResult};

pub const FAILED_MARKER: &str = "FAILED";
pub const MODEL_STEM: &str = "model";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Td3,
}

impl AgentKind {
    pub const ALL: [AgentKind; 2] = [AgentKind::Dqn, AgentKind::Td3];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Td3 => "td3",
        }
    }
}

impl FromStr for AgentKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(AgentKind::Dqn),
            "td3" => Ok(AgentKind::Td3),
            other => Err(CliError::Config(format!("unknown agent `{other}` (expected dqn or td3)"))),
        }
    }
}

/// Where each stage reads and writes.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn surrogate(&self) -> PathBuf {
        self.root.join("surrogate")
    }

    pub fn agent(&self, kind: AgentKind) -> PathBuf {
        self.root.join(kind.name())
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    GenData,
    TrainSurrogate,
    ValidateSurrogate,
    HysteresisTest,
    TrainDqn,
    TrainTd3,
    EvalRegulation { agents: Vec<AgentKind>, goal: Option<[f64; 2]> },
    EvalPath { agents: Vec<AgentKind> },
    Pipeline,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainSurrogate => "train-surrogate",
            Command::ValidateSurrogate => "validate-surrogate",
            Command::HysteresisTest => "hysteresis-test",
            Command::TrainDqn => "train-dqn",
            Command::TrainTd3 => "train-td3",
            Command::EvalRegulation { .. } => "eval-regulation",
            Command::EvalPath { .. } => "eval-path",
            Command::Pipeline => "pipeline",
        }
    }

    /// Directory that receives this command's outputs, snapshot and failure marker.
    pub fn output_dir(&self, layout: &Layout) -> PathBuf {
        match self {
            Command::GenData => layout.data(),
            Command::TrainSurrogate | Command::ValidateSurrogate | Command::HysteresisTest => layout.surrogate(),
            Command::TrainDqn => layout.agent(AgentKind::Dqn),
            Command::TrainTd3 => layout.agent(AgentKind::Td3),
            Command::EvalRegulation { .. } | Command::EvalPath { .. } => layout.eval(),
            Command::Pipeline => layout.root().to_path_buf(),
        }
    }
}

/// Hysteresis results for the trained model and for the plant with `k_h = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HysteresisOutcome {
    pub model: HysteresisReport,
    pub no_hysteresis: Vec<Separation>,
    pub no_hysteresis_max_settled_mm: f64,
}

/// Everything a full pipeline run produces, plus wall-clock stage timings
/// that are logged but never written to disk.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub validation: ValidationReport,
    pub hysteresis: HysteresisOutcome,
    pub dqn_log: Vec<EpisodeLog>,
    pub td3_log: Vec<EpisodeLog>,
    pub regulation: RegulationReport,
    pub paths: Vec<PathReport>,
    pub timings: Vec<(&'static str, Duration)>,
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs `body` with a config snapshot in `dir`, replacing any stale failure
/// marker and leaving a fresh one if the stage fails.
fn guarded<T>(cfg: &RunConfig, dir: &Path, body: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    ensure_dir(dir)?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
    }
    cfg.write_snapshot(dir)?;
    let result = body();
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

pub fn gen_data(cfg: &RunConfig, layout: &Layout) -> CliResult<usize> {
    let dir = layout.data();
    guarded(cfg, &dir, || {
        let plant = Plant::new(cfg.plant.clone())?;
        let seed = cfg.seed_for(Stage::Campaign);
        let plan = plan_campaign(&cfg.campaign, seed);
        let (trials, manifest) = run_acquisition(&plan, &plant, &cfg.campaign, seed, Some(&dir))?;
        info!("gen-data: {} trials, {} samples", trials.len(), manifest.total_samples);
        Ok(trials.len())
    })
}

fn load_splits(cfg: &RunConfig, layout: &Layout) -> CliResult<DatasetSplits> {
    let (trials, _) = load_campaign(&layout.data())?;
    Ok(windowize_and_split(&trials, cfg.split, cfg.seed_for(Stage::Split))?)
}

#[derive(Serialize)]
struct SplitSummary<'a> {
    train_windows: usize,
    val_windows: usize,
    test_windows: usize,
    train_trials: &'a [String],
    val_trials: &'a [String],
    test_trials: &'a [String],
}

pub fn train_surrogate_stage(cfg: &RunConfig, layout: &Layout) -> CliResult<SurrogateModel> {
    let dir = layout.surrogate();
    guarded(cfg, &dir, || {
        let splits = load_splits(cfg, layout)?;
        write_json(
            &SplitSummary {
                train_windows: splits.train.len(),
                val_windows: splits.val.len(),
                test_windows: splits.test.len(),
                train_trials: &splits.train_trials,
                val_trials: &splits.val_trials,
                test_trials: &splits.test_trials,
            },
            &dir.join("split.json"),
        )?;
        info!(
            "train-surrogate: {} / {} / {} windows",
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        );
        let model = train_surrogate::<f64>(&splits.train, &splits.val, &cfg.surrogate, cfg.seed_for(Stage::Surrogate))?;
        model.save(&dir, MODEL_STEM)?;
        write_text(&dir.join("history.csv"), &model.history.to_csv())?;
        info!(
            "train-surrogate: best epoch {} (val loss {:.3e})",
            model.history.best_epoch, model.history.best_val_loss
        );
        Ok(model)
    })
}

fn load_model(layout: &Layout) -> CliResult<SurrogateModel> {
    Ok(SurrogateModel::load(&layout.surrogate(), MODEL_STEM)?)
}

pub fn validate_surrogate(cfg: &RunConfig, layout: &Layout) -> CliResult<ValidationReport> {
    let dir = layout.surrogate();
    guarded(cfg, &dir, || {
        let model = load_model(layout)?;
        let splits = load_splits(cfg, layout)?;
        let report = validate(&model, &splits.test)?;
        write_json(&report, &dir.join("validation.json"))?;
        let m = &report.final_step;
        info!(
            "validate-surrogate: RMSE {:.3} mm (x {:.3}, y {:.3}), within 1/2/3 mm {:.1}/{:.1}/{:.1} %",
            m.rmse_overall,
            m.rmse_x,
            m.rmse_y,
            100.0 * m.coverage_1mm,
            100.0 * m.coverage_2mm,
            100.0 * m.coverage_3mm
        );
        Ok(report)
    })
}

pub fn hysteresis_test(cfg: &RunConfig, layout: &Layout) -> CliResult<HysteresisOutcome> {
    let dir = layout.surrogate();
    guarded(cfg, &dir, || {
        let model = load_model(layout)?;
        let plant = Plant::new(cfg.plant.clone())?;
        let report = hysteresis_branch_test(&model, &plant)?;
        let flat = Plant::new(PlantParams {
            k_h: 0.0,
            ..cfg.plant.clone()
        })?;
        let no_hysteresis = separations(&plant_branches(&flat)?);
        let max_flat = no_hysteresis.iter().map(|s| s.settled_mm).fold(0.0, f64::max);
        let outcome = HysteresisOutcome {
            model: report,
            no_hysteresis,
            no_hysteresis_max_settled_mm: max_flat,
        };
        write_json(&outcome, &dir.join("hysteresis.json"))?;
        for b in &outcome.model.branches {
            info!("hysteresis-test: {:?} branch error {:.3} mm", b.plant.branch, b.error_mm);
        }
        Ok(outcome)
    })
}

fn training_env(cfg: &RunConfig, layout: &Layout, stage: Stage) -> CliResult<CatheterEnv> {
    let model = Arc::new(load_model(layout)?);
    Ok(CatheterEnv::new(
        cfg.env.clone(),
        Backend::surrogate(model),
        &cfg.plant,
        cfg.seed_for(stage),
    )?)
}

fn log_progress(kind: AgentKind, logs: &[EpisodeLog]) {
    let n = logs.len();
    let tail = &logs[n.saturating_sub(100)..];
    let rate = tail.iter().filter(|l| l.success).count() as f64 / tail.len().max(1) as f64;
    info!("train-{}: {n} episodes, success over last {} = {:.1} %", kind.name(), tail.len(), 100.0 * rate);
}

pub fn train_dqn_stage(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<EpisodeLog>> {
    let dir = layout.agent(AgentKind::Dqn);
    guarded(cfg, &dir, || {
        let mut env = training_env(cfg, layout, Stage::DqnEnv)?;
        let ckpt = dir.join("checkpoints");
        let mut hook = |ep: usize, a: &DqnAgent| a.save(&ckpt, &format!("ep{ep:05}"));
        let (agent, logs) = train_dqn::<f64>(&mut env, &cfg.dqn, cfg.seed_for(Stage::Dqn), Some(&mut hook))?;
        agent.save(&dir, AgentKind::Dqn.name())?;
        write_text(&dir.join("train_log.csv"), &training_log_csv("epsilon", &logs))?;
        log_progress(AgentKind::Dqn, &logs);
        Ok(logs)
    })
}

pub fn train_td3_stage(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<EpisodeLog>> {
    let dir = layout.agent(AgentKind::Td3);
    guarded(cfg, &dir, || {
        let mut env = training_env(cfg, layout, Stage::Td3Env)?;
        let ckpt = dir.join("checkpoints");
        let mut hook = |ep: usize, a: &Td3Agent| a.save(&ckpt, &format!("ep{ep:05}"));
        let (agent, logs) = train_td3::<f64>(&mut env, &cfg.td3, cfg.seed_for(Stage::Td3), Some(&mut hook))?;
        agent.save(&dir, AgentKind::Td3.name())?;
        write_text(&dir.join("train_log.csv"), &training_log_csv("sigma", &logs))?;
        log_progress(AgentKind::Td3, &logs);
        Ok(logs)
    })
}

fn load_policy(cfg: &RunConfig, layout: &Layout, kind: AgentKind) -> CliResult<Box<dyn Policy>> {
    let dir = layout.agent(kind);
    Ok(match kind {
        AgentKind::Dqn => Box::new(DqnAgent::<f64>::load(&dir, kind.name(), cfg.dqn.clone())?),
        AgentKind::Td3 => Box::new(Td3Agent::<f64>::load(&dir, kind.name(), cfg.td3.clone())?),
    })
}

fn eval_env(cfg: &RunConfig, layout: &Layout) -> CliResult<CatheterEnv> {
    let backend = match cfg.eval.backend {
        BackendKind::Surrogate => Backend::surrogate(Arc::new(load_model(layout)?)),
        BackendKind::Plant => Backend::plant(Plant::new(cfg.plant.clone())?),
    };
    Ok(CatheterEnv::new(cfg.env.clone(), backend, &cfg.plant, cfg.seed_for(Stage::EvalEnv))?)
}

pub fn eval_regulation_stage(
    cfg: &RunConfig,
    layout: &Layout,
    agents: &[AgentKind],
    goal: Option<[f64; 2]>,
) -> CliResult<RegulationReport> {
    let dir = layout.eval();
    guarded(cfg, &dir, || {
        let mut env = eval_env(cfg, layout)?;
        let g = goal.unwrap_or(cfg.eval.goal);
        let goal = catheter_core::TipPosition::new(g[0], g[1]);
        env.check_goal(&goal)?;
        let starts = regulation_starts(cfg.eval.seed, cfg.eval.n_starts);
        let mut results = Vec::new();
        let mut traces = Vec::new();
        for kind in agents {
            let mut policy = load_policy(cfg, layout, *kind)?;
            let (headline, trace) = eval_regulation(policy.as_mut(), &mut env, &starts, goal, cfg.eval.epsilon)?;
            traces.push((kind.name().to_string(), cfg.eval.epsilon, trace));
            let mut extra = Vec::new();
            for eps in &cfg.eval.extra_thresholds {
                let (s, trace) = eval_regulation(policy.as_mut(), &mut env, &starts, goal, *eps)?;
                traces.push((kind.name().to_string(), *eps, trace));
                extra.push(s);
            }
            info!(
                "eval-regulation: {} success {:.1} % at {} mm, avg steps {:?}",
                kind.name(),
                100.0 * headline.success_rate,
                headline.epsilon,
                headline.avg_steps
            );
            results.push(AgentRegulation {
                agent: kind.name().to_string(),
                headline,
                extra,
            });
        }
        let report = RegulationReport::new(results);
        emit_regulation_report(&report, &traces, &dir)?;
        Ok(report)
    })
}

pub fn eval_path_stage(cfg: &RunConfig, layout: &Layout, agents: &[AgentKind]) -> CliResult<Vec<PathReport>> {
    let dir = layout.eval();
    guarded(cfg, &dir, || {
        let mut env = eval_env(cfg, layout)?;
        let start = ServoAngles::clip_and_couple(cfg.eval.path_start[0], cfg.eval.path_start[1])?;
        let mut reports = Vec::new();
        for kind in agents {
            let mut policy = load_policy(cfg, layout, *kind)?;
            let mut paths = Vec::new();
            for path_kind in PathKind::ALL {
                let path = gen_reference_path(path_kind, cfg.eval.waypoints)?;
                let r = eval_path_following(policy.as_mut(), &mut env, &path, start, cfg.eval.delta_wp, cfg.eval.k_max)?;
                info!(
                    "eval-path: {} {} mean error {:.3} mm, {}/{} waypoints reached",
                    kind.name(),
                    path_kind.name(),
                    r.mean_error,
                    r.reached,
                    r.waypoints.len()
                );
                paths.push(r);
            }
            let report = PathReport {
                agent: kind.name().to_string(),
                paths,
            };
            emit_path_report(&report, &dir)?;
            reports.push(report);
        }
        Ok(reports)
    })
}

/// Every stage in order.
pub fn run_pipeline(cfg: &RunConfig, layout: &Layout) -> CliResult<PipelineOutcome> {
    guarded(cfg, layout.root(), || {
        let mut timings = Vec::new();
        let mut timed = |name: &'static str, start: Instant| {
            let d = start.elapsed();
            info!("{name} finished in {:.1} s", d.as_secs_f64());
            timings.push((name, d));
        };
        let t = Instant::now();
        gen_data(cfg, layout)?;
        timed("gen-data", t);
        let t = Instant::now();
        train_surrogate_stage(cfg, layout)?;
        timed("train-surrogate", t);
        let t = Instant::now();
        let validation = validate_surrogate(cfg, layout)?;
        timed("validate-surrogate", t);
        let t = Instant::now();
        let hysteresis = hysteresis_test(cfg, layout)?;
        timed("hysteresis-test", t);
        let t = Instant::now();
        let dqn_log = train_dqn_stage(cfg, layout)?;
        timed("train-dqn", t);
        let t = Instant::now();
        let td3_log = train_td3_stage(cfg, layout)?;
        timed("train-td3", t);
        let t = Instant::now();
        let regulation = eval_regulation_stage(cfg, layout, &AgentKind::ALL, None)?;
        timed("eval-regulation", t);
        let t = Instant::now();
        let paths = eval_path_stage(cfg, layout, &AgentKind::ALL)?;
        timed("eval-path", t);
        Ok(PipelineOutcome {
            validation,
            hysteresis,
            dqn_log,
            td3_log,
            regulation,
            paths,
            timings,
        })
    })
}

/// Runs one command; the pipeline outcome is discarded here.
pub fn dispatch(cmd: &Command, cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    match cmd {
        Command::GenData => gen_data(cfg, layout).map(drop),
        Command::TrainSurrogate => train_surrogate_stage(cfg, layout).map(drop),
        Command::ValidateSurrogate => validate_surrogate(cfg, layout).map(drop),
        Command::HysteresisTest => hysteresis_test(cfg, layout).map(drop),
        Command::TrainDqn => train_dqn_stage(cfg, layout).map(drop),
        Command::TrainTd3 => train_td3_stage(cfg, layout).map(drop),
        Command::EvalRegulation { agents, goal } => eval_regulation_stage(cfg, layout, agents, *goal).map(drop),
        Command::EvalPath { agents } => eval_path_stage(cfg, layout, agents).map(drop),
        Command::Pipeline => run_pipeline(cfg, layout).map(drop),
    }
}
