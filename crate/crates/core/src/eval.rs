//! Regulation benchmark, reference-path following and report output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Policy;
use crate::env::{BackendKind, CatheterEnv, Termination};
use crate::error::{CoreError, IoContext, Result};
use crate::plant::SAMPLE_PERIOD;
use crate::rng::stream;
use crate::types::{ActionDelta, ServoAngles, TipPosition, THETA1_MAX, THETA1_MIN, THETA3_MAX, THETA3_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Line,
    HalfSinusoid,
}

impl PathKind {
    pub const ALL: [PathKind; 2] = [PathKind::Line, PathKind::HalfSinusoid];

    pub fn name(self) -> &'static str {
        match self {
            PathKind::Line => "line",
            PathKind::HalfSinusoid => "half_sinusoid",
        }
    }

    /// Point at parameter `t` in `[0, 1]`.
    pub fn point(self, t: f64) -> TipPosition {
        let y = -10.0 - 20.0 * t;
        match self {
            PathKind::Line => TipPosition::new(20.0 + 10.0 * t, y),
            PathKind::HalfSinusoid => TipPosition::new(20.0 + 8.0 * (std::f64::consts::PI * t).sin(), y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub kind: PathKind,
    pub t: Vec<f64>,
    pub waypoints: Vec<TipPosition>,
}

pub const DEFAULT_WAYPOINTS: usize = 60;

/// `n` waypoints at `t_i = i / (n - 1)`.
pub fn gen_reference_path(kind: PathKind, n: usize) -> Result<ReferencePath> {
    if n < 2 {
        return Err(CoreError::Domain("a reference path needs at least two waypoints".into()));
    }
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    Ok(ReferencePath {
        kind,
        waypoints: t.iter().map(|t| kind.point(*t)).collect(),
        t,
    })
}

/// Mean Euclidean distance between paired points.
pub fn mean_path_error(achieved: &[TipPosition], reference: &[TipPosition]) -> Result<f64> {
    if achieved.len() != reference.len() || achieved.is_empty() {
        return Err(CoreError::Domain(format!(
            "path error needs equal non-empty lengths, got {} and {}",
            achieved.len(),
            reference.len()
        )));
    }
    Ok(achieved.iter().zip(reference).map(|(a, r)| a.distance(r)).sum::<f64>() / achieved.len() as f64)
}

/// Start angles for the regulation benchmark; a pure function of the seed.
pub fn regulation_starts(seed: u64, n: usize) -> Vec<ServoAngles> {
    let mut rng = stream(seed, 0x5354);
    (0..n)
        .map(|_| {
            let t1 = rng.random_range(THETA1_MIN..=THETA1_MAX);
            let t3 = rng.random_range(THETA3_MIN..=THETA3_MAX);
            ServoAngles::clip_and_couple(t1, t3).expect("sampled angles are finite")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_starts: usize,
    pub goal: [f64; 2],
    /// Headline success radius (mm).
    pub epsilon: f64,
    /// Additional radii reported alongside the headline.
    pub extra_thresholds: Vec<f64>,
    pub seed: u64,
    pub waypoints: usize,
    /// Waypoint advance radius (mm).
    pub delta_wp: f64,
    /// Step budget per waypoint.
    pub k_max: usize,
    /// Starting angles `[theta1, theta3]` for path following.
    pub path_start: [f64; 2],
    /// Tip source used for evaluation rollouts.
    pub backend: BackendKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_starts: 100,
            goal: [20.0, -10.0],
            epsilon: 0.5,
            extra_thresholds: vec![0.02],
            seed: 2024,
            waypoints: DEFAULT_WAYPOINTS,
            delta_wp: 0.5,
            k_max: 20,
            path_start: [0.0, 0.0],
            backend: BackendKind::Surrogate,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 || self.waypoints < 2 || self.k_max == 0 {
            return Err(CoreError::Config("eval: n_starts, k_max must be positive and waypoints >= 2".into()));
        }
        if !(self.epsilon > 0.0) || !(self.delta_wp > 0.0) || self.extra_thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(CoreError::Config("eval: thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn goal_tip(&self) -> TipPosition {
        TipPosition::new(self.goal[0], self.goal[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub start: ServoAngles,
    pub success: bool,
    pub steps: usize,
    pub final_tip: TipPosition,
    pub abs_error_x: f64,
    pub abs_error_y: f64,
    pub error: f64,
}

/// Averages are over successful episodes only and absent when none succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationSummary {
    pub epsilon: f64,
    pub goal: TipPosition,
    pub n_starts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_steps: Option<f64>,
    pub avg_abs_error_x: Option<f64>,
    pub avg_abs_error_y: Option<f64>,
    pub avg_error: Option<f64>,
    pub episodes: Vec<EpisodeRecord>,
}

/// One row per control step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub t: f64,
    pub reference: TipPosition,
    pub tip: TipPosition,
    pub action: ActionDelta,
}

pub const TRACE_HEADER: &str = "episode,t,x_ref,y_ref,x,y,e_x,e_y,dtheta1,dtheta3";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.episode,
            r.t,
            r.reference.x,
            r.reference.y,
            r.tip.x,
            r.tip.y,
            r.tip.x - r.reference.x,
            r.tip.y - r.reference.y,
            r.action.dtheta1,
            r.action.dtheta3
        );
    }
    out
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn tick(step: usize) -> f64 {
    (step as f64 * SAMPLE_PERIOD * 1e9).round() / 1e9
}

/// Noise-free rollouts from `starts` to the fixed goal, with the env's
/// success radius set to `epsilon`. Returns the summary and per-step traces.
pub fn eval_regulation(
    policy: &mut dyn Policy,
    env: &mut CatheterEnv,
    starts: &[ServoAngles],
    goal: TipPosition,
    epsilon: f64,
) -> Result<(RegulationSummary, Vec<TraceRow>)> {
    let was_training = env.is_training();
    let old_epsilon = env.config().epsilon;
    env.set_training(false);
    env.set_epsilon(epsilon)?;
    let mut episodes = Vec::with_capacity(starts.len());
    let mut trace = Vec::new();
    let result = (|| -> Result<()> {
        for (e, start) in starts.iter().enumerate() {
            let mut obs = env.reset_to(*start, goal)?;
            trace.push(TraceRow {
                episode: e,
                t: 0.0,
                reference: goal,
                tip: env.tip(),
                action: ActionDelta::default(),
            });
            let step = loop {
                let action = policy.act(&obs)?;
                let s = env.step(&action)?;
                obs = s.observation;
                trace.push(TraceRow {
                    episode: e,
                    t: tick(s.info.step),
                    reference: goal,
                    tip: s.info.tip,
                    action: s.info.applied,
                });
                if s.done {
                    break s;
                }
            };
            let tip = step.info.tip;
            episodes.push(EpisodeRecord {
                start: *start,
                success: step.info.termination == Termination::Goal,
                steps: step.info.step,
                final_tip: tip,
                abs_error_x: (tip.x - goal.x).abs(),
                abs_error_y: (tip.y - goal.y).abs(),
                error: tip.distance(&goal),
            });
        }
        Ok(())
    })();
    env.set_training(was_training);
    env.set_epsilon(old_epsilon)?;
    result?;
    let ok = || episodes.iter().filter(|e| e.success);
    let successes = ok().count();
    Ok((
        RegulationSummary {
            epsilon,
            goal,
            n_starts: starts.len(),
            successes,
            success_rate: successes as f64 / starts.len().max(1) as f64,
            avg_steps: mean_of(ok().map(|e| e.steps as f64)),
            avg_abs_error_x: mean_of(ok().map(|e| e.abs_error_x)),
            avg_abs_error_y: mean_of(ok().map(|e| e.abs_error_y)),
            avg_error: mean_of(ok().map(|e| e.error)),
            episodes,
        },
        trace,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub index: usize,
    pub t: f64,
    pub reference: TipPosition,
    pub achieved: TipPosition,
    pub error: f64,
    pub steps: usize,
    pub reached: bool,
    /// Last increment applied while tracking this waypoint.
    pub last_action: ActionDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub kind: PathKind,
    pub delta_wp: f64,
    pub k_max: usize,
    /// Steps spent reaching the first waypoint before tracking starts.
    pub approach_steps: usize,
    pub mean_error: f64,
    pub reached: usize,
    pub waypoints: Vec<WaypointRecord>,
}

impl PathResult {
    /// One row per waypoint, sampled when the tracker advances.
    pub fn trace_rows(&self) -> Vec<TraceRow> {
        self.waypoints
            .iter()
            .map(|w| TraceRow {
                episode: 0,
                t: w.t,
                reference: w.reference,
                tip: w.achieved,
                action: w.last_action,
            })
            .collect()
    }
}

/// Runs the policy toward each waypoint in turn until it is within
/// `delta_wp` or `k_max` steps have passed, sampling the tip at each advance.
/// The first waypoint is approached beforehand with the env's step limit as budget.
pub fn eval_path_following(
    policy: &mut dyn Policy,
    env: &mut CatheterEnv,
    path: &ReferencePath,
    start: ServoAngles,
    delta_wp: f64,
    k_max: usize,
) -> Result<PathResult> {
    let was_training = env.is_training();
    env.set_training(false);
    let result = (|| -> Result<PathResult> {
        let mut obs = env.reset_to(start, path.waypoints[0])?;
        let budget = env.config().t_max;
        let mut approach_steps = 0;
        while approach_steps < budget && env.tip().distance(&path.waypoints[0]) >= delta_wp {
            obs = env.step(&policy.act(&obs)?)?.observation;
            approach_steps += 1;
        }
        let mut records = Vec::with_capacity(path.waypoints.len());
        for (i, wp) in path.waypoints.iter().enumerate() {
            obs = env.retarget(*wp)?;
            let mut steps = 0;
            let mut last_action = ActionDelta::default();
            while steps < k_max && env.tip().distance(wp) >= delta_wp {
                let s = env.step(&policy.act(&obs)?)?;
                obs = s.observation;
                last_action = s.info.applied;
                steps += 1;
            }
            let achieved = env.tip();
            records.push(WaypointRecord {
                index: i,
                t: path.t[i],
                reference: *wp,
                achieved,
                error: achieved.distance(wp),
                steps,
                reached: achieved.distance(wp) < delta_wp,
                last_action,
            });
        }
        let achieved: Vec<TipPosition> = records.iter().map(|r| r.achieved).collect();
        Ok(PathResult {
            kind: path.kind,
            delta_wp,
            k_max,
            approach_steps,
            mean_error: mean_path_error(&achieved, &path.waypoints)?,
            reached: records.iter().filter(|r| r.reached).count(),
            waypoints: records,
        })
    })();
    env.set_training(was_training);
    result
}

/// Regulation results for one agent at every reported threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRegulation {
    pub agent: String,
    pub headline: RegulationSummary,
    pub extra: Vec<RegulationSummary>,
}

/// Compact Table-IV style line per agent and threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationRow {
    pub agent: String,
    pub epsilon: f64,
    pub success_rate_pct: f64,
    pub avg_steps: Option<f64>,
    pub avg_abs_error_x: Option<f64>,
    pub avg_abs_error_y: Option<f64>,
    pub avg_error: Option<f64>,
}

impl RegulationRow {
    pub fn of(agent: &str, s: &RegulationSummary) -> Self {
        RegulationRow {
            agent: agent.to_string(),
            epsilon: s.epsilon,
            success_rate_pct: 100.0 * s.success_rate,
            avg_steps: s.avg_steps,
            avg_abs_error_x: s.avg_abs_error_x,
            avg_abs_error_y: s.avg_abs_error_y,
            avg_error: s.avg_error,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationReport {
    pub table: Vec<RegulationRow>,
    pub agents: Vec<AgentRegulation>,
}

impl RegulationReport {
    pub fn new(agents: Vec<AgentRegulation>) -> Self {
        let mut table = Vec::new();
        for a in &agents {
            table.push(RegulationRow::of(&a.agent, &a.headline));
            for s in &a.extra {
                table.push(RegulationRow::of(&a.agent, s));
            }
        }
        RegulationReport { table, agents }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub agent: String,
    pub paths: Vec<PathResult>,
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CoreError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).at(path)
}

/// Writes `regulation.json` plus one trace CSV per agent and threshold.
pub fn emit_regulation_report(
    report: &RegulationReport,
    traces: &[(String, f64, Vec<TraceRow>)],
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    write_json(report, &out_dir.join("regulation.json"))?;
    for (agent, eps, rows) in traces {
        let p = out_dir.join(format!("regulation_{agent}_eps{eps}.csv"));
        fs::write(&p, trace_csv(rows)).at(&p)?;
    }
    Ok(())
}

/// Writes `path_<agent>.json` and one waypoint trace CSV per path.
pub fn emit_path_report(report: &PathReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    write_json(report, &out_dir.join(format!("path_{}.json", report.agent)))?;
    for p in &report.paths {
        let f = out_dir.join(format!("path_{}_{}.csv", report.agent, p.kind.name()));
        fs::write(&f, trace_csv(&p.trace_rows())).at(&f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Backend, EnvConfig, TipBackend};
    use crate::plant::{Plant, PlantParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Reports a far-away tip at reset and the goal after any step.
    struct Teleport(TipPosition);

    impl TipBackend for Teleport {
        fn normalize(&self, _: &ServoAngles) -> [f64; 3] {
            [0.0; 3]
        }
        fn reset(&mut self, _: &ServoAngles, _: &[[f64; 3]]) -> Result<TipPosition> {
            Ok(TipPosition::new(40.0, 0.0))
        }
        fn advance(&mut self, _: &ServoAngles, _: &[[f64; 3]]) -> Result<TipPosition> {
            Ok(self.0)
        }
    }

    fn env_with(backend: impl TipBackend + Send + 'static) -> CatheterEnv {
        CatheterEnv::new(EnvConfig::default(), backend, &PlantParams::default(), 0).unwrap()
    }

    #[test]
    fn path_endpoints() {
        let line = gen_reference_path(PathKind::Line, 60).unwrap();
        assert_eq!(line.waypoints[0], TipPosition::new(20.0, -10.0));
        assert_eq!(line.waypoints[59], TipPosition::new(30.0, -30.0));
        assert_eq!(line.waypoints.len(), 60);
        assert_eq!(PathKind::Line.point(0.5), TipPosition::new(25.0, -20.0));
        let hs = PathKind::HalfSinusoid.point(0.5);
        assert_abs_diff_eq!(hs.x, 28.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hs.y, -20.0, epsilon = 1e-12);
        let end = PathKind::HalfSinusoid.point(1.0);
        assert_abs_diff_eq!(end.x, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_error_hand_values() {
        let r = [TipPosition::new(0.0, 0.0), TipPosition::new(1.0, 1.0)];
        assert_eq!(mean_path_error(&r, &r).unwrap(), 0.0);
        let a = [TipPosition::new(3.0, 4.0), TipPosition::new(1.0, 1.0)];
        assert_eq!(mean_path_error(&a, &r).unwrap(), 2.5);
        let shifted: Vec<_> = r.iter().map(|p| TipPosition::new(p.x + 1.0, p.y)).collect();
        assert_eq!(mean_path_error(&shifted, &r).unwrap(), 1.0);
        assert!(mean_path_error(&a[..1], &r).is_err());
    }

    #[test]
    fn starts_depend_only_on_seed() {
        assert_eq!(regulation_starts(5, 100), regulation_starts(5, 100));
        assert_ne!(regulation_starts(5, 10), regulation_starts(6, 10));
    }

    #[test]
    fn teleport_oracle_is_perfect() {
        let goal = TipPosition::new(20.0, -10.0);
        let mut env = env_with(Teleport(goal));
        let mut still = |_: &[f64; 4]| ActionDelta::default();
        let (s, _) = eval_regulation(&mut still, &mut env, &regulation_starts(1, 100), goal, 0.5).unwrap();
        assert_eq!(s.success_rate, 1.0);
        assert_eq!(s.avg_steps, Some(1.0));
        assert_eq!(s.avg_error, Some(0.0));
    }

    #[test]
    fn idle_policy_times_out() {
        let p = PlantParams::default();
        let mut env = env_with(Backend::plant(Plant::new(p).unwrap()));
        let goal = TipPosition::new(20.0, -10.0);
        let mut still = |_: &[f64; 4]| ActionDelta::default();
        let (s, trace) = eval_regulation(&mut still, &mut env, &regulation_starts(2, 20), goal, 0.5).unwrap();
        assert_eq!(s.successes, 0);
        assert!(s.avg_steps.is_none());
        assert!(s.episodes.iter().all(|e| e.steps == 150));
        assert_eq!(trace.len(), 20 * 151);
    }

    #[test]
    fn oracle_path_error_within_advance_radius() {
        let path = gen_reference_path(PathKind::HalfSinusoid, 60).unwrap();
        struct Follow(std::sync::Arc<std::sync::Mutex<TipPosition>>);
        impl TipBackend for Follow {
            fn normalize(&self, _: &ServoAngles) -> [f64; 3] {
                [0.0; 3]
            }
            fn reset(&mut self, _: &ServoAngles, _: &[[f64; 3]]) -> Result<TipPosition> {
                Ok(TipPosition::new(21.0, 0.0))
            }
            fn advance(&mut self, _: &ServoAngles, _: &[[f64; 3]]) -> Result<TipPosition> {
                Ok(*self.0.lock().unwrap())
            }
        }
        let goal = std::sync::Arc::new(std::sync::Mutex::new(TipPosition::default()));
        let mut env = env_with(Follow(goal.clone()));
        let scaler = EnvConfig::default().workspace_scaler().unwrap();
        let mut oracle = move |obs: &[f64; 4]| {
            *goal.lock().unwrap() = TipPosition::new(scaler.denormalize(0, obs[2]), scaler.denormalize(1, obs[3]));
            ActionDelta::default()
        };
        let start = ServoAngles::clip_and_couple(0.0, 0.0).unwrap();
        let r = eval_path_following(&mut oracle, &mut env, &path, start, 0.5, 20).unwrap();
        assert!(r.mean_error <= 0.5, "{}", r.mean_error);
        assert_eq!(r.waypoints.len(), 60);
        assert_eq!(r.trace_rows().len(), 60);
    }

    #[test]
    fn reports_are_reproducible() {
        let goal = TipPosition::new(20.0, -10.0);
        let run = |dir: &Path| {
            let mut env = env_with(Teleport(goal));
            let mut still = |_: &[f64; 4]| ActionDelta::default();
            let (s, tr) = eval_regulation(&mut still, &mut env, &regulation_starts(3, 5), goal, 0.5).unwrap();
            let report = RegulationReport::new(vec![AgentRegulation {
                agent: "idle".into(),
                headline: s,
                extra: vec![],
            }]);
            emit_regulation_report(&report, &[("idle".into(), 0.5, tr)], dir).unwrap();
            fs::read(dir.join("regulation.json")).unwrap()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ja = run(a.path());
        assert_eq!(ja, run(b.path()));
        let text = String::from_utf8(ja).unwrap();
        for field in ["success_rate_pct", "avg_steps", "avg_abs_error_x", "avg_abs_error_y", "avg_error"] {
            assert!(text.contains(field), "{field}");
        }
    }

    proptest! {
        #[test]
        fn path_error_translation_invariant(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..30), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
            let a: Vec<_> = pts.iter().map(|p| TipPosition::new(p.0, p.1)).collect();
            let r: Vec<_> = pts.iter().map(|p| TipPosition::new(p.2, p.3)).collect();
            let shift = |v: &[TipPosition]| v.iter().map(|p| TipPosition::new(p.x + dx, p.y + dy)).collect::<Vec<_>>();
            let e0 = mean_path_error(&a, &r).unwrap();
            let e1 = mean_path_error(&shift(&a), &shift(&r)).unwrap();
            prop_assert!((e0 - e1).abs() < 1e-9);
        }
    }
}
