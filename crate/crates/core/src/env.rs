//! Regulation environment: a rolling ten-step command window, a tip backend
//! (trained surrogate or the plant itself), the distance-plus-effort reward and
//! goal/timeout termination.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, IoContext, Result};
use crate::plant::{Plant, PlantParams, PlantState, SAMPLE_PERIOD};
use crate::protocol::WINDOW;
use crate::rng::stream;
use crate::scaler::MinMaxScaler;
use crate::surrogate::SurrogateModel;
use crate::types::{
    ActionDelta, ServoAngles, TipPosition, THETA1_MAX, THETA1_MIN, THETA3_MAX, THETA3_MIN,
};

/// Which tip source an environment is built on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Surrogate,
    Plant,
}

/// How the command window is filled at reset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Nine normalised zeros followed by the initial command.
    #[default]
    ZeroPad,
    /// The initial command repeated ten times.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Success radius in mm.
    pub epsilon: f64,
    pub t_max: usize,
    /// Per-axis Gaussian noise (mm) on the observed tip, training only.
    pub training_noise_sigma: f64,
    /// Effort weight in the reward.
    pub lambda: f64,
    pub padding: Padding,
    /// Observation bounds `[min, max]` in mm.
    pub workspace_x: [f64; 2],
    pub workspace_y: [f64; 2],
    /// Radial margin (mm) for random goals.
    pub goal_radial_margin: f64,
    /// Angular margin (deg) for random goals.
    pub goal_angular_margin: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            epsilon: 0.5,
            t_max: 150,
            training_noise_sigma: 0.3,
            lambda: 5e-3,
            padding: Padding::ZeroPad,
            workspace_x: [-20.0, 45.0],
            workspace_y: [-45.0, 40.0],
            goal_radial_margin: 1.0,
            goal_angular_margin: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.t_max == 0 {
            return Err(CoreError::Config("env: epsilon > 0 and t_max > 0 required".into()));
        }
        if !(self.training_noise_sigma >= 0.0) || !(self.lambda >= 0.0) {
            return Err(CoreError::Config("env: noise sigma and lambda must be non-negative".into()));
        }
        self.workspace_scaler().map(|_| ())
    }

    pub fn workspace_scaler(&self) -> Result<MinMaxScaler> {
        MinMaxScaler::from_bounds(
            vec![self.workspace_x[0], self.workspace_y[0]],
            vec![self.workspace_x[1], self.workspace_y[1]],
        )
    }
}

/// Reachable annular sector of the plant at zero hysteresis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub r_min: f64,
    pub r_max: f64,
    /// Bend angle limits in degrees.
    pub phi_min: f64,
    pub phi_max: f64,
}

impl Workspace {
    pub fn of_plant(p: &PlantParams) -> Self {
        let phi_a = p.k_phi * THETA1_MIN + p.phi0;
        let phi_b = p.k_phi * THETA1_MAX + p.phi0;
        Workspace {
            r_min: p.r0 + p.k_r * THETA3_MIN,
            r_max: p.r0 + p.k_r * THETA3_MAX,
            phi_min: phi_a.min(phi_b),
            phi_max: phi_a.max(phi_b),
        }
    }

    pub fn contains(&self, tip: &TipPosition, radial_margin: f64, angular_margin: f64) -> bool {
        let r = tip.radius();
        let phi = tip.y.atan2(tip.x).to_degrees();
        r >= self.r_min + radial_margin
            && r <= self.r_max - radial_margin
            && phi >= self.phi_min + angular_margin
            && phi <= self.phi_max - angular_margin
    }

    /// Uniform-by-area sample from the sector shrunk by the margins.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, radial_margin: f64, angular_margin: f64) -> TipPosition {
        let r_hi = self.r_max - radial_margin;
        loop {
            let tip = TipPosition::new(rng.random_range(-r_hi..=r_hi), rng.random_range(-r_hi..=r_hi));
            if self.contains(&tip, radial_margin, angular_margin) {
                return tip;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GoalMode {
    Fixed(TipPosition),
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    None,
    Goal,
    Timeout,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::None
    }
}

/// `-(distance in mm) - lambda * (|d1| + |d2| + |d3|)` with `d2 = d1`.
pub fn compute_reward(tip: &TipPosition, goal: &TipPosition, action: &ActionDelta, lambda: f64) -> f64 {
    let effort = action.dtheta1.abs() + action.dtheta2().abs() + action.dtheta3.abs();
    -tip.distance(goal) - lambda * effort
}

pub fn check_termination(tip: &TipPosition, goal: &TipPosition, step: usize, epsilon: f64, t_max: usize) -> Termination {
    if tip.distance(goal) < epsilon {
        Termination::Goal
    } else if step >= t_max {
        Termination::Timeout
    } else {
        Termination::None
    }
}

/// Source of tip positions for the environment.
pub trait TipBackend {
    /// Window encoding of a command.
    fn normalize(&self, angles: &ServoAngles) -> [f64; 3];
    /// Tip at the start of an episode.
    fn reset(&mut self, initial: &ServoAngles, window: &[[f64; 3]]) -> Result<TipPosition>;
    /// Tip after `command` (already appended to `window`) has been applied.
    fn advance(&mut self, command: &ServoAngles, window: &[[f64; 3]]) -> Result<TipPosition>;
}

/// The two production backends.
#[derive(Clone, Debug)]
pub enum Backend {
    Surrogate(Arc<SurrogateModel>),
    Plant { plant: Plant, state: PlantState },
}

impl Backend {
    pub fn surrogate(model: Arc<SurrogateModel>) -> Self {
        Backend::Surrogate(model)
    }

    pub fn plant(plant: Plant) -> Self {
        Backend::Plant {
            plant,
            state: PlantState::at_rest(ServoAngles::default_rest()),
        }
    }

}

impl TipBackend for Backend {
    fn normalize(&self, a: &ServoAngles) -> [f64; 3] {
        match self {
            Backend::Surrogate(m) => m.normalize_angles(a),
            // the plant ignores the window; keep raw-degree min-max coordinates
            Backend::Plant { .. } => [
                (a.theta1 - THETA1_MIN) / (THETA1_MAX - THETA1_MIN),
                (a.theta2 - THETA1_MIN - 180.0) / (THETA1_MAX - THETA1_MIN),
                (a.theta3 - THETA3_MIN) / (THETA3_MAX - THETA3_MIN),
            ],
        }
    }

    fn reset(&mut self, initial: &ServoAngles, window: &[[f64; 3]]) -> Result<TipPosition> {
        match self {
            Backend::Surrogate(m) => m.predict_final(window),
            Backend::Plant { plant, state } => {
                *state = PlantState::at_rest(*initial);
                Ok(plant.tip_of(state))
            }
        }
    }

    fn advance(&mut self, command: &ServoAngles, window: &[[f64; 3]]) -> Result<TipPosition> {
        match self {
            Backend::Surrogate(m) => m.predict_final(window),
            Backend::Plant { plant, state } => {
                let (next, tip) = plant.step::<ChaCha8Rng>(state, command, SAMPLE_PERIOD, None);
                *state = next;
                Ok(tip)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    /// Action after clipping, as applied.
    pub applied: ActionDelta,
    pub angles: ServoAngles,
    /// Backend tip before any training noise.
    pub tip: TipPosition,
    /// Tip seen by the agent.
    pub observed: TipPosition,
    pub distance: f64,
    pub termination: Termination,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: [f64; 4],
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub angles: ServoAngles,
    pub tip: TipPosition,
    pub reward: f64,
    pub done: bool,
}

pub const TRACE_HEADER: &str = "step,theta1,theta2,theta3,x,y,reward,done";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.step,
            r.angles.theta1,
            r.angles.theta2,
            r.angles.theta3,
            r.tip.x,
            r.tip.y,
            r.reward,
            u8::from(r.done)
        );
    }
    out
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_csv(rows)).at(path)
}

pub struct CatheterEnv {
    cfg: EnvConfig,
    backend: Box<dyn TipBackend + Send>,
    workspace: Workspace,
    obs_scaler: MinMaxScaler,
    training: bool,
    noise_rng: ChaCha8Rng,
    angles: ServoAngles,
    window: Vec<[f64; 3]>,
    tip: TipPosition,
    observed: TipPosition,
    goal: TipPosition,
    step: usize,
    trace: Option<Vec<TraceRow>>,
}

impl CatheterEnv {
    /// `plant_params` fixes the reachable workspace used for goal checks.
    pub fn new(
        cfg: EnvConfig,
        backend: impl TipBackend + Send + 'static,
        plant_params: &PlantParams,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(CatheterEnv {
            obs_scaler: cfg.workspace_scaler()?,
            workspace: Workspace::of_plant(plant_params),
            cfg,
            backend: Box::new(backend),
            training: false,
            noise_rng: stream(seed, 0x4e4f4953),
            angles: ServoAngles::default_rest(),
            window: Vec::with_capacity(WINDOW),
            tip: TipPosition::default(),
            observed: TipPosition::default(),
            goal: TipPosition::default(),
            step: 0,
            trace: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Changes the success radius used for termination.
    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) {
            return Err(CoreError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        self.cfg.epsilon = epsilon;
        Ok(())
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn angles(&self) -> ServoAngles {
        self.angles
    }

    /// Backend tip without training noise.
    pub fn tip(&self) -> TipPosition {
        self.tip
    }

    pub fn goal(&self) -> TipPosition {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn window(&self) -> &[[f64; 3]] {
        &self.window
    }

    pub fn observation(&self) -> [f64; 4] {
        let s = &self.obs_scaler;
        [
            s.normalize(0, self.observed.x),
            s.normalize(1, self.observed.y),
            s.normalize(0, self.goal.x),
            s.normalize(1, self.goal.y),
        ]
    }

    fn observe(&mut self, tip: TipPosition) -> TipPosition {
        if self.training && self.cfg.training_noise_sigma > 0.0 {
            let sigma = self.cfg.training_noise_sigma;
            let nx: f64 = StandardNormal.sample(&mut self.noise_rng);
            let ny: f64 = StandardNormal.sample(&mut self.noise_rng);
            TipPosition::new(tip.x + sigma * nx, tip.y + sigma * ny)
        } else {
            tip
        }
    }

    pub fn check_goal(&self, goal: &TipPosition) -> Result<()> {
        if !goal.is_finite() || !self.workspace.contains(goal, 0.0, 0.0) {
            return Err(CoreError::Config(format!(
                "goal ({}, {}) lies outside the reachable workspace",
                goal.x, goal.y
            )));
        }
        Ok(())
    }

    /// Random initial angles; goal per `mode`.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R, mode: GoalMode) -> Result<[f64; 4]> {
        let theta1 = rng.random_range(THETA1_MIN..=THETA1_MAX);
        let theta3 = rng.random_range(THETA3_MIN..=THETA3_MAX);
        let goal = match mode {
            GoalMode::Fixed(g) => g,
            GoalMode::Random => self
                .workspace
                .sample(rng, self.cfg.goal_radial_margin, self.cfg.goal_angular_margin),
        };
        self.reset_to(ServoAngles::clip_and_couple(theta1, theta3)?, goal)
    }

    /// Starts an episode from given angles.
    pub fn reset_to(&mut self, initial: ServoAngles, goal: TipPosition) -> Result<[f64; 4]> {
        self.check_goal(&goal)?;
        let initial = ServoAngles::clip_and_couple(initial.theta1, initial.theta3)?;
        let norm = self.backend.normalize(&initial);
        self.window.clear();
        match self.cfg.padding {
            Padding::ZeroPad => {
                self.window.resize(WINDOW - 1, [0.0; 3]);
                self.window.push(norm);
            }
            Padding::WarmStart => self.window.resize(WINDOW, norm),
        }
        self.angles = initial;
        self.goal = goal;
        self.step = 0;
        self.tip = self.backend.reset(&initial, &self.window)?;
        self.observed = self.observe(self.tip);
        if let Some(t) = &mut self.trace {
            t.clear();
            t.push(TraceRow {
                step: 0,
                angles: initial,
                tip: self.tip,
                reward: 0.0,
                done: false,
            });
        }
        Ok(self.observation())
    }

    /// New goal without touching angles, window or backend state; restarts the step count.
    pub fn retarget(&mut self, goal: TipPosition) -> Result<[f64; 4]> {
        self.check_goal(&goal)?;
        self.goal = goal;
        self.step = 0;
        Ok(self.observation())
    }

    pub fn step(&mut self, action: &ActionDelta) -> Result<StepResult> {
        if !action.is_finite() {
            return Err(CoreError::Domain(format!("non-finite action {action:?}")));
        }
        let applied = action.clipped();
        self.angles = ServoAngles::clip_and_couple(self.angles.theta1 + applied.dtheta1, self.angles.theta3 + applied.dtheta3)?;
        self.window.remove(0);
        self.window.push(self.backend.normalize(&self.angles));
        self.tip = self.backend.advance(&self.angles, &self.window)?;
        if !self.tip.is_finite() {
            return Err(CoreError::Divergence("backend produced a non-finite tip".into()));
        }
        self.observed = self.observe(self.tip);
        self.step += 1;
        let reward = compute_reward(&self.observed, &self.goal, &applied, self.cfg.lambda);
        let termination = check_termination(&self.observed, &self.goal, self.step, self.cfg.epsilon, self.cfg.t_max);
        let done = termination.is_done();
        if let Some(t) = &mut self.trace {
            t.push(TraceRow {
                step: self.step,
                angles: self.angles,
                tip: self.tip,
                reward,
                done,
            });
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            info: StepInfo {
                step: self.step,
                applied,
                angles: self.angles,
                tip: self.tip,
                observed: self.observed,
                distance: self.observed.distance(&self.goal),
                termination,
            },
        })
    }
}
