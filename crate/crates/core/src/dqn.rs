//! Deep Q-learning over the 11 x 11 grid of integer servo increments.

use std::path::Path;

use catheter_nn::{polyak_update, Activation, Adam, CheckpointReader, CheckpointWriter, Mlp, Params, Scalar};
use log::info;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{obs_batch, obs_row, EpisodeLog, Mean, Policy};
use crate::env::{CatheterEnv, GoalMode, Termination};
use crate::error::{CoreError, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::stream;
use crate::types::{ActionDelta, ACTION_LIMIT};

pub const GRID: usize = 11;
pub const N_ACTIONS: usize = GRID * GRID;

/// Row-major index `(d1 + 5) * 11 + (d3 + 5)` to integer increments.
pub fn decode_action(index: usize) -> Result<ActionDelta> {
    if index >= N_ACTIONS {
        return Err(CoreError::Domain(format!("action index {index} outside [0, {}]", N_ACTIONS - 1)));
    }
    let lim = ACTION_LIMIT as i64;
    Ok(ActionDelta::new(
        (index / GRID) as i64 as f64 - lim as f64,
        (index % GRID) as i64 as f64 - lim as f64,
    ))
}

pub fn encode_action(a: &ActionDelta) -> Result<usize> {
    let ok = |v: f64| v.fract() == 0.0 && v.abs() <= ACTION_LIMIT;
    if !ok(a.dtheta1) || !ok(a.dtheta3) {
        return Err(CoreError::Domain(format!("action {a:?} is not on the integer grid")));
    }
    Ok((a.dtheta1 + ACTION_LIMIT) as usize * GRID + (a.dtheta3 + ACTION_LIMIT) as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub warmup: usize,
    pub episodes: usize,
    /// Checkpoint hook period in episodes; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![128, 128],
            buffer_capacity: 100_000,
            batch_size: 128,
            gamma: 0.99,
            learning_rate: 1e-3,
            tau: 0.005,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 6000,
            warmup: 1000,
            episodes: 1500,
            checkpoint_every: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(format!("dqn: {m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) || !(self.learning_rate > 0.0) {
            return bad("gamma in [0, 1], tau in (0, 1] and learning_rate > 0 required");
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("need 0 <= epsilon_end <= epsilon_start <= 1");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start`, floored at `epsilon_end`.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let slope = (self.epsilon_start - self.epsilon_end) / self.epsilon_decay_steps as f64;
        (self.epsilon_start - step as f64 * slope).max(self.epsilon_end)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_index<T: Scalar>(q: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// `r + gamma * max_a' Q_target(s', a')`, or `r` for terminal transitions.
pub fn bellman_target(reward: f64, done: bool, next_max: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_max
    }
}

#[derive(Clone, Debug)]
pub struct DqnAgent<T: Scalar = f64> {
    pub q: Mlp<T>,
    pub target: Mlp<T>,
    pub opt: Adam<T>,
    grads: Mlp<T>,
    pub cfg: DqnConfig,
}

impl<T: Scalar> DqnAgent<T> {
    pub fn new<R: Rng + ?Sized>(cfg: DqnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![4];
        dims.extend(&cfg.hidden);
        dims.push(N_ACTIONS);
        let q = Mlp::new(&dims, Activation::Relu, Activation::Linear, rng);
        Ok(DqnAgent {
            target: q.clone(),
            grads: q.zeros_like(),
            opt: Adam::new(T::of(cfg.learning_rate)),
            q,
            cfg,
        })
    }

    pub fn q_values(&self, obs: &[f64; 4]) -> Result<Vec<f64>> {
        let out = self.q.forward(obs_row::<T>(obs).view())?;
        Ok(out.row(0).iter().map(|v| v.to_f64_lossless()).collect())
    }

    pub fn greedy(&self, obs: &[f64; 4]) -> Result<usize> {
        let out = self.q.forward(obs_row::<T>(obs).view())?;
        Ok(greedy_index(out.row(0)))
    }

    /// Uniform action with probability `epsilon`, greedy otherwise.
    pub fn select<R: Rng + ?Sized>(&self, obs: &[f64; 4], epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.random::<f64>() < epsilon {
            Ok(rng.random_range(0..N_ACTIONS))
        } else {
            self.greedy(obs)
        }
    }

    /// One gradient step on the taken-action MSE followed by a soft target update.
    pub fn update(&mut self, batch: &[&Transition<usize>]) -> Result<f64> {
        let b = batch.len();
        let next = self.target.forward(obs_batch::<T, _>(batch, true).view())?;
        let trace = self.q.forward_trace(obs_batch::<T, _>(batch, false).view())?;
        let out = trace.output();
        let mut grad = Array2::<T>::zeros((b, N_ACTIONS));
        let mut loss = 0.0;
        let scale = 2.0 / b as f64;
        for (i, t) in batch.iter().enumerate() {
            let next_max = next.row(i).iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossless()));
            let y = bellman_target(t.reward, t.done, next_max, self.cfg.gamma);
            let diff = out[[i, t.action]].to_f64_lossless() - y;
            loss += diff * diff;
            grad[[i, t.action]] = T::of(scale * diff);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(CoreError::Divergence(format!("dqn loss became {loss}")));
        }
        self.grads.fill_zero();
        self.q.backward(&trace, grad.view(), Some(&mut self.grads), false);
        self.opt
            .step(&mut self.q, &self.grads)
            .map_err(|e| CoreError::Divergence(format!("dqn update: {e}")))?;
        polyak_update(&mut self.target, &self.q, T::of(self.cfg.tau));
        Ok(loss)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut meta = toml::Table::new();
        meta.insert("kind".into(), "dqn".into());
        meta.insert("hidden".into(), self.cfg.hidden.iter().map(|h| *h as i64).collect::<Vec<_>>().into());
        let mut w = CheckpointWriter::new().meta(meta);
        w.add("q", &self.q).add("target", &self.target);
        Ok(w.write(dir, stem)?)
    }

    pub fn load(dir: &Path, stem: &str, cfg: DqnConfig) -> Result<Self> {
        let r = CheckpointReader::open(dir, stem)?;
        let mut agent = Self::new(cfg, &mut stream(0, 0))?;
        r.load_into("q", &mut agent.q)?;
        r.load_into("target", &mut agent.target)?;
        Ok(agent)
    }
}

impl<T: Scalar> Policy for DqnAgent<T> {
    fn act(&mut self, obs: &[f64; 4]) -> Result<ActionDelta> {
        decode_action(self.greedy(obs)?)
    }
}

/// Trains on random goals with training noise switched on. `on_checkpoint`
/// is called every `checkpoint_every` episodes.
pub fn train_dqn<T: Scalar>(
    env: &mut CatheterEnv,
    cfg: &DqnConfig,
    seed: u64,
    mut on_checkpoint: Option<&mut dyn FnMut(usize, &DqnAgent<T>) -> Result<()>>,
) -> Result<(DqnAgent<T>, Vec<EpisodeLog>)> {
    let mut agent = DqnAgent::<T>::new(cfg.clone(), &mut stream(seed, 10))?;
    let mut explore = stream(seed, 11);
    let mut starts = stream(seed, 12);
    let mut sampler = stream(seed, 13);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut global_step = 0usize;
    env.set_training(true);
    for episode in 0..cfg.episodes {
        let mut obs = env.reset(&mut starts, GoalMode::Random)?;
        let epsilon = cfg.epsilon_at(global_step);
        let (mut ret, mut steps, mut loss) = (0.0, 0, Mean::default());
        let (success, final_distance) = loop {
            let action = if global_step < cfg.warmup {
                explore.random_range(0..N_ACTIONS)
            } else {
                agent.select(&obs, cfg.epsilon_at(global_step), &mut explore)?
            };
            let s = env.step(&decode_action(action)?)?;
            buffer.push(Transition {
                obs,
                action,
                reward: s.reward,
                next_obs: s.observation,
                done: s.info.termination == Termination::Goal,
            });
            global_step += 1;
            if global_step >= cfg.warmup && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut sampler)?;
                loss.add(agent.update(&batch)?);
            }
            ret += s.reward;
            steps += 1;
            obs = s.observation;
            if s.done {
                break (s.info.termination == Termination::Goal, s.info.distance);
            }
        };
        log.push(EpisodeLog {
            episode,
            episode_return: ret,
            steps,
            exploration: epsilon,
            loss: loss.get(),
            success,
            final_distance,
        });
        if episode % 50 == 49 {
            let recent = &log[log.len() - 50..];
            let rate = recent.iter().filter(|e| e.success).count() as f64 / 50.0;
            info!("dqn episode {}: success(last 50) {rate:.2} return {ret:.1}", episode + 1);
        }
        if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
            if let Some(cb) = on_checkpoint.as_mut() {
                cb(episode + 1, &agent)?;
            }
        }
    }
    env.set_training(false);
    Ok((agent, log))
}
