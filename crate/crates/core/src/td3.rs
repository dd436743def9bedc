//! Twin-delayed deterministic policy gradient controller with continuous
//! servo increments.

use std::path::Path;

use catheter_nn::{polyak_update, Activation, Adam, CheckpointReader, CheckpointWriter, Mlp, Params, Scalar};
use log::info;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::{obs_batch, obs_row, EpisodeLog, Mean, Policy};
use crate::env::{CatheterEnv, GoalMode, Termination};
use crate::error::{CoreError, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::stream;
use crate::types::{ActionDelta, ACTION_LIMIT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub policy_delay: usize,
    /// Exploration noise (deg) at the first and last episode, linear in between.
    pub exploration_start: f64,
    pub exploration_end: f64,
    /// Target smoothing noise and its clip, both in degrees.
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    pub warmup: usize,
    pub episodes: usize,
    /// Checkpoint hook period in episodes; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            hidden: vec![256, 256],
            buffer_capacity: 200_000,
            batch_size: 256,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.005,
            policy_delay: 2,
            exploration_start: 1.0,
            exploration_end: 0.1,
            smoothing_sigma: 0.25,
            smoothing_clip: 0.5,
            warmup: 1000,
            episodes: 600,
            checkpoint_every: 0,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(format!("td3: {m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("gamma in [0, 1] and tau in (0, 1] required");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        let sigmas = [self.exploration_start, self.exploration_end, self.smoothing_sigma, self.smoothing_clip];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }

    pub fn exploration_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.exploration_start;
        }
        let frac = (episode as f64 / (self.episodes - 1) as f64).min(1.0);
        self.exploration_start + (self.exploration_end - self.exploration_start) * frac
    }
}

fn clip_action(v: f64) -> f64 {
    v.clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

/// Target action with clipped Gaussian smoothing: `clip(a + clip(noise, -c, c))`.
pub fn smoothed_target_action(target: [f64; 2], noise: [f64; 2], clip: f64) -> [f64; 2] {
    [
        clip_action(target[0] + noise[0].clamp(-clip, clip)),
        clip_action(target[1] + noise[1].clamp(-clip, clip)),
    ]
}

/// `r + gamma (1 - done) min(q1, q2)`.
pub fn critic_target(reward: f64, done: bool, q1: f64, q2: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

/// Critic input: observation followed by the action scaled to `[-1, 1]`.
fn critic_input<T: Scalar>(obs: ArrayView2<'_, T>, action_unit: ArrayView2<'_, T>) -> Array2<T> {
    concatenate(Axis(1), &[obs, action_unit]).expect("batch sizes agree")
}

/// `-mean_i Q1(s_i, actor(s_i))`, the quantity the actor minimises.
pub fn actor_objective<T: Scalar>(actor: &Mlp<T>, critic: &Mlp<T>, obs: ArrayView2<'_, T>) -> Result<T> {
    let a = actor.forward(obs)?;
    let q = critic.forward(critic_input(obs, a.view()).view())?;
    Ok(-q.sum() / T::of(q.len() as f64))
}

/// Gradient of [`actor_objective`] with respect to the actor parameters,
/// accumulated into `grads`. Returns the objective value.
pub fn actor_gradient<T: Scalar>(
    actor: &Mlp<T>,
    critic: &Mlp<T>,
    obs: ArrayView2<'_, T>,
    grads: &mut Mlp<T>,
) -> Result<T> {
    let b = obs.nrows();
    let a_trace = actor.forward_trace(obs)?;
    let c_trace = critic.forward_trace(critic_input(obs, a_trace.output().view()).view())?;
    let q = c_trace.output();
    let value = -q.sum() / T::of(b as f64);
    let dq = Array2::from_elem((b, 1), -T::one() / T::of(b as f64));
    let d_in = critic
        .backward(&c_trace, dq.view(), None, true)
        .expect("input gradient requested");
    let obs_width = obs.ncols();
    let d_action = d_in.slice(s![.., obs_width..]).to_owned();
    actor.backward(&a_trace, d_action.view(), Some(grads), false);
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Td3Losses {
    pub critic1: f64,
    pub critic2: f64,
    /// Present only on delayed actor steps.
    pub actor: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Td3Agent<T: Scalar = f64> {
    pub actor: Mlp<T>,
    pub critic1: Mlp<T>,
    pub critic2: Mlp<T>,
    pub actor_target: Mlp<T>,
    pub critic1_target: Mlp<T>,
    pub critic2_target: Mlp<T>,
    actor_opt: Adam<T>,
    critic1_opt: Adam<T>,
    critic2_opt: Adam<T>,
    actor_grads: Mlp<T>,
    critic_grads: Mlp<T>,
    updates: u64,
    pub cfg: Td3Config,
}

impl<T: Scalar> Td3Agent<T> {
    pub fn new<R: Rng + ?Sized>(cfg: Td3Config, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let dims = |input: usize, out: usize| {
            let mut d = vec![input];
            d.extend(&cfg.hidden);
            d.push(out);
            d
        };
        let actor = Mlp::new(&dims(4, 2), Activation::Relu, Activation::Tanh, rng);
        let critic1 = Mlp::new(&dims(6, 1), Activation::Relu, Activation::Linear, rng);
        let critic2 = Mlp::new(&dims(6, 1), Activation::Relu, Activation::Linear, rng);
        Ok(Td3Agent {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor_grads: actor.zeros_like(),
            critic_grads: critic1.zeros_like(),
            actor_opt: Adam::new(T::of(cfg.actor_lr)),
            critic1_opt: Adam::new(T::of(cfg.critic_lr)),
            critic2_opt: Adam::new(T::of(cfg.critic_lr)),
            actor,
            critic1,
            critic2,
            updates: 0,
            cfg,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Deterministic action in degrees.
    pub fn deterministic(&self, obs: &[f64; 4]) -> Result<ActionDelta> {
        let out = self.actor.forward(obs_row::<T>(obs).view())?;
        Ok(ActionDelta::new(
            ACTION_LIMIT * out[[0, 0]].to_f64_lossless(),
            ACTION_LIMIT * out[[0, 1]].to_f64_lossless(),
        ))
    }

    /// Deterministic action plus `N(0, sigma^2)` per component, clipped to the bounds.
    pub fn policy_action<R: Rng + ?Sized>(&self, obs: &[f64; 4], sigma: f64, rng: &mut R) -> Result<ActionDelta> {
        let a = self.deterministic(obs)?;
        if sigma == 0.0 {
            return Ok(a.clipped());
        }
        let n = Normal::new(0.0, sigma).map_err(|e| CoreError::Config(e.to_string()))?;
        Ok(ActionDelta::new(
            clip_action(a.dtheta1 + n.sample(rng)),
            clip_action(a.dtheta3 + n.sample(rng)),
        ))
    }

    fn critic_step(
        critic: &mut Mlp<T>,
        opt: &mut Adam<T>,
        grads: &mut Mlp<T>,
        input: ArrayView2<'_, T>,
        y: &[f64],
    ) -> Result<f64> {
        let trace = critic.forward_trace(input)?;
        let q = trace.output();
        let b = y.len();
        let mut loss = 0.0;
        let mut g = Array2::<T>::zeros((b, 1));
        for i in 0..b {
            let d = q[[i, 0]].to_f64_lossless() - y[i];
            loss += d * d;
            g[[i, 0]] = T::of(2.0 * d / b as f64);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(CoreError::Divergence(format!("td3 critic loss became {loss}")));
        }
        grads.fill_zero();
        critic.backward(&trace, g.view(), Some(grads), false);
        opt.step(critic, grads)
            .map_err(|e| CoreError::Divergence(format!("td3 critic update: {e}")))?;
        Ok(loss)
    }

    /// Critic regression on both heads; every `policy_delay`-th call also
    /// steps the actor and soft-updates all three targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition<[f64; 2]>], rng: &mut R) -> Result<Td3Losses> {
        self.updates += 1;
        let b = batch.len();
        let lim = T::of(ACTION_LIMIT);
        let s = obs_batch::<T, _>(batch, false);
        let s2 = obs_batch::<T, _>(batch, true);

        let target_out = self.actor_target.forward(s2.view())?;
        let mut a2 = Array2::<T>::zeros((b, 2));
        for i in 0..b {
            let raw = [
                (target_out[[i, 0]] * lim).to_f64_lossless(),
                (target_out[[i, 1]] * lim).to_f64_lossless(),
            ];
            let noise = [
                self.cfg.smoothing_sigma * Distribution::<f64>::sample(&StandardNormal, rng),
                self.cfg.smoothing_sigma * Distribution::<f64>::sample(&StandardNormal, rng),
            ];
            let a = smoothed_target_action(raw, noise, self.cfg.smoothing_clip);
            a2[[i, 0]] = T::of(a[0] / ACTION_LIMIT);
            a2[[i, 1]] = T::of(a[1] / ACTION_LIMIT);
        }
        let next_in = critic_input(s2.view(), a2.view());
        let q1 = self.critic1_target.forward(next_in.view())?;
        let q2 = self.critic2_target.forward(next_in.view())?;
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                critic_target(t.reward, t.done, q1[[i, 0]].to_f64_lossless(), q2[[i, 0]].to_f64_lossless(), self.cfg.gamma)
            })
            .collect();

        let a = Array2::from_shape_fn((b, 2), |(i, j)| T::of(batch[i].action[j] / ACTION_LIMIT));
        let input = critic_input(s.view(), a.view());
        let critic1 = Self::critic_step(&mut self.critic1, &mut self.critic1_opt, &mut self.critic_grads, input.view(), &y)?;
        let critic2 = Self::critic_step(&mut self.critic2, &mut self.critic2_opt, &mut self.critic_grads, input.view(), &y)?;

        let mut actor = None;
        if self.updates % self.cfg.policy_delay as u64 == 0 {
            self.actor_grads.fill_zero();
            let value = actor_gradient(&self.actor, &self.critic1, s.view(), &mut self.actor_grads)?;
            if !value.is_finite() {
                return Err(CoreError::Divergence("td3 actor objective became non-finite".into()));
            }
            self.actor_opt
                .step(&mut self.actor, &self.actor_grads)
                .map_err(|e| CoreError::Divergence(format!("td3 actor update: {e}")))?;
            let tau = T::of(self.cfg.tau);
            polyak_update(&mut self.actor_target, &self.actor, tau);
            polyak_update(&mut self.critic1_target, &self.critic1, tau);
            polyak_update(&mut self.critic2_target, &self.critic2, tau);
            actor = Some(value.to_f64_lossless());
        }
        Ok(Td3Losses { critic1, critic2, actor })
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut meta = toml::Table::new();
        meta.insert("kind".into(), "td3".into());
        meta.insert("hidden".into(), self.cfg.hidden.iter().map(|h| *h as i64).collect::<Vec<_>>().into());
        meta.insert("updates".into(), (self.updates as i64).into());
        let mut w = CheckpointWriter::new().meta(meta);
        w.add("actor", &self.actor)
            .add("critic1", &self.critic1)
            .add("critic2", &self.critic2)
            .add("actor_target", &self.actor_target)
            .add("critic1_target", &self.critic1_target)
            .add("critic2_target", &self.critic2_target);
        Ok(w.write(dir, stem)?)
    }

    pub fn load(dir: &Path, stem: &str, cfg: Td3Config) -> Result<Self> {
        let r = CheckpointReader::open(dir, stem)?;
        let mut agent = Self::new(cfg, &mut stream(0, 0))?;
        r.load_into("actor", &mut agent.actor)?;
        r.load_into("critic1", &mut agent.critic1)?;
        r.load_into("critic2", &mut agent.critic2)?;
        r.load_into("actor_target", &mut agent.actor_target)?;
        r.load_into("critic1_target", &mut agent.critic1_target)?;
        r.load_into("critic2_target", &mut agent.critic2_target)?;
        agent.updates = r.meta().get("updates").and_then(|v| v.as_integer()).unwrap_or(0) as u64;
        Ok(agent)
    }
}

impl<T: Scalar> Policy for Td3Agent<T> {
    fn act(&mut self, obs: &[f64; 4]) -> Result<ActionDelta> {
        self.deterministic(obs)
    }
}

/// Trains on random goals with training noise switched on. `on_checkpoint`
/// is called every `checkpoint_every` episodes.
pub fn train_td3<T: Scalar>(
    env: &mut CatheterEnv,
    cfg: &Td3Config,
    seed: u64,
    mut on_checkpoint: Option<&mut dyn FnMut(usize, &Td3Agent<T>) -> Result<()>>,
) -> Result<(Td3Agent<T>, Vec<EpisodeLog>)> {
    let mut agent = Td3Agent::<T>::new(cfg.clone(), &mut stream(seed, 20))?;
    let mut explore = stream(seed, 21);
    let mut starts = stream(seed, 22);
    let mut sampler = stream(seed, 23);
    let mut smoothing = stream(seed, 24);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut global_step = 0usize;
    env.set_training(true);
    for episode in 0..cfg.episodes {
        let sigma = cfg.exploration_at(episode);
        let mut obs = env.reset(&mut starts, GoalMode::Random)?;
        let (mut ret, mut steps, mut loss) = (0.0, 0, Mean::default());
        let (success, final_distance) = loop {
            let action = if global_step < cfg.warmup {
                ActionDelta::new(
                    explore.random_range(-ACTION_LIMIT..=ACTION_LIMIT),
                    explore.random_range(-ACTION_LIMIT..=ACTION_LIMIT),
                )
            } else {
                agent.policy_action(&obs, sigma, &mut explore)?
            };
            let s = env.step(&action)?;
            buffer.push(Transition {
                obs,
                action: [s.info.applied.dtheta1, s.info.applied.dtheta3],
                reward: s.reward,
                next_obs: s.observation,
                done: s.info.termination == Termination::Goal,
            });
            global_step += 1;
            if global_step >= cfg.warmup && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut sampler)?;
                let l = agent.update(&batch, &mut smoothing)?;
                loss.add((l.critic1 + l.critic2) / 2.0);
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
            exploration: sigma,
            loss: loss.get(),
            success,
            final_distance,
        });
        if episode % 50 == 49 {
            let recent = &log[log.len() - 50..];
            let rate = recent.iter().filter(|e| e.success).count() as f64 / 50.0;
            info!("td3 episode {}: success(last 50) {rate:.2} return {ret:.1}", episode + 1);
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
