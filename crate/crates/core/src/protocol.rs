//! Excitation profiles, acquisition campaigns, trial CSV files and windowed
//! datasets for surrogate training.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, IoContext, Result};
use crate::plant::{Plant, PlantState, SAMPLE_PERIOD};
use crate::rng::{derive_seed, stream};
use crate::scaler::MinMaxScaler;
use crate::types::{clip_and_couple, ServoAngles, TipPosition, THETA1_MAX, THETA1_MIN, THETA3_MAX, THETA3_MIN};

pub const CSV_HEADER: &str = "timestamp,Servo1,Servo2,Servo3,X,Y";
pub const WINDOW: usize = 10;
pub const STEP_SIZES: [f64; 3] = [10.0, 30.0, 60.0];
pub const THETA3_LEVELS: [f64; 12] = [0.0, 8.0, 16.0, 24.0, 32.0, 40.0, 48.0, 56.0, 64.0, 72.0, 80.0, 88.0];

/// What to do with parameters outside the acquisition protocol ranges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    #[default]
    Warn,
    Error,
}

impl Strictness {
    fn flag(self, msg: String) -> Result<()> {
        match self {
            Strictness::Warn => {
                warn!("{msg}");
                Ok(())
            }
            Strictness::Error => Err(CoreError::Domain(msg)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Theta1Profile {
    LinearSweep { start: f64, end: f64, rate: f64 },
    Sinusoid { amplitude: f64, frequency: f64, phase_deg: f64, duration: f64 },
    Steps { start: f64, steps: Vec<f64>, hold: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Theta3Profile {
    Discrete { value: f64 },
    /// Signed `rate` in deg/s starting from `start`, clipped to the servo range.
    Continuous { start: f64, rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub theta1: Theta1Profile,
    pub theta3: Theta3Profile,
}

fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt).round().max(1.0) as usize
}

/// Constant-rate ramp of `theta1` from `start` to `end`, sampled every `dt`;
/// the last sample is clamped onto `end`.
pub fn gen_linear_sweep(start: f64, end: f64, rate: f64, dt: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(CoreError::Domain(format!("sweep rate must be positive, got {rate}")));
    }
    if start == end {
        return Err(CoreError::Domain("sweep start and end coincide".into()));
    }
    let span = (end - start).abs();
    let dir = (end - start).signum();
    let steps = (span / (rate * dt) - 1e-9).ceil() as usize;
    Ok((0..=steps)
        .map(|k| {
            let v = start + dir * rate * k as f64 * dt;
            if dir > 0.0 {
                v.min(end)
            } else {
                v.max(end)
            }
        })
        .collect())
}

/// `theta1(t) = A sin(2 pi f t + phi)` at `t = k dt`, `k < duration/dt`.
pub fn gen_sinusoid(
    amplitude: f64,
    frequency: f64,
    phase_deg: f64,
    duration: f64,
    dt: f64,
    strictness: Strictness,
) -> Result<Vec<f64>> {
    if !(30.0..=90.0).contains(&amplitude) {
        strictness.flag(format!("sinusoid amplitude {amplitude} outside [30, 90] deg"))?;
    }
    if !(0.1..=1.0).contains(&frequency) {
        strictness.flag(format!("sinusoid frequency {frequency} outside [0.1, 1.0] Hz"))?;
    }
    if !(0.0..360.0).contains(&phase_deg) {
        strictness.flag(format!("sinusoid phase {phase_deg} outside [0, 360) deg"))?;
    }
    let phase = phase_deg.to_radians();
    Ok((0..sample_count(duration, dt))
        .map(|k| amplitude * (2.0 * std::f64::consts::PI * frequency * k as f64 * dt + phase).sin())
        .collect())
}

/// Piecewise-constant `theta1`: `start` held for `hold` seconds, then each
/// signed step applied in turn (clipped to the servo range) and held.
pub fn gen_step_profile(start: f64, steps: &[f64], hold: f64, dt: f64, strictness: Strictness) -> Result<Vec<f64>> {
    for s in steps {
        if *s != 0.0 && !STEP_SIZES.contains(&s.abs()) {
            strictness.flag(format!("step size {s} not in {{10, 30, 60}}"))?;
        }
    }
    let per_level = sample_count(hold, dt);
    let mut level = start.clamp(THETA1_MIN, THETA1_MAX);
    let mut out = Vec::with_capacity(per_level * (steps.len() + 1));
    out.extend(std::iter::repeat_n(level, per_level));
    for s in steps {
        level = (level + s).clamp(THETA1_MIN, THETA1_MAX);
        out.extend(std::iter::repeat_n(level, per_level));
    }
    Ok(out)
}

/// `theta3` series of length `len` aligned with a `theta1` series.
pub fn gen_theta3_profile(profile: &Theta3Profile, len: usize, dt: f64, strictness: Strictness) -> Result<Vec<f64>> {
    match *profile {
        Theta3Profile::Discrete { value } => {
            if !THETA3_LEVELS.contains(&value) {
                strictness.flag(format!("theta3 level {value} not in the protocol set"))?;
            }
            Ok(vec![value.clamp(THETA3_MIN, THETA3_MAX); len])
        }
        Theta3Profile::Continuous { start, rate } => {
            if !(10.0..=50.0).contains(&rate.abs()) {
                strictness.flag(format!("theta3 rate {rate} outside [10, 50] deg/s"))?;
            }
            Ok((0..len)
                .map(|k| (start + rate * k as f64 * dt).clamp(THETA3_MIN, THETA3_MAX))
                .collect())
        }
    }
}

impl ProfileSpec {
    pub fn theta1_series(&self, dt: f64, strictness: Strictness) -> Result<Vec<f64>> {
        match &self.theta1 {
            Theta1Profile::LinearSweep { start, end, rate } => {
                if !(10.0..=30.0).contains(rate) {
                    strictness.flag(format!("sweep rate {rate} outside [10, 30] deg/s"))?;
                }
                gen_linear_sweep(*start, *end, *rate, dt)
            }
            Theta1Profile::Sinusoid {
                amplitude,
                frequency,
                phase_deg,
                duration,
            } => gen_sinusoid(*amplitude, *frequency, *phase_deg, *duration, dt, strictness),
            Theta1Profile::Steps { start, steps, hold } => gen_step_profile(*start, steps, *hold, dt, strictness),
        }
    }

    /// Coupled, clipped command sequence.
    pub fn commands(&self, dt: f64, strictness: Strictness) -> Result<Vec<ServoAngles>> {
        let theta1 = self.theta1_series(dt, strictness)?;
        let theta3 = gen_theta3_profile(&self.theta3, theta1.len(), dt, strictness)?;
        theta1
            .iter()
            .zip(&theta3)
            .map(|(&a, &b)| clip_and_couple(a, b))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: f64,
    pub angles: ServoAngles,
    pub tip: TipPosition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTrial {
    pub trial_id: String,
    pub dt: f64,
    pub samples: Vec<Sample>,
    pub meta: Option<ProfileSpec>,
}

fn timestamp(k: usize, dt: f64) -> f64 {
    // keep timestamps on a clean decimal grid
    (k as f64 * dt * 1e9).round() / 1e9
}

impl TrajectoryTrial {
    /// Simulates `commands` from rest at the first command. Each row pairs the
    /// command issued at `t_k` with the tip after it has been held for `dt`.
    pub fn simulate(
        trial_id: impl Into<String>,
        commands: &[ServoAngles],
        plant: &Plant,
        dt: f64,
        seed: u64,
        meta: Option<ProfileSpec>,
    ) -> Result<Self> {
        let first = commands
            .first()
            .ok_or_else(|| CoreError::Domain("trial needs at least one command".into()))?;
        let (tips, _) = plant.simulate(&PlantState::at_rest(*first), commands, dt, seed)?;
        let samples = commands
            .iter()
            .zip(tips)
            .enumerate()
            .map(|(k, (a, tip))| Sample {
                timestamp: timestamp(k, dt),
                angles: *a,
                tip,
            })
            .collect();
        Ok(TrajectoryTrial {
            trial_id: trial_id.into(),
            dt,
            samples,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV text with the fixed header; values use the shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * (self.samples.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                s.timestamp, s.angles.theta1, s.angles.theta2, s.angles.theta3, s.tip.x, s.tip.y
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).at(path)
    }

    pub fn from_csv(trial_id: impl Into<String>, text: &str, origin: &Path) -> Result<Self> {
        let fail = |reason: String| CoreError::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => return Err(fail(format!("expected header `{CSV_HEADER}`, found {other:?}"))),
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fail(format!("row {}: {e}", i + 1)))?;
            if vals.len() != 6 {
                return Err(fail(format!("row {}: expected 6 fields, got {}", i + 1, vals.len())));
            }
            let angles = ServoAngles {
                theta1: vals[1],
                theta2: vals[2],
                theta3: vals[3],
            };
            if !angles.is_valid() {
                return Err(fail(format!("row {}: servo angles violate range or coupling", i + 1)));
            }
            samples.push(Sample {
                timestamp: vals[0],
                angles,
                tip: TipPosition::new(vals[4], vals[5]),
            });
        }
        if samples.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(fail("timestamps are not strictly increasing".into()));
        }
        let dt = match samples.as_slice() {
            [a, b, ..] => ((b.timestamp - a.timestamp) * 1e9).round() / 1e9,
            _ => SAMPLE_PERIOD,
        };
        Ok(TrajectoryTrial {
            trial_id: trial_id.into(),
            dt,
            samples,
            meta: None,
        })
    }

    pub fn read_csv(trial_id: impl Into<String>, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_csv(trial_id, &text, path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub n_trials: usize,
    pub dt: f64,
    pub sweep_rate: [f64; 2],
    pub sin_amplitude: [f64; 2],
    pub sin_frequency: [f64; 2],
    pub duration: [f64; 2],
    pub step_hold: f64,
    /// Probability that a trial uses continuous insertion instead of a held level.
    pub theta3_continuous_fraction: f64,
    pub theta3_rate: [f64; 2],
    pub strictness: Strictness,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            n_trials: 160,
            dt: SAMPLE_PERIOD,
            sweep_rate: [10.0, 30.0],
            sin_amplitude: [30.0, 90.0],
            sin_frequency: [0.1, 1.0],
            duration: [10.0, 30.0],
            step_hold: 3.0,
            theta3_continuous_fraction: 0.5,
            theta3_rate: [10.0, 50.0],
            strictness: Strictness::Warn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub trial_id: String,
    pub seed: u64,
    pub profile: ProfileSpec,
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

/// Allocates trials round-robin over sweep / sinusoid / step families and
/// draws each trial's parameters from its own seeded stream.
pub fn plan_campaign(cfg: &CampaignConfig, seed: u64) -> Vec<PlannedTrial> {
    (0..cfg.n_trials)
        .map(|i| {
            let trial_seed = derive_seed(seed, i as u64);
            let mut rng = stream(trial_seed, 0x5052_4f46);
            let theta1 = match i % 3 {
                0 => {
                    let forward = (i / 3) % 2 == 0;
                    let (start, end) = if forward {
                        (THETA1_MIN, THETA1_MAX)
                    } else {
                        (THETA1_MAX, THETA1_MIN)
                    };
                    Theta1Profile::LinearSweep {
                        start,
                        end,
                        rate: uniform(&mut rng, cfg.sweep_rate),
                    }
                }
                1 => Theta1Profile::Sinusoid {
                    amplitude: uniform(&mut rng, cfg.sin_amplitude),
                    frequency: uniform(&mut rng, cfg.sin_frequency),
                    phase_deg: rng.random_range(0.0..360.0),
                    duration: (uniform(&mut rng, cfg.duration) * 10.0).round() / 10.0,
                },
                _ => {
                    let duration = uniform(&mut rng, cfg.duration);
                    let n_steps = ((duration / cfg.step_hold).round() as usize).saturating_sub(1).max(1);
                    let start = rng.random_range(THETA1_MIN..=THETA1_MAX).round();
                    let mut level = start;
                    let steps = (0..n_steps)
                        .map(|_| {
                            let size = STEP_SIZES[rng.random_range(0..STEP_SIZES.len())];
                            let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                            if !(THETA1_MIN..=THETA1_MAX).contains(&(level + sign * size)) {
                                sign = -sign;
                            }
                            level = (level + sign * size).clamp(THETA1_MIN, THETA1_MAX);
                            sign * size
                        })
                        .collect();
                    Theta1Profile::Steps {
                        start,
                        steps,
                        hold: cfg.step_hold,
                    }
                }
            };
            let theta3 = if rng.random_bool(cfg.theta3_continuous_fraction.clamp(0.0, 1.0)) {
                let rate = uniform(&mut rng, cfg.theta3_rate);
                if rng.random_bool(0.5) {
                    Theta3Profile::Continuous { start: THETA3_MIN, rate }
                } else {
                    Theta3Profile::Continuous {
                        start: THETA3_MAX,
                        rate: -rate,
                    }
                }
            } else {
                Theta3Profile::Discrete {
                    value: THETA3_LEVELS[rng.random_range(0..THETA3_LEVELS.len())],
                }
            };
            PlannedTrial {
                trial_id: format!("trial_{i:04}"),
                seed: trial_seed,
                profile: ProfileSpec { theta1, theta3 },
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trial_id: String,
    pub file: String,
    pub seed: u64,
    pub samples: usize,
    pub profile: ProfileSpec,
}

/// Index of an acquisition campaign, written next to the trial CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub seed: u64,
    pub dt: f64,
    pub total_samples: usize,
    #[serde(rename = "trial")]
    pub trials: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "campaign.toml";

impl CampaignManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        toml::from_str(&text).map_err(|e| CoreError::Parse {
            path,
            reason: e.to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))?;
        fs::write(&path, text).at(path)
    }
}

/// Simulates every planned trial; when `out_dir` is given, writes one CSV
/// per trial plus the campaign manifest.
pub fn run_acquisition(
    plan: &[PlannedTrial],
    plant: &Plant,
    cfg: &CampaignConfig,
    campaign_seed: u64,
    out_dir: Option<&Path>,
) -> Result<(Vec<TrajectoryTrial>, CampaignManifest)> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut trials = Vec::with_capacity(plan.len());
    let mut entries = Vec::with_capacity(plan.len());
    for p in plan {
        let commands = p.profile.commands(cfg.dt, cfg.strictness)?;
        let trial = TrajectoryTrial::simulate(&p.trial_id, &commands, plant, cfg.dt, p.seed, Some(p.profile.clone()))?;
        let file = format!("{}.csv", p.trial_id);
        if let Some(dir) = out_dir {
            trial.write_csv(&dir.join(&file)).map_err(|e| match e {
                CoreError::Io { path, source } => CoreError::Io {
                    path: PathBuf::from(format!("{} (trial {})", path.display(), p.trial_id)),
                    source,
                },
                other => other,
            })?;
        }
        entries.push(ManifestEntry {
            trial_id: p.trial_id.clone(),
            file,
            seed: p.seed,
            samples: trial.len(),
            profile: p.profile.clone(),
        });
        trials.push(trial);
    }
    let manifest = CampaignManifest {
        seed: campaign_seed,
        dt: cfg.dt,
        total_samples: trials.iter().map(TrajectoryTrial::len).sum(),
        trials: entries,
    };
    if let Some(dir) = out_dir {
        manifest.write(dir)?;
    }
    Ok((trials, manifest))
}

/// Loads every trial listed in a campaign manifest.
pub fn load_campaign(dir: &Path) -> Result<(Vec<TrajectoryTrial>, CampaignManifest)> {
    let manifest = CampaignManifest::read(dir)?;
    let trials = manifest
        .trials
        .iter()
        .map(|e| {
            let mut t = TrajectoryTrial::read_csv(&e.trial_id, &dir.join(&e.file))?;
            t.meta = Some(e.profile.clone());
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trials, manifest))
}

/// Sliding windows of normalised commands and positions.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    /// `[N, 10, 3]` normalised servo angles.
    pub inputs: Array3<f64>,
    /// `[N, 10, 2]` normalised tip positions.
    pub targets: Array3<f64>,
    pub input_scaler: MinMaxScaler,
    pub output_scaler: MinMaxScaler,
    /// `(trial_id, index of the window's first sample)` per window.
    pub provenance: Vec<(String, usize)>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len_of(ndarray::Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stride-1 windows of length [`WINDOW`], never crossing trial boundaries.
    pub fn from_trials(
        trials: &[&TrajectoryTrial],
        input_scaler: &MinMaxScaler,
        output_scaler: &MinMaxScaler,
    ) -> Self {
        let n: usize = trials.iter().map(|t| t.len().saturating_sub(WINDOW - 1)).sum();
        let mut inputs = Array3::zeros((n, WINDOW, 3));
        let mut targets = Array3::zeros((n, WINDOW, 2));
        let mut provenance = Vec::with_capacity(n);
        let mut w = 0;
        for trial in trials {
            if trial.len() < WINDOW {
                warn!("skipping trial {} with {} samples (< {WINDOW})", trial.trial_id, trial.len());
                continue;
            }
            for start in 0..=trial.len() - WINDOW {
                for k in 0..WINDOW {
                    let s = &trial.samples[start + k];
                    for (c, v) in s.angles.as_array().into_iter().enumerate() {
                        inputs[[w, k, c]] = input_scaler.normalize(c, v);
                    }
                    targets[[w, k, 0]] = output_scaler.normalize(0, s.tip.x);
                    targets[[w, k, 1]] = output_scaler.normalize(1, s.tip.y);
                }
                provenance.push((trial.trial_id.clone(), start));
                w += 1;
            }
        }
        WindowedDataset {
            inputs,
            targets,
            input_scaler: input_scaler.clone(),
            output_scaler: output_scaler.clone(),
            provenance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    /// Trial counts: validation and test are floored, the remainder goes to training.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.val * n as f64 + 1e-9).floor() as usize;
        let test = (self.test * n as f64 + 1e-9).floor() as usize;
        (n.saturating_sub(val + test), val, test)
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub train_trials: Vec<String>,
    pub val_trials: Vec<String>,
    pub test_trials: Vec<String>,
}

/// Shuffles trials with `seed`, partitions them per trial, fits both scalers on
/// the training trials and windows each partition.
pub fn windowize_and_split(trials: &[TrajectoryTrial], fractions: SplitFractions, seed: u64) -> Result<DatasetSplits> {
    let usable: Vec<&TrajectoryTrial> = trials
        .iter()
        .filter(|t| {
            let ok = t.len() >= WINDOW;
            if !ok {
                warn!("skipping trial {} with {} samples (< {WINDOW})", t.trial_id, t.len());
            }
            ok
        })
        .collect();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut stream(seed, 0x53504c54));
    let (n_train, n_val, _) = fractions.counts(usable.len());
    if n_train == 0 {
        return Err(CoreError::Config("split leaves no training trials".into()));
    }
    let pick = |idx: &[usize]| -> Vec<&TrajectoryTrial> {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| usable[i]).collect()
    };
    let train = pick(&order[..n_train]);
    let val = pick(&order[n_train..n_train + n_val]);
    let test = pick(&order[n_train + n_val..]);

    let input_scaler = MinMaxScaler::fit(train.iter().flat_map(|t| t.samples.iter().map(|s| s.angles.as_array())))?;
    let output_scaler = MinMaxScaler::fit(train.iter().flat_map(|t| t.samples.iter().map(|s| [s.tip.x, s.tip.y])))?;
    let ids = |v: &[&TrajectoryTrial]| v.iter().map(|t| t.trial_id.clone()).collect::<Vec<_>>();
    Ok(DatasetSplits {
        train_trials: ids(&train),
        val_trials: ids(&val),
        test_trials: ids(&test),
        train: WindowedDataset::from_trials(&train, &input_scaler, &output_scaler),
        val: WindowedDataset::from_trials(&val, &input_scaler, &output_scaler),
        test: WindowedDataset::from_trials(&test, &input_scaler, &output_scaler),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_lengths() {
        let s = gen_linear_sweep(-175.0, 85.0, 10.0, 0.1).unwrap();
        assert_eq!(s.len(), 261);
        assert_eq!((s[0], s[260]), (-175.0, 85.0));
        let r = gen_linear_sweep(85.0, -175.0, 10.0, 0.1).unwrap();
        assert_eq!(r.len(), 261);
        assert_eq!((r[0], r[260]), (85.0, -175.0));
        let fast = gen_linear_sweep(-175.0, 85.0, 30.0, 0.1).unwrap();
        assert_eq!(fast.len(), 88);
        assert_eq!(fast[87], 85.0);
        assert!((fast[86] - (-175.0 + 30.0 * 8.6)).abs() < 1e-9);
    }

    #[test]
    fn sweep_rejects_bad_rate() {
        assert!(gen_linear_sweep(0.0, 10.0, 0.0, 0.1).is_err());
        assert!(gen_linear_sweep(0.0, 10.0, -5.0, 0.1).is_err());
        assert!(gen_linear_sweep(3.0, 3.0, 10.0, 0.1).is_err());
    }

    #[test]
    fn sinusoid_values() {
        let s = gen_sinusoid(60.0, 0.5, 0.0, 10.0, 0.1, Strictness::Error).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s[0], 0.0);
        assert!((s[5] - 60.0).abs() < 1e-12);
        // -45 is crossed on the decreasing phase between 1.2 s and 1.3 s
        assert!(s[12] > -45.0 && s[13] < -45.0 && s[13] < s[12]);
        let t = (std::f64::consts::PI + (0.75f64).asin()) / std::f64::consts::PI;
        assert!((60.0 * (std::f64::consts::PI * t).sin() + 45.0).abs() < 1e-9);
    }

    #[test]
    fn sinusoid_strictness() {
        assert!(gen_sinusoid(120.0, 0.5, 0.0, 1.0, 0.1, Strictness::Error).is_err());
        assert_eq!(gen_sinusoid(120.0, 0.5, 0.0, 1.0, 0.1, Strictness::Warn).unwrap().len(), 10);
    }

    #[test]
    fn steps_hold_and_jump() {
        let s = gen_step_profile(0.0, &[30.0], 3.0, 0.1, Strictness::Error).unwrap();
        assert_eq!(s.len(), 60);
        assert!(s[..30].iter().all(|&v| v == 0.0));
        assert!(s[30..].iter().all(|&v| v == 30.0));
        let flat = gen_step_profile(10.0, &[0.0, 0.0], 1.0, 0.1, Strictness::Error).unwrap();
        assert!(flat.iter().all(|&v| v == 10.0));
        assert!(gen_step_profile(0.0, &[25.0], 1.0, 0.1, Strictness::Error).is_err());
    }

    #[test]
    fn theta3_profiles() {
        let d = gen_theta3_profile(&Theta3Profile::Discrete { value: 40.0 }, 50, 0.1, Strictness::Error).unwrap();
        assert!(d.iter().all(|&v| v == 40.0));
        let up = gen_theta3_profile(&Theta3Profile::Continuous { start: 0.0, rate: 50.0 }, 30, 0.1, Strictness::Error)
            .unwrap();
        assert!(up[17] < 88.0);
        assert!(up[18..].iter().all(|&v| v == 88.0));
        let down = gen_theta3_profile(&Theta3Profile::Continuous { start: 88.0, rate: -10.0 }, 100, 0.1, Strictness::Error)
            .unwrap();
        assert!(down[87] > 0.0);
        assert!(down[88..].iter().all(|&v| v.abs() < 1e-9));
        assert!(gen_theta3_profile(&Theta3Profile::Discrete { value: 41.0 }, 5, 0.1, Strictness::Error).is_err());
    }

    #[test]
    fn split_counts_floor_val_and_test() {
        assert_eq!(SplitFractions::default().counts(160), (112, 24, 24));
        assert_eq!(SplitFractions::default().counts(10), (8, 1, 1));
    }

    #[test]
    fn campaign_plan_is_seeded() {
        let cfg = CampaignConfig::default();
        let a = plan_campaign(&cfg, 7);
        let b = plan_campaign(&cfg, 7);
        let c = plan_campaign(&cfg, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 160);
    }
}
