//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fail. Criteria 4-7 and 10 share one full default
//! pipeline run; its artifacts stay under the cargo target tmp dir.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use catheter_cli::pipeline::HysteresisOutcome;
use catheter_cli::{run_pipeline, Layout, PipelineOutcome, RunConfig};
use catheter_core::dqn::{decode_action, encode_action, DqnConfig, N_ACTIONS};
use catheter_core::env::{check_termination, compute_reward, Termination};
use catheter_core::eval::{gen_reference_path, mean_path_error, PathKind, RegulationSummary};
use catheter_core::protocol::{load_campaign, plan_campaign, run_acquisition};
use catheter_core::rng::stream;
use catheter_core::surrogate::hysteresis::forward_reverse_separation;
use catheter_core::surrogate::validate::{abs_errors, combine_rmse};
use catheter_core::surrogate::SurrogateNet;
use catheter_core::td3::{actor_gradient, actor_objective};
use catheter_core::{ActionDelta, Plant, PlantParams, TipPosition};
use catheter_nn::{mse_loss, polyak_update, Activation, Dense, Dropout, GradCheck, Lstm, Mlp, Params};
use ndarray::{Array2, Array3};
use rand::Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn line(text: &str) {
    // Written straight to the handle so the libtest output capture cannot swallow it.
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match verdict {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    line(&format!("[{tag}] criterion {id:>2} {name}: {detail} ({secs:.1} s)"));
    ok
}

// ---------------------------------------------------------------- criterion 1

fn grad_report<M: Params<f64>>(model: &mut M, grads: &M, loss: impl FnMut(&M) -> f64, per_tensor: Option<usize>) -> f64 {
    let check = GradCheck {
        step: 1e-5,
        per_tensor,
        ..GradCheck::default()
    };
    check.run(model, grads, loss, &mut stream(1, 1)).max_rel_error
}

fn random2(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn criterion_gradients() -> Verdict {
    let mut rng = stream(2024, 0);

    let mut dense = Dense::<f64>::new(6, 5, Activation::Tanh, &mut rng);
    let x = random2(&mut rng, 4, 6);
    let proj = random2(&mut rng, 4, 5);
    let y = dense.forward(x.view()).unwrap();
    let mut g_dense = dense.zeros_like();
    dense.backward(x.view(), y.view(), proj.view(), Some(&mut g_dense), false);
    let e_dense = grad_report(&mut dense, &g_dense, |d| (d.forward(x.view()).unwrap() * &proj).sum(), None);

    let mut cell = Lstm::<f64>::new(3, 64, &mut rng);
    let xs = random2(&mut rng, 2, 3);
    let h0 = random2(&mut rng, 2, 64) * 0.5;
    let c0 = random2(&mut rng, 2, 64);
    let ph = random2(&mut rng, 2, 64);
    let pc = random2(&mut rng, 2, 64);
    let (h_base, c_base, cache) = cell.step(xs.view(), h0.view(), c0.view()).unwrap();
    let mut g_cell = cell.zeros_like();
    cell.step_backward(&cache, ph.view(), pc.view(), &mut g_cell, false);
    // Projecting the change from the unperturbed outputs keeps the loss O(h),
    // so the central difference does not cancel against an O(1) constant.
    let e_cell = grad_report(
        &mut cell,
        &g_cell,
        |l| {
            let (h, c, _) = l.step(xs.view(), h0.view(), c0.view()).unwrap();
            ((h - &h_base) * &ph).sum() + ((c - &c_base) * &pc).sum()
        },
        None,
    );

    let mut net = SurrogateNet::<f64>::new(&mut rng);
    let input = Array3::from_shape_simple_fn((4, 10, 3), || rng.random_range(0.0..1.0));
    let target = Array3::from_shape_simple_fn((4, 10, 2), || rng.random_range(0.0..1.0));
    let (pred, cache) = net.forward(input.view(), &Dropout::new(0.2).unwrap(), false, &mut rng).unwrap();
    let (_, g_out) = mse_loss(pred.view(), target.view()).unwrap();
    let mut g_net = net.zeros_like();
    net.backward(&cache, g_out.view(), &mut g_net, false);
    let e_net = grad_report(
        &mut net,
        &g_net,
        |n| mse_loss(n.infer(input.view()).unwrap().view(), target.view()).unwrap().0,
        Some(150),
    );

    let mut actor = Mlp::<f64>::new(&[4, 256, 256, 2], Activation::Relu, Activation::Tanh, &mut rng);
    let critic = Mlp::<f64>::new(&[6, 256, 256, 1], Activation::Relu, Activation::Linear, &mut rng);
    let obs = Array2::from_shape_simple_fn((16, 4), || rng.random_range(0.0..1.0));
    let mut g_actor = actor.zeros_like();
    actor_gradient(&actor, &critic, obs.view(), &mut g_actor).unwrap();
    let e_actor = grad_report(
        &mut actor,
        &g_actor,
        |a| actor_objective(a, &critic, obs.view()).unwrap(),
        Some(150),
    );

    let detail = format!(
        "max rel err dense {e_dense:.1e}, lstm cell {e_cell:.1e} (< 1e-5); surrogate {e_net:.1e}, td3 actor {e_actor:.1e} (< 1e-4)"
    );
    check(e_dense < 1e-5 && e_cell < 1e-5 && e_net < 1e-4 && e_actor < 1e-4, detail)
}

// ---------------------------------------------------------------- criteria 2, 3

fn criterion_combiner() -> Verdict {
    let overall = combine_rmse(0.38, 0.45);
    check((overall - 0.42).abs() <= 0.005, format!("combine(0.38, 0.45) = {overall:.4} mm, expected 0.42 +- 0.005"))
}

fn criterion_table_rows() -> Verdict {
    let real = [(17.33, 13.04), (17.52, 12.80), (17.71, 12.64), (17.90, 12.44), (18.08, 12.25)];
    let pred = [(17.45, 13.10), (17.60, 12.85), (17.76, 12.71), (17.85, 12.50), (18.19, 12.32)];
    let expected = [(0.12, 0.06), (0.08, 0.05), (0.05, 0.07), (0.05, 0.06), (0.11, 0.07)];
    let tips = |v: &[(f64, f64)]| v.iter().map(|(x, y)| TipPosition::new(*x, *y)).collect::<Vec<_>>();
    let got = abs_errors(&tips(&real), &tips(&pred));
    let worst = got
        .iter()
        .zip(expected)
        .map(|(g, e)| (g.0 - e.0).abs().max((g.1 - e.1).abs()))
        .fold(0.0, f64::max);
    check(worst < 1e-9, format!("5 rows, max deviation {worst:.1e} mm"))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_formulas() -> Verdict {
    let mut failures = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let near = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let goal = TipPosition::new(20.0, -10.0);

    expect(near(compute_reward(&goal, &goal, &ActionDelta::default(), 5e-3), 0.0), "reward at goal");
    let r = compute_reward(&TipPosition::new(23.0, -14.0), &goal, &ActionDelta::new(2.0, -3.0), 5e-3);
    expect(near(r, -5.035), "reward (23,-14)");
    let r = compute_reward(&goal, &goal, &ActionDelta::new(5.0, 5.0), 5e-3);
    expect(near(r, -0.075), "reward (5,5)");

    expect(check_termination(&goal, &goal, 0, 0.5, 150) == Termination::Goal, "termination at goal");
    let far = TipPosition::new(30.0, -10.0);
    expect(check_termination(&far, &goal, 150, 0.5, 150) == Termination::Timeout, "timeout at 150");
    expect(check_termination(&far, &goal, 149, 0.5, 150) == Termination::None, "running at 149");
    let close = TipPosition::new(20.3, -10.0);
    expect(check_termination(&close, &goal, 3, 0.5, 150) == Termination::Goal, "goal at 0.3 mm");
    let edge = TipPosition::new(20.5, -10.0);
    expect(check_termination(&edge, &goal, 3, 0.5, 150) == Termination::None, "strict inequality");

    let mut seen = vec![false; N_ACTIONS];
    for i in 0..N_ACTIONS {
        let a = decode_action(i).unwrap();
        let row_major = ((a.dtheta1 + 5.0) * 11.0 + (a.dtheta3 + 5.0)) as usize;
        expect(row_major == i && encode_action(&a).unwrap() == i, "codec round trip");
        seen[i] = true;
    }
    expect(seen.iter().all(|s| *s) && decode_action(N_ACTIONS).is_err(), "codec covers 0..=120 only");

    let dqn = DqnConfig::default();
    expect(dqn.epsilon_at(0) == 1.0, "epsilon at 0");
    expect(near(dqn.epsilon_at(3000), 0.525), "epsilon at 3000");
    expect(dqn.epsilon_at(6000) == 0.05 && dqn.epsilon_at(60_000) == 0.05, "epsilon floor");

    let online = Dense::<f64>::new(1, 1, Activation::Linear, &mut stream(0, 0));
    let mut online = online;
    online.tensors_mut().into_iter().for_each(|mut t| t.fill(1.0));
    let mut target = online.zeros_like();
    for k in 1..=500 {
        polyak_update(&mut target, &online, 0.005);
        let want = 1.0 - 0.995f64.powi(k);
        let ok = target.tensors().iter().all(|(_, t)| t.iter().all(|v| (v - want).abs() < 1e-12));
        if !ok {
            expect(false, &format!("polyak after {k} updates"));
            break;
        }
    }

    let line_path = gen_reference_path(PathKind::Line, 60).unwrap();
    let sine_path = gen_reference_path(PathKind::HalfSinusoid, 60).unwrap();
    let at = |p: &TipPosition, x: f64, y: f64| (p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12;
    expect(at(&line_path.waypoints[0], 20.0, -10.0) && at(&line_path.waypoints[59], 30.0, -30.0), "line endpoints");
    expect(at(&PathKind::Line.point(0.5), 25.0, -20.0), "line midpoint");
    expect(at(&PathKind::HalfSinusoid.point(0.5), 28.0, -20.0), "half-sinusoid apex");
    expect(at(&sine_path.waypoints[0], 20.0, -10.0), "half-sinusoid start");
    expect(line_path.t.iter().enumerate().all(|(i, t)| near(*t, i as f64 / 59.0)), "uniform t grid");

    let shifted: Vec<TipPosition> = line_path.waypoints.iter().map(|p| TipPosition::new(p.x + 3.0, p.y + 4.0)).collect();
    expect(near(mean_path_error(&shifted, &line_path.waypoints).unwrap(), 5.0), "mean error of a 3-4-5 offset");
    expect(near(mean_path_error(&line_path.waypoints, &line_path.waypoints).unwrap(), 0.0), "mean error of the path itself");

    check(
        failures.is_empty(),
        if failures.is_empty() {
            "reward, termination, 121-entry codec, epsilon schedule, 500 Polyak steps, path points, mean error".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------- criterion 9

fn reduced_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = 31;
    c.campaign.n_trials = 12;
    c.campaign.duration = [10.0, 12.0];
    c.surrogate.max_epochs = 2;
    c.dqn.episodes = 6;
    c.dqn.warmup = 200;
    c.dqn.batch_size = 32;
    c.dqn.checkpoint_every = 3;
    c.td3.episodes = 4;
    c.td3.warmup = 200;
    c.td3.batch_size = 32;
    c.td3.checkpoint_every = 2;
    c.env.t_max = 60;
    c.eval.n_starts = 4;
    c.eval.waypoints = 6;
    c.eval.k_max = 5;
    c
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_reproducibility(scratch: &Path) -> Verdict {
    let cfg = reduced_config();
    let a = scratch.join("repro_a");
    let b = scratch.join("repro_b");
    for dir in [&a, &b] {
        let _ = fs::remove_dir_all(dir);
        run_pipeline(&cfg, &Layout::new(dir)).map_err(|e| e.to_string())?;
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let count = |ext: &str| ta.keys().filter(|k| k.extension().is_some_and(|e| e == ext)).count();

    let plant = Plant::new(cfg.plant.clone()).unwrap();
    let seed = cfg.seed_for(catheter_cli::Stage::Campaign);
    let (fresh, _) = run_acquisition(&plan_campaign(&cfg.campaign, seed), &plant, &cfg.campaign, seed, None).unwrap();
    let (loaded, _) = load_campaign(&a.join("data")).unwrap();
    let exact = fresh.len() == loaded.len() && fresh.iter().zip(&loaded).all(|(f, l)| f.samples == l.samples);

    check(
        differing.is_empty() && exact && count("bin") > 0 && count("csv") > 0,
        format!(
            "{} files compared ({} csv, {} json, {} checkpoint), {} differ{}; csv round trip {}",
            ta.len(),
            count("csv"),
            count("json"),
            count("bin"),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" {differing:?}") },
            if exact { "exact" } else { "NOT exact" }
        ),
    )
}

// ---------------------------------------------------------------- criteria 4-7, 10

struct Shared {
    outcome: PipelineOutcome,
    timings: BTreeMap<&'static str, Duration>,
    total: Duration,
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn criterion_surrogate(s: &Shared) -> Verdict {
    let m = &s.outcome.validation.final_step;
    let t = minutes(s.timings["train-surrogate"]);
    check(
        m.rmse_overall <= 0.6 && m.coverage_1mm >= 0.90 && m.coverage_3mm >= 0.99 && t <= 30.0,
        format!(
            "final-step RMSE {:.3} mm (<= 0.6), within 1 mm {:.1} % (>= 90), within 3 mm {:.1} % (>= 99), {} windows, training {t:.1} min (<= 30)",
            m.rmse_overall,
            100.0 * m.coverage_1mm,
            100.0 * m.coverage_3mm,
            m.count
        ),
    )
}

fn criterion_hysteresis(s: &Shared) -> Verdict {
    let h: &HysteresisOutcome = &s.outcome.hysteresis;
    let plant = Plant::new(PlantParams::default()).unwrap();
    let sep = forward_reverse_separation(&plant).unwrap();
    let branch_errs: Vec<String> = h
        .model
        .branches
        .iter()
        .map(|b| format!("{:?} {:.3}", b.plant.branch, b.error_mm))
        .collect();
    let t = minutes(s.timings["hysteresis-test"]);
    check(
        sep >= 1.5 && h.model.max_error_mm <= 0.4 && h.no_hysteresis_max_settled_mm <= 0.05 && t <= 5.0,
        format!(
            "plant forward/reverse separation {sep:.3} mm (>= 1.5); model branch errors [{}] mm (<= 0.4); k_h = 0 separation {:.1e} mm (<= 0.05); {t:.2} min",
            branch_errs.join(", "),
            h.no_hysteresis_max_settled_mm
        ),
    )
}

fn headline<'a>(s: &'a Shared, agent: &str) -> &'a RegulationSummary {
    &s.outcome
        .regulation
        .agents
        .iter()
        .find(|a| a.agent == agent)
        .expect("both agents evaluated")
        .headline
}

fn criterion_regulation(s: &Shared) -> Verdict {
    let d = headline(s, "dqn");
    let t = headline(s, "td3");
    let steps = |r: &RegulationSummary| r.avg_steps.unwrap_or(f64::INFINITY);
    let err = |r: &RegulationSummary| r.avg_error.unwrap_or(f64::INFINITY);
    let (td, tt) = (minutes(s.timings["train-dqn"]), minutes(s.timings["train-td3"]));
    check(
        t.success_rate >= 0.95
            && d.success_rate >= 0.85
            && steps(t) < steps(d)
            && err(t) < err(d)
            && td <= 90.0
            && tt <= 90.0,
        format!(
            "success TD3 {:.0} % (>= 95) DQN {:.0} % (>= 85); avg steps TD3 {:.2} vs DQN {:.2}; mean |e| TD3 {:.3} vs DQN {:.3} mm; training DQN {td:.1} min, TD3 {tt:.1} min (<= 90)",
            100.0 * t.success_rate,
            100.0 * d.success_rate,
            steps(t),
            steps(d),
            err(t),
            err(d)
        ),
    )
}

fn criterion_paths(s: &Shared) -> Verdict {
    let errs = |agent: &str| -> Vec<(PathKind, f64)> {
        s.outcome
            .paths
            .iter()
            .find(|r| r.agent == agent)
            .expect("both agents evaluated")
            .paths
            .iter()
            .map(|p| (p.kind, p.mean_error))
            .collect()
    };
    let (d, t) = (errs("dqn"), errs("td3"));
    let ok = PathKind::ALL.iter().all(|k| {
        let td3 = t.iter().find(|(kk, _)| kk == k).unwrap().1;
        let dqn = d.iter().find(|(kk, _)| kk == k).unwrap().1;
        td3 < dqn && td3 <= 2.0
    });
    let te = minutes(s.timings["eval-path"]);
    let fmt = |v: &[(PathKind, f64)]| v.iter().map(|(k, e)| format!("{} {e:.3}", k.name())).collect::<Vec<_>>().join(", ");
    check(
        ok && te <= 5.0,
        format!("mean error TD3 [{}] vs DQN [{}] mm (TD3 <= 2.0 and below DQN); eval {te:.2} min", fmt(&t), fmt(&d)),
    )
}

fn criterion_budget(s: &Shared) -> Verdict {
    let h = s.total.as_secs_f64() / 3600.0;
    let parts: Vec<String> = s.timings.iter().map(|(k, v)| format!("{k} {:.1}", minutes(*v))).collect();
    check(h <= 4.0, format!("full default pipeline {h:.2} h (<= 4); minutes: {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let scratch = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&scratch);
    fs::create_dir_all(&scratch).expect("scratch dir");

    let mut ok = true;
    ok &= run(1, "gradient correctness", criterion_gradients);
    ok &= run(2, "rmse combiner", criterion_combiner);
    ok &= run(3, "per-row absolute errors", criterion_table_rows);
    ok &= run(8, "exact-formula suites", criterion_formulas);
    ok &= run(9, "reproducibility", || criterion_reproducibility(&scratch));

    let start = Instant::now();
    let default_dir = scratch.join("default");
    let shared = run_pipeline(&RunConfig::default(), &Layout::new(&default_dir)).map(|outcome| Shared {
        timings: outcome.timings.iter().cloned().collect(),
        outcome,
        total: start.elapsed(),
    });
    match &shared {
        Ok(s) => {
            ok &= run(4, "surrogate accuracy", || criterion_surrogate(s));
            ok &= run(5, "hysteresis reproduction", || criterion_hysteresis(s));
            ok &= run(6, "regulation", || criterion_regulation(s));
            ok &= run(7, "path following", || criterion_paths(s));
            ok &= run(10, "end-to-end budget", || criterion_budget(s));
        }
        Err(e) => {
            for (id, name) in [(4, "surrogate accuracy"), (5, "hysteresis"), (6, "regulation"), (7, "path following"), (10, "budget")] {
                ok &= run(id, name, || Err(format!("default pipeline failed: {e}")));
            }
        }
    }
    line(&format!("acceptance: {}", if ok { "all criteria passed" } else { "some criteria FAILED" }));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
