//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary line. Failures turn into a non-zero exit only when
//! `FESRL_ACCEPTANCE_STRICT=1`, so `cargo test` reports red criteria without
//! failing the build.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use fesrl::biomech::kinematics::{forward_kinematics, solve_leg};
use fesrl::biomech::{
    joint_jacobian, pedal_position, sim_step_count, solve_leg_ik, CyclingConfig, Plant, Side, SimState, StartAssist,
};
use fesrl::env::{make_observation, Observation};
use fesrl::offline::{
    collect_sessions, evaluate_pattern, finetune, logs_to_dataset, trial_seeds, CollectOptions, DEFAULT_SKIP_S,
};
use fesrl::pattern::{
    angle_diff, extract_pattern, mirror_pattern, pattern_control, ExtractOptions, StimulationPattern,
};
use fesrl::rl::losses::{actor_loss, cql_regularizer, critic_loss, CqlSamples, Critics};
use fesrl::rl::mlp::Mlp;
use fesrl::rl::policy::standard_normal;
use fesrl::rl::{Actor, Agent, Batch, ReplayBuffer, SampleMode, TrainConfig, Transition};
use fesrl::train::{normalized_test_returns, train, CurvePoint};

struct Verdict {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, v: &Verdict, secs: f64) -> bool {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("{tag} [{id}] {name} ({secs:.0} s): {}", v.detail);
    if !v.pass {
        FAILED.with(|f| f.borrow_mut().push(id));
    }
    v.pass
}

thread_local! {
    static FAILED: std::cell::RefCell<Vec<usize>> = const { std::cell::RefCell::new(Vec::new()) };
}

// ---------------------------------------------------------------- training

fn acceptance_train_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, test_every: 1, test_episodes: 4, max_episodes: 150, ..Default::default() }
}

/// Geometry drawn within ±5% of the nominal rig, resampled until reachable.
fn random_config(rng: &mut ChaCha8Rng, n: usize) -> CyclingConfig {
    let base = CyclingConfig { n_muscles_per_leg: n, ..Default::default() };
    loop {
        let mut jitter = |x: f64| x * rng.random_range(0.95..1.05);
        let c = CyclingConfig {
            crank_hip_dx: jitter(base.crank_hip_dx),
            crank_hip_dy: jitter(base.crank_hip_dy),
            crank_arm: jitter(base.crank_arm),
            thigh_len: jitter(base.thigh_len),
            shank_len: jitter(base.shank_len),
            seat_angle: jitter(base.seat_angle),
            crank_inertia: jitter(base.crank_inertia),
            ..base.clone()
        };
        if c.clone().validate().is_ok() {
            return c;
        }
    }
}

struct TrainedRun {
    n: usize,
    config_id: usize,
    agent: Agent,
    curve: Vec<CurvePoint>,
    plateau: bool,
}

fn train_runs() -> Vec<TrainedRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut jobs = Vec::new();
    for config_id in 0..5 {
        for n in [2, 3] {
            jobs.push((config_id, n, random_config(&mut rng, n), rng.random::<u32>() as u64));
        }
    }
    jobs.into_par_iter()
        .map(|(config_id, n, config, seed)| {
            let plant = Plant::new(config.validate().unwrap());
            let out = train(&plant, &acceptance_train_config(seed), |_| {}).unwrap();
            TrainedRun { n, config_id, agent: out.agent, curve: out.curve, plateau: out.stopped_on_plateau }
        })
        .collect()
}

fn first_crossing(norm: &[(usize, f64)], level: f64) -> Option<usize> {
    norm.iter().find(|(_, v)| *v > level).map(|(e, _)| *e)
}

fn criterion_learning_curves(runs: &[TrainedRun]) -> Verdict {
    let window = TrainConfig::default().plateau_window;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut cross = [Vec::new(), Vec::new()];
    for r in runs {
        let norm = normalized_test_returns(&r.curve, window);
        let early = norm.iter().filter(|(e, _)| *e <= 4).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        let c08 = first_crossing(&norm, 0.8);
        let c05 = first_crossing(&norm, 0.5);
        let run_ok = early < 0.2 && c08.is_some_and(|e| e <= 40);
        ok &= run_ok;
        if let Some(c) = c05 {
            cross[r.n - 2].push(c as f64);
        }
        parts.push(format!(
            "cfg{} n={}: early max {:.2}, >0.8 at {}, >0.5 at {}, {} eps{}{}",
            r.config_id,
            r.n,
            early,
            c08.map_or("never".into(), |e| e.to_string()),
            c05.map_or("never".into(), |e| e.to_string()),
            r.curve.len(),
            if r.plateau { " (plateau)" } else { "" },
            if run_ok { "" } else { " <- fails" },
        ));
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let complete = cross.iter().all(|c| c.len() == 5);
    let sharper = complete && mean(&cross[0]) <= mean(&cross[1]);
    ok &= sharper;
    Verdict {
        pass: ok,
        detail: format!(
            "mean 0.5-crossing n=2 {:.1} vs n=3 {:.1}; {}",
            mean(&cross[0]),
            mean(&cross[1]),
            parts.join("; ")
        ),
    }
}

// ---------------------------------------------------------------- patterns

fn single_intervals(p: &StimulationPattern) -> bool {
    p.muscles.iter().all(|m| m.len() == 1 && m[0].arc() < 360.0)
}

fn threshold_drift(agent: &Agent) -> Result<f64, String> {
    let at = |threshold| {
        extract_pattern(&agent.actor, &ExtractOptions { threshold, ..Default::default() }).map_err(|e| e.to_string())
    };
    let (lo, hi) = (at(0.4)?, at(0.6)?);
    if !single_intervals(&lo) || !single_intervals(&hi) {
        return Err(format!("not one interval per muscle at 0.4/0.6: {:?} / {:?}", lo.muscles, hi.muscles));
    }
    let mut worst: f64 = 0.0;
    for (a, b) in lo.muscles.iter().zip(&hi.muscles) {
        worst = worst.max(angle_diff(a[0].on_deg, b[0].on_deg).abs()).max(angle_diff(a[0].off_deg, b[0].off_deg).abs());
    }
    Ok(worst)
}

fn criterion_pattern_shape(runs: &[TrainedRun]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let line = match extract_pattern(&r.agent.actor, &ExtractOptions::default()) {
            Err(e) => {
                ok = false;
                format!("cfg{} n={}: {e}", r.config_id, r.n)
            }
            Ok(p) => {
                let shape = single_intervals(&p);
                let drift = threshold_drift(&r.agent);
                let robust = matches!(drift, Ok(d) if d < 10.0);
                ok &= shape && robust;
                let arcs: Vec<String> =
                    p.muscles.iter().map(|m| m.iter().map(|i| format!("[{},{})", i.on_deg, i.off_deg)).collect()).collect();
                format!(
                    "cfg{} n={}: {} drift {}",
                    r.config_id,
                    r.n,
                    arcs.join(" "),
                    match drift {
                        Ok(d) => format!("{d:.0} deg"),
                        Err(e) => e,
                    }
                )
            }
        };
        parts.push(line);
    }
    Verdict { pass: ok, detail: parts.join("; ") }
}

// ---------------------------------------------------------------- mirroring

fn criterion_mirroring(patterns: &[StimulationPattern]) -> Verdict {
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for p in patterns {
        let mirrored = mirror_pattern(p);
        for deg in 0..360 {
            let theta = f64::from(deg).to_radians();
            let back = f64::from((deg + 180) % 360).to_radians();
            let front = f64::from((deg + 180) % 360).to_radians();
            checks += 2;
            if pattern_control(p, theta, Side::Left) != pattern_control(p, back, Side::Right) {
                mismatches += 1;
            }
            if pattern_control(&mirrored, theta, Side::Right) != pattern_control(p, front, Side::Right) {
                mismatches += 1;
            }
        }
    }
    // observation side: the left leg sees the crank negated, bit for bit
    let mut obs_mismatch = 0usize;
    for deg in 0..360 {
        let state = SimState { crank_angle: f64::from(deg).to_radians(), ..SimState::at_rest(0.0, 2) };
        let right = make_observation(&state, &[0.25, 0.75], Side::Right);
        let left = make_observation(&state, &[0.25, 0.75], Side::Left);
        if left.sin_theta != -right.sin_theta || left.cos_theta != -right.cos_theta {
            obs_mismatch += 1;
        }
    }
    Verdict {
        pass: mismatches == 0 && obs_mismatch == 0 && !patterns.is_empty(),
        detail: format!(
            "{} patterns, {checks} grid comparisons, {mismatches} control mismatches, {obs_mismatch} observation mismatches",
            patterns.len()
        ),
    }
}

// ---------------------------------------------------------------- fine-tuning

struct GapResult {
    gap_seed: u64,
    base_rpm: f64,
    tuned_rpm: Option<f64>,
    tuples: usize,
    sim_steps_during_finetune: u64,
    seconds: f64,
    note: String,
}

fn gap_plant(seed: u64) -> Plant {
    Plant::new(CyclingConfig { perturbation_seed: Some(seed), ..Default::default() }.validate().unwrap())
}

fn finetune_on_gap(agent: &Agent, base: &StimulationPattern, gap_seed: u64) -> GapResult {
    let start = Instant::now();
    let plant = gap_plant(gap_seed);
    let seeds = trial_seeds(100, 10);
    let assist = StartAssist::default();
    let base_rpm = evaluate_pattern(&plant, base, 30.0, &seeds, Some(&assist)).unwrap().mean_rpm;
    let logs = collect_sessions(&plant, base, &CollectOptions { seed: gap_seed, ..Default::default() }).unwrap();
    let dataset = logs_to_dataset(&logs, agent.config.beta, DEFAULT_SKIP_S).unwrap();
    let tc = TrainConfig { cql_weight: 5.0, seed: gap_seed, ..agent.config.clone() };
    let before = sim_step_count();
    let (tuned, rep) = finetune(agent, &dataset, &tc).unwrap();
    let sim_steps = (sim_step_count() - before).max(rep.sim_steps);
    let (tuned_rpm, note) = match extract_pattern(&tuned.actor, &ExtractOptions::default()) {
        Ok(p) => {
            let rpm = evaluate_pattern(&plant, &p, 30.0, &seeds, Some(&assist)).unwrap().mean_rpm;
            (Some(rpm), format!("{:?}", p.muscles.iter().map(|m| m.iter().map(|i| (i.on_deg, i.off_deg)).collect::<Vec<_>>()).collect::<Vec<_>>()))
        }
        Err(e) => (None, e.to_string()),
    };
    GapResult {
        gap_seed,
        base_rpm,
        tuned_rpm,
        tuples: dataset.tuples.len(),
        sim_steps_during_finetune: sim_steps,
        seconds: start.elapsed().as_secs_f64(),
        note,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn criterion_finetune(results: &[GapResult]) -> Verdict {
    let changes: Vec<f64> =
        results.iter().map(|r| r.tuned_rpm.map_or(-1.0, |t| t / r.base_rpm - 1.0)).collect();
    let median_ok = median(results.iter().map(|r| r.tuned_rpm.unwrap_or(0.0)).collect())
        >= median(results.iter().map(|r| r.base_rpm).collect());
    let improved = changes.iter().filter(|&&c| c >= 0.02).count();
    let no_big_regression = changes.iter().all(|&c| c >= -0.05);
    let slow = results.iter().filter(|r| r.seconds > 300.0).count();
    let parts: Vec<String> = results
        .iter()
        .zip(&changes)
        .map(|(r, c)| {
            format!(
                "gap{}: {:.2} -> {} RPM ({:+.1}%, {:.0} s) {}",
                r.gap_seed,
                r.base_rpm,
                r.tuned_rpm.map_or("n/a".into(), |t| format!("{t:.2}")),
                100.0 * c,
                r.seconds,
                r.note
            )
        })
        .collect();
    Verdict {
        pass: median_ok && improved >= 3 && no_big_regression,
        detail: format!(
            "median change {:+.1}%, {improved}/5 seeds >= +2%, worst {:+.1}%, {slow} seeds over 5 min; {}",
            100.0 * median(changes.clone()),
            100.0 * changes.iter().cloned().fold(f64::INFINITY, f64::min),
            parts.join("; ")
        ),
    }
}

fn criterion_purity(results: &[GapResult]) -> Verdict {
    let steps: Vec<u64> = results.iter().map(|r| r.sim_steps_during_finetune).collect();
    Verdict {
        pass: steps.iter().all(|&s| s == 0),
        detail: format!("simulator steps during fine-tuning per seed: {steps:?}"),
    }
}

// ---------------------------------------------------------------- numerics

fn worst_rel(analytic: &[f64], mut eval: impl FnMut(usize, f64) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        let fd = (eval(i, h) - eval(i, -h)) / (2.0 * h);
        worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1e-6));
    }
    worst
}

fn perturbed<T: Clone>(base: &T, params: impl Fn(&mut T) -> &mut [f64], i: usize, h: f64) -> T {
    let mut c = base.clone();
    params(&mut c)[i] += h;
    c
}

fn criterion_numerics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (obs_dim, act) = (Observation::dim(2), 2);

    // MLP: loss = sum(weights ⊙ output)
    let sizes = [4, 64, 64, 2];
    let net = Mlp::new(&sizes, &mut rng);
    let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.5..1.5));
    let w = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
    let (_, cache) = net.forward_cached(x.view()).unwrap();
    let mut g = vec![0.0; net.n_params()];
    net.backward(&cache, w.view(), Some(&mut g));
    let loss = |n: &Mlp| (&n.forward(x.view()).unwrap() * &w).sum();
    let mlp = worst_rel(&g, |i, h| loss(&perturbed(&net, |n| n.params_mut(), i, h)));

    let actor = Actor::new(obs_dim, act, &mut rng);
    let mut critics = Critics::new(obs_dim, act, &mut rng);
    critics.q1_target = Mlp::new(&[obs_dim + act, 64, 64, 1], &mut rng);
    let items: Vec<Transition> = (0..4)
        .map(|_| Transition {
            obs: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..act).map(|_| rng.random_range(0.0..1.0)).collect(),
            reward: rng.random_range(-1.0..5.0),
            next_obs: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let batch = Batch::from_transitions(items.iter());
    let noise = standard_normal((4, act), &mut rng);

    let cl = critic_loss(&critics, &actor, &batch, &noise, 0.3, 0.99);
    let critic = worst_rel(&cl.grad_q1, |i, h| {
        critic_loss(&perturbed(&critics, |c| c.q1.params_mut(), i, h), &actor, &batch, &noise, 0.3, 0.99).loss
    })
    .max(worst_rel(&cl.grad_q2, |i, h| {
        critic_loss(&perturbed(&critics, |c| c.q2.params_mut(), i, h), &actor, &batch, &noise, 0.3, 0.99).loss
    }));

    let al = actor_loss(&actor, &critics, batch.obs.view(), &noise, 0.4);
    let actor_err = worst_rel(&al.grads, |i, h| {
        actor_loss(&perturbed(&actor, |a| a.net_mut().params_mut(), i, h), &critics, batch.obs.view(), &noise, 0.4).loss
    });

    let samples = CqlSamples::draw(4, 5, act, &mut rng);
    let cq = cql_regularizer(&critics, &actor, &batch, &samples);
    let cql = worst_rel(&cq.grad_q1, |i, h| {
        cql_regularizer(&perturbed(&critics, |c| c.q1.params_mut(), i, h), &actor, &batch, &samples).value
    })
    .max(worst_rel(&cq.grad_q2, |i, h| {
        cql_regularizer(&perturbed(&critics, |c| c.q2.params_mut(), i, h), &actor, &batch, &samples).value
    }));

    // kinematics over random reachable rigs and angles
    let mut closure: f64 = 0.0;
    let mut jac: f64 = 0.0;
    for _ in 0..200 {
        let c = random_config(&mut rng, 2);
        let theta = rng.random_range(0.0..2.0 * PI);
        for side in [Side::Right, Side::Left] {
            let ankle = forward_kinematics(&c, solve_leg_ik(&c, theta, side));
            let pedal = pedal_position(&c, theta, side);
            closure = closure.max((ankle[0] - pedal[0]).hypot(ankle[1] - pedal[1]));
            let j = joint_jacobian(&c, theta, side);
            let dh = 1e-6;
            let (p, m) = (solve_leg(&c, theta + dh, side), solve_leg(&c, theta - dh, side));
            let fd_hip = (p.thigh_angle - m.thigh_angle) / (2.0 * dh);
            let fd_knee = (p.joints.knee - m.joints.knee) / (2.0 * dh);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-2);
            jac = jac.max(rel(j.dhip, fd_hip)).max(rel(j.dknee, fd_knee));
        }
    }

    // one-step bandit with reward −(a − 0.7)²
    let bandit_cfg = TrainConfig { gamma: 0.0, lr: 3e-3, batch_size: 64, grad_steps_per_episode: 1, seed: 11, ..Default::default() };
    let mut agent = Agent::new(1, 1, bandit_cfg);
    let mut buf = ReplayBuffer::new(10_000);
    for step in 0..2000 {
        let a = agent.act(&[1.0], SampleMode::Stochastic).unwrap()[0];
        buf.push(Transition { obs: vec![1.0], action: vec![a], reward: -(a - 0.7).powi(2), next_obs: vec![1.0] });
        if step >= 64 {
            agent.sac_update(&buf).unwrap();
        }
    }
    let bandit = agent.actor.mean_action(&[1.0]).unwrap()[0];

    let grads_ok = [mlp, critic, actor_err, cql].iter().all(|&e| e < 1e-4);
    Verdict {
        pass: grads_ok && closure <= 1e-9 && jac < 1e-5 && (bandit - 0.7).abs() <= 0.05,
        detail: format!(
            "grad rel err mlp {mlp:.1e} critic {critic:.1e} actor {actor_err:.1e} cql {cql:.1e}; closure {closure:.1e} m; jacobian {jac:.1e}; bandit action {bandit:.3}"
        ),
    }
}

// ---------------------------------------------------------------- bookkeeping

fn criterion_bookkeeping(base: &StimulationPattern) -> Verdict {
    let plant = Plant::new(CyclingConfig::default().validate().unwrap());
    let opts = CollectOptions::default();
    let logs = collect_sessions(&plant, base, &opts).unwrap();
    let steps: usize = logs.iter().map(|l| l.rows.len()).sum();
    let seconds: f64 = logs.iter().map(|l| l.meta.duration_s).sum();
    let all = logs_to_dataset(&logs, 1.0, 0.0).unwrap().tuples.len();
    let trained_on = logs_to_dataset(&logs, 1.0, DEFAULT_SKIP_S).unwrap().tuples.len();
    // one extra sample per session closes the last transition
    let long = CollectOptions { duration_s: opts.duration_s + opts.dt, ..opts.clone() };
    let long_logs = collect_sessions(&plant, base, &long).unwrap();
    let with_closing_sample = logs_to_dataset(&long_logs, 1.0, 0.0).unwrap().tuples.len();
    let n_sessions = logs.len();
    Verdict {
        pass: logs.len() == 10
            && steps == 2000
            && (seconds - 100.0).abs() < 1e-9
            && all == 2 * (2000 - 10)
            && with_closing_sample == 4000,
        detail: format!(
            "{n_sessions} sessions, {steps} logged steps, {seconds} s; {all} tuples (2 x (steps - sessions)); {with_closing_sample} with 201-sample sessions; {trained_on} after dropping the first {DEFAULT_SKIP_S} s"
        ),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // `cargo test -- --list` compatibility: this target has no libtest tests
        return;
    }
    let mut all = true;

    let t = Instant::now();
    let v = criterion_numerics();
    all &= report(5, "numerical core", &v, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let manual = StimulationPattern::from_json(
        r#"{"source":"manual","n_muscles":2,"muscles":{"quadriceps":[{"on_deg":330,"off_deg":120}],"hamstrings":[{"on_deg":170,"off_deg":260}]}}"#,
    )
    .unwrap();
    let v = criterion_bookkeeping(&manual);
    all &= report(7, "data-volume bookkeeping", &v, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let runs = train_runs();
    let train_secs = t.elapsed().as_secs_f64();
    let v = criterion_learning_curves(&runs);
    all &= report(1, "learning-curve shape", &v, train_secs);

    let t = Instant::now();
    let v = criterion_pattern_shape(&runs);
    all &= report(2, "pattern well-formedness", &v, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let mut patterns: Vec<StimulationPattern> =
        runs.iter().filter_map(|r| extract_pattern(&r.agent.actor, &ExtractOptions::default()).ok()).collect();
    patterns.push(manual);
    let v = criterion_mirroring(&patterns);
    all &= report(3, "mirrored-control correctness", &v, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let nominal = Plant::new(CyclingConfig::default().validate().unwrap());
    let trained = train(&nominal, &acceptance_train_config(0), |_| {}).unwrap();
    let ft_results: Option<Vec<GapResult>> = match extract_pattern(&trained.agent.actor, &ExtractOptions::default()) {
        Ok(base) => Some((0..5u64).into_par_iter().map(|s| finetune_on_gap(&trained.agent, &base, s)).collect()),
        Err(e) => {
            all &= report(4, "fine-tuning improvement", &Verdict { pass: false, detail: format!("base extraction: {e}") }, 0.0);
            None
        }
    };
    if let Some(results) = ft_results {
        let v = criterion_finetune(&results);
        all &= report(4, "fine-tuning improvement", &v, t.elapsed().as_secs_f64());
        let v = criterion_purity(&results);
        all &= report(6, "offline purity", &v, 0.0);
        let tuples: Vec<usize> = results.iter().map(|r| r.tuples).collect();
        println!("      fine-tuning datasets: {tuples:?} tuples");
    } else {
        all &= report(6, "offline purity", &Verdict { pass: false, detail: "no fine-tuning run".into() }, 0.0);
    }

    let mut failed = FAILED.with(|f| f.borrow().clone());
    failed.sort_unstable();
    if all {
        println!("acceptance: 7/7 criteria pass");
    } else {
        println!("acceptance: {}/7 criteria pass; failing: {failed:?}", 7 - failed.len());
        if std::env::var("FESRL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
