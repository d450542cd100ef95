//! Fine-tuning from logged sessions: pattern-driven data collection, mirrored
//! dataset construction, conservative offline training and cadence evaluation.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biomech::{sim_step_count, to_rpm, MuscleName, Plant, Side, SimState, StartAssist};
use crate::env::{control_columns, make_observation, reward, ExperienceTuple};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::pattern::{
    pattern_controls_both, perturb_pattern, MuscleSelector, PatternPerturbation, PerturbationKind, StimulationPattern,
};
use crate::rl::{Agent, TrainConfig, Transition, UpdateStats};

/// Seconds at the start of each session left out of the dataset by default.
pub const DEFAULT_SKIP_S: f64 = 1.0;

/// One logged control step: the state at `time` and the controls held over
/// the following `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub time: f64,
    pub crank_angle: f64,
    pub cadence: f64,
    /// Right-leg muscles, then left.
    pub controls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: usize,
    pub pattern_id: String,
    pub perturbation: PatternPerturbation,
    pub config_hash: String,
    pub n_muscles: usize,
    pub dt: f64,
    pub duration_s: f64,
    pub start_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub meta: SessionMeta,
    pub rows: Vec<LogRow>,
}

/// Ten perturbations: the unperturbed pattern first, then rotations,
/// shrink/extend of all muscles, and single-muscle rotations.
pub fn default_schedule() -> Vec<PatternPerturbation> {
    use MuscleSelector::{All, Only};
    use PerturbationKind::{Extend, Rotate, Shrink};
    let p = |kind, muscles, magnitude_deg| PatternPerturbation { kind, muscles, magnitude_deg };
    vec![
        PatternPerturbation::identity(),
        p(Rotate, All, 10.0),
        p(Rotate, All, -10.0),
        p(Rotate, All, 20.0),
        p(Rotate, All, -20.0),
        p(Shrink, All, 10.0),
        p(Extend, All, 10.0),
        p(Rotate, Only(MuscleName::Quadriceps), 10.0),
        p(Rotate, Only(MuscleName::Hamstrings), -10.0),
        p(Extend, Only(MuscleName::Quadriceps), 10.0),
    ]
}

pub fn perturbation_id(p: &PatternPerturbation) -> String {
    if p.magnitude_deg == 0.0 {
        return "identity".into();
    }
    let kind = match p.kind {
        PerturbationKind::Shrink => "shrink",
        PerturbationKind::Extend => "extend",
        PerturbationKind::Rotate => "rotate",
    };
    let target = match p.muscles {
        MuscleSelector::All => "all".to_string(),
        MuscleSelector::Only(m) => m.key().to_string(),
    };
    format!("{kind}_{target}_{:+}", p.magnitude_deg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOptions {
    pub n_sessions: usize,
    pub duration_s: f64,
    pub dt: f64,
    pub seed: u64,
    /// One entry per session; shorter schedules are cycled.
    pub schedule: Vec<PatternPerturbation>,
    /// Start-up motor for the beginning of every session.
    pub assist: Option<StartAssist>,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            n_sessions: 10,
            duration_s: 10.0,
            dt: 0.05,
            seed: 0,
            schedule: default_schedule(),
            assist: Some(StartAssist::default()),
        }
    }
}

fn session_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e55_1045);
    (0..n).map(|_| rng.random()).collect()
}

fn random_start(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random_range(0.0..2.0 * std::f64::consts::PI)
}

/// Drives `pattern` open loop from rest at a random start angle, with the
/// optional start-up motor, and records every control step.
pub fn run_pattern_session(
    plant: &Plant,
    pattern: &StimulationPattern,
    steps: usize,
    dt: f64,
    start_seed: u64,
    assist: Option<&StartAssist>,
) -> Result<Vec<LogRow>> {
    if pattern.n_muscles() != plant.n_muscles() {
        return Err(Error::ShapeMismatch { expected: plant.n_muscles(), got: pattern.n_muscles() });
    }
    let mut state = plant.initial_state(random_start(start_seed));
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let controls = pattern_controls_both(pattern, state.crank_angle);
        rows.push(LogRow { time: k as f64 * dt, crank_angle: state.crank_angle, cadence: state.cadence, controls: controls.clone() });
        state = plant.sim_step_assisted(&state, &controls, dt, assist)?;
    }
    Ok(rows)
}

fn step_count(duration_s: f64, dt: f64) -> Result<usize> {
    if !(duration_s > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument("duration and dt must be positive".into()));
    }
    Ok((duration_s / dt).round() as usize)
}

/// Runs `n_sessions` pattern-driven sessions on `plant`, session `i` using the
/// `i`-th perturbation of `base`.
pub fn collect_sessions(plant: &Plant, base: &StimulationPattern, opts: &CollectOptions) -> Result<Vec<SessionLog>> {
    base.validate()?;
    if opts.schedule.is_empty() {
        return Err(Error::InvalidArgument("empty perturbation schedule".into()));
    }
    let steps = step_count(opts.duration_s, opts.dt)?;
    let seeds = session_seeds(opts.seed, opts.n_sessions);
    let hash = plant.config().hash();
    (0..opts.n_sessions)
        .into_par_iter()
        .map(|i| {
            let perturbation = opts.schedule[i % opts.schedule.len()];
            let pattern = perturb_pattern(base, &perturbation)?;
            let rows = run_pattern_session(plant, &pattern, steps, opts.dt, seeds[i], opts.assist.as_ref())?;
            Ok(SessionLog {
                meta: SessionMeta {
                    session_id: i,
                    pattern_id: perturbation_id(&perturbation),
                    perturbation,
                    config_hash: hash.clone(),
                    n_muscles: base.n_muscles(),
                    dt: opts.dt,
                    duration_s: steps as f64 * opts.dt,
                    start_seed: seeds[i],
                },
                rows,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub tuples: Vec<ExperienceTuple>,
    /// Source session of each tuple.
    pub session_of: Vec<usize>,
    pub session_ids: Vec<usize>,
    pub behavior_policy: String,
    pub config_hash: String,
}

impl OfflineDataset {
    pub fn transitions(&self) -> Vec<Transition> {
        self.tuples.iter().map(ExperienceTuple::to_transition).collect()
    }
}

/// Consecutive rows become right and mirrored-left tuples; each session's
/// last row only serves as a next state, and transitions starting before
/// `skip_s` are dropped.
pub fn logs_to_dataset(logs: &[SessionLog], beta: f64, skip_s: f64) -> Result<OfflineDataset> {
    let Some(first) = logs.first() else {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    };
    let hash = &first.meta.config_hash;
    let n = first.meta.n_muscles;
    if logs.iter().any(|l| &l.meta.config_hash != hash || l.meta.n_muscles != n) {
        return Err(Error::InconsistentConfig);
    }
    let mut tuples = Vec::new();
    let mut session_of = Vec::new();
    for log in logs {
        for k in 0..log.rows.len().saturating_sub(1) {
            let (row, next) = (&log.rows[k], &log.rows[k + 1]);
            if row.time < skip_s - 1e-9 {
                continue;
            }
            let zeros = vec![0.0; 2 * n];
            let prev = if k == 0 { &zeros } else { &log.rows[k - 1].controls };
            let state = |r: &LogRow| SimState { crank_angle: r.crank_angle, cadence: r.cadence, activations: Vec::new(), sim_time: r.time };
            for (side, range) in [(Side::Right, 0..n), (Side::Left, n..2 * n)] {
                let a = row.controls[range.clone()].to_vec();
                tuples.push(ExperienceTuple {
                    s: make_observation(&state(row), &prev[range.clone()], side),
                    r: reward(next.cadence, &a, beta),
                    s_next: make_observation(&state(next), &a, side),
                    a,
                });
                session_of.push(log.meta.session_id);
            }
        }
    }
    Ok(OfflineDataset {
        tuples,
        session_of,
        session_ids: logs.iter().map(|l| l.meta.session_id).collect(),
        behavior_policy: "pattern_controller".into(),
        config_hash: hash.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneReport {
    pub stats: UpdateStats,
    /// Simulator steps taken on this thread during fine-tuning; always 0.
    pub sim_steps: u64,
}

/// Conservative offline training from a warm-started agent: optimiser state is
/// reset under `tc` and `tc.finetune_steps` updates are sampled from `dataset`.
pub fn finetune(agent: &Agent, dataset: &OfflineDataset, tc: &TrainConfig) -> Result<(Agent, FinetuneReport)> {
    tc.validate()?;
    let data = dataset.transitions();
    if data.is_empty() || data.len() < tc.batch_size {
        return Err(Error::InsufficientData { needed: tc.batch_size.max(1), available: data.len() });
    }
    let before = sim_step_count();
    let mut tuned = agent.with_config(tc.clone());
    let stats = tuned.update_steps(&data, tc.finetune_steps)?;
    Ok((tuned, FinetuneReport { stats, sim_steps: sim_step_count() - before }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub seed: u64,
    pub mean_rpm: f64,
    pub std_rpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_rpm: f64,
    pub trials: Vec<TrialStats>,
    /// Per trial, RPM after every control step.
    pub traces: Vec<Vec<f64>>,
    pub dt: f64,
}

/// Seconds discarded at the start of every evaluation trial.
pub const EVAL_TRANSIENT_S: f64 = 5.0;

/// Open-loop evaluation from random starts (with the optional start-up
/// motor); RPM is averaged after the first `EVAL_TRANSIENT_S` seconds of each
/// trial.
pub fn evaluate_pattern(
    plant: &Plant,
    pattern: &StimulationPattern,
    duration_s: f64,
    seeds: &[u64],
    assist: Option<&StartAssist>,
) -> Result<EvalReport> {
    pattern.validate()?;
    let dt = crate::biomech::CONTROL_DT;
    let steps = step_count(duration_s, dt)?;
    let skip = (EVAL_TRANSIENT_S / dt).round() as usize;
    if steps <= skip {
        return Err(Error::InvalidArgument(format!("duration must exceed the {EVAL_TRANSIENT_S} s transient")));
    }
    let runs: Vec<(TrialStats, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let rows = run_pattern_session(plant, pattern, steps + 1, dt, seed, assist)?;
            let trace: Vec<f64> = rows[1..].iter().map(|r| to_rpm(r.cadence)).collect();
            let tail = &trace[skip..];
            let mean = tail.iter().sum::<f64>() / tail.len() as f64;
            let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tail.len() as f64;
            Ok((TrialStats { seed, mean_rpm: mean, std_rpm: var.sqrt() }, trace))
        })
        .collect::<Result<_>>()?;
    let mean_rpm = if runs.is_empty() { 0.0 } else { runs.iter().map(|r| r.0.mean_rpm).sum::<f64>() / runs.len() as f64 };
    let (trials, traces) = runs.into_iter().unzip();
    Ok(EvalReport { mean_rpm, trials, traces, dt })
}

/// Trial seeds `base, base + 1, …`.
pub fn trial_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

pub fn write_eval_csv<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "seed", "time", "rpm"])?;
    for (i, (trial, trace)) in report.trials.iter().zip(&report.traces).enumerate() {
        for (k, rpm) in trace.iter().enumerate() {
            w.write_record([i.to_string(), trial.seed.to_string(), sig9((k + 1) as f64 * report.dt), sig9(*rpm)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn session_stem(meta: &SessionMeta) -> String {
    format!("session_{:03}", meta.session_id)
}

/// Writes `session_NNN.csv` plus a `session_NNN.json` sidecar per log.
pub fn write_sessions(dir: &Path, logs: &[SessionLog]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for log in logs {
        let stem = session_stem(&log.meta);
        let csv_path = dir.join(format!("{stem}.csv"));
        write_session_csv(std::fs::File::create(&csv_path)?, log)?;
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&json_path, serde_json::to_string_pretty(&log.meta)? + "\n")?;
        written.push(csv_path);
        written.push(json_path);
    }
    Ok(written)
}

pub fn write_session_csv<W: Write>(out: W, log: &SessionLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "crank_angle".into(), "cadence".into()];
    header.extend(control_columns(log.meta.n_muscles));
    header.push("pattern_id".into());
    w.write_record(&header)?;
    for r in &log.rows {
        let mut row = vec![sig9(r.time), sig9(r.crank_angle), sig9(r.cadence)];
        row.extend(r.controls.iter().map(|&u| sig9(u)));
        row.push(log.meta.pattern_id.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_session_csv<R: Read>(input: R, meta: SessionMeta) -> Result<SessionLog> {
    let mut r = csv::Reader::from_reader(input);
    let n = meta.n_muscles;
    let width = 3 + 2 * n + 1;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::ShapeMismatch { expected: width, got: rec.len() });
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number `{}`: {e}", &rec[i])))
        };
        rows.push(LogRow {
            time: num(0)?,
            crank_angle: num(1)?,
            cadence: num(2)?,
            controls: (0..2 * n).map(|i| num(3 + i)).collect::<Result<_>>()?,
        });
    }
    Ok(SessionLog { meta, rows })
}

/// Loads every `session_*.json` sidecar in `dir` with its CSV, ordered by id.
pub fn read_sessions(dir: &Path) -> Result<Vec<SessionLog>> {
    let mut metas = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if name.starts_with("session_") && name.ends_with(".json") {
            let meta: SessionMeta = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            metas.push((path.with_extension("csv"), meta));
        }
    }
    metas.sort_by_key(|(_, m)| m.session_id);
    metas.into_iter().map(|(csv_path, meta)| read_session_csv(std::fs::File::open(csv_path)?, meta)).collect()
}

#[derive(Serialize)]
struct DatasetSidecar<'a> {
    config_hash: &'a str,
    behavior_policy: &'a str,
    session_ids: &'a [usize],
    n_tuples: usize,
}

/// Dataset CSV (one row per tuple) and its JSON sidecar.
pub fn write_dataset(csv_path: &Path, ds: &OfflineDataset) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let Some(first) = ds.tuples.first() else {
        w.flush()?;
        return Ok(csv_path.with_extension("json"));
    };
    let n = first.a.len();
    let obs_cols = |prefix: &str| {
        let mut c = vec![format!("{prefix}sin_theta"), format!("{prefix}cos_theta"), format!("{prefix}cadence")];
        c.extend((0..n).map(|i| format!("{prefix}prev_action_{i}")));
        c
    };
    let mut header = vec!["session".to_string()];
    header.extend(obs_cols("s_"));
    header.extend((0..n).map(|i| format!("a_{i}")));
    header.push("r".into());
    header.extend(obs_cols("s_next_"));
    w.write_record(&header)?;
    for (t, session) in ds.tuples.iter().zip(&ds.session_of) {
        let mut row = vec![session.to_string()];
        row.extend(t.s.to_vec().into_iter().map(sig9));
        row.extend(t.a.iter().map(|&x| sig9(x)));
        row.push(sig9(t.r));
        row.extend(t.s_next.to_vec().into_iter().map(sig9));
        w.write_record(&row)?;
    }
    w.flush()?;
    let sidecar = csv_path.with_extension("json");
    let meta = DatasetSidecar {
        config_hash: &ds.config_hash,
        behavior_policy: &ds.behavior_policy,
        session_ids: &ds.session_ids,
        n_tuples: ds.tuples.len(),
    };
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomech::CyclingConfig;
    use crate::pattern::{Interval, PatternSource};

    fn plant() -> Plant {
        Plant::new(CyclingConfig::default().validate().unwrap())
    }

    fn manual_pattern() -> StimulationPattern {
        let mut p = StimulationPattern::empty(2, PatternSource::Manual);
        p.muscles[0] = vec![Interval::new(20.0, 170.0)];
        p.muscles[1] = vec![Interval::new(200.0, 330.0)];
        p
    }

    #[test]
    fn default_collection_volume() {
        let logs = collect_sessions(&plant(), &manual_pattern(), &CollectOptions::default()).unwrap();
        assert_eq!(logs.len(), 10);
        assert_eq!(logs.iter().map(|l| l.rows.len()).sum::<usize>(), 2000);
        assert_eq!(logs[0].meta.pattern_id, "identity");
        for log in &logs {
            for w in log.rows.windows(2) {
                assert!((w[1].time - w[0].time - 0.05).abs() < 1e-12);
            }
            assert!(log.rows.iter().all(|r| r.controls.iter().all(|&u| u == 0.0 || u == 1.0)));
        }
        let ds = logs_to_dataset(&logs, 1.0, 0.0).unwrap();
        assert_eq!(ds.tuples.len(), 2 * (2000 - 10));
        let skipped = logs_to_dataset(&logs, 1.0, DEFAULT_SKIP_S).unwrap();
        assert_eq!(skipped.tuples.len(), 2 * (2000 - 10 - 10 * 20));
    }

    #[test]
    fn two_hundred_one_samples_give_four_thousand() {
        let opts = CollectOptions { duration_s: 10.05, ..Default::default() };
        let logs = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        assert_eq!(logs_to_dataset(&logs, 1.0, 0.0).unwrap().tuples.len(), 4000);
    }

    #[test]
    fn empty_pattern_never_moves() {
        let empty = StimulationPattern::empty(2, PatternSource::Manual);
        let unassisted = CollectOptions { assist: None, ..Default::default() };
        let logs = collect_sessions(&plant(), &empty, &unassisted).unwrap();
        assert!(logs.iter().all(|l| l.rows.iter().all(|r| r.cadence == 0.0)));
        // the start-up motor only coasts the crank for a moment
        let logs = collect_sessions(&plant(), &empty, &CollectOptions::default()).unwrap();
        assert!(logs.iter().all(|l| l.rows[60..].iter().all(|r| r.cadence == 0.0)));
        for assist in [None, Some(StartAssist::default())] {
            let report = evaluate_pattern(&plant(), &empty, 30.0, &[1, 2], assist.as_ref()).unwrap();
            assert_eq!(report.mean_rpm, 0.0);
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let opts = CollectOptions { n_sessions: 3, duration_s: 2.0, seed: 5, ..Default::default() };
        let a = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        let b = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tuples_reproduce_from_log_rows() {
        let opts = CollectOptions { n_sessions: 2, duration_s: 3.0, ..Default::default() };
        let logs = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        let ds = logs_to_dataset(&logs, 1.0, 0.0).unwrap();
        let right: Vec<_> = ds.tuples.iter().step_by(2).collect();
        let left: Vec<_> = ds.tuples.iter().skip(1).step_by(2).collect();
        assert_eq!(right.len(), left.len());
        // recompute rewards independently from the rows
        let mut i = 0;
        for log in &logs {
            for k in 0..log.rows.len() - 1 {
                let (row, next) = (&log.rows[k], &log.rows[k + 1]);
                let pen = |u: &[f64]| u.iter().map(|x| x * x).sum::<f64>();
                assert_eq!(right[i].r, next.cadence - pen(&row.controls[..2]));
                assert_eq!(left[i].r, next.cadence - pen(&row.controls[2..]));
                assert_eq!(right[i].s.sin_theta, row.crank_angle.sin());
                assert_eq!(left[i].s.cos_theta, -row.crank_angle.cos());
                assert_eq!(right[i].a, row.controls[..2].to_vec());
                i += 1;
            }
        }
    }

    #[test]
    fn mixed_configs_rejected() {
        let opts = CollectOptions { n_sessions: 1, duration_s: 1.0, ..Default::default() };
        let a = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        let gap_plant = Plant::new(CyclingConfig { perturbation_seed: Some(3), ..Default::default() }.validate().unwrap());
        let b = collect_sessions(&gap_plant, &manual_pattern(), &opts).unwrap();
        let both = [a, b].concat();
        assert!(matches!(logs_to_dataset(&both, 1.0, 0.0), Err(Error::InconsistentConfig)));
    }

    #[test]
    fn finetune_never_steps_the_simulator() {
        let opts = CollectOptions { n_sessions: 2, duration_s: 4.0, ..Default::default() };
        let logs = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        let ds = logs_to_dataset(&logs, 1.0, 0.0).unwrap();
        let tc = TrainConfig { cql_weight: 5.0, batch_size: 32, finetune_steps: 5, ..Default::default() };
        let agent = Agent::new(5, 2, tc.clone());
        let (tuned, report) = finetune(&agent, &ds, &tc).unwrap();
        assert_eq!(report.sim_steps, 0);
        assert_ne!(tuned.actor, agent.actor);
        let empty = OfflineDataset { tuples: Vec::new(), ..ds };
        assert!(matches!(finetune(&agent, &empty, &tc), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn evaluation_is_reproducible() {
        let assist = StartAssist::default();
        let a = evaluate_pattern(&plant(), &manual_pattern(), 8.0, &[3, 3, 4], Some(&assist)).unwrap();
        assert_eq!(a.traces[0], a.traces[1]);
        assert_eq!(a.traces[0].len(), 160);
        let b = evaluate_pattern(&plant(), &manual_pattern(), 8.0, &[3, 3, 4], Some(&assist)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sessions_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let opts = CollectOptions { n_sessions: 2, duration_s: 1.0, ..Default::default() };
        let logs = collect_sessions(&plant(), &manual_pattern(), &opts).unwrap();
        write_sessions(dir.path(), &logs).unwrap();
        let back = read_sessions(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].meta, logs[1].meta);
        for (x, y) in back[1].rows.iter().zip(&logs[1].rows) {
            assert!((x.cadence - y.cadence).abs() <= 1e-8 * y.cadence.abs().max(1.0));
            assert_eq!(x.controls, y.controls);
        }
    }
}
