//! Experiment dispatch and output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bundleflow_core::curvature::scalar_total_field;
use bundleflow_core::experiments::{
    run_blowdown, run_mass_conservation, run_monotonicity, run_stability, BlowdownOptions, ExperimentReport,
    MonotonicityOptions, Record, StabilityOptions, Verdict,
};
use bundleflow_core::flow::{advance_to, rhs_reduced, Schedule};
use bundleflow_core::perturb::perturb_fiber;
use bundleflow_core::solitons::{closed_form_error, harmonic_einstein_residual, make_soliton, Regime};
use bundleflow_core::{BundleState, Convention, FunctionalKind, SolitonKind, SolitonSpec, StepControl};

use crate::checkpoint::CheckpointFile;
use crate::config::{emit_config, soliton_spec, Experiment, InitialKind, RunConfig};

/// Where the run starts.
pub struct Start {
    pub state: BundleState,
    /// Present for an unperturbed soliton start; the flow is then compared with the closed form.
    pub tracked: Option<SolitonSpec>,
    pub spec: Option<SolitonSpec>,
    pub resumed: Option<CheckpointFile>,
}

pub fn initial_state(cfg: &RunConfig) -> Result<Start> {
    match cfg.initial.kind {
        InitialKind::Soliton => {
            let spec = soliton_spec(cfg)?;
            let exact = make_soliton(&spec, cfg.initial.t)?;
            let (state, tracked) = if cfg.initial.epsilon == 0.0 {
                (exact, Some(spec.clone()))
            } else {
                (perturb_fiber(&exact, cfg.initial.epsilon, cfg.seed)?, None)
            };
            Ok(Start { state, tracked, spec: Some(spec), resumed: None })
        }
        InitialKind::Checkpoint => {
            let path = cfg.initial.path.as_ref().context("checkpoint start without a path")?;
            let file = CheckpointFile::load(path)?;
            Ok(Start { state: file.state.clone(), tracked: None, spec: None, resumed: Some(file) })
        }
    }
}

pub struct Outcome {
    pub report: ExperimentReport,
    /// Final state of a flow run, plus any states saved at configured stops.
    pub checkpoints: Vec<(String, CheckpointFile)>,
}

fn report(name: &str) -> ExperimentReport {
    ExperimentReport { name: name.into(), parameters: BTreeMap::new(), records: Vec::new(), verdicts: Vec::new() }
}

/// Exact scalar curvature of the family, where it is known in closed form.
fn expected_scalar(spec: &SolitonSpec, t: f64) -> Option<(f64, f64)> {
    match spec.kind {
        SolitonKind::Flat => Some((0.0, 1e-10)),
        SolitonKind::Sol => Some((-1.0 / (2.0 * t), 1e-6)),
        SolitonKind::Nil => Some((-1.0 / (6.0 * t), 1e-5)),
        _ => None,
    }
}

/// Reduced flow from `state` to `horizon`, landing on every stop of `schedule`.
pub fn run_flow(
    state: BundleState,
    schedule: Schedule,
    control: StepControl,
    horizon: f64,
    prior_steps: usize,
    tracked: Option<&SolitonSpec>,
    save_at: &[f64],
    config_text: &str,
) -> Result<Outcome> {
    let mut rep = report("flow");
    rep.parameters.insert("t_start".into(), format!("{:?}", state.t));
    rep.parameters.insert("horizon".into(), format!("{horizon:?}"));
    rep.parameters.insert("nodes".into(), state.node_count().to_string());
    let mut records = Vec::new();
    let mut saved = Vec::new();
    let mut worst_track: f64 = 0.0;
    let mut worst_scalar: Option<(f64, f64)> = None;
    let mut steps = prior_steps;
    let mut observe = |s: &BundleState| -> bundleflow_core::Result<()> {
        let mut values = BTreeMap::new();
        let fiber_max = s.fiber_metric.iter().map(|m| m.max_abs()).fold(0.0, f64::max);
        let base_min = s.base_metric.iter().map(|m| m.min_eigenvalue()).fold(f64::INFINITY, f64::min);
        values.insert("fiber_metric_max".to_string(), fiber_max);
        values.insert("base_metric_min_eigenvalue".to_string(), base_min);
        if let Some(spec) = tracked {
            let e = closed_form_error(s, spec)?;
            worst_track = worst_track.max(e);
            values.insert("closed_form_error".to_string(), e);
            if let Some((want, tol)) = expected_scalar(spec, s.t) {
                let r = scalar_total_field(s)?;
                let dev = r.iter().map(|v| (v - want).abs()).fold(0.0, f64::max);
                values.insert("scalar_curvature_deviation".to_string(), dev);
                worst_scalar = Some((worst_scalar.map_or(0.0, |w| w.0).max(dev), tol));
            }
        }
        records.push(Record { t: s.t, values });
        Ok(())
    };
    let core = |e: bundleflow_core::Error| anyhow::anyhow!(e);
    observe(&state).map_err(core)?;
    let mut state = state;
    for stop in schedule.stops(state.t, horizon).map_err(core)? {
        state = advance_to(state, &rhs_reduced, stop, &control, &mut steps).map_err(core)?;
        observe(&state).map_err(core)?;
        if let Some(k) = save_at.iter().position(|x| (x - stop).abs() <= 1e-12 * x.abs()) {
            saved.push((k, state.clone(), steps));
        }
    }
    let final_state = state;
    rep.parameters.insert("steps".into(), steps.to_string());
    rep.records = records;
    if tracked.is_some() {
        rep.verdicts.push(Verdict::at_most(2, "closed-form tracking (relative sup-norm)", worst_track, 1e-4));
        if let Some((dev, tol)) = worst_scalar {
            rep.verdicts.push(Verdict::at_most(3, "scalar curvature against the closed form (max abs)", dev, tol));
        }
    }
    let v = final_state.validate();
    rep.verdicts.push(Verdict {
        criterion: 11,
        check: "final state finite and positive definite".into(),
        measured: v.non_finite as f64 + (v.fiber_spd_violations.len() + v.base_spd_violations.len()) as f64,
        tolerance: 0.0,
        passed: v.is_valid(),
    });
    let mut checkpoints: Vec<(String, CheckpointFile)> = saved
        .into_iter()
        .map(|(k, s, n)| (format!("checkpoint-{k}.json"), CheckpointFile::new(s, schedule.clone(), control, n, config_text.into())))
        .collect();
    checkpoints.push((
        "checkpoint.json".into(),
        CheckpointFile::new(final_state, schedule, control, steps, config_text.into()),
    ));
    Ok(Outcome { report: rep, checkpoints })
}

/// Schedule for a fresh run, or the persisted one extended by the configured stops.
fn schedule_for(cfg: &RunConfig, start: &Start) -> Schedule {
    match &start.resumed {
        Some(file) => {
            let mut s = file.schedule.clone();
            for &x in &cfg.run.stops {
                if !s.extra.iter().any(|y| (x - y).abs() <= 1e-12 * x.abs()) {
                    s.extra.push(x);
                }
            }
            s.extra.sort_by(f64::total_cmp);
            s
        }
        None => Schedule {
            anchor: start.state.t,
            per_log_unit: cfg.run.checkpoints_per_log_unit,
            extra: cfg.run.stops.clone(),
        },
    }
}

/// Runs the configured experiment.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let text = emit_config(cfg);
    let start = initial_state(cfg)?;
    let horizon = cfg.run.horizon;
    if !(horizon > start.state.t) {
        bail!("run.horizon = {horizon} must exceed the start time {}", start.state.t);
    }
    let control = start.resumed.as_ref().map_or(cfg.control, |f| f.control);
    let core = |e: bundleflow_core::Error| anyhow::anyhow!(e);
    let report = match cfg.experiment {
        Experiment::Flow => {
            let schedule = schedule_for(cfg, &start);
            let prior = start.resumed.as_ref().map_or(0, |f| f.steps);
            return run_flow(start.state, schedule, control, horizon, prior, start.tracked.as_ref(), &cfg.run.stops, &text);
        }
        Experiment::Stability => {
            let spec = start.spec.context("stability runs start from a soliton")?;
            let opts = StabilityOptions {
                control,
                seed: cfg.seed,
                samples_per_log_unit: cfg.run.samples_per_log_unit,
                ..StabilityOptions::default()
            };
            run_stability(&spec, cfg.initial.epsilon, horizon, &opts).map_err(core)?
        }
        Experiment::Monotonicity => {
            let which = cfg.run.functional;
            let opts = MonotonicityOptions {
                control,
                checkpoints_per_log_unit: cfg.run.checkpoints_per_log_unit,
                samples_per_log_unit: cfg.run.samples_per_log_unit,
                blowup_time: cfg.run.blowup_time,
                assert_monotone: which != FunctionalKind::W,
                criterion: match which {
                    FunctionalKind::F => 5,
                    FunctionalKind::W => 6,
                    FunctionalKind::WPlus => 4,
                },
                ..MonotonicityOptions::default()
            };
            run_monotonicity(&start.state, horizon, which, &opts).map_err(core)?
        }
        Experiment::Blowdown => {
            let floor = match &start.spec {
                Some(spec) if spec.kind != SolitonKind::Flat => {
                    let exact = make_soliton(spec, 1.0).map_err(core)?;
                    Some(harmonic_einstein_residual(&exact, Regime::Expander { t: 1.0 }, None).map_err(core)?.equations())
                }
                _ => None,
            };
            let opts = BlowdownOptions { control, floor, ..BlowdownOptions::default() };
            run_blowdown(&start.state, &cfg.run.scales, &opts).map_err(core)?
        }
        Experiment::Conservation => {
            let conventions = [Convention::Plain, Convention::Expander];
            run_mass_conservation(&start.state, horizon, &conventions, &control, cfg.run.checkpoints_per_log_unit, 1e-6)
                .map_err(core)?
        }
    };
    Ok(Outcome { report, checkpoints: Vec::new() })
}

fn csv_float(x: f64) -> String {
    format!("{x:?}")
}

/// `t` followed by every record column; absent values are left empty.
pub fn series_csv(report: &ExperimentReport) -> String {
    let cols = report.columns();
    let mut s = String::from("t");
    for c in &cols {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for r in &report.records {
        s.push_str(&csv_float(r.t));
        for c in &cols {
            s.push(',');
            if let Some(v) = r.values.get(c) {
                s.push_str(&csv_float(*v));
            }
        }
        s.push('\n');
    }
    s
}

pub fn verdicts_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("criterion,check,measured,tolerance,passed\n");
    for v in &report.verdicts {
        let _ = writeln!(
            s,
            "{},\"{}\",{},{},{}",
            v.criterion,
            v.check.replace('"', "'"),
            csv_float(v.measured),
            csv_float(v.tolerance),
            v.passed
        );
    }
    s
}

/// Writes `report.json`, `series.csv`, `verdicts.csv`, `config.txt` and any checkpoints.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let json = serde_json::to_string_pretty(&outcome.report)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("series.csv"), series_csv(&outcome.report))?;
    fs::write(dir.join("verdicts.csv"), verdicts_csv(&outcome.report))?;
    fs::write(dir.join("config.txt"), emit_config(cfg))?;
    for (name, file) in &outcome.checkpoints {
        file.save(&dir.join(name)).with_context(|| format!("cannot write {name}"))?;
    }
    Ok(())
}

/// Per-node field dump: coordinates, then `G`, `a` and `g` entries in row-major order.
pub fn fields_csv(state: &BundleState) -> String {
    let n = state.base_dim();
    let nf = state.fiber_dim;
    let mut s = String::from("node,t");
    for a in 0..n {
        let _ = write!(s, ",x{a}");
    }
    for i in 0..nf {
        for j in 0..nf {
            let _ = write!(s, ",G{i}{j}");
        }
    }
    for i in 0..nf {
        for a in 0..n {
            let _ = write!(s, ",a{i}{a}");
        }
    }
    for a in 0..n {
        for b in 0..n {
            let _ = write!(s, ",g{a}{b}");
        }
    }
    s.push('\n');
    for node in 0..state.node_count() {
        let _ = write!(s, "{node},{}", csv_float(state.t));
        let x = state.domain.coords(node);
        for xa in x.iter().take(n) {
            let _ = write!(s, ",{}", csv_float(*xa));
        }
        for m in [&state.fiber_metric[node], &state.connection.periodic[node], &state.base_metric[node]] {
            for v in m.row_major() {
                let _ = write!(s, ",{}", csv_float(v));
            }
        }
        s.push('\n');
    }
    s
}
