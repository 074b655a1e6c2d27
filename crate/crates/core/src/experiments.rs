//! Experiment drivers: entropy monotonicity runs, soliton stability runs and
//! blowdown convergence. Each report carries per-sample records and verdicts,
//! and every verdict names the acceptance criterion it checks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate, integrate_with, rescale_state, rhs_reduced, Schedule, StepControl};
use crate::functionals::{dissipation, functional_value, jensen_bound, solve_f_backward_recompute, FunctionalKind};
use crate::math;
use crate::perturb::perturb_fiber;
use crate::solitons::{harmonic_einstein_residual, make_soliton, soliton_distance, Regime, SolitonSpec};
use crate::state::{BundleState, Convention, DensityField};

/// One pass/fail check with the measured value and the tolerance it was held to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Acceptance criterion number.
    pub criterion: u32,
    pub check: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Verdict {
    /// `measured ≤ tolerance`.
    pub fn at_most(criterion: u32, check: &str, measured: f64, tolerance: f64) -> Self {
        Verdict { criterion, check: check.to_string(), measured, tolerance, passed: measured <= tolerance }
    }
}

/// Values recorded at one time sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub values: BTreeMap<String, f64>,
}

impl Record {
    fn new(t: f64) -> Self {
        Record { t, values: BTreeMap::new() }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub parameters: BTreeMap<String, String>,
    pub records: Vec<Record>,
    pub verdicts: Vec<Verdict>,
}

impl ExperimentReport {
    fn new(name: &str) -> Self {
        ExperimentReport { name: name.to_string(), parameters: BTreeMap::new(), records: Vec::new(), verdicts: Vec::new() }
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Column names used by the records, sorted.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.records.iter().flat_map(|r| r.values.keys().cloned()).collect();
        cols.sort();
        cols.dedup();
        cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityOptions {
    pub control: StepControl,
    pub checkpoints_per_log_unit: f64,
    pub samples_per_log_unit: f64,
    /// Half-width of the centred difference, relative to the sample time.
    pub delta_rel: f64,
    /// Singular time `T` for W (`τ = T − t`).
    pub blowup_time: Option<f64>,
    pub assert_monotone: bool,
    pub monotone_tolerance: f64,
    pub identity_tolerance: f64,
    pub jensen_tolerance: f64,
    pub criterion: u32,
}

impl Default for MonotonicityOptions {
    fn default() -> Self {
        MonotonicityOptions {
            control: StepControl::default(),
            checkpoints_per_log_unit: 64.0,
            samples_per_log_unit: 8.0,
            delta_rel: 1e-3,
            blowup_time: None,
            assert_monotone: true,
            monotone_tolerance: 1e-6,
            identity_tolerance: 0.01,
            jensen_tolerance: 1e-8,
            criterion: 4,
        }
    }
}

fn sample_times(t0: f64, horizon: f64, per_log_unit: f64, delta_rel: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1;
    loop {
        let t = t0 * math::exp(k as f64 / per_log_unit);
        if t * (1.0 + delta_rel) > horizon * (1.0 + 1e-12) {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

/// Forward run of the reduced flow, backward conjugate-heat solve from a
/// uniform density at the horizon, then functional, dissipation and centred
/// difference at each sample time.
pub fn run_monotonicity(
    initial: &BundleState,
    horizon: f64,
    which: FunctionalKind,
    options: &MonotonicityOptions,
) -> Result<ExperimentReport> {
    let t0 = initial.t;
    if !(horizon > t0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must exceed the start time {t0}")));
    }
    let convention = match which {
        FunctionalKind::F => Convention::Plain,
        FunctionalKind::WPlus => Convention::Expander,
        FunctionalKind::W => {
            let blowup_time = options.blowup_time.ok_or_else(|| Error::InvalidArgument("W needs a blowup time".into()))?;
            if !(blowup_time > horizon) {
                return Err(Error::InvalidArgument("blowup time must exceed the horizon".into()));
            }
            Convention::Shrinker { blowup_time }
        }
    };
    let delta = options.delta_rel;
    let samples = sample_times(t0, horizon, options.samples_per_log_unit, delta);
    let mut extra = Vec::new();
    for &t in &samples {
        extra.extend([t * (1.0 - delta), t, t * (1.0 + delta)]);
    }
    let schedule = Schedule { anchor: t0, per_log_unit: options.checkpoints_per_log_unit, extra };
    let traj = integrate(initial.clone(), &rhs_reduced, horizon, &options.control, &schedule)?;
    let final_u = DensityField::uniform(traj.last(), convention)?;
    let densities = solve_f_backward_recompute(&traj, &rhs_reduced, &options.control, &final_u)?;

    let find = |t: f64| -> Result<usize> {
        traj.checkpoints
            .iter()
            .position(|c| (c.state.t - t).abs() <= 1e-12 * t)
            .ok_or(Error::WindowNotCovered { start: t, end: t })
    };
    let value_at = |k: usize| -> Result<f64> {
        let f = densities[k].potential();
        functional_value(&traj.checkpoints[k].state, &f, which, convention)
    };

    let mut report = ExperimentReport::new(&format!("monotonicity-{}", which.name()));
    report.param("functional", which.name());
    report.param("t_start", t0);
    report.param("horizon", horizon);
    report.param("delta_rel", delta);
    report.param("nodes", initial.node_count());

    let mut values = Vec::new();
    let mut worst_identity: f64 = 0.0;
    let mut worst_jensen = f64::NEG_INFINITY;
    let mut worst_mass: f64 = 0.0;
    for &t in &samples {
        let k = find(t)?;
        let (lo, hi) = (find(t * (1.0 - delta))?, find(t * (1.0 + delta))?);
        let state = &traj.checkpoints[k].state;
        let f = densities[k].potential();
        let value = value_at(k)?;
        let h = traj.checkpoints[hi].state.t - traj.checkpoints[lo].state.t;
        let fd = (value_at(hi)? - value_at(lo)?) / h;
        let parameter = match convention {
            Convention::Shrinker { blowup_time } => blowup_time - t,
            _ => t,
        };
        let diss = dissipation(state, &f, parameter, which)?;
        let rel = (fd - diss).abs() / diss.abs().max(f64::MIN_POSITIVE);
        worst_identity = worst_identity.max(rel);
        let mass = densities[k].mass(state)?;
        worst_mass = worst_mass.max((mass - final_u.mass(traj.last())?).abs());
        let mut rec = Record::new(t)
            .with("value", value)
            .with("dissipation", diss)
            .with("fd_derivative", fd)
            .with("identity_error", rel)
            .with("mass", mass);
        if which == FunctionalKind::WPlus {
            let jb = jensen_bound(state, &f, t)?;
            worst_jensen = worst_jensen.max(-jb.margin);
            rec = rec.with("jensen_bound", jb.bound).with("jensen_margin", jb.margin);
        }
        values.push(value);
        report.records.push(rec);
    }
    let c = options.criterion;
    report.verdicts.push(Verdict::at_most(
        c,
        "centred difference matches dissipation (max relative error)",
        worst_identity,
        options.identity_tolerance,
    ));
    if options.assert_monotone {
        let violation = values
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0) / (1.0 + w[0].abs()))
            .fold(0.0, f64::max);
        report.verdicts.push(Verdict::at_most(c, "samples nondecreasing (max normalized drop)", violation, options.monotone_tolerance));
    }
    if which == FunctionalKind::WPlus {
        report.verdicts.push(Verdict::at_most(c, "Jensen margin (max of −margin)", worst_jensen, options.jensen_tolerance));
    }
    report.param("max_mass_drift", worst_mass);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub control: StepControl,
    pub seed: u64,
    pub samples_per_log_unit: f64,
    /// Required ratio `distance(horizon) / distance(start)`.
    pub ratio: f64,
    pub criterion: u32,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions { control: StepControl::default(), seed: 1, samples_per_log_unit: 4.0, ratio: 0.2, criterion: 10 }
    }
}

/// Perturbs the soliton at `t = 1` by `epsilon` and tracks the distance to the family.
pub fn run_stability(spec: &SolitonSpec, epsilon: f64, horizon: f64, options: &StabilityOptions) -> Result<ExperimentReport> {
    let base = make_soliton(spec, 1.0)?;
    let initial = if epsilon == 0.0 { base } else { perturb_fiber(&base, epsilon, options.seed)? };
    let mut report = ExperimentReport::new(&format!("stability-{}", spec.kind.name()));
    report.param("soliton", spec.kind.name());
    report.param("epsilon", epsilon);
    report.param("horizon", horizon);
    report.param("seed", options.seed);
    report.param("nodes", initial.node_count());
    let schedule = Schedule { anchor: 1.0, per_log_unit: options.samples_per_log_unit, extra: Vec::new() };
    let mut records = Vec::new();
    integrate_with(initial, &rhs_reduced, horizon, &options.control, &schedule, &mut |s| {
        let d = soliton_distance(s, spec)?;
        records.push(Record::new(s.t).with("distance", d));
        Ok(())
    })?;
    let first = records[0].values["distance"];
    let last = records[records.len() - 1].values["distance"];
    report.records = records;
    let c = options.criterion;
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    report.verdicts.push(Verdict {
        criterion: c,
        check: "distance at horizon below distance at start".into(),
        measured: last,
        tolerance: first,
        passed: last < first || (first == 0.0 && last <= 1e-10),
    });
    report.verdicts.push(Verdict::at_most(c, "distance ratio horizon / start", ratio, options.ratio));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowdownOptions {
    pub control: StepControl,
    /// Residual of the exact soliton on the same grid; the largest scale must reach
    /// `floor_factor · floor`.
    pub floor: Option<f64>,
    pub floor_factor: f64,
    pub criterion: u32,
}

impl Default for BlowdownOptions {
    fn default() -> Self {
        BlowdownOptions { control: StepControl::default(), floor: None, floor_factor: 2.0, criterion: 9 }
    }
}

/// Runs the flow from `initial` (at `t = 1`) through `max(scales)` and evaluates
/// the expander harmonic-Einstein residual of each blowdown at rescaled time 1.
pub fn run_blowdown(initial: &BundleState, scales: &[f64], options: &BlowdownOptions) -> Result<ExperimentReport> {
    if scales.is_empty() || scales.iter().any(|s| !(*s >= initial.t)) {
        return Err(Error::InvalidArgument("scales must be nonempty and not below the start time".into()));
    }
    let mut sorted = scales.to_vec();
    sorted.sort_by(f64::total_cmp);
    let horizon = sorted[sorted.len() - 1];
    let mut report = ExperimentReport::new("blowdown");
    report.param("scales", format!("{sorted:?}"));
    report.param("nodes", initial.node_count());
    let mut residuals: Vec<(f64, f64)> = Vec::new();
    let mut probe = |s: f64, state: &BundleState| -> Result<()> {
        let rescaled = rescale_state(state, s);
        let r = harmonic_einstein_residual(&rescaled, Regime::Expander { t: rescaled.t }, None)?;
        residuals.push((s, r.equations()));
        Ok(())
    };
    if (sorted[0] - initial.t).abs() <= 1e-12 * initial.t {
        probe(sorted[0], initial)?;
    }
    let extra: Vec<f64> = sorted.iter().copied().filter(|s| *s > initial.t).collect();
    if horizon > initial.t {
        let schedule = Schedule { anchor: initial.t, per_log_unit: 1.0, extra: extra.clone() };
        integrate_with(initial.clone(), &rhs_reduced, horizon, &options.control, &schedule, &mut |st| {
            if let Some(&s) = extra.iter().find(|s| (st.t - **s).abs() <= 1e-12 * **s) {
                probe(s, st)?;
            }
            Ok(())
        })?;
    }
    for &(s, r) in &residuals {
        report.records.push(Record::new(s).with("scale", s).with("residual", r));
    }
    let c = options.criterion;
    let increase = residuals.windows(2).map(|w| (w[1].1 - w[0].1).max(0.0)).fold(0.0, f64::max);
    report.verdicts.push(Verdict {
        criterion: c,
        check: "residual strictly decreasing in scale (max increase)".into(),
        measured: increase,
        tolerance: 0.0,
        passed: residuals.windows(2).all(|w| w[1].1 < w[0].1),
    });
    if let Some(floor) = options.floor {
        let last = residuals[residuals.len() - 1].1;
        report.param("floor", floor);
        report.verdicts.push(Verdict::at_most(
            c,
            "residual at the largest scale within floor_factor of the stencil floor",
            last / floor,
            options.floor_factor,
        ));
    }
    Ok(report)
}

/// Forward run, then a backward conjugate-heat solve from a uniform density for
/// each convention; records the normalized mass at every checkpoint.
pub fn run_mass_conservation(
    initial: &BundleState,
    horizon: f64,
    conventions: &[Convention],
    control: &StepControl,
    checkpoints_per_log_unit: f64,
    tolerance: f64,
) -> Result<ExperimentReport> {
    let schedule = Schedule { anchor: initial.t, per_log_unit: checkpoints_per_log_unit, extra: Vec::new() };
    let traj = integrate(initial.clone(), &rhs_reduced, horizon, control, &schedule)?;
    let mut report = ExperimentReport::new("mass-conservation");
    report.param("t_start", initial.t);
    report.param("horizon", horizon);
    report.param("nodes", initial.node_count());
    let mut records: Vec<Record> = traj.checkpoints.iter().map(|c| Record::new(c.state.t)).collect();
    for convention in conventions {
        let label = match convention {
            Convention::Plain => "plain",
            Convention::Expander => "expander",
            Convention::Shrinker { .. } => "shrinker",
        };
        let final_u = DensityField::uniform(traj.last(), *convention)?;
        let densities = solve_f_backward_recompute(&traj, &rhs_reduced, control, &final_u)?;
        let mut worst: f64 = 0.0;
        for (k, (c, u)) in traj.checkpoints.iter().zip(&densities).enumerate() {
            let mass = u.mass(&c.state)?;
            worst = worst.max((mass - 1.0).abs());
            records[k].values.insert(format!("mass_{label}"), mass);
        }
        report.verdicts.push(Verdict::at_most(8, &format!("{label} mass drift (max relative)"), worst, tolerance));
    }
    report.records = records;
    Ok(report)
}
