//! Scenario engine: panic braking, general cruising and ACC/ABS sharing.
//!
//! The braking controller runs only at control instants and holds its torque
//! over the plant sub-steps in between. Applied torque is clamped to
//! `[0, limit]` and the clamped value is fed back as the controller's
//! previous output, so the integral cannot wind up against the actuator.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::discretization::{pid_step, ControllerState, PidGains};
use crate::plant::{integrate_step, PlantError, RoadSurface, VehicleParams, VehicleState};
use crate::profile::{DriveProfile, ProfileError};
use crate::scheduler::{
    acc_mode, bandwidth, bandwidth_fixed, co_schedule, dwell_from_segments, AccMode, BandwidthReport, ModeSegment,
    SchedulerError,
};
use crate::supervisor::{classify_bpp, SamplingModeId, Supervisor, SupervisorError, TransitionRecord};

#[derive(Debug, Error, Clone)]
pub enum SimError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("numeric blowup at t = {t} s: {source} ({} trace samples kept)", trace.records.len())]
    Blowup {
        t: f64,
        source: PlantError,
        trace: Box<SimTrace>,
    },
    #[error("infeasible co-schedule at t = {t} s: {source}")]
    Infeasible { t: f64, source: SchedulerError },
}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        SimError::Config(e.to_string())
    }
}

/// Sampling policy of the braking controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerSpec {
    Fixed(f64),
    Multimode,
}

impl fmt::Display for ControllerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerSpec::Fixed(t) => write!(f, "fixed:{t:e}"),
            ControllerSpec::Multimode => f.write_str("multimode"),
        }
    }
}

impl FromStr for ControllerSpec {
    type Err = String;

    /// Parses `multimode` or `fixed:<period in s>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "multimode" {
            return Ok(ControllerSpec::Multimode);
        }
        match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(t)) if t > 0.0 && t.is_finite() => Ok(ControllerSpec::Fixed(t)),
            _ => Err(format!("controller must be 'multimode' or 'fixed:<period>', got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Braking,
    Cruising,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Initial speed (km/h).
    pub v0: f64,
    pub surface: String,
    pub profile: Option<String>,
    /// Length of a cruising run (s); braking runs last until rest.
    pub duration: Option<f64>,
    pub lambda_d: f64,
    pub controller: ControllerSpec,
    /// Pedal pressure held during a braking run.
    pub bpp: f64,
}

impl Scenario {
    /// Full-pedal stop from `v0` km/h.
    pub fn panic_braking(v0: f64, surface: &str, controller: ControllerSpec, cfg: &Config) -> Self {
        Self {
            kind: ScenarioKind::Braking,
            v0,
            surface: surface.to_string(),
            profile: None,
            duration: None,
            lambda_d: cfg.simulation.lambda_d,
            controller,
            bpp: cfg.simulation.panic_bpp,
        }
    }
}

/// Mode column of a trace: a supervisor mode or a fixed-period run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceMode {
    Mode(SamplingModeId),
    Fixed,
}

impl fmt::Display for TraceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceMode::Mode(m) => m.fmt(f),
            TraceMode::Fixed => f.write_str("fixed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub v_x: f64,
    pub omega: f64,
    pub lambda: f64,
    pub m_b: f64,
    pub mode: TraceMode,
    pub period: f64,
}

pub const TRACE_HEADER: &str = "t,V_x,omega,lambda,M_b,mode,period";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                r.t, r.v_x, r.omega, r.lambda, r.m_b, r.mode, r.period
            )?;
        }
        Ok(())
    }
}

struct Recorder {
    interval: f64,
    next: u64,
    trace: SimTrace,
}

impl Recorder {
    fn new(interval: f64) -> Self {
        Self {
            interval,
            next: 0,
            trace: SimTrace::default(),
        }
    }

    fn record(&mut self, t: f64, state: &VehicleState, m_b: f64, mode: TraceMode, period: f64) {
        if self.interval > 0.0 && t < self.next as f64 * self.interval - 1e-12 {
            return;
        }
        if self.interval > 0.0 {
            self.next = (t / self.interval + 1e-9).floor() as u64 + 1;
        }
        self.push(t, state, m_b, mode, period);
    }

    fn push(&mut self, t: f64, state: &VehicleState, m_b: f64, mode: TraceMode, period: f64) {
        self.trace.records.push(TraceRecord {
            t,
            v_x: state.v_x(),
            omega: state.omega(),
            lambda: state.lambda(),
            m_b,
            mode,
            period,
        });
    }
}

#[derive(Default)]
struct ModeTracker {
    segments: Vec<ModeSegment>,
    open: Option<(f64, SamplingModeId)>,
}

impl ModeTracker {
    fn observe(&mut self, t: f64, mode: SamplingModeId) {
        match self.open {
            Some((_, m)) if m == mode => {}
            Some((start, m)) => {
                if t > start {
                    self.segments.push(ModeSegment {
                        t_start: start,
                        t_end: t,
                        mode: m,
                    });
                }
                self.open = Some((t, mode));
            }
            None => self.open = Some((t, mode)),
        }
    }

    fn finish(mut self, t_end: f64) -> Vec<ModeSegment> {
        if let Some((start, m)) = self.open {
            if t_end > start {
                self.segments.push(ModeSegment {
                    t_start: start,
                    t_end,
                    mode: m,
                });
            }
        }
        self.segments
    }
}

/// Plant steps per control period: the configured count, raised so that no
/// step exceeds the configured maximum.
pub fn substep_count(period: f64, cfg: &Config) -> usize {
    let by_cap = (period / cfg.simulation.max_substep - 1e-9).ceil().max(1.0) as usize;
    (cfg.simulation.substeps as usize).max(by_cap)
}

fn control_torque(ctrl: &mut ControllerState, gains: &PidGains, period: f64, error: f64, limit: f64) -> f64 {
    let (u, mut next) = pid_step(gains, period, ctrl, error);
    let applied = u.clamp(0.0, limit);
    next.u_prev = applied;
    *ctrl = next;
    applied
}

struct PlantRun<'a> {
    params: &'a VehicleParams,
    surface: &'a RoadSurface,
    rest_speed: f64,
}

impl PlantRun<'_> {
    /// Integrates one control period under held torque. Returns the distance
    /// covered and whether the rest threshold was reached.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        state: &mut VehicleState,
        t: &mut f64,
        torque: f64,
        period: f64,
        n: usize,
        rec: &mut Recorder,
        mode: TraceMode,
    ) -> Result<(f64, bool), SimError> {
        let dt = period / n as f64;
        let t0 = *t;
        let mut dist = 0.0;
        for k in 0..n {
            rec.record(*t, state, torque, mode, period);
            let next =
                integrate_step(state, torque, dt, self.params, self.surface).map_err(|source| SimError::Blowup {
                    t: *t,
                    source,
                    trace: Box::new(rec.trace.clone()),
                })?;
            dist += 0.5 * dt * (state.v_x() + next.v_x());
            *t = t0 + (k + 1) as f64 * dt;
            *state = next;
            if state.v_x() <= self.rest_speed {
                return Ok((dist, true));
            }
        }
        Ok((dist, false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrakingOutcome {
    pub trace: SimTrace,
    /// Distance covered until rest or the time cap (m).
    pub stopping_distance: f64,
    pub stopped: bool,
    pub duration: f64,
    pub report: BandwidthReport,
    pub segments: Vec<ModeSegment>,
    pub transitions: Vec<TransitionRecord>,
}

fn new_supervisor(cfg: &Config) -> Result<Supervisor, SimError> {
    Ok(Supervisor::new(cfg.guard_table, cfg.modes, cfg.debounce)?)
}

/// Straight-line braking from `v0` until the vehicle stops or the time cap.
pub fn run_braking(sc: &Scenario, cfg: &Config) -> Result<BrakingOutcome, SimError> {
    if sc.kind != ScenarioKind::Braking {
        return Err(SimError::InvalidScenario("run_braking needs a braking scenario".into()));
    }
    if !(sc.v0 > 0.0 && sc.v0.is_finite()) {
        return Err(SimError::InvalidScenario(format!("v0 {} must be positive", sc.v0)));
    }
    if !(sc.lambda_d > 0.0 && sc.lambda_d < 1.0) {
        return Err(SimError::InvalidScenario(format!(
            "lambda_d {} outside (0, 1)",
            sc.lambda_d
        )));
    }
    let surface = cfg.surface(&sc.surface)?.clone();
    let mut sup = match sc.controller {
        ControllerSpec::Multimode => Some(new_supervisor(cfg)?),
        ControllerSpec::Fixed(t) if t > 0.0 && t.is_finite() => None,
        ControllerSpec::Fixed(t) => return Err(SimError::InvalidScenario(format!("period {t} must be positive"))),
    };
    classify_bpp(sc.bpp, &cfg.guard_table.bpp)?;
    let sim = &cfg.simulation;
    let plant = PlantRun {
        params: &cfg.vehicle,
        surface: &surface,
        rest_speed: sim.rest_speed,
    };
    let mut state = VehicleState::from_slip(sc.v0 / 3.6, 0.0, &cfg.vehicle)?;
    let mut ctrl = ControllerState::default();
    let mut rec = Recorder::new(sim.trace_interval);
    let mut tracker = ModeTracker::default();
    let (mut t, mut dist, mut stopped) = (0.0_f64, 0.0_f64, false);
    let (mut torque, mut mode, mut period) = (0.0, TraceMode::Fixed, 0.0);

    while t < sim.time_cap {
        if state.v_x() <= sim.rest_speed {
            stopped = true;
            break;
        }
        (period, mode) = match (&mut sup, sc.controller) {
            (Some(s), _) => {
                s.update(t, state.v_x(), sc.bpp)?;
                tracker.observe(t, s.mode());
                (s.period(), TraceMode::Mode(s.mode()))
            }
            (None, ControllerSpec::Fixed(p)) => (p, TraceMode::Fixed),
            (None, ControllerSpec::Multimode) => unreachable!("multimode always has a supervisor"),
        };
        torque = control_torque(
            &mut ctrl,
            &cfg.gains,
            period,
            sc.lambda_d - state.lambda(),
            sim.max_torque,
        );
        let (d, at_rest) = plant.advance(
            &mut state,
            &mut t,
            torque,
            period,
            substep_count(period, cfg),
            &mut rec,
            mode,
        )?;
        dist += d;
        stopped = at_rest;
        if at_rest {
            break;
        }
    }
    if stopped {
        // Slip is normalized to one at rest.
        let rest = VehicleState::from_speeds(state.v_x(), 0.0, &cfg.vehicle);
        rec.push(t, &rest, torque, mode, period);
    } else {
        rec.push(t, &state, torque, mode, period);
    }
    let segments = tracker.finish(t);
    let report = match sc.controller {
        ControllerSpec::Multimode => bandwidth(&dwell_from_segments(&segments)?, &cfg.modes, cfg.wcet)?,
        ControllerSpec::Fixed(p) => bandwidth_fixed(p, &cfg.modes, cfg.wcet),
    };
    Ok(BrakingOutcome {
        trace: rec.trace,
        stopping_distance: dist,
        stopped,
        duration: t,
        report,
        segments,
        transitions: sup.map(|s| s.log().to_vec()).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CruiseOutcome {
    pub trace: SimTrace,
    pub report: BandwidthReport,
    pub segments: Vec<ModeSegment>,
    pub transitions: Vec<TransitionRecord>,
    /// Distance driven (m).
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSample {
    pub t: f64,
    pub abs_period: f64,
    pub acc_period: Option<f64>,
    pub acc_mode: AccMode,
    pub utilization: f64,
}

pub const UTILIZATION_HEADER: &str = "t,abs_period,acc_period,acc_mode,utilization";

pub fn write_utilization_csv<W: Write>(samples: &[UtilizationSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{UTILIZATION_HEADER}")?;
    for s in samples {
        let acc = s.acc_period.map(|p| format!("{p:.16e}")).unwrap_or_default();
        let mode = match s.acc_mode {
            AccMode::Active => "active",
            AccMode::Suspended => "suspended",
            AccMode::Idle => "idle",
        };
        writeln!(
            out,
            "{:.16e},{:.16e},{},{},{:.16e}",
            s.t, s.abs_period, acc, mode, s.utilization
        )?;
    }
    Ok(())
}

/// Time fractions of the ACC states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccDwell {
    pub active: f64,
    pub suspended: f64,
    pub idle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccReport {
    pub dwell: AccDwell,
    /// Time-averaged ACC utilization.
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccSharedOutcome {
    pub abs: BandwidthReport,
    pub acc: AccReport,
    pub combined: Vec<UtilizationSample>,
    pub combined_mean: f64,
    pub combined_max: f64,
    /// Both controllers at their fastest fixed rates.
    pub baseline: f64,
    pub trace: SimTrace,
    pub segments: Vec<ModeSegment>,
    pub transitions: Vec<TransitionRecord>,
}

struct AccTracker {
    kp: f64,
    ki: f64,
    max_accel: f64,
    integral: f64,
    accel: f64,
    next_release: f64,
}

struct CruiseEngine {
    trace: SimTrace,
    segments: Vec<ModeSegment>,
    transitions: Vec<TransitionRecord>,
    distance: f64,
    acc_time: [f64; 3],
    acc_util_integral: f64,
    combined: Vec<UtilizationSample>,
    combined_integral: f64,
    combined_max: f64,
    duration: f64,
}

fn run_cruise_engine(profile: &DriveProfile, cfg: &Config, with_acc: bool) -> Result<CruiseEngine, SimError> {
    let surfaces: Vec<&RoadSurface> = profile
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            cfg.surface(&r.surface).map_err(|_| {
                SimError::Profile(ProfileError::Row {
                    row: i + 1,
                    reason: format!("unknown surface '{}'", r.surface),
                })
            })
        })
        .collect::<Result<_, _>>()?;
    let sim = &cfg.simulation;
    let mut sup = new_supervisor(cfg)?;
    let policy = cfg.rate_policy();
    let mut acc = AccTracker {
        kp: cfg.acc.kp,
        ki: cfg.acc.ki,
        max_accel: cfg.acc.max_accel,
        integral: 0.0,
        accel: 0.0,
        next_release: f64::NEG_INFINITY,
    };
    let mut rec = Recorder::new(sim.cruise_trace_interval);
    let mut util_rec_next = 0u64;
    let mut tracker = ModeTracker::default();
    let mut out = CruiseEngine {
        trace: SimTrace::default(),
        segments: Vec::new(),
        transitions: Vec::new(),
        distance: 0.0,
        acc_time: [0.0; 3],
        acc_util_integral: 0.0,
        combined: Vec::new(),
        combined_integral: 0.0,
        combined_max: 0.0,
        duration: 0.0,
    };

    let start = profile.start();
    let end = profile.end();
    let mut t = start;
    let mut v = profile.sample(t).v_set_kmh / 3.6;
    let mut state = VehicleState::from_slip(v, 0.0, &cfg.vehicle)?;
    let mut braking = false;
    let mut ctrl = ControllerState::default();

    while t < end {
        let s = profile.sample(t);
        let surface = surfaces[s.row];
        sup.update(t, v, s.bpp)?;
        let mode = sup.mode();
        let period = sup.period();
        tracker.observe(t, mode);

        let acc_state = if with_acc {
            let cat = classify_bpp(s.bpp, &cfg.guard_table.bpp)?;
            let am = acc_mode(cat, cfg.acc.enabled);
            let cs = co_schedule(mode, am, &cfg.modes, &policy).map_err(|source| SimError::Infeasible { t, source })?;
            out.acc_time[am as usize] += period;
            out.acc_util_integral += cs.t_acc.map(|p| policy.wcet_acc / p).unwrap_or(0.0) * period;
            out.combined_integral += cs.utilization * period;
            out.combined_max = out.combined_max.max(cs.utilization);
            let interval = sim.cruise_trace_interval;
            if interval <= 0.0 || t >= util_rec_next as f64 * interval - 1e-12 {
                if interval > 0.0 {
                    util_rec_next = (t / interval + 1e-9).floor() as u64 + 1;
                }
                out.combined.push(UtilizationSample {
                    t,
                    abs_period: cs.t_abs,
                    acc_period: cs.t_acc,
                    acc_mode: am,
                    utilization: cs.utilization,
                });
            }
            Some((am, cs))
        } else {
            None
        };

        let t_next = t + period;
        if s.bpp > 0.0 {
            if !braking {
                braking = true;
                ctrl = ControllerState::default();
                state = VehicleState::from_slip(v, 0.0, &cfg.vehicle)?;
            }
            acc.integral = 0.0;
            if v <= sim.rest_speed {
                v = 0.0;
                state = VehicleState::at_rest();
                rec.record(t, &state, 0.0, TraceMode::Mode(mode), period);
                t = t_next;
            } else {
                let error = sim.lambda_d - state.lambda();
                let limit = (s.bpp * sim.max_torque).min(sim.max_torque);
                let torque = control_torque(&mut ctrl, &cfg.gains, period, error, limit);
                let plant = PlantRun {
                    params: &cfg.vehicle,
                    surface,
                    rest_speed: sim.rest_speed,
                };
                let mut tt = t;
                let (d, _) = plant.advance(
                    &mut state,
                    &mut tt,
                    torque,
                    period,
                    substep_count(period, cfg),
                    &mut rec,
                    TraceMode::Mode(mode),
                )?;
                out.distance += d;
                v = state.v_x();
                if v <= sim.rest_speed {
                    v = 0.0;
                    state = VehicleState::at_rest();
                }
                t = t_next;
            }
        } else {
            braking = false;
            let v_set = s.v_set_kmh / 3.6;
            let accel = match acc_state {
                Some((AccMode::Active, cs)) => {
                    let t_acc = cs.t_acc.expect("active ACC is scheduled");
                    if t >= acc.next_release {
                        let e = v_set - v;
                        let raw = acc.kp * e + acc.ki * acc.integral;
                        if raw.abs() < acc.max_accel {
                            acc.integral += e * t_acc;
                        }
                        acc.accel = (acc.kp * e + acc.ki * acc.integral).clamp(-acc.max_accel, acc.max_accel);
                        acc.next_release = t + t_acc;
                    }
                    acc.accel
                }
                _ => {
                    acc.integral = 0.0;
                    acc.next_release = f64::NEG_INFINITY;
                    ((v_set - v) / sim.cruise_time_constant).clamp(-sim.cruise_max_accel, sim.cruise_max_accel)
                }
            };
            let v_new = (v + accel * period).max(0.0);
            out.distance += 0.5 * period * (v + v_new);
            v = v_new;
            state = VehicleState::from_slip(v, 0.0, &cfg.vehicle)?;
            rec.record(t, &state, 0.0, TraceMode::Mode(mode), period);
            t = t_next;
        }
    }
    out.duration = t - start;
    out.segments = tracker.finish(t);
    out.transitions = sup.log().to_vec();
    out.trace = rec.trace;
    Ok(out)
}

/// Follows a drive profile, stepping the supervisor every control cycle. The
/// plant is simulated while the pedal is pressed; otherwise speed follows
/// the set point kinematically.
pub fn run_cruising(profile: &DriveProfile, cfg: &Config) -> Result<CruiseOutcome, SimError> {
    let e = run_cruise_engine(profile, cfg, false)?;
    let report = bandwidth(&dwell_from_segments(&e.segments)?, &cfg.modes, cfg.wcet)?;
    Ok(CruiseOutcome {
        trace: e.trace,
        report,
        segments: e.segments,
        transitions: e.transitions,
        distance: e.distance,
    })
}

/// ABS and ACC sharing one ECU. ACC tracks the set speed with a PI law while
/// active and the pedal is released; both periods follow the co-schedule.
pub fn run_acc_shared(profile: &DriveProfile, cfg: &Config) -> Result<AccSharedOutcome, SimError> {
    let e = run_cruise_engine(profile, cfg, true)?;
    let abs = bandwidth(&dwell_from_segments(&e.segments)?, &cfg.modes, cfg.wcet)?;
    let total = e.duration;
    let policy = cfg.rate_policy();
    Ok(AccSharedOutcome {
        abs,
        acc: AccReport {
            dwell: AccDwell {
                active: e.acc_time[AccMode::Active as usize] / total,
                suspended: e.acc_time[AccMode::Suspended as usize] / total,
                idle: e.acc_time[AccMode::Idle as usize] / total,
            },
            utilization: e.acc_util_integral / total,
        },
        combined: e.combined,
        combined_mean: e.combined_integral / total,
        combined_max: e.combined_max,
        baseline: policy.wcet_abs / cfg.modes.e + policy.wcet_acc / policy.acc_fast,
        trace: e.trace,
        segments: e.segments,
        transitions: e.transitions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlipMetrics {
    pub rmse: f64,
    pub variance: f64,
    pub max_overshoot: f64,
    pub samples: usize,
}

/// Slip statistics over samples above `v_floor` (m/s).
pub fn slip_metrics(trace: &SimTrace, lambda_d: f64, v_floor: f64) -> SlipMetrics {
    slip_metrics_after(trace, lambda_d, v_floor, f64::NEG_INFINITY)
}

/// As [`slip_metrics`], restricted to samples at or after `t_from`.
pub fn slip_metrics_after(trace: &SimTrace, lambda_d: f64, v_floor: f64, t_from: f64) -> SlipMetrics {
    let xs: Vec<f64> = trace
        .records
        .iter()
        .filter(|r| r.v_x > v_floor && r.t >= t_from)
        .map(|r| r.lambda)
        .collect();
    if xs.is_empty() {
        return SlipMetrics::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    SlipMetrics {
        rmse: (xs.iter().map(|x| (x - lambda_d).powi(2)).sum::<f64>() / n).sqrt(),
        variance: xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n,
        max_overshoot: xs.iter().map(|x| x - lambda_d).fold(0.0, f64::max),
        samples: xs.len(),
    }
}

/// Smallest and largest slip over samples at or after `t_from` and above `v_floor`.
pub fn slip_band(trace: &SimTrace, v_floor: f64, t_from: f64) -> Option<(f64, f64)> {
    trace
        .records
        .iter()
        .filter(|r| r.v_x > v_floor && r.t >= t_from)
        .fold(None, |acc, r| match acc {
            None => Some((r.lambda, r.lambda)),
            Some((lo, hi)) => Some((lo.min(r.lambda), hi.max(r.lambda))),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub stopping_distance: f64,
    pub stopped: bool,
    pub slip: SlipMetrics,
    pub bandwidth: BandwidthReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub label: String,
    pub result: Option<VariantResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub a: String,
    pub b: String,
    /// `(d_b - d_a) / d_a` of stopping distance.
    pub distance_rel_diff: f64,
    pub savings_diff: f64,
    pub variance_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: Scenario,
    pub variants: Vec<VariantEntry>,
    pub pairwise: Vec<PairDiff>,
}

/// Runs one braking scenario under each controller variant. Failed variants
/// are kept with their error and excluded from the pairwise table.
pub fn compare(scenario: &Scenario, variants: &[ControllerSpec], cfg: &Config) -> Result<Comparison, SimError> {
    if variants.len() < 2 {
        return Err(SimError::InvalidScenario(format!(
            "comparison needs at least two variants, got {}",
            variants.len()
        )));
    }
    if scenario.kind != ScenarioKind::Braking {
        return Err(SimError::InvalidScenario("comparison runs braking scenarios".into()));
    }
    let entries: Vec<VariantEntry> = variants
        .par_iter()
        .map(|&controller| {
            let sc = Scenario {
                controller,
                ..scenario.clone()
            };
            let label = controller.to_string();
            match run_braking(&sc, cfg) {
                Ok(o) => VariantEntry {
                    label,
                    result: Some(VariantResult {
                        stopping_distance: o.stopping_distance,
                        stopped: o.stopped,
                        slip: slip_metrics(&o.trace, sc.lambda_d, cfg.simulation.slip_floor),
                        bandwidth: o.report,
                    }),
                    error: None,
                },
                Err(e) => VariantEntry {
                    label,
                    result: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut pairwise = Vec::new();
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            if let (Some(ra), Some(rb)) = (&a.result, &b.result) {
                pairwise.push(PairDiff {
                    a: a.label.clone(),
                    b: b.label.clone(),
                    distance_rel_diff: (rb.stopping_distance - ra.stopping_distance) / ra.stopping_distance,
                    savings_diff: rb.bandwidth.savings - ra.bandwidth.savings,
                    variance_diff: rb.slip.variance - ra.slip.variance,
                });
            }
        }
    }
    Ok(Comparison {
        scenario: scenario.clone(),
        variants: entries,
        pairwise,
    })
}

/// Stopping distances of full-pedal stops on every configured surface, under
/// the multimode and the fastest fixed-period controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrakingTableRow {
    pub surface: String,
    pub multimode: f64,
    pub fixed: f64,
    pub relative_gap: f64,
    pub savings: f64,
}

pub fn braking_table(v0: f64, cfg: &Config) -> Result<Vec<BrakingTableRow>, SimError> {
    cfg.surfaces
        .par_iter()
        .map(|s| {
            let mm = run_braking(
                &Scenario::panic_braking(v0, &s.name, ControllerSpec::Multimode, cfg),
                cfg,
            )?;
            let fx = run_braking(
                &Scenario::panic_braking(v0, &s.name, ControllerSpec::Fixed(cfg.modes.e), cfg),
                cfg,
            )?;
            if !(mm.stopped && fx.stopped) {
                return Err(SimError::InvalidScenario(format!(
                    "no stop on {} within the time cap",
                    s.name
                )));
            }
            Ok(BrakingTableRow {
                surface: s.name.clone(),
                multimode: mm.stopping_distance,
                fixed: fx.stopping_distance,
                relative_gap: (mm.stopping_distance - fx.stopping_distance).abs() / fx.stopping_distance,
                savings: mm.report.savings,
            })
        })
        .collect()
}

/// Closed-loop acceptance used to screen calibration candidates: every
/// multimode stop stays within `max_relative_gap` of the fixed fast-period
/// stop, and distances grow as friction falls.
pub fn braking_screen(gains: &PidGains, cfg: &Config) -> bool {
    let cfg = Config {
        gains: *gains,
        ..cfg.clone()
    };
    let Ok(rows) = braking_table(cfg.reproduce.table1_v0, &cfg) else {
        return false;
    };
    let mut by_grip: Vec<(f64, f64)> = rows
        .iter()
        .zip(&cfg.surfaces)
        .map(|(r, s)| (s.alpha, r.multimode))
        .collect();
    by_grip.sort_by(|a, b| b.0.total_cmp(&a.0));
    rows.iter().all(|r| r.relative_gap <= cfg.reproduce.max_relative_gap) && by_grip.windows(2).all(|w| w[0].1 < w[1].1)
}
