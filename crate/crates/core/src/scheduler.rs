//! ECU bandwidth accounting, ABS/ACC co-scheduling and static cyclic tables.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::supervisor::{BppCategory, ModePeriods, SamplingModeId};

/// Resolution of the cyclic table (s).
pub const BASE_TICK: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("mode trace is empty")]
    EmptyTrace,
    #[error("mode trace not strictly increasing at entry {0}")]
    UnsortedTrace(usize),
    #[error("dwell fractions sum to {0}, expected 1")]
    DwellSum(f64),
    #[error("task '{name}': need 0 < wcet <= period, got wcet {wcet}, period {period}")]
    InvalidTask { name: String, wcet: f64, period: f64 },
    #[error("task '{name}': period {period} s is not a multiple of the 10 us base tick")]
    NonRepresentable { name: String, period: f64 },
    #[error("utilization {0} exceeds 1")]
    Overutilized(f64),
    #[error("demand {demand} s exceeds window [{t_start}, {t_start} + {window}) s")]
    InfeasibleWindow { t_start: f64, demand: f64, window: f64 },
    #[error("job of '{name}' released at {release} s misses its deadline")]
    DeadlineMiss { name: String, release: f64 },
}

/// Fraction of scenario time spent in each mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DwellFractions {
    #[serde(rename = "N0")]
    pub n0: f64,
    #[serde(rename = "N1")]
    pub n1: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

impl DwellFractions {
    pub fn only(mode: SamplingModeId) -> Self {
        let mut d = Self::default();
        *d.get_mut(mode) = 1.0;
        d
    }

    pub fn get(&self, mode: SamplingModeId) -> f64 {
        match mode {
            SamplingModeId::N0 => self.n0,
            SamplingModeId::N1 => self.n1,
            SamplingModeId::E => self.e,
        }
    }

    fn get_mut(&mut self, mode: SamplingModeId) -> &mut f64 {
        match mode {
            SamplingModeId::N0 => &mut self.n0,
            SamplingModeId::N1 => &mut self.n1,
            SamplingModeId::E => &mut self.e,
        }
    }

    pub fn sum(&self) -> f64 {
        self.n0 + self.n1 + self.e
    }
}

/// Half-open interval `[t_start, t_end)` spent in one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub mode: SamplingModeId,
}

pub const DWELL_TRACE_HEADER: &str = "t_start,t_end,mode";

pub fn write_dwell_trace<W: Write>(segments: &[ModeSegment], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DWELL_TRACE_HEADER}")?;
    for s in segments {
        writeln!(out, "{:.16e},{:.16e},{}", s.t_start, s.t_end, s.mode)?;
    }
    Ok(())
}

/// Dwell fractions of a piecewise-constant mode signal given as
/// `(timestamp, mode)` change points; the last mode lasts until `t_end`.
pub fn dwell_stats(trace: &[(f64, SamplingModeId)], t_end: f64) -> Result<DwellFractions, SchedulerError> {
    if trace.is_empty() {
        return Err(SchedulerError::EmptyTrace);
    }
    for (i, w) in trace.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(SchedulerError::UnsortedTrace(i + 1));
        }
    }
    let last = trace[trace.len() - 1].0;
    if !(t_end > last) {
        return Err(SchedulerError::UnsortedTrace(trace.len()));
    }
    let segments: Vec<ModeSegment> = trace
        .iter()
        .enumerate()
        .map(|(i, &(t, mode))| ModeSegment {
            t_start: t,
            t_end: trace.get(i + 1).map(|n| n.0).unwrap_or(t_end),
            mode,
        })
        .collect();
    dwell_from_segments(&segments)
}

pub fn dwell_from_segments(segments: &[ModeSegment]) -> Result<DwellFractions, SchedulerError> {
    if segments.is_empty() {
        return Err(SchedulerError::EmptyTrace);
    }
    let mut d = DwellFractions::default();
    let mut total = 0.0;
    for (i, s) in segments.iter().enumerate() {
        if !(s.t_end > s.t_start) || (i > 0 && s.t_start < segments[i - 1].t_end) {
            return Err(SchedulerError::UnsortedTrace(i));
        }
        let len = s.t_end - s.t_start;
        *d.get_mut(s.mode) += len;
        total += len;
    }
    for m in SamplingModeId::ALL {
        *d.get_mut(m) /= total;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub dwell: DwellFractions,
    pub utilization: f64,
    pub baseline_utilization: f64,
    pub savings: f64,
}

/// Dwell-weighted utilization against the all-emergency-mode baseline.
/// The savings figure depends only on dwell and period ratios.
pub fn bandwidth(dwell: &DwellFractions, periods: &ModePeriods, wcet: f64) -> Result<BandwidthReport, SchedulerError> {
    let sum = dwell.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SchedulerError::DwellSum(sum));
    }
    let utilization: f64 = SamplingModeId::ALL
        .iter()
        .map(|&m| dwell.get(m) * wcet / periods.period(m))
        .sum();
    let savings = 1.0
        - SamplingModeId::ALL
            .iter()
            .map(|&m| dwell.get(m) * periods.e / periods.period(m))
            .sum::<f64>();
    Ok(BandwidthReport {
        dwell: *dwell,
        utilization,
        baseline_utilization: wcet / periods.e,
        savings,
    })
}

/// Report of a run pinned to one fixed period: no savings by definition when
/// the period equals the emergency period.
pub fn bandwidth_fixed(period: f64, periods: &ModePeriods, wcet: f64) -> BandwidthReport {
    let dwell = if period == periods.n0 {
        DwellFractions::only(SamplingModeId::N0)
    } else if period == periods.n1 {
        DwellFractions::only(SamplingModeId::N1)
    } else {
        DwellFractions::only(SamplingModeId::E)
    };
    BandwidthReport {
        dwell,
        utilization: wcet / period,
        baseline_utilization: wcet / periods.e,
        savings: 1.0 - periods.e / period,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccMode {
    Active,
    Suspended,
    Idle,
}

pub fn acc_mode(bpp: BppCategory, feature_on: bool) -> AccMode {
    if !feature_on {
        AccMode::Idle
    } else if bpp == BppCategory::High {
        AccMode::Suspended
    } else {
        AccMode::Active
    }
}

/// ACC periods and the per-job cost of both controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePolicy {
    pub acc_fast: f64,
    pub acc_slow: f64,
    pub wcet_abs: f64,
    pub wcet_acc: f64,
}

impl Default for RatePolicy {
    fn default() -> Self {
        Self {
            acc_fast: 5e-4,
            acc_slow: 2e-3,
            wcet_abs: 2e-5,
            wcet_acc: 2e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoSchedule {
    pub t_abs: f64,
    /// `None` while ACC is idle.
    pub t_acc: Option<f64>,
    pub utilization: f64,
}

/// Periods for the two controllers sharing one ECU. ABS always runs at the
/// period its supervisor demands; only the ACC rate follows the ACC state.
pub fn co_schedule(
    abs_mode: SamplingModeId,
    acc: AccMode,
    periods: &ModePeriods,
    policy: &RatePolicy,
) -> Result<CoSchedule, SchedulerError> {
    let t_abs = periods.period(abs_mode);
    let t_acc = match acc {
        AccMode::Active => Some(policy.acc_fast),
        AccMode::Suspended => Some(policy.acc_slow),
        AccMode::Idle => None,
    };
    let utilization = policy.wcet_abs / t_abs + t_acc.map(|t| policy.wcet_acc / t).unwrap_or(0.0);
    if utilization > 1.0 {
        return Err(SchedulerError::Overutilized(utilization));
    }
    Ok(CoSchedule {
        t_abs,
        t_acc,
        utilization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTask {
    pub name: String,
    pub period: f64,
    pub wcet: f64,
}

impl ControlTask {
    pub fn new(name: impl Into<String>, period: f64, wcet: f64) -> Result<Self, SchedulerError> {
        let name = name.into();
        if !(wcet > 0.0 && wcet <= period && period.is_finite()) {
            return Err(SchedulerError::InvalidTask { name, wcet, period });
        }
        Ok(Self { name, period, wcet })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    /// Release time within the hyperperiod (s).
    pub release: f64,
    /// Non-preemptive start time (s).
    pub start: f64,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclicSchedule {
    pub hyperperiod: f64,
    pub slots: Vec<Slot>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn to_ticks(task: &ControlTask) -> Result<u64, SchedulerError> {
    let ticks = (task.period / BASE_TICK).round();
    if ticks < 1.0 || (ticks * BASE_TICK - task.period).abs() > 1e-9 * task.period {
        return Err(SchedulerError::NonRepresentable {
            name: task.name.clone(),
            period: task.period,
        });
    }
    Ok(ticks as u64)
}

/// Static table over one hyperperiod. Releases sit at multiples of each
/// period; same-tick releases run shortest period first. Feasibility requires
/// that no window `[t, t + P_min)` carries more demand than its length and
/// that every job finishes before its next release.
pub fn cyclic_schedule(tasks: &[ControlTask]) -> Result<CyclicSchedule, SchedulerError> {
    if tasks.is_empty() {
        return Ok(CyclicSchedule {
            hyperperiod: 0.0,
            slots: Vec::new(),
        });
    }
    for t in tasks {
        ControlTask::new(t.name.clone(), t.period, t.wcet)?;
    }
    let utilization: f64 = tasks.iter().map(|t| t.wcet / t.period).sum();
    if utilization > 1.0 + 1e-12 {
        return Err(SchedulerError::Overutilized(utilization));
    }
    let ticks: Vec<u64> = tasks.iter().map(to_ticks).collect::<Result<_, _>>()?;
    let hyper = ticks.iter().fold(1u64, |acc, &p| acc / gcd(acc, p) * p);

    // (release tick, period tick, task index)
    let mut jobs: Vec<(u64, u64, usize)> = Vec::new();
    for (i, &p) in ticks.iter().enumerate() {
        let mut r = 0;
        while r < hyper {
            jobs.push((r, p, i));
            r += p;
        }
    }
    jobs.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(tasks[a.2].name.cmp(&tasks[b.2].name))
    });

    let p_min = *ticks.iter().min().unwrap();
    let window = p_min as f64 * BASE_TICK;
    for t0 in 0..hyper {
        let demand: f64 = jobs
            .iter()
            .filter(|(r, _, _)| (r + hyper - t0) % hyper < p_min)
            .map(|&(_, _, i)| tasks[i].wcet)
            .sum();
        if demand > window + 1e-15 {
            return Err(SchedulerError::InfeasibleWindow {
                t_start: t0 as f64 * BASE_TICK,
                demand,
                window,
            });
        }
    }

    let mut slots = Vec::with_capacity(jobs.len());
    let mut finish = 0.0_f64;
    for &(r, p, i) in &jobs {
        let release = r as f64 * BASE_TICK;
        let start = finish.max(release);
        finish = start + tasks[i].wcet;
        if finish > (r + p) as f64 * BASE_TICK + 1e-15 {
            return Err(SchedulerError::DeadlineMiss {
                name: tasks[i].name.clone(),
                release,
            });
        }
        slots.push(Slot {
            release,
            start,
            task: tasks[i].name.clone(),
        });
    }
    Ok(CyclicSchedule {
        hyperperiod: hyper as f64 * BASE_TICK,
        slots,
    })
}
