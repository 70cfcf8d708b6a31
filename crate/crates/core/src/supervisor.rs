//! Three-mode supervisory automaton choosing the braking loop's sampling period.
//!
//! Modes, slowest first: `N0` (normal), `N1` (intermediate), `E` (emergency).
//! Switching to a faster mode is immediate; switching to a slower one needs
//! its guard to hold for `K` consecutive calls. Guards read speed in km/h.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisorError {
    #[error("brake pedal pressure {0} outside [0, 1]")]
    PedalDomain(f64),
    #[error("speed {0} km/h must be finite and non-negative")]
    SpeedDomain(f64),
    #[error("debounce length must be at least 1")]
    ZeroDebounce,
    #[error("invalid mode periods: {0}")]
    InvalidPeriods(String),
    #[error("invalid guard table: {0}")]
    InvalidGuardTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SamplingModeId {
    N0,
    N1,
    E,
}

impl SamplingModeId {
    pub const ALL: [SamplingModeId; 3] = [SamplingModeId::N0, SamplingModeId::N1, SamplingModeId::E];

    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingModeId::N0 => "N0",
            SamplingModeId::N1 => "N1",
            SamplingModeId::E => "E",
        }
    }
}

impl fmt::Display for SamplingModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sampling period of each mode (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePeriods {
    pub n0: f64,
    pub n1: f64,
    pub e: f64,
}

impl Default for ModePeriods {
    fn default() -> Self {
        Self {
            n0: 2.0e-4,
            n1: 1.5e-4,
            e: 1.0e-4,
        }
    }
}

impl ModePeriods {
    pub fn validate(&self) -> Result<(), SupervisorError> {
        if !(self.e > 0.0 && self.e.is_finite() && self.n0.is_finite()) {
            return Err(SupervisorError::InvalidPeriods(format!("{self:?}")));
        }
        if !(self.n0 > self.n1 && self.n1 > self.e) {
            return Err(SupervisorError::InvalidPeriods(format!(
                "need N0 > N1 > E, got {} / {} / {}",
                self.n0, self.n1, self.e
            )));
        }
        Ok(())
    }

    pub fn period(&self, mode: SamplingModeId) -> f64 {
        match mode {
            SamplingModeId::N0 => self.n0,
            SamplingModeId::N1 => self.n1,
            SamplingModeId::E => self.e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BppCategory {
    Low,
    Mild,
    Medium,
    High,
}

impl BppCategory {
    pub const ALL: [BppCategory; 4] = [
        BppCategory::Low,
        BppCategory::Mild,
        BppCategory::Medium,
        BppCategory::High,
    ];
}

/// Lower edges of the `mild`, `medium` and `high` pedal categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BppCutpoints {
    pub mild: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for BppCutpoints {
    fn default() -> Self {
        Self {
            mild: 0.25,
            medium: 0.5,
            high: 0.75,
        }
    }
}

/// Speed breakpoints (km/h) for switching up and the lower ones for switching down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardTable {
    pub v1: f64,
    pub v2: f64,
    pub v1_down: f64,
    pub v2_down: f64,
    pub bpp: BppCutpoints,
}

impl Default for GuardTable {
    fn default() -> Self {
        Self {
            v1: 85.0,
            v2: 140.0,
            v1_down: 80.0,
            v2_down: 135.0,
            bpp: BppCutpoints::default(),
        }
    }
}

impl GuardTable {
    pub fn validate(&self) -> Result<(), SupervisorError> {
        let GuardTable {
            v1,
            v2,
            v1_down,
            v2_down,
            bpp,
        } = *self;
        if !(0.0 < v1_down && v1_down < v1 && v1 < v2 && v2_down < v2 && v1 < v2_down) {
            return Err(SupervisorError::InvalidGuardTable(format!(
                "need 0 < v1' < v1 < v2' < v2, got v1 = {v1}, v2 = {v2}, v1' = {v1_down}, v2' = {v2_down}"
            )));
        }
        if !(0.0 < bpp.mild && bpp.mild < bpp.medium && bpp.medium < bpp.high && bpp.high <= 1.0) {
            return Err(SupervisorError::InvalidGuardTable(format!(
                "pedal cutpoints must increase inside (0, 1]: {bpp:?}"
            )));
        }
        Ok(())
    }
}

pub fn classify_bpp(p: f64, cut: &BppCutpoints) -> Result<BppCategory, SupervisorError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SupervisorError::PedalDomain(p));
    }
    Ok(if p < cut.mild {
        BppCategory::Low
    } else if p < cut.medium {
        BppCategory::Mild
    } else if p < cut.high {
        BppCategory::Medium
    } else {
        BppCategory::High
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Guard {
    #[serde(rename = "tau_n0")]
    TauN0,
    #[serde(rename = "tau_n0_down")]
    TauN0Down,
    #[serde(rename = "tau_n1")]
    TauN1,
    #[serde(rename = "tau_n1_down")]
    TauN1Down,
    #[serde(rename = "tau_e")]
    TauE,
}

impl Guard {
    pub const ALL: [Guard; 5] = [
        Guard::TauN0,
        Guard::TauN0Down,
        Guard::TauN1,
        Guard::TauN1Down,
        Guard::TauE,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Guard::TauN0 => "tau_n0",
            Guard::TauN0Down => "tau_n0_down",
            Guard::TauN1 => "tau_n1",
            Guard::TauN1Down => "tau_n1_down",
            Guard::TauE => "tau_e",
        }
    }

    fn bit(&self) -> u8 {
        1 << (*self as u8)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GuardSet(u8);

impl GuardSet {
    pub fn contains(&self, g: Guard) -> bool {
        self.0 & g.bit() != 0
    }

    fn insert(&mut self, g: Guard) {
        self.0 |= g.bit();
    }

    pub fn iter(&self) -> impl Iterator<Item = Guard> + '_ {
        Guard::ALL.into_iter().filter(|g| self.contains(*g))
    }

    pub fn from_guards(guards: &[Guard]) -> Self {
        let mut s = Self::default();
        for g in guards {
            s.insert(*g);
        }
        s
    }
}

/// Evaluates the five switching predicates. Speed intervals are half-open
/// `[lo, hi)` and the top band is `[hi, inf)`.
pub fn guards(v_kmh: f64, bpp: BppCategory, table: &GuardTable) -> GuardSet {
    use BppCategory::*;
    let low_mild = matches!(bpp, Low | Mild);
    let up_to_medium = matches!(bpp, Low | Mild | Medium);
    let medium_high = matches!(bpp, Medium | High);
    let high = bpp == High;

    let band = |v1: f64, v2: f64| {
        if v_kmh < v1 {
            0
        } else if v_kmh < v2 {
            1
        } else {
            2
        }
    };
    let up = band(table.v1, table.v2);
    let down = band(table.v1_down, table.v2_down);

    let mut set = GuardSet::default();
    let n0 = |b: i32| (b == 0 && up_to_medium) || (b == 1 && low_mild);
    let n1 = |b: i32| (b == 0 && high) || (b == 1 && medium_high) || (b == 2 && low_mild);
    if n0(up) {
        set.insert(Guard::TauN0);
    }
    if n0(down) {
        set.insert(Guard::TauN0Down);
    }
    if n1(up) {
        set.insert(Guard::TauN1);
    }
    if n1(down) {
        set.insert(Guard::TauN1Down);
    }
    if up == 2 && medium_high {
        set.insert(Guard::TauE);
    }
    set
}

/// Automaton state with the debounce bookkeeping for slow-down transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisorState {
    pub mode: SamplingModeId,
    pub pending: Option<SamplingModeId>,
    pub streak: u32,
}

impl Default for SupervisorState {
    fn default() -> Self {
        Self::new(SamplingModeId::N0)
    }
}

impl SupervisorState {
    pub fn new(mode: SamplingModeId) -> Self {
        Self {
            mode,
            pending: None,
            streak: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: SamplingModeId,
    pub to: SamplingModeId,
    pub trigger: Guard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: SupervisorState,
    pub transition: Option<Transition>,
}

/// One automaton step on an already-categorized pedal input.
pub fn step_category(
    st: &SupervisorState,
    v_kmh: f64,
    bpp: BppCategory,
    table: &GuardTable,
    k: u32,
) -> Result<StepOutcome, SupervisorError> {
    if k == 0 {
        return Err(SupervisorError::ZeroDebounce);
    }
    if !(v_kmh >= 0.0 && v_kmh.is_finite()) {
        return Err(SupervisorError::SpeedDomain(v_kmh));
    }
    use SamplingModeId::*;
    let g = guards(v_kmh, bpp, table);
    let jump = |to, trigger| StepOutcome {
        state: SupervisorState::new(to),
        transition: Some(Transition {
            from: st.mode,
            to,
            trigger,
        }),
    };
    let stay = StepOutcome {
        state: SupervisorState::new(st.mode),
        transition: None,
    };
    let debounced = |to: SamplingModeId, trigger: Guard| {
        let streak = if st.pending == Some(to) { st.streak + 1 } else { 1 };
        if streak >= k {
            jump(to, trigger)
        } else {
            StepOutcome {
                state: SupervisorState {
                    mode: st.mode,
                    pending: Some(to),
                    streak,
                },
                transition: None,
            }
        }
    };
    Ok(match st.mode {
        N0 if g.contains(Guard::TauE) => jump(E, Guard::TauE),
        N0 if g.contains(Guard::TauN1) => jump(N1, Guard::TauN1),
        N0 => stay,
        N1 if g.contains(Guard::TauE) => jump(E, Guard::TauE),
        N1 if g.contains(Guard::TauN0Down) => debounced(N0, Guard::TauN0Down),
        N1 => stay,
        E if g.contains(Guard::TauN1Down) => debounced(N1, Guard::TauN1Down),
        E => stay,
    })
}

/// One automaton step on a raw pedal pressure in `[0, 1]`.
pub fn step(
    st: &SupervisorState,
    v_kmh: f64,
    bpp_raw: f64,
    table: &GuardTable,
    k: u32,
) -> Result<StepOutcome, SupervisorError> {
    let bpp = classify_bpp(bpp_raw, &table.bpp)?;
    step_category(st, v_kmh, bpp, table, k)
}

pub fn period(st: &SupervisorState, periods: &ModePeriods) -> f64 {
    periods.period(st.mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub t: f64,
    pub v_kmh: f64,
    pub bpp: f64,
    pub from: SamplingModeId,
    pub to: SamplingModeId,
    pub trigger: Guard,
}

pub const TRANSITION_LOG_HEADER: &str = "t,v_kmh,bpp,from,to,trigger";

pub fn write_transition_log<W: Write>(records: &[TransitionRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRANSITION_LOG_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{},{},{}",
            r.t, r.v_kmh, r.bpp, r.from, r.to, r.trigger
        )?;
    }
    Ok(())
}

/// Stateful wrapper taking simulation units (m/s) and keeping a transition log.
#[derive(Debug, Clone)]
pub struct Supervisor {
    state: SupervisorState,
    table: GuardTable,
    periods: ModePeriods,
    debounce: u32,
    log: Vec<TransitionRecord>,
}

impl Supervisor {
    pub fn new(table: GuardTable, periods: ModePeriods, debounce: u32) -> Result<Self, SupervisorError> {
        table.validate()?;
        periods.validate()?;
        if debounce == 0 {
            return Err(SupervisorError::ZeroDebounce);
        }
        Ok(Self {
            state: SupervisorState::default(),
            table,
            periods,
            debounce,
            log: Vec::new(),
        })
    }

    pub fn with_initial_mode(mut self, mode: SamplingModeId) -> Self {
        self.state = SupervisorState::new(mode);
        self
    }

    pub fn state(&self) -> SupervisorState {
        self.state
    }

    pub fn mode(&self) -> SamplingModeId {
        self.state.mode
    }

    pub fn period(&self) -> f64 {
        period(&self.state, &self.periods)
    }

    pub fn periods(&self) -> &ModePeriods {
        &self.periods
    }

    /// Steps once at time `t` with speed in m/s; returns the transition, if any.
    pub fn update(&mut self, t: f64, v_mps: f64, bpp_raw: f64) -> Result<Option<Transition>, SupervisorError> {
        let v_kmh = v_mps.max(0.0) * 3.6;
        let out = step(&self.state, v_kmh, bpp_raw, &self.table, self.debounce)?;
        self.state = out.state;
        if let Some(tr) = out.transition {
            self.log.push(TransitionRecord {
                t,
                v_kmh,
                bpp: bpp_raw,
                from: tr.from,
                to: tr.to,
                trigger: tr.trigger,
            });
        }
        Ok(out.transition)
    }

    pub fn log(&self) -> &[TransitionRecord] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BppCategory::*;
    use Guard::*;

    fn set(v: f64, b: BppCategory) -> Vec<Guard> {
        guards(v, b, &GuardTable::default()).iter().collect()
    }

    #[test]
    fn bpp_boundaries() {
        let c = BppCutpoints::default();
        assert_eq!(classify_bpp(0.0, &c).unwrap(), Low);
        assert_eq!(classify_bpp(0.75, &c).unwrap(), High);
        assert_eq!(classify_bpp(0.49, &c).unwrap(), Mild);
        assert_eq!(classify_bpp(1.0, &c).unwrap(), High);
        assert!(classify_bpp(1.01, &c).is_err());
    }

    #[test]
    fn guard_worked_examples() {
        assert_eq!(set(90.0, Mild), vec![TauN0, TauN0Down]);
        assert_eq!(set(50.0, High), vec![TauN1, TauN1Down]);
        assert_eq!(set(150.0, High), vec![TauE]);
        // In the hysteresis band the downward N0 guard is off; the downward N1
        // guard's middle arm (speed in [80, 135), medium) is on.
        assert_eq!(set(82.0, Medium), vec![TauN0, TauN1Down]);
    }

    #[test]
    fn step_worked_examples() {
        let t = GuardTable::default();
        let n0 = SupervisorState::new(SamplingModeId::N0);
        assert_eq!(step(&n0, 50.0, 0.9, &t, 3).unwrap().state.mode, SamplingModeId::N1);
        let out = step(&n0, 150.0, 0.8, &t, 3).unwrap();
        assert_eq!(out.state.mode, SamplingModeId::E);
        assert_eq!(out.transition.unwrap().trigger, TauE);

        let mut e = SupervisorState::new(SamplingModeId::E);
        for i in 0..3 {
            e = step(&e, 137.0, 0.1, &t, 3).unwrap().state;
            let expected = if i < 2 { SamplingModeId::E } else { SamplingModeId::N1 };
            assert_eq!(e.mode, expected);
        }

        let n1 = SupervisorState::new(SamplingModeId::N1);
        let mut s = n1;
        for _ in 0..10 {
            s = step(&s, 82.0, 0.6, &t, 3).unwrap().state;
        }
        assert_eq!(s.mode, SamplingModeId::N1);
    }

    #[test]
    fn broken_streak_restarts() {
        let t = GuardTable::default();
        let mut s = SupervisorState::new(SamplingModeId::N1);
        s = step(&s, 50.0, 0.1, &t, 3).unwrap().state;
        s = step(&s, 50.0, 0.1, &t, 3).unwrap().state;
        assert_eq!(s.streak, 2);
        s = step(&s, 50.0, 0.9, &t, 3).unwrap().state;
        assert_eq!((s.pending, s.streak), (None, 0));
        s = step(&s, 50.0, 0.1, &t, 3).unwrap().state;
        assert_eq!(s.mode, SamplingModeId::N1);
    }

    #[test]
    fn periods_lookup() {
        let p = ModePeriods::default();
        assert_eq!(period(&SupervisorState::new(SamplingModeId::N0), &p), 2.0e-4);
        assert_eq!(period(&SupervisorState::new(SamplingModeId::N1), &p), 1.5e-4);
        assert_eq!(period(&SupervisorState::new(SamplingModeId::E), &p), 1.0e-4);
        assert!(ModePeriods {
            n0: 1e-4,
            n1: 1.5e-4,
            e: 1e-4
        }
        .validate()
        .is_err());
    }
}
