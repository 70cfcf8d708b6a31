//! Closed-loop assembly and z-plane stability analysis.
//!
//! The braking loop closes a velocity-form PID around the discretized affine
//! plant. The augmented state is `[V_x, lambda, u_prev, e_prev, e_prev2]`.
//! Because the speed row of the plant has neither self-feedback nor direct
//! input, the loop always carries one simple pole at `z = 1`; stable regions
//! are therefore judged by `max |p| <= 1 + SURFACE_EPS`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::{
    characteristic_polynomial, euler_discretize_ss, polish_roots, poly_roots, zoh_discretize_ss, ContinuousStateSpace,
    DifferenceFilter, DiscreteStateSpace, DiscreteTf, DiscretizationError, PidGains, ROOT_TOL,
};
use crate::plant::{linearize, LinearizationBackend, LinearizedPlant, PlantError, RoadSurface, VehicleParams};

/// Unit-circle tolerance for classification and region predicates.
pub const SURFACE_EPS: f64 = 1e-9;
/// Distance under which two poles count as one repeated pole.
pub const REPEATED_POLE_TOL: f64 = 1e-6;

/// Forward-difference verdict of the unstable second-order example
/// `(s + 0.5) / (2 s^2 - 0.5 s + 1)` at `T = 1 s`, kept with its reason because
/// a stable verdict for this case is sometimes quoted and cannot be reproduced.
pub const UNSTABLE_EXAMPLE_NOTE: &str = "(s + 0.5)/(2 s^2 - 0.5 s + 1) at T = 1 s is unstable under both \
backends: forward Euler gives |p|^2 = 1.75, and the continuous poles lie in the right half plane so the \
exact hold maps them outside the unit circle. A stable verdict for this case is not reproducible.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error("no stable period in [{lo}, {hi}] s: max |p| = {max_pole} at T = {lo}")]
    NoStablePeriod { lo: f64, hi: f64, max_pole: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no candidate gains satisfy the calibration constraints ({0} tried)")]
    NoFeasibleGains(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Asymptotic,
    Marginal,
    Unstable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub class: StabilityClass,
    pub max_pole_magnitude: f64,
    pub poles: Vec<Complex64>,
}

impl StabilityVerdict {
    pub fn is_stable(&self) -> bool {
        self.class != StabilityClass::Unstable
    }
}

/// Unit-circle classification. A repeated pole on the circle is unstable.
pub fn classify(poles: &[Complex64], eps: f64) -> StabilityVerdict {
    let max = poles.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let class = if max > 1.0 + eps {
        StabilityClass::Unstable
    } else if max < 1.0 - eps {
        StabilityClass::Asymptotic
    } else {
        let on_circle: Vec<&Complex64> = poles.iter().filter(|p| (p.norm() - 1.0).abs() <= eps).collect();
        let repeated = on_circle.iter().enumerate().any(|(i, p)| {
            on_circle[i + 1..]
                .iter()
                .any(|q| (**p - **q).norm() <= REPEATED_POLE_TOL)
        });
        if repeated {
            StabilityClass::Unstable
        } else {
            StabilityClass::Marginal
        }
    };
    StabilityVerdict {
        class,
        max_pole_magnitude: max,
        poles: poles.to_vec(),
    }
}

/// Verdict for the poles of a transfer function.
pub fn tf_verdict(tf: &DiscreteTf, eps: f64) -> Result<StabilityVerdict, StabilityError> {
    Ok(classify(&tf.poles()?, eps))
}

/// First `n` samples of the response to a unit impulse.
pub fn impulse_response(tf: &DiscreteTf, n: usize) -> Vec<f64> {
    let mut filter = DifferenceFilter::new(tf.clone());
    (0..n).map(|k| filter.step(if k == 0 { 1.0 } else { 0.0 })).collect()
}

/// Continuous-to-discrete map used for the plant inside the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationMethod {
    Euler,
    #[default]
    Zoh,
}

/// Closes the PID loop around a discretized plant.
///
/// The returned system has input `lambda_d`, output `lambda`, and its affine
/// vector carries the plant drive term; the homogeneous part is independent
/// of both.
pub fn closed_loop_discrete(
    plant: &DiscreteStateSpace,
    op_v: f64,
    gains: &PidGains,
) -> Result<DiscreteStateSpace, StabilityError> {
    let n = plant.order();
    if plant.bd.len() != n || plant.cd.len() != n || plant.ed.len() != n {
        return Err(DiscretizationError::DimensionMismatch(format!(
            "plant order {n} with B {}, C {}, E {}",
            plant.bd.len(),
            plant.cd.len(),
            plant.ed.len()
        ))
        .into());
    }
    if plant.dd != 0.0 {
        return Err(StabilityError::InvalidArgument(
            "plant feedthrough must be zero to close the loop without an algebraic loop".into(),
        ));
    }
    let [g0, g1, g2] = gains.velocity_coefficients(plant.period);
    // Plant input is u* = M_b * V'_x, so one unit of controller torque enters as Bd * V'_x.
    let bm = &plant.bd * op_v;
    let size = n + 3;
    let (iu, ie1, ie2) = (n, n + 1, n + 2);
    let mut m = DMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = plant.ad[(i, j)] - g0 * bm[i] * plant.cd[j];
        }
        m[(i, iu)] = bm[i];
        m[(i, ie1)] = g1 * bm[i];
        m[(i, ie2)] = g2 * bm[i];
    }
    for j in 0..n {
        m[(iu, j)] = -g0 * plant.cd[j];
        m[(ie1, j)] = -plant.cd[j];
    }
    m[(iu, iu)] = 1.0;
    m[(iu, ie1)] = g1;
    m[(iu, ie2)] = g2;
    m[(ie2, ie1)] = 1.0;

    let mut input = nalgebra::DVector::zeros(size);
    let mut affine = nalgebra::DVector::zeros(size);
    let mut output = nalgebra::DVector::zeros(size);
    for i in 0..n {
        input[i] = g0 * bm[i];
        affine[i] = plant.ed[i];
        output[i] = plant.cd[i];
    }
    input[iu] = g0;
    input[ie1] = 1.0;
    Ok(DiscreteStateSpace {
        ad: m,
        bd: input,
        cd: output,
        dd: 0.0,
        ed: affine,
        period: plant.period,
    })
}

pub fn closed_loop(
    plant: &LinearizedPlant,
    gains: &PidGains,
    period: f64,
    method: DiscretizationMethod,
) -> Result<DiscreteStateSpace, StabilityError> {
    let ss = ContinuousStateSpace::from(plant);
    let discrete = match method {
        DiscretizationMethod::Euler => euler_discretize_ss(&ss, period)?,
        DiscretizationMethod::Zoh => zoh_discretize_ss(&ss, period)?,
    };
    closed_loop_discrete(&discrete, plant.op_v, gains)
}

/// Eigenvalues of `A` from its characteristic polynomial, refined against
/// `det(zI - A)` evaluated by LU so clustered roots keep full accuracy.
pub fn matrix_poles(a: &DMatrix<f64>) -> Result<Vec<Complex64>, StabilityError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cp = characteristic_polynomial(a);
    let mut roots = poly_roots(&cp, ROOT_TOL)?;
    let ac: DMatrix<Complex64> = a.map(|x| Complex64::new(x, 0.0));
    polish_roots(
        &mut roots,
        |z| {
            let mut m = -ac.clone();
            for i in 0..n {
                m[(i, i)] += z;
            }
            m.lu().determinant()
        },
        4,
    );
    Ok(roots)
}

pub fn poles(sys: &DiscreteStateSpace) -> Result<Vec<Complex64>, StabilityError> {
    matrix_poles(&sys.ad)
}

pub fn max_pole_magnitude(sys: &DiscreteStateSpace) -> Result<f64, StabilityError> {
    Ok(poles(sys)?.iter().map(|p| p.norm()).fold(0.0, f64::max))
}

/// Everything that fixes a braking loop apart from the operating point and period.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpec {
    pub params: VehicleParams,
    pub surface: RoadSurface,
    pub gains: PidGains,
    pub linearization: LinearizationBackend,
    pub method: DiscretizationMethod,
}

impl LoopSpec {
    pub fn with_gains(&self, gains: PidGains) -> Self {
        Self { gains, ..self.clone() }
    }

    /// Closed loop at a speed in km/h.
    pub fn closed_loop_at(&self, v_kmh: f64, lambda: f64, period: f64) -> Result<DiscreteStateSpace, StabilityError> {
        let plant = linearize(v_kmh / 3.6, lambda, &self.params, &self.surface, self.linearization)?;
        closed_loop(&plant, &self.gains, period, self.method)
    }

    pub fn poles_at(&self, v_kmh: f64, lambda: f64, period: f64) -> Result<Vec<Complex64>, StabilityError> {
        poles(&self.closed_loop_at(v_kmh, lambda, period)?)
    }

    pub fn max_pole_at(&self, v_kmh: f64, lambda: f64, period: f64) -> Result<f64, StabilityError> {
        Ok(self
            .poles_at(v_kmh, lambda, period)?
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max))
    }

    pub fn is_stable_at(&self, v_kmh: f64, lambda: f64, period: f64) -> Result<bool, StabilityError> {
        Ok(self.max_pole_at(v_kmh, lambda, period)? <= 1.0 + SURFACE_EPS)
    }
}

/// Inclusive arithmetic grid `min, min + step, ..` up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, StabilityError> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(StabilityError::InvalidGrid("non-finite bound".into()));
        }
        if max < min {
            return Err(StabilityError::InvalidGrid(format!("max {max} below min {min}")));
        }
        if !(step > 0.0) {
            return Err(StabilityError::InvalidGrid(format!("step {step} must be positive")));
        }
        Ok(Self { min, max, step })
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points computed as `min + i * step` to avoid accumulated drift.
    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.min + i as f64 * self.step).collect()
    }
}

impl std::str::FromStr for GridRange {
    type Err = StabilityError;

    /// Parses `min:max:step`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(StabilityError::InvalidGrid(format!("expected min:max:step, got '{s}'")));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| StabilityError::InvalidGrid(format!("bad number '{p}' in '{s}'")))
        };
        Self::new(num(parts[0])?, num(parts[1])?, num(parts[2])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostic {
    pub v_kmh: f64,
    pub lambda: f64,
    pub message: String,
    /// True when the cell failed only because its speed is not positive.
    pub at_rest: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySurface {
    /// Velocity axis (km/h).
    pub v_axis: Vec<f64>,
    pub lambda_axis: Vec<f64>,
    pub period: f64,
    /// Max pole magnitude, row-major by velocity; NaN marks a failed cell.
    pub values: Vec<f64>,
    pub diagnostics: Vec<CellDiagnostic>,
}

impl StabilitySurface {
    pub fn get(&self, vi: usize, li: usize) -> f64 {
        self.values[vi * self.lambda_axis.len() + li]
    }

    /// Iterates `(v_kmh, lambda, value)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.v_axis.iter().enumerate().flat_map(move |(vi, &v)| {
            self.lambda_axis
                .iter()
                .enumerate()
                .map(move |(li, &l)| (v, l, self.get(vi, li)))
        })
    }

    /// Largest value over the cells inside a box; NaN cells count as failures.
    pub fn max_in(&self, v_lo: f64, v_hi: f64, l_lo: f64, l_hi: f64) -> f64 {
        self.cells()
            .filter(|(v, l, _)| *v >= v_lo && *v <= v_hi && *l >= l_lo && *l <= l_hi)
            .map(|(_, _, x)| if x.is_nan() { f64::INFINITY } else { x })
            .fold(0.0, f64::max)
    }

    pub fn stable_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&x| x <= 1.0 + SURFACE_EPS).collect()
    }
}

/// Evaluates the closed loop on every grid cell in parallel. Cell errors are
/// stored as NaN with a diagnostic; results do not depend on evaluation order.
pub fn stability_surface(
    v_range: &GridRange,
    l_range: &GridRange,
    period: f64,
    spec: &LoopSpec,
) -> Result<StabilitySurface, StabilityError> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(DiscretizationError::InvalidPeriod(period).into());
    }
    let v_axis = v_range.values();
    let lambda_axis = l_range.values();
    let cells: Vec<(f64, f64)> = v_axis
        .iter()
        .flat_map(|&v| lambda_axis.iter().map(move |&l| (v, l)))
        .collect();
    let results: Vec<Result<f64, StabilityError>> =
        cells.par_iter().map(|&(v, l)| spec.max_pole_at(v, l, period)).collect();
    let mut values = Vec::with_capacity(cells.len());
    let mut diagnostics = Vec::new();
    for (&(v, l), r) in cells.iter().zip(results) {
        match r {
            Ok(x) => values.push(x),
            Err(e) => {
                values.push(f64::NAN);
                diagnostics.push(CellDiagnostic {
                    v_kmh: v,
                    lambda: l,
                    at_rest: matches!(e, StabilityError::Plant(PlantError::SingularLinearization(_))),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(StabilitySurface {
        v_axis,
        lambda_axis,
        period,
        values,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StablePeriod {
    pub period: f64,
    /// The upper search bound was itself stable.
    pub unbounded: bool,
}

/// Largest stable period at one operating point by bisection.
pub fn max_stable_period(
    v_kmh: f64,
    lambda: f64,
    bounds: (f64, f64),
    tol: f64,
    spec: &LoopSpec,
) -> Result<StablePeriod, StabilityError> {
    let (mut lo, mut hi) = bounds;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(StabilityError::InvalidArgument(format!("period bounds ({lo}, {hi})")));
    }
    if !(tol > 0.0) {
        return Err(StabilityError::InvalidArgument(format!("tolerance {tol}")));
    }
    let at_lo = spec.max_pole_at(v_kmh, lambda, lo)?;
    if at_lo > 1.0 + SURFACE_EPS {
        return Err(StabilityError::NoStablePeriod {
            lo,
            hi,
            max_pole: at_lo,
        });
    }
    if spec.is_stable_at(v_kmh, lambda, hi)? {
        return Ok(StablePeriod {
            period: hi,
            unbounded: true,
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if spec.is_stable_at(v_kmh, lambda, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(StablePeriod {
        period: lo,
        unbounded: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeData {
    pub omega: Vec<f64>,
    pub magnitude_db: Vec<f64>,
    pub phase_deg: Vec<f64>,
}

/// Frequency response on `z = exp(i w T)` over a log grid from `1e-2 / T` to
/// `0.999 pi / T`. Points on a pole read `+inf` dB with NaN phase.
pub fn bode_data(tf: &DiscreteTf, n_points: usize) -> Result<BodeData, StabilityError> {
    if n_points < 2 {
        return Err(StabilityError::InvalidArgument(format!("n_points {n_points} < 2")));
    }
    let t = tf.period;
    let (lo, hi) = ((1e-2 / t).ln(), (0.999 * std::f64::consts::PI / t).ln());
    let mut omega = Vec::with_capacity(n_points);
    let mut magnitude_db = Vec::with_capacity(n_points);
    let mut phase_deg = Vec::with_capacity(n_points);
    let mut last_phase: Option<f64> = None;
    for i in 0..n_points {
        let w = (lo + (hi - lo) * i as f64 / (n_points - 1) as f64).exp();
        omega.push(w);
        let z = Complex64::from_polar(1.0, w * t);
        let h = tf.eval(z);
        if !(h.re.is_finite() && h.im.is_finite()) {
            magnitude_db.push(f64::INFINITY);
            phase_deg.push(f64::NAN);
            continue;
        }
        magnitude_db.push(20.0 * h.norm().log10());
        let mut p = h.arg().to_degrees();
        if let Some(prev) = last_phase {
            p += 360.0 * ((prev - p) / 360.0).round();
        }
        last_phase = Some(p);
        phase_deg.push(p);
    }
    Ok(BodeData {
        omega,
        magnitude_db,
        phase_deg,
    })
}

/// Largest pole magnitude after discarding the single pole nearest `z = 1`.
pub fn max_pole_excluding_unity(poles: &[Complex64]) -> f64 {
    let one = Complex64::new(1.0, 0.0);
    let skip = poles
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - one).norm().total_cmp(&(b.1 - one).norm()))
        .map(|(i, _)| i);
    poles
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, p)| p.norm())
        .fold(0.0, f64::max)
}

/// Gain search space and the regions the calibrated loop must stabilize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    /// Fastest-mode period and the full operating grid it must cover.
    pub e_period: f64,
    pub e_v: GridRange,
    pub e_lambda: GridRange,
    /// Slowest-mode period and its (smaller) region.
    pub n0_period: f64,
    pub n0_v: GridRange,
    pub n0_lambda: GridRange,
    /// Relative gain perturbation under which feasibility must persist.
    pub margin: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            kp: vec![5e3, 7.5e3, 1e4, 1.5e4, 2e4],
            ki: vec![1e4, 2e4, 3e4, 5e4, 7e4, 1e5],
            kd: vec![0.0, 0.1],
            e_period: 1e-4,
            e_v: GridRange {
                min: 5.0,
                max: 200.0,
                step: 5.0,
            },
            e_lambda: GridRange {
                min: 0.0,
                max: 1.0,
                step: 0.05,
            },
            n0_period: 2e-4,
            n0_v: GridRange {
                min: 5.0,
                max: 85.0,
                step: 5.0,
            },
            n0_lambda: GridRange {
                min: 0.0,
                max: 0.65,
                step: 0.05,
            },
            margin: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub gains: PidGains,
    pub feasible: bool,
    pub screened_out: bool,
    /// Worst non-structural pole magnitude over the fast-mode grid.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub gains: PidGains,
    pub objective: f64,
    pub candidates: Vec<CandidateReport>,
}

fn region_ok(spec: &LoopSpec, v: &GridRange, l: &GridRange, period: f64) -> bool {
    let v_axis = v.values();
    let l_axis = l.values();
    v_axis.par_iter().all(|&vv| {
        l_axis
            .iter()
            .all(|&ll| spec.is_stable_at(vv, ll, period).unwrap_or(false))
    })
}

fn region_objective(spec: &LoopSpec, v: &GridRange, l: &GridRange, period: f64) -> f64 {
    let v_axis = v.values();
    let l_axis = l.values();
    v_axis
        .par_iter()
        .map(|&vv| {
            l_axis
                .iter()
                .map(|&ll| {
                    spec.poles_at(vv, ll, period)
                        .map(|p| max_pole_excluding_unity(&p))
                        .unwrap_or(f64::INFINITY)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Grid search for PID gains.
///
/// A candidate is feasible when the fast-mode grid and the slow-mode region
/// are stable for the nominal gains and for `Kp`, `Ki` each scaled by
/// `1 +- margin`. Feasible candidates passing `screen` are ranked by the
/// worst non-structural pole magnitude over the fast-mode grid; ties keep the
/// earlier candidate in `(kp, ki, kd)` order.
pub fn calibrate(
    settings: &CalibrationSettings,
    base: &LoopSpec,
    screen: Option<&(dyn Fn(&PidGains) -> bool + Sync)>,
) -> Result<CalibrationResult, StabilityError> {
    let mut candidates = Vec::new();
    for &kp in &settings.kp {
        for &ki in &settings.ki {
            for &kd in &settings.kd {
                candidates.push(PidGains::new(kp, ki, kd)?);
            }
        }
    }
    let scales = [1.0 - settings.margin, 1.0, 1.0 + settings.margin];
    let mut reports = Vec::with_capacity(candidates.len());
    for gains in &candidates {
        let feasible = scales.iter().all(|&sp| {
            scales.iter().all(|&si| {
                let g = PidGains {
                    kp: gains.kp * sp,
                    ki: gains.ki * si,
                    kd: gains.kd,
                };
                let spec = base.with_gains(g);
                region_ok(&spec, &settings.e_v, &settings.e_lambda, settings.e_period)
                    && region_ok(&spec, &settings.n0_v, &settings.n0_lambda, settings.n0_period)
            })
        });
        let screened_out = feasible && screen.map(|f| !f(gains)).unwrap_or(false);
        let objective = if feasible && !screened_out {
            region_objective(
                &base.with_gains(*gains),
                &settings.e_v,
                &settings.e_lambda,
                settings.e_period,
            )
        } else {
            f64::INFINITY
        };
        reports.push(CandidateReport {
            gains: *gains,
            feasible,
            screened_out,
            objective,
        });
    }
    let best = reports
        .iter()
        .filter(|r| r.feasible && !r.screened_out)
        .fold(None::<&CandidateReport>, |best, r| match best {
            Some(b) if b.objective <= r.objective => Some(b),
            _ => Some(r),
        })
        .ok_or(StabilityError::NoFeasibleGains(reports.len()))?;
    Ok(CalibrationResult {
        gains: best.gains,
        objective: best.objective,
        candidates: reports.clone(),
    })
}
