//! Quarter-car braking model.
//!
//! State is the vehicle speed `V_x`, the wheel angular speed `omega` and the
//! derived wheel slip `lambda = 1 - omega * R / V_x`. Friction follows a
//! two-piece linear mu-lambda law with a peak region at `lambda <= 0.2`.

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slip value separating the adhesive and sliding pieces of the friction law.
pub const SLIP_BREAKPOINT: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("slip {0} outside [0, 1]")]
    SlipDomain(f64),
    #[error("vehicle at rest (V_x = {0} m/s); slip is taken as 1")]
    VehicleAtRest(f64),
    #[error("cannot linearize at V_x = {0} m/s (division by operating speed)")]
    SingularLinearization(f64),
    #[error("invalid vehicle parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("road surface '{name}': {reason}")]
    InvalidSurface { name: String, reason: String },
    #[error("non-finite state after RK4 step of {dt} s from V_x = {v_x}, omega = {omega}")]
    NumericBlowup { dt: f64, v_x: f64, omega: f64 },
    #[error("integration step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Physical constants of the quarter vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Quarter-vehicle mass (kg).
    pub mass: f64,
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Wheel inertia (kg m^2).
    pub wheel_inertia: f64,
    /// Vertical (normal) force on the wheel (N).
    pub normal_force: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 342.0,
            wheel_radius: 0.33,
            wheel_inertia: 1.13,
            normal_force: 3355.0,
        }
    }
}

impl VehicleParams {
    pub fn new(mass: f64, wheel_radius: f64, wheel_inertia: f64, normal_force: f64) -> Result<Self, PlantError> {
        let params = Self {
            mass,
            wheel_radius,
            wheel_inertia,
            normal_force,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        for (name, value) in [
            ("mass", self.mass),
            ("wheel_radius", self.wheel_radius),
            ("wheel_inertia", self.wheel_inertia),
            ("normal_force", self.normal_force),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }
}

/// A named road surface parameterising the friction law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSurface {
    pub name: String,
    /// Slope of the adhesive piece, `mu = alpha * lambda`.
    pub alpha: f64,
    /// Offset of the sliding piece, `mu = -lambda / 2 + 3/4 + beta`.
    pub beta: f64,
}

impl RoadSurface {
    pub fn new(name: impl Into<String>, alpha: f64, beta: f64) -> Result<Self, PlantError> {
        let surface = Self {
            name: name.into(),
            alpha,
            beta,
        };
        surface.validate()?;
        Ok(surface)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(0.0..=8.0).contains(&self.alpha) {
            return Err(PlantError::InvalidSurface {
                name: self.name.clone(),
                reason: format!("alpha {} outside [0, 8]", self.alpha),
            });
        }
        if !(-0.1..=0.1).contains(&self.beta) {
            return Err(PlantError::InvalidSurface {
                name: self.name.clone(),
                reason: format!("beta {} outside [-0.1, 0.1]", self.beta),
            });
        }
        Ok(())
    }

    /// The four surfaces used for the stopping-distance comparison, highest
    /// friction first.
    pub fn default_set() -> Vec<RoadSurface> {
        [
            ("dry_asphalt", 6.4),
            ("gravel", 5.46),
            ("loose_gravel", 5.1),
            ("wet", 4.8),
        ]
        .into_iter()
        .map(|(name, alpha)| RoadSurface {
            name: name.to_string(),
            alpha,
            beta: 0.0,
        })
        .collect()
    }
}

/// Which piece of the friction law is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionBranch {
    /// `lambda <= 0.2`
    Adhesive,
    /// `lambda > 0.2`
    Sliding,
}

impl FrictionBranch {
    pub fn of(lambda: f64) -> Self {
        if lambda <= SLIP_BREAKPOINT {
            FrictionBranch::Adhesive
        } else {
            FrictionBranch::Sliding
        }
    }
}

/// Piecewise-linear friction coefficient. The two pieces are not joined
/// continuously at the breakpoint for most surfaces; no smoothing is applied.
pub fn friction_coefficient(lambda: f64, surface: &RoadSurface) -> Result<f64, PlantError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PlantError::SlipDomain(lambda));
    }
    Ok(mu_unchecked(lambda, surface))
}

fn mu_unchecked(lambda: f64, surface: &RoadSurface) -> f64 {
    match FrictionBranch::of(lambda) {
        FrictionBranch::Adhesive => surface.alpha * lambda,
        FrictionBranch::Sliding => -0.5 * lambda + 0.75 + surface.beta,
    }
}

fn mu_slope(lambda: f64, surface: &RoadSurface) -> f64 {
    match FrictionBranch::of(lambda) {
        FrictionBranch::Adhesive => surface.alpha,
        FrictionBranch::Sliding => -0.5,
    }
}

/// Wheel slip `1 - omega * R / V_x`, clamped to `[0, 1]`.
pub fn slip(v_x: f64, omega: f64, wheel_radius: f64) -> Result<f64, PlantError> {
    if !(v_x > 0.0) {
        return Err(PlantError::VehicleAtRest(v_x));
    }
    Ok((1.0 - omega * wheel_radius / v_x).clamp(0.0, 1.0))
}

/// Instantaneous plant state. Slip is always derived, never stored independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleState {
    v_x: f64,
    omega: f64,
    lambda: f64,
}

impl VehicleState {
    /// Builds a state from speeds. `omega` is clamped to `[0, V_x / R]` so the
    /// slip identity holds exactly; a non-positive speed yields the rest state.
    pub fn from_speeds(v_x: f64, omega: f64, params: &VehicleParams) -> Self {
        if !(v_x > 0.0) {
            return Self::at_rest();
        }
        let omega = omega.clamp(0.0, v_x / params.wheel_radius);
        let lambda = (1.0 - omega * params.wheel_radius / v_x).clamp(0.0, 1.0);
        Self { v_x, omega, lambda }
    }

    /// Builds a state from speed and slip, reconstructing the wheel speed.
    pub fn from_slip(v_x: f64, lambda: f64, params: &VehicleParams) -> Result<Self, PlantError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(PlantError::SlipDomain(lambda));
        }
        if !(v_x > 0.0) {
            return Ok(Self::at_rest());
        }
        Ok(Self {
            v_x,
            omega: (1.0 - lambda) * v_x / params.wheel_radius,
            lambda,
        })
    }

    /// Vehicle stopped: zero speeds and normalized slip of one.
    pub fn at_rest() -> Self {
        Self {
            v_x: 0.0,
            omega: 0.0,
            lambda: 1.0,
        }
    }

    pub fn v_x(&self) -> f64 {
        self.v_x
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_at_rest(&self) -> bool {
        self.v_x <= 0.0
    }
}

/// Time derivatives of the three plant quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub dv_x: f64,
    pub domega: f64,
    pub dlambda: f64,
}

pub fn derivatives(
    state: &VehicleState,
    brake_torque: f64,
    params: &VehicleParams,
    surface: &RoadSurface,
) -> Result<Derivatives, PlantError> {
    if state.is_at_rest() {
        return Err(PlantError::VehicleAtRest(state.v_x));
    }
    let VehicleParams {
        mass: m,
        wheel_radius: r,
        wheel_inertia: j,
        normal_force: f_n,
    } = *params;
    let lambda = state.lambda;
    let v = state.v_x;
    let mu = mu_unchecked(lambda, surface);
    Ok(Derivatives {
        dv_x: -f_n * mu / m,
        domega: r / j * f_n * mu - brake_torque / j,
        dlambda: -((1.0 - lambda) / m + r * r / j) * f_n * mu / v + r / (j * v) * brake_torque,
    })
}

/// Braking torque that holds slip constant for the given deceleration.
pub fn equilibrium_torque(state: &VehicleState, dv_x: f64, params: &VehicleParams) -> f64 {
    ((state.lambda - 1.0) * params.wheel_inertia / params.wheel_radius - params.mass * params.wheel_radius) * dv_x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearizationBackend {
    /// Entries exactly as tabulated for the two friction branches.
    #[default]
    AsPrinted,
    /// Exact Jacobian of the nonlinear `(V_x, lambda)` dynamics.
    FullJacobian,
}

/// Affine local model `x' = A x + E + B u*`, `y = C x + D u*`, with
/// `x = [V_x, lambda]` and `u* = M_b * V_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedPlant {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub d: f64,
    pub e: Vector2<f64>,
    pub op_v: f64,
    pub op_lambda: f64,
    pub branch: FrictionBranch,
}

/// Equilibrium torque at the operating point, expressed as the scaled input
/// `u* = M_b * V_x` held during linearization.
fn equilibrium_input(op_v: f64, op_lambda: f64, params: &VehicleParams, surface: &RoadSurface) -> f64 {
    let mu = mu_unchecked(op_lambda, surface);
    let dv = -params.normal_force * mu / params.mass;
    let lambda_coeff =
        (op_lambda - 1.0) * params.wheel_inertia / params.wheel_radius - params.mass * params.wheel_radius;
    lambda_coeff * dv * op_v
}

/// Right-hand side of `(V_x, lambda)` with the scaled input `u*` held fixed.
/// Exposed for finite-difference checks of the Jacobian.
pub fn reduced_dynamics(
    v_x: f64,
    lambda: f64,
    scaled_input: f64,
    params: &VehicleParams,
    surface: &RoadSurface,
) -> Vector2<f64> {
    let VehicleParams {
        mass: m,
        wheel_radius: r,
        wheel_inertia: j,
        normal_force: f_n,
    } = *params;
    let mu = mu_unchecked(lambda, surface);
    Vector2::new(
        -f_n * mu / m,
        -((1.0 - lambda) / m + r * r / j) * f_n * mu / v_x + r * scaled_input / (j * v_x * v_x),
    )
}

/// The scaled input used by [`linearize`] at an operating point.
pub fn operating_input(op_v: f64, op_lambda: f64, params: &VehicleParams, surface: &RoadSurface) -> f64 {
    equilibrium_input(op_v, op_lambda, params, surface)
}

pub fn linearize(
    op_v: f64,
    op_lambda: f64,
    params: &VehicleParams,
    surface: &RoadSurface,
    backend: LinearizationBackend,
) -> Result<LinearizedPlant, PlantError> {
    if !(op_v > 0.0) || !op_v.is_finite() {
        return Err(PlantError::SingularLinearization(op_v));
    }
    if !(0.0..=1.0).contains(&op_lambda) {
        return Err(PlantError::SlipDomain(op_lambda));
    }
    let VehicleParams {
        mass: m,
        wheel_radius: r,
        wheel_inertia: j,
        normal_force: f_n,
    } = *params;
    let branch = FrictionBranch::of(op_lambda);
    let b = Vector2::new(0.0, r / (j * op_v * op_v));

    let (a, e) = match backend {
        LinearizationBackend::AsPrinted => {
            let alpha = surface.alpha;
            let beta = surface.beta;
            let k = f_n * r * r / j;
            let v = op_v;
            let l = op_lambda;
            match branch {
                FrictionBranch::Adhesive => (
                    Matrix2::new(0.0, -alpha * f_n / m, alpha * k * l / (v * v), alpha * k / v),
                    Vector2::new(0.0, -alpha * k * l / v),
                ),
                // The tabulated +-0.1 and +-0.2 terms are the beta interval; they
                // collapse to beta and 2 * beta for a concrete surface.
                FrictionBranch::Sliding => (
                    Matrix2::new(
                        0.0,
                        f_n / (4.0 * m),
                        (-l / 2.0 + 0.75) * k / (v * v) + beta * k / (v * v),
                        k / (4.0 * v),
                    ),
                    Vector2::new((-0.75 + beta) * f_n / m, (l / 2.0 - 1.5) * k / v + 2.0 * beta * k / v),
                ),
            }
        }
        LinearizationBackend::FullJacobian => {
            let v = op_v;
            let l = op_lambda;
            let mu = mu_unchecked(l, surface);
            let dmu = mu_slope(l, surface);
            let u0 = equilibrium_input(v, l, params, surface);
            let bracket = (1.0 - l) / m + r * r / j;
            let a = Matrix2::new(
                0.0,
                -f_n * dmu / m,
                bracket * f_n * mu / (v * v) - 2.0 * r * u0 / (j * v * v * v),
                -f_n / v * (-mu / m + bracket * dmu),
            );
            let x0 = Vector2::new(v, l);
            let f0 = reduced_dynamics(v, l, u0, params, surface);
            let e = f0 - a * x0 - b * u0;
            (a, e)
        }
    };

    Ok(LinearizedPlant {
        a,
        b,
        c: RowVector2::new(0.0, 1.0),
        d: 0.0,
        e,
        op_v,
        op_lambda,
        branch,
    })
}

fn rhs(v: f64, omega: f64, torque: f64, params: &VehicleParams, surface: &RoadSurface) -> (f64, f64) {
    let lambda = if v > 0.0 {
        (1.0 - omega * params.wheel_radius / v).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let mu = mu_unchecked(lambda, surface);
    let fx = params.normal_force * mu;
    (
        -fx / params.mass,
        params.wheel_radius / params.wheel_inertia * fx - torque / params.wheel_inertia,
    )
}

/// One classical RK4 step on `(V_x, omega)` under a held braking torque.
pub fn integrate_step(
    state: &VehicleState,
    brake_torque: f64,
    dt: f64,
    params: &VehicleParams,
    surface: &RoadSurface,
) -> Result<VehicleState, PlantError> {
    if !(dt > 0.0) {
        return Err(PlantError::InvalidStep(dt));
    }
    if state.is_at_rest() {
        return Err(PlantError::VehicleAtRest(state.v_x));
    }
    let (v, w) = (state.v_x, state.omega);
    let k1 = rhs(v, w, brake_torque, params, surface);
    let k2 = rhs(v + 0.5 * dt * k1.0, w + 0.5 * dt * k1.1, brake_torque, params, surface);
    let k3 = rhs(v + 0.5 * dt * k2.0, w + 0.5 * dt * k2.1, brake_torque, params, surface);
    let k4 = rhs(v + dt * k3.0, w + dt * k3.1, brake_torque, params, surface);
    let v_next = v + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
    let w_next = w + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    if !(v_next.is_finite() && w_next.is_finite()) {
        return Err(PlantError::NumericBlowup { dt, v_x: v, omega: w });
    }
    Ok(VehicleState::from_speeds(v_next.max(0.0), w_next, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dry() -> RoadSurface {
        RoadSurface::new("dry", 5.0, 0.0).unwrap()
    }

    #[test]
    fn friction_worked_values() {
        let s = dry();
        assert_eq!(friction_coefficient(0.2, &s).unwrap(), 1.0);
        assert_eq!(friction_coefficient(0.0, &s).unwrap(), 0.0);
        assert!((friction_coefficient(0.6, &s).unwrap() - 0.45).abs() < 1e-15);
        let rough = RoadSurface::new("rough", 5.0, 0.1).unwrap();
        assert!((friction_coefficient(1.0, &rough).unwrap() - 0.35).abs() < 1e-15);
        assert!(matches!(friction_coefficient(1.2, &s), Err(PlantError::SlipDomain(_))));
    }

    #[test]
    fn slip_worked_values() {
        assert_eq!(slip(10.0, 10.0 / 0.3, 0.3).unwrap(), 0.0);
        assert_eq!(slip(10.0, 0.0, 0.3).unwrap(), 1.0);
        assert!((slip(20.0, 50.0, 0.3).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(slip(0.0, 1.0, 0.3), Err(PlantError::VehicleAtRest(_))));
    }

    #[test]
    fn derivatives_at_zero_slip() {
        let p = VehicleParams::default();
        let st = VehicleState::from_slip(20.0, 0.0, &p).unwrap();
        let d = derivatives(&st, 400.0, &p, &dry()).unwrap();
        assert_eq!(d.dv_x, 0.0);
        assert_eq!(d.domega, -400.0 / p.wheel_inertia);
    }

    #[test]
    fn derivatives_hand_evaluated_point() {
        // V = 27.78, lambda = 0.1, M_b = 500, alpha = 5 with the default quarter car.
        // mu = 0.5; dV = -3355 * 0.5 / 342; domega = 0.33 / 1.13 * 1677.5 - 500 / 1.13;
        // dlambda = -(0.9 / 342 + 0.1089 / 1.13) * 1677.5 / 27.78 + 0.33 * 500 / (1.13 * 27.78).
        let p = VehicleParams::default();
        let st = VehicleState::from_slip(27.78, 0.1, &p).unwrap();
        let d = derivatives(&st, 500.0, &p, &dry()).unwrap();
        assert!((d.dv_x - (-4.904_970_760_233_918)).abs() < 1e-12);
        assert!((d.domega - 47.411_504_424_778_76).abs() < 1e-12);
        assert!((d.dlambda - (-0.722_111_956_241_451_3)).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_torque_cases() {
        let p = VehicleParams::default();
        let locked = VehicleState::from_slip(10.0, 1.0, &p).unwrap();
        assert_eq!(equilibrium_torque(&locked, -3.0, &p), -p.mass * p.wheel_radius * -3.0);
        assert_eq!(equilibrium_torque(&locked, 0.0, &p), 0.0);
        let st = VehicleState::from_slip(15.0, 0.15, &p).unwrap();
        let s = dry();
        let dv = -p.normal_force * friction_coefficient(0.15, &s).unwrap() / p.mass;
        let torque = equilibrium_torque(&st, dv, &p);
        let d = derivatives(&st, torque, &p, &s).unwrap();
        assert!(d.dlambda.abs() < 1e-9);
    }

    #[test]
    fn linearize_as_printed_entries() {
        let p = VehicleParams::default();
        let s = RoadSurface::new("x", 5.1, 0.05).unwrap();
        let lp = linearize(20.0, 0.1, &p, &s, LinearizationBackend::AsPrinted).unwrap();
        assert_eq!(lp.branch, FrictionBranch::Adhesive);
        assert_eq!(lp.a[(0, 0)], 0.0);
        assert_eq!(lp.a[(0, 1)], -5.1 * p.normal_force / p.mass);
        let hi = linearize(20.0, 0.5, &p, &s, LinearizationBackend::AsPrinted).unwrap();
        assert_eq!(hi.branch, FrictionBranch::Sliding);
        assert_eq!(hi.e[0], (-0.75 + 0.05) * p.normal_force / p.mass);
        assert_eq!(lp.c, RowVector2::new(0.0, 1.0));
        assert_eq!(lp.b[1], p.wheel_radius / (p.wheel_inertia * 400.0));
    }

    #[test]
    fn linearize_rejects_rest() {
        let p = VehicleParams::default();
        assert!(matches!(
            linearize(0.0, 0.1, &p, &dry(), LinearizationBackend::FullJacobian),
            Err(PlantError::SingularLinearization(_))
        ));
    }

    #[test]
    fn full_jacobian_matches_central_differences() {
        let p = VehicleParams::default();
        let s = dry();
        let (v, l) = (20.0, 0.1);
        let lp = linearize(v, l, &p, &s, LinearizationBackend::FullJacobian).unwrap();
        let u0 = operating_input(v, l, &p, &s);
        let h = 1e-6;
        for col in 0..2 {
            let (dv, dl) = if col == 0 { (h, 0.0) } else { (0.0, h) };
            let fwd = reduced_dynamics(v + dv, l + dl, u0, &p, &s);
            let bwd = reduced_dynamics(v - dv, l - dl, u0, &p, &s);
            let fd = (fwd - bwd) / (2.0 * h);
            for row in 0..2 {
                let exact = lp.a[(row, col)];
                let scale = exact.abs().max(1e-3);
                assert!(
                    (fd[row] - exact).abs() / scale < 1e-6,
                    "({row},{col}) {exact} vs {}",
                    fd[row]
                );
            }
        }
    }

    #[test]
    fn zero_friction_step_is_identity() {
        let p = VehicleParams::default();
        let st = VehicleState::from_slip(20.0, 0.0, &p).unwrap();
        let next = integrate_step(&st, 0.0, 1e-3, &p, &dry()).unwrap();
        assert_eq!(next, st);
    }

    #[test]
    fn rk4_step_close_to_euler_for_small_dt() {
        let p = VehicleParams::default();
        let s = dry();
        let st = VehicleState::from_slip(20.0, 0.1, &p).unwrap();
        let dt = 1e-5;
        let d = derivatives(&st, 800.0, &p, &s).unwrap();
        let next = integrate_step(&st, 800.0, dt, &p, &s).unwrap();
        let euler_v = st.v_x() + dt * d.dv_x;
        let euler_w = st.omega() + dt * d.domega;
        assert!((next.v_x() - euler_v).abs() < 1e-6);
        assert!((next.omega() - euler_w).abs() < 1e-5);
    }

    #[test]
    fn step_reaching_zero_speed_is_rest() {
        let p = VehicleParams::default();
        let s = RoadSurface::new("grip", 8.0, 0.1).unwrap();
        let st = VehicleState::from_slip(1e-4, 0.2, &p).unwrap();
        let next = integrate_step(&st, 2000.0, 1e-2, &p, &s).unwrap();
        assert!(next.is_at_rest());
        assert_eq!(next.lambda(), 1.0);
    }
}
