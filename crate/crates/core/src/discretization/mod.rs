//! Transfer functions, difference equations and continuous-to-discrete maps.
//!
//! Discrete transfer functions are stored in delay form,
//! `H = (b0 + b1 z^-1 + .. + bm z^-m) / (1 + a1 z^-1 + .. + an z^-n)`,
//! which is the coefficient layout of the difference equation
//! `u[k] = -sum a_i u[k-i] + sum b_j e[k-j]`.

mod poly;
mod state_space;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use poly::{
    characteristic_polynomial, polish_roots, poly_add, poly_eval, poly_eval_real, poly_from_roots, poly_mul,
    poly_roots, poly_scale, poly_trim, ROOT_MAX_ITER, ROOT_TOL,
};
pub use state_space::{
    euler_discretize_ss, expm, zoh_discretize, zoh_discretize_ss, zoh_tf, ContinuousStateSpace, DiscreteStateSpace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("sampling period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("polynomial degree must be at least 1")]
    DegreeTooLow,
    #[error("leading coefficient is zero")]
    ZeroLeadingCoefficient,
    #[error("transfer function is improper: numerator degree {num} > denominator degree {den}")]
    Improper { num: usize, den: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("root iteration did not converge (residual {residual:e})")]
    RootsDidNotConverge { best: Vec<Complex64>, residual: f64 },
    #[error("history too short: need {needed} {which} samples, got {got}")]
    ShortHistory {
        which: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("matrix exponential overflow at T = {period} s (spectral estimate {spectral_estimate:e})")]
    ExponentialOverflow { period: f64, spectral_estimate: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Rational function of `s`, coefficients highest degree first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl ContinuousTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, DiscretizationError> {
        let den = poly_trim(&den);
        let num = poly_trim(&num);
        if den.is_empty() || den[0] == 0.0 {
            return Err(DiscretizationError::ZeroLeadingCoefficient);
        }
        if num.is_empty() {
            return Err(DiscretizationError::DegreeTooLow);
        }
        if num.len() > den.len() {
            return Err(DiscretizationError::Improper {
                num: num.len() - 1,
                den: den.len() - 1,
            });
        }
        Ok(Self { num, den })
    }

    pub fn degree(&self) -> usize {
        self.den.len() - 1
    }
}

/// Discrete transfer function in delay form with its sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTf {
    /// Feedforward coefficients `b0..bm`.
    pub b: Vec<f64>,
    /// Feedback coefficients `a1..an` (the leading 1 is implicit).
    pub a: Vec<f64>,
    pub period: f64,
}

impl DiscreteTf {
    /// Normalizes so that `n >= m` by zero-padding the feedback side.
    pub fn new(b: Vec<f64>, a: Vec<f64>, period: f64) -> Result<Self, DiscretizationError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(DiscretizationError::InvalidPeriod(period));
        }
        if b.is_empty() {
            return Err(DiscretizationError::DegreeTooLow);
        }
        if b.iter().chain(&a).any(|c| !c.is_finite()) {
            return Err(DiscretizationError::NonFinite("transfer function coefficient"));
        }
        let mut a = a;
        if a.len() + 1 < b.len() {
            a.resize(b.len() - 1, 0.0);
        }
        Ok(Self { b, a, period })
    }

    /// Builds from polynomials in `z` (highest first) with `deg num <= deg den`,
    /// normalizing to a monic denominator.
    pub fn from_z_polys(num: &[f64], den: &[f64], period: f64) -> Result<Self, DiscretizationError> {
        let den = poly_trim(den);
        let lead = *den.first().ok_or(DiscretizationError::ZeroLeadingCoefficient)?;
        if lead == 0.0 {
            return Err(DiscretizationError::ZeroLeadingCoefficient);
        }
        let num = poly_trim(num);
        let n = den.len() - 1;
        if num.len() > den.len() {
            return Err(DiscretizationError::Improper {
                num: num.len() - 1,
                den: n,
            });
        }
        let mut b = vec![0.0; n + 1];
        let offset = n + 1 - num.len();
        for (i, &c) in num.iter().enumerate() {
            b[offset + i] = c / lead;
        }
        let a = den[1..].iter().map(|c| c / lead).collect();
        Self::new(b, a, period)
    }

    /// Denominator `z^n + a1 z^(n-1) + .. + an`.
    pub fn denominator(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.a.iter().copied()).collect()
    }

    /// Numerator over the same power of `z` as [`Self::denominator`].
    pub fn numerator(&self) -> Vec<f64> {
        let n = self.a.len();
        let mut num = self.b.clone();
        num.resize(n + 1, 0.0);
        num
    }

    pub fn poles(&self) -> Result<Vec<Complex64>, DiscretizationError> {
        if self.a.is_empty() {
            return Ok(Vec::new());
        }
        poly_roots(&self.denominator(), ROOT_TOL)
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>, DiscretizationError> {
        let num = poly_trim(&self.numerator());
        if num.len() < 2 || num[0] == 0.0 {
            return Ok(Vec::new());
        }
        poly_roots(&num, ROOT_TOL)
    }

    /// `H(z)` evaluated at a complex point.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        poly_eval(&self.numerator(), z) / poly_eval(&self.denominator(), z)
    }

    /// Divides out one common factor `(1 - root z^-1)` when both sides vanish there.
    pub fn cancel_common_root(&self, root: f64, tol: f64) -> Option<Self> {
        let num = self.numerator();
        let den = self.denominator();
        if poly_eval_real(&num, root).abs() > tol || poly_eval_real(&den, root).abs() > tol {
            return None;
        }
        let deflate = |p: &[f64]| -> Vec<f64> {
            let mut q = Vec::with_capacity(p.len() - 1);
            let mut acc = 0.0;
            for &c in &p[..p.len() - 1] {
                acc = acc * root + c;
                q.push(acc);
            }
            q
        };
        let num_q = deflate(&num);
        let den_q = deflate(&den);
        Self::from_z_polys(&num_q, &den_q, self.period).ok()
    }
}

/// Controller gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<Self, DiscretizationError> {
        if !(kp.is_finite() && ki.is_finite() && kd.is_finite()) {
            return Err(DiscretizationError::NonFinite("PID gain"));
        }
        Ok(Self { kp, ki, kd })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            kp: self.kp * k,
            ki: self.ki * k,
            kd: self.kd * k,
        }
    }

    /// Coefficients `(g0, g1, g2)` of `u[k] - u[k-1] = g0 e[k] + g1 e[k-1] + g2 e[k-2]`.
    pub fn velocity_coefficients(&self, period: f64) -> [f64; 3] {
        [
            self.kp + self.kd / period,
            -self.kp + self.ki * period - 2.0 * self.kd / period,
            self.kd / period,
        ]
    }
}

/// Delayed signals held by the velocity-form PID.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub u_prev: f64,
    pub e_prev: f64,
    pub e_prev2: f64,
}

/// One update of the velocity-form PID:
/// `u[k] = u[k-1] + Kp (e[k] - e[k-1]) + Ki T e[k-1] + Kd/T (e[k] - 2 e[k-1] + e[k-2])`.
pub fn pid_step(gains: &PidGains, period: f64, state: &ControllerState, error: f64) -> (f64, ControllerState) {
    let [g0, g1, g2] = gains.velocity_coefficients(period);
    let u = state.u_prev + g0 * error + g1 * state.e_prev + g2 * state.e_prev2;
    (
        u,
        ControllerState {
            u_prev: u,
            e_prev: error,
            e_prev2: state.e_prev,
        },
    )
}

/// Transfer function of [`pid_step`]: `Kp + Ki T / (z - 1) + Kd (z - 1) / (T z)`.
/// The `(z - 1)` pole is cancelled when the integral gain is zero.
pub fn pid_tf(gains: &PidGains, period: f64) -> Result<DiscreteTf, DiscretizationError> {
    let tf = DiscreteTf::new(gains.velocity_coefficients(period).to_vec(), vec![-1.0], period)?;
    if gains.ki == 0.0 {
        if let Some(reduced) = tf.cancel_common_root(1.0, 1e-12 * (1.0 + gains.kp.abs() + gains.kd.abs() / period)) {
            // Without a derivative term a common factor z remains as well.
            let (mut b, mut a) = (reduced.b, reduced.a);
            while b.len() > 1 && b.last() == Some(&0.0) && a.last() == Some(&0.0) {
                b.pop();
                a.pop();
            }
            return DiscreteTf::new(b, a, period);
        }
    }
    Ok(tf)
}

/// First-order lead/lag `K (s + a) / (s + b)` by forward differences.
pub fn first_order_euler(gain: f64, zero: f64, pole: f64, dt: f64) -> Result<DiscreteTf, DiscretizationError> {
    DiscreteTf::new(vec![gain, gain * (zero * dt - 1.0)], vec![pole * dt - 1.0], dt)
}

/// Substitutes `s = (z - 1) / T` and clears the `T` denominators.
pub fn euler_substitute(tf: &ContinuousTf, period: f64) -> Result<DiscreteTf, DiscretizationError> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(DiscretizationError::InvalidPeriod(period));
    }
    let degree = tf.degree();
    let map = |p: &[f64]| -> Vec<f64> {
        let d = p.len() - 1;
        let mut acc = vec![0.0];
        let mut power = vec![1.0];
        for (k, &c) in p.iter().rev().enumerate() {
            if k > 0 {
                power = poly_mul(&power, &[1.0, -1.0]);
            }
            debug_assert!(k <= d);
            let term = poly_scale(&power, c * period.powi((degree - k) as i32));
            acc = poly_add(&acc, &term);
        }
        acc
    };
    let den = map(&tf.den);
    if den[0] == 0.0 {
        return Err(DiscretizationError::ZeroLeadingCoefficient);
    }
    let num = map(&tf.num);
    DiscreteTf::from_z_polys(&num, &den, period)
}

/// `u[k] = -sum a_i u[k-i] + sum b_j e[k-j]`.
///
/// `u_hist[0]` is `u[k-1]`; `e_hist[0]` is the current error `e[k]`.
pub fn difference_step(tf: &DiscreteTf, u_hist: &[f64], e_hist: &[f64]) -> Result<f64, DiscretizationError> {
    if u_hist.len() < tf.a.len() {
        return Err(DiscretizationError::ShortHistory {
            which: "output",
            needed: tf.a.len(),
            got: u_hist.len(),
        });
    }
    if e_hist.len() < tf.b.len() {
        return Err(DiscretizationError::ShortHistory {
            which: "error",
            needed: tf.b.len(),
            got: e_hist.len(),
        });
    }
    let feedback: f64 = tf.a.iter().zip(u_hist).map(|(a, u)| a * u).sum();
    let feedforward: f64 = tf.b.iter().zip(e_hist).map(|(b, e)| b * e).sum();
    Ok(feedforward - feedback)
}

/// Stateful runner of a difference equation with zero initial history.
#[derive(Debug, Clone)]
pub struct DifferenceFilter {
    tf: DiscreteTf,
    u_hist: Vec<f64>,
    e_hist: Vec<f64>,
}

impl DifferenceFilter {
    pub fn new(tf: DiscreteTf) -> Self {
        let u_hist = vec![0.0; tf.a.len()];
        let e_hist = vec![0.0; tf.b.len()];
        Self { tf, u_hist, e_hist }
    }

    pub fn step(&mut self, error: f64) -> f64 {
        self.e_hist.rotate_right(1);
        self.e_hist[0] = error;
        let u =
            difference_step(&self.tf, &self.u_hist, &self.e_hist).expect("histories sized from the transfer function");
        if !self.u_hist.is_empty() {
            self.u_hist.rotate_right(1);
            self.u_hist[0] = u;
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_euler_closed_form() {
        let tf = first_order_euler(2.0, 1.0, 3.0, 0.1).unwrap();
        assert_eq!(tf.b, vec![2.0, 2.0 * (0.1 - 1.0)]);
        assert!((tf.b[1] + 1.8).abs() < 1e-15);
        assert!((tf.a[0] + 0.7).abs() < 1e-15);
        let unity = first_order_euler(1.0, 10.0, 10.0, 0.1).unwrap();
        assert_eq!(unity.b, vec![1.0, 0.0]);
        assert_eq!(unity.a, vec![0.0]);
    }

    #[test]
    fn euler_substitute_matches_first_order_form() {
        let (k, a, b, dt) = (1.5, 0.4, 2.0, 0.05);
        let tf = ContinuousTf::new(vec![k, k * a], vec![1.0, b]).unwrap();
        let sub = euler_substitute(&tf, dt).unwrap();
        let direct = first_order_euler(k, a, b, dt).unwrap();
        for (x, y) in sub.b.iter().zip(&direct.b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((sub.a[0] - direct.a[0]).abs() < 1e-14);
    }

    #[test]
    fn euler_substitute_second_order_case() {
        // (s + 0.5) / (2 s^2 - 0.5 s + 1), T = 2  ->  denominator 2 z^2 - 5 z + 7
        let tf = ContinuousTf::new(vec![1.0, 0.5], vec![2.0, -0.5, 1.0]).unwrap();
        let d = euler_substitute(&tf, 2.0).unwrap();
        assert!((d.a[0] + 2.5).abs() < 1e-14);
        assert!((d.a[1] - 3.5).abs() < 1e-14);
        assert_eq!(d.a.len(), 2);
    }

    #[test]
    fn euler_substitute_static_gain() {
        let tf = ContinuousTf::new(vec![4.0], vec![1.0]).unwrap();
        let d = euler_substitute(&tf, 0.1).unwrap();
        assert_eq!(d.b, vec![4.0]);
        assert!(d.a.is_empty());
    }

    #[test]
    fn pid_tf_special_cases() {
        let p = pid_tf(&PidGains::new(1.0, 0.0, 0.0).unwrap(), 0.01).unwrap();
        assert_eq!(p.b.len(), 1);
        assert!((p.b[0] - 1.0).abs() < 1e-12);
        assert!(p.a.is_empty());

        let i = pid_tf(&PidGains::new(0.0, 1.0, 0.0).unwrap(), 0.1).unwrap();
        // 0.1 / (z - 1) = 0.1 z^-1 / (1 - z^-1)
        assert_eq!(i.a[0], -1.0);
        assert_eq!(i.b[0], 0.0);
        assert!((i.b[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn pid_tf_expanded_coefficients() {
        // Kp=2, Ki=3, Kd=0.5, T=0.01: Kp + Kd/T, -Kp + Ki T - 2 Kd/T, Kd/T
        let tf = pid_tf(&PidGains::new(2.0, 3.0, 0.5).unwrap(), 0.01).unwrap();
        assert!((tf.b[0] - 52.0).abs() < 1e-12);
        assert!((tf.b[1] - (-101.97)).abs() < 1e-12);
        assert!((tf.b[2] - 50.0).abs() < 1e-12);
        assert_eq!(tf.a[0], -1.0);
    }

    #[test]
    fn pid_step_kp_only_and_integrator() {
        let kp = PidGains::new(3.0, 0.0, 0.0).unwrap();
        let (u, _) = pid_step(&kp, 0.1, &ControllerState::default(), 0.7);
        assert!((u - 2.1).abs() < 1e-15);

        let ki = PidGains::new(0.0, 2.0, 0.0).unwrap();
        let mut st = ControllerState::default();
        let mut outputs = Vec::new();
        for _ in 0..4 {
            let (u, next) = pid_step(&ki, 0.1, &st, 1.0);
            outputs.push(u);
            st = next;
        }
        assert!((outputs[0]).abs() < 1e-15);
        for w in outputs.windows(2) {
            assert!((w[1] - w[0] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_step_basics() {
        let tf = DiscreteTf::new(vec![0.7, 0.2], vec![-0.5], 1.0).unwrap();
        assert_eq!(difference_step(&tf, &[0.0], &[1.0, 0.0]).unwrap(), 0.7);
        assert!(matches!(
            difference_step(&tf, &[], &[1.0, 0.0]),
            Err(DiscretizationError::ShortHistory { .. })
        ));
        let acc = DiscreteTf::new(vec![1.0, 0.0], vec![-1.0], 1.0).unwrap();
        let mut f = DifferenceFilter::new(acc);
        let ys: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&e| f.step(e)).collect();
        assert_eq!(ys, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn discrete_tf_padding_and_poles() {
        let tf = DiscreteTf::new(vec![1.0, 0.0, 0.0], vec![-0.5], 1.0).unwrap();
        assert_eq!(tf.a, vec![-0.5, 0.0]);
        let mut poles: Vec<f64> = tf.poles().unwrap().iter().map(|p| p.re).collect();
        poles.sort_by(f64::total_cmp);
        assert!(poles[0].abs() < 1e-12 && (poles[1] - 0.5).abs() < 1e-12);
    }
}
