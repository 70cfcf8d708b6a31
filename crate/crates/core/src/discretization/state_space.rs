//! State-space models, matrix exponential and hold-equivalent discretization.

use nalgebra::{DMatrix, DVector};

use super::poly::characteristic_polynomial;
use super::{ContinuousTf, DiscreteTf, DiscretizationError};
use crate::plant::LinearizedPlant;

/// Single-input single-output affine continuous model
/// `x' = A x + B u + E`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub e: DVector<f64>,
}

impl ContinuousStateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        d: f64,
        e: DVector<f64>,
    ) -> Result<Self, DiscretizationError> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n || e.len() != n {
            return Err(DiscretizationError::DimensionMismatch(format!(
                "A {}x{}, B {}, C {}, E {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len(),
                e.len()
            )));
        }
        Ok(Self { a, b, c, d, e })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Controllable canonical realization of a proper transfer function.
    pub fn from_tf(tf: &ContinuousTf) -> Self {
        let lead = tf.den[0];
        let den: Vec<f64> = tf.den.iter().map(|c| c / lead).collect();
        let n = den.len() - 1;
        let mut num = vec![0.0; n + 1];
        let offset = n + 1 - tf.num.len();
        for (i, &c) in tf.num.iter().enumerate() {
            num[offset + i] = c / lead;
        }
        let d = num[0];
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -den[j + 1];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        if n > 0 {
            b[0] = 1.0;
        }
        let c = DVector::from_iterator(n, (0..n).map(|j| num[j + 1] - den[j + 1] * d));
        Self {
            a,
            b,
            c,
            d,
            e: DVector::zeros(n),
        }
    }
}

impl From<&LinearizedPlant> for ContinuousStateSpace {
    fn from(p: &LinearizedPlant) -> Self {
        Self {
            a: DMatrix::from_iterator(2, 2, p.a.iter().copied()),
            b: DVector::from_iterator(2, p.b.iter().copied()),
            c: DVector::from_iterator(2, p.c.iter().copied()),
            d: p.d,
            e: DVector::from_iterator(2, p.e.iter().copied()),
        }
    }
}

/// Discrete companion `x[k+1] = Ad x[k] + Bd u[k] + Ed`, `y = Cd x + Dd u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    pub ad: DMatrix<f64>,
    pub bd: DVector<f64>,
    pub cd: DVector<f64>,
    pub dd: f64,
    pub ed: DVector<f64>,
    pub period: f64,
}

impl DiscreteStateSpace {
    pub fn order(&self) -> usize {
        self.ad.nrows()
    }

    /// Input-output transfer function (affine drive dropped).
    ///
    /// The numerator uses `C adj(zI - A) B = det(zI - A + B C) - det(zI - A)`.
    pub fn to_tf(&self) -> Result<DiscreteTf, DiscretizationError> {
        let den = characteristic_polynomial(&self.ad);
        let shifted = &self.ad - &self.bd * self.cd.transpose();
        let with_feedback = characteristic_polynomial(&shifted);
        let num: Vec<f64> = with_feedback
            .iter()
            .zip(&den)
            .map(|(f, d)| f - d + self.dd * d)
            .collect();
        DiscreteTf::from_z_polys(&num, &den, self.period)
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, DiscretizationError> {
    let n = a.nrows();
    let norm = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(DiscretizationError::NonFinite("matrix exponential input"));
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() <= f64::EPSILON * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|x| !x.is_finite()) {
        return Err(DiscretizationError::NonFinite("matrix exponential"));
    }
    Ok(result)
}

fn check_period(period: f64) -> Result<(), DiscretizationError> {
    if period > 0.0 && period.is_finite() {
        Ok(())
    } else {
        Err(DiscretizationError::InvalidPeriod(period))
    }
}

/// Exact discretization under a zero-order hold on `u`.
///
/// `Ad = exp(A T)` and `G = int_0^T exp(A s) ds` both come from one
/// exponential of the block matrix `[[A, I], [0, 0]] * T`.
pub fn zoh_discretize_ss(ss: &ContinuousStateSpace, period: f64) -> Result<DiscreteStateSpace, DiscretizationError> {
    check_period(period)?;
    let n = ss.order();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(&ss.a * period));
    block
        .view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::<f64>::identity(n, n) * period));
    let exp = expm(&block).map_err(|_| DiscretizationError::ExponentialOverflow {
        period,
        spectral_estimate: spectral_estimate(&ss.a),
    })?;
    let ad = exp.view((0, 0), (n, n)).into_owned();
    let gamma = exp.view((0, n), (n, n)).into_owned();
    Ok(DiscreteStateSpace {
        ad,
        bd: &gamma * &ss.b,
        cd: ss.c.clone(),
        dd: ss.d,
        ed: &gamma * &ss.e,
        period,
    })
}

/// Hold-equivalent of a linearized braking plant.
pub fn zoh_discretize(plant: &LinearizedPlant, period: f64) -> Result<DiscreteStateSpace, DiscretizationError> {
    zoh_discretize_ss(&ContinuousStateSpace::from(plant), period)
}

/// Forward-Euler companion: `Ad = I + A T`, `Bd = B T`, `Ed = E T`.
pub fn euler_discretize_ss(ss: &ContinuousStateSpace, period: f64) -> Result<DiscreteStateSpace, DiscretizationError> {
    check_period(period)?;
    let n = ss.order();
    Ok(DiscreteStateSpace {
        ad: DMatrix::identity(n, n) + &ss.a * period,
        bd: &ss.b * period,
        cd: ss.c.clone(),
        dd: ss.d,
        ed: &ss.e * period,
        period,
    })
}

/// Hold-equivalent of a transfer function through its canonical realization.
pub fn zoh_tf(tf: &ContinuousTf, period: f64) -> Result<DiscreteTf, DiscretizationError> {
    let ss = ContinuousStateSpace::from_tf(tf);
    zoh_discretize_ss(&ss, period)?.to_tf()
}

fn spectral_estimate(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs())) * a.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_hold() {
        let ss = ContinuousStateSpace::new(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            0.0,
            DVector::zeros(2),
        )
        .unwrap();
        let d = zoh_discretize_ss(&ss, 0.3).unwrap();
        assert_eq!(d.ad, DMatrix::identity(2, 2));
        assert!((d.bd[0] - 0.3).abs() < 1e-15 && (d.bd[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn diagonal_dynamics_match_scalar_exponentials() {
        let ss = ContinuousStateSpace::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 0.7])),
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            0.0,
            DVector::from_vec(vec![0.5, 0.0]),
        )
        .unwrap();
        let t = 0.25;
        let d = zoh_discretize_ss(&ss, t).unwrap();
        assert!((d.ad[(0, 0)] - (-3.0f64 * t).exp()).abs() < 1e-12);
        assert!((d.ad[(1, 1)] - (0.7f64 * t).exp()).abs() < 1e-12);
        assert_eq!(d.ad[(0, 1)], 0.0);
        // B column: (e^{aT} - 1) / a
        assert!((d.bd[0] - ((-3.0f64 * t).exp() - 1.0) / -3.0).abs() < 1e-12);
        assert!((d.ed[0] - 0.5 * ((-3.0f64 * t).exp() - 1.0) / -3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_period() {
        let ss = ContinuousStateSpace::from_tf(&ContinuousTf::new(vec![1.0], vec![1.0, 1.0]).unwrap());
        assert!(matches!(
            zoh_discretize_ss(&ss, 0.0),
            Err(DiscretizationError::InvalidPeriod(_))
        ));
    }

    #[test]
    fn overflow_is_reported() {
        let ss = ContinuousStateSpace::new(
            DMatrix::from_element(1, 1, 1e6),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            0.0,
            DVector::zeros(1),
        )
        .unwrap();
        assert!(matches!(
            zoh_discretize_ss(&ss, 10.0),
            Err(DiscretizationError::ExponentialOverflow { .. })
        ));
    }

    #[test]
    fn first_order_hold_equivalent() {
        // 1/(s+2) held over T: pole e^{-2T}, gain (1 - e^{-2T})/2.
        let tf = ContinuousTf::new(vec![1.0], vec![1.0, 2.0]).unwrap();
        let t = 0.1;
        let d = zoh_tf(&tf, t).unwrap();
        let p = (-2.0f64 * t).exp();
        assert!((d.a[0] + p).abs() < 1e-12);
        assert!(d.b[0].abs() < 1e-12);
        assert!((d.b[1] - (1.0 - p) / 2.0).abs() < 1e-12);
    }
}
