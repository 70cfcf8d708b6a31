use mmctrl_core::discretization::*;
use mmctrl_core::stability::matrix_poles;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

/// Power-series expansion of `B(q) / A(q)` in the delay `q = z^-1`.
fn long_division(b: &[f64], a: &[f64], n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n];
    for k in 0..n {
        let mut acc = b.get(k).copied().unwrap_or(0.0);
        for (i, ai) in a.iter().enumerate() {
            if k > i {
                acc -= ai * h[k - 1 - i];
            }
        }
        h[k] = acc;
    }
    h
}

fn impulse_of(tf: &DiscreteTf, n: usize) -> Vec<f64> {
    let mut f = DifferenceFilter::new(tf.clone());
    (0..n).map(|k| f.step(if k == 0 { 1.0 } else { 0.0 })).collect()
}

#[test]
fn first_order_euler_examples() {
    let tf = first_order_euler(2.0, 1.0, 3.0, 0.1).unwrap();
    assert_eq!(tf.b.len(), 2);
    assert!((tf.b[0] - 2.0).abs() < 1e-15 && (tf.b[1] + 1.8).abs() < 1e-15);
    assert!((tf.a[0] + 0.7).abs() < 1e-15);

    let dt = 0.1;
    let unity = first_order_euler(1.0, 1.0 / dt, 1.0 / dt, dt).unwrap();
    assert_eq!(
        (unity.b.as_slice(), unity.a.as_slice()),
        ([1.0, 0.0].as_slice(), [0.0].as_slice())
    );
    let mut f = DifferenceFilter::new(unity);
    for e in [0.3, -1.0, 2.5] {
        assert_eq!(f.step(e), e);
    }
}

#[test]
fn first_order_euler_impulse_matches_recursion() {
    let tf = first_order_euler(1.5, 2.0, 4.0, 0.05).unwrap();
    // u[k] = -a1 u[k-1] + b0 e[k] + b1 e[k-1]
    let (b0, b1, a1) = (tf.b[0], tf.b[1], tf.a[0]);
    let mut expected = Vec::new();
    let (mut u1, mut e1) = (0.0, 0.0);
    for k in 0..40 {
        let e = if k == 0 { 1.0 } else { 0.0 };
        let u = -a1 * u1 + b0 * e + b1 * e1;
        expected.push(u);
        (u1, e1) = (u, e);
    }
    assert_eq!(impulse_of(&tf, 40), expected);
}

#[test]
fn euler_substitution_examples() {
    let tf = ContinuousTf::new(vec![1.0, 0.5], vec![2.0, -0.5, 1.0]).unwrap();
    let d = euler_substitute(&tf, 2.0).unwrap();
    // Denominator 2 z^2 - 5 z + 7 after clearing T^2, made monic.
    assert_eq!(d.a.len(), 2);
    assert!((d.a[0] + 2.5).abs() < 1e-14 && (d.a[1] - 3.5).abs() < 1e-14);

    let gain = euler_substitute(&ContinuousTf::new(vec![3.0], vec![1.0]).unwrap(), 0.1).unwrap();
    assert_eq!(gain.b, vec![3.0]);
    assert!(gain.a.is_empty());

    // K (s + a) / (s + b) agrees with the printed first-order formulas.
    let (k, a, b, dt) = (2.0, 1.0, 3.0, 0.1);
    let sub = euler_substitute(&ContinuousTf::new(vec![k, k * a], vec![1.0, b]).unwrap(), dt).unwrap();
    let direct = first_order_euler(k, a, b, dt).unwrap();
    for (x, y) in sub.b.iter().zip(&direct.b).chain(sub.a.iter().zip(&direct.a)) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(euler_substitute(&tf, 0.0).is_err());
}

#[test]
fn zoh_limit_cases() {
    let ss = ContinuousStateSpace::new(
        DMatrix::zeros(2, 2),
        DVector::from_vec(vec![1.0, -2.0]),
        DVector::from_vec(vec![0.0, 1.0]),
        0.0,
        DVector::zeros(2),
    )
    .unwrap();
    let d = zoh_discretize_ss(&ss, 0.3).unwrap();
    assert!((d.ad.clone() - DMatrix::identity(2, 2)).abs().max() < 1e-15);
    assert!((d.bd.clone() - &ss.b * 0.3).abs().max() < 1e-15);
    assert!(zoh_discretize_ss(&ss, -1.0).is_err());
}

#[test]
fn pid_tf_examples() {
    let p = pid_tf(&PidGains::new(1.0, 0.0, 0.0).unwrap(), 0.01).unwrap();
    assert_eq!((p.b.as_slice(), p.a.len()), ([1.0].as_slice(), 0));

    let i = pid_tf(&PidGains::new(0.0, 1.0, 0.0).unwrap(), 0.1).unwrap();
    // 0.1 z^-1 / (1 - z^-1), up to zero padding.
    assert_eq!(i.a[0], -1.0);
    assert_eq!(i.b[0], 0.0);
    assert!((i.b[1] - 0.1).abs() < 1e-15);
    assert!(i.a[1..].iter().chain(&i.b[2..]).all(|&c| c == 0.0));

    // Hand expansion: b = [Kp + Kd/T, -Kp + Ki T - 2 Kd/T, Kd/T] over (1 - z^-1).
    let full = pid_tf(&PidGains::new(2.0, 3.0, 0.5).unwrap(), 0.01).unwrap();
    let expected = [52.0, -101.97, 50.0];
    for (x, y) in full.b.iter().zip(expected) {
        assert!((x - y).abs() < 1e-11, "{x} vs {y}");
    }
    // The feedback side is zero-padded to the numerator length.
    assert_eq!(full.a, vec![-1.0, 0.0]);
}

#[test]
fn pid_step_examples() {
    let kp = PidGains::new(4.0, 0.0, 0.0).unwrap();
    let (u, _) = pid_step(&kp, 0.01, &ControllerState::default(), 0.25);
    assert_eq!(u, 1.0);

    let ki = PidGains::new(0.0, 2.0, 0.0).unwrap();
    let mut st = ControllerState::default();
    let mut outs = Vec::new();
    for _ in 0..5 {
        let (u, next) = pid_step(&ki, 0.1, &st, 1.0);
        outs.push(u);
        st = next;
    }
    for (k, u) in outs.iter().enumerate() {
        assert!((u - 0.2 * k as f64).abs() < 1e-12);
    }
}

#[test]
fn difference_step_examples() {
    let tf = DiscreteTf::new(vec![0.7, 0.2], vec![0.1], 1.0).unwrap();
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
fn root_examples() {
    let mut r = poly_roots(&[1.0, 0.0, -1.0], ROOT_TOL).unwrap();
    r.sort_by(|a, b| a.re.total_cmp(&b.re));
    assert!((r[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    assert!((r[1] - Complex64::new(1.0, 0.0)).norm() < 1e-12);

    let triple = poly_roots(&[1.0, -1.5, 0.75, -0.125], ROOT_TOL).unwrap();
    assert_eq!(triple.len(), 3);
    assert!(triple.iter().all(|z| (z - Complex64::new(0.5, 0.0)).norm() < 1e-6));

    let q = poly_roots(&[2.0, -5.0, 7.0], ROOT_TOL).unwrap();
    let expected = 56f64.sqrt() / 4.0;
    for z in &q {
        assert!((z.re - 1.25).abs() < 1e-12);
        assert!((z.im.abs() - 31f64.sqrt() / 4.0).abs() < 1e-12);
        assert!((z.norm() - expected).abs() < 1e-12);
    }
    assert!(poly_roots(&[0.0, 1.0], ROOT_TOL).is_err());
    assert!(poly_roots(&[1.0], ROOT_TOL).is_err());
}

fn roots_strategy() -> impl Strategy<Value = Vec<Complex64>> {
    // Up to three conjugate pairs or real roots, all within |z| <= 2.
    prop::collection::vec((0.0..2.0f64, 0.0..std::f64::consts::PI, any::<bool>()), 1..=3).prop_map(|spec| {
        let mut roots = Vec::new();
        for (r, th, pair) in spec {
            if pair {
                let z = Complex64::from_polar(r, th);
                roots.push(z);
                roots.push(z.conj());
            } else {
                roots.push(Complex64::new(r * th.cos(), 0.0));
            }
        }
        roots
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn roots_reconstruct_polynomial(roots in roots_strategy()) {
        let coeffs = poly_from_roots(&roots);
        let found = poly_roots(&coeffs, ROOT_TOL).unwrap();
        prop_assert_eq!(found.len(), roots.len());
        let back = poly_from_roots(&found);
        for (x, y) in back.iter().zip(&coeffs) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{:?} vs {:?}", back, coeffs);
        }
    }

    #[test]
    fn first_order_euler_is_exact(k in -10.0..10.0f64, a in -20.0..20.0f64, b in -20.0..20.0f64, dt in 1e-4..1.0f64) {
        let tf = first_order_euler(k, a, b, dt).unwrap();
        prop_assert_eq!(tf.b, vec![k, k * (a * dt - 1.0)]);
        prop_assert_eq!(tf.a, vec![b * dt - 1.0]);
    }

    #[test]
    fn zoh_diagonal_is_scalar_exponential(l1 in -50.0..5.0f64, l2 in -50.0..5.0f64, t in 1e-4..1.0f64) {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![l1, l2]));
        let ss = ContinuousStateSpace::new(a, DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![1.0, 0.0]), 0.0, DVector::zeros(2)).unwrap();
        let d = zoh_discretize_ss(&ss, t).unwrap();
        for (i, l) in [l1, l2].into_iter().enumerate() {
            let e = (l * t).exp();
            prop_assert!((d.ad[(i, i)] - e).abs() <= 1e-12 * e.max(1.0));
        }
        prop_assert!(d.ad[(0, 1)].abs() < 1e-14 && d.ad[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn zoh_maps_spectrum(sigma in -5.0..0.0f64, w in 0.0..5.0f64, p in prop::array::uniform4(-2.0..2.0f64), t in 1e-3..0.5f64) {
        let pm = DMatrix::from_row_slice(2, 2, &p);
        prop_assume!(pm.determinant().abs() > 0.1);
        // Real Jordan block with eigenvalues sigma +- i w, in a random basis.
        let j = DMatrix::from_row_slice(2, 2, &[sigma, w, -w, sigma]);
        let a = &pm * j * pm.clone().try_inverse().unwrap();
        let ss = ContinuousStateSpace::new(a, DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![0.0, 1.0]), 0.0, DVector::zeros(2)).unwrap();
        let d = zoh_discretize_ss(&ss, t).unwrap();
        let target = (sigma * t).exp();
        for z in matrix_poles(&d.ad).unwrap() {
            prop_assert!((z.norm() - target).abs() < 1e-9, "{} vs {}", z.norm(), target);
        }
    }

    #[test]
    fn pid_step_matches_transfer_function(kp in -2e4..2e4f64, ki in -1e5..1e5f64, kd in -1.0..1.0f64, t in 1e-4..0.1f64) {
        let g = PidGains::new(kp, ki, kd).unwrap();
        let tf = pid_tf(&g, t).unwrap();
        let oracle = long_division(&tf.b, &tf.a, 100);
        let mut st = ControllerState::default();
        for (k, h) in oracle.iter().enumerate() {
            let (u, next) = pid_step(&g, t, &st, if k == 0 { 1.0 } else { 0.0 });
            prop_assert!((u - h).abs() <= 1e-10 * (1.0 + h.abs()), "k={} {} vs {}", k, u, h);
            st = next;
        }
    }

    #[test]
    fn euler_keeps_denominator_degree(den in prop::collection::vec(-5.0..5.0f64, 2..6), lead in 0.5..3.0f64, t in 0.01..2.0f64) {
        let mut d = vec![lead];
        d.extend(den);
        let n = d.len() - 1;
        let tf = ContinuousTf::new(vec![1.0], d).unwrap();
        let out = euler_substitute(&tf, t).unwrap();
        prop_assert_eq!(out.a.len(), n);
    }

    #[test]
    fn difference_equation_is_linear(
        b in prop::collection::vec(-2.0..2.0f64, 1..4),
        a in prop::collection::vec(-0.9..0.9f64, 0..3),
        e1 in prop::collection::vec(-1.0..1.0f64, 30),
        e2 in prop::collection::vec(-1.0..1.0f64, 30),
    ) {
        let tf = DiscreteTf::new(b, a, 1.0).unwrap();
        let run = |e: &[f64]| {
            let mut f = DifferenceFilter::new(tf.clone());
            e.iter().map(|&x| f.step(x)).collect::<Vec<_>>()
        };
        let sum: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| x + y).collect();
        let (y1, y2, ys) = (run(&e1), run(&e2), run(&sum));
        for k in 0..30 {
            prop_assert!((ys[k] - y1[k] - y2[k]).abs() < 1e-12 * (1.0 + ys[k].abs()));
        }
    }

    #[test]
    fn difference_equation_matches_state_space(
        b in prop::collection::vec(-2.0..2.0f64, 3),
        a in prop::collection::vec(-0.6..0.6f64, 2),
        e in prop::collection::vec(-1.0..1.0f64, 50),
    ) {
        // Controllable canonical form of (b0 + b1 q + b2 q^2) / (1 + a1 q + a2 q^2).
        let tf = DiscreteTf::new(b.clone(), a.clone(), 1.0).unwrap();
        let am = DMatrix::from_row_slice(2, 2, &[-a[0], -a[1], 1.0, 0.0]);
        let bm = DVector::from_vec(vec![1.0, 0.0]);
        let cm = DVector::from_vec(vec![b[1] - b[0] * a[0], b[2] - b[0] * a[1]]);
        let mut x = DVector::zeros(2);
        let mut f = DifferenceFilter::new(tf);
        for &ek in &e {
            let y = cm.dot(&x) + b[0] * ek;
            x = &am * x + &bm * ek;
            prop_assert!((f.step(ek) - y).abs() < 1e-10);
        }
    }
}
