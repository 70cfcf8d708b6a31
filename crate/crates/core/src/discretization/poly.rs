//! Dense polynomials (highest degree first) and simultaneous root iteration.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::DiscretizationError;

/// Default stopping tolerance on the simultaneous update.
pub const ROOT_TOL: f64 = 1e-12;
/// Iteration cap for the Durand-Kerner loop.
pub const ROOT_MAX_ITER: usize = 1000;

pub fn poly_eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

pub fn poly_eval_real(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Sum of two polynomials aligned on their constant terms.
pub fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, &x) in a.iter().enumerate() {
        out[n - a.len() + i] += x;
    }
    for (i, &y) in b.iter().enumerate() {
        out[n - b.len() + i] += y;
    }
    out
}

pub fn poly_scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

/// Drops leading zero coefficients, keeping at least one entry.
pub fn poly_trim(a: &[f64]) -> Vec<f64> {
    let first = a.iter().position(|&c| c != 0.0).unwrap_or(a.len().saturating_sub(1));
    a[first.min(a.len())..].to_vec()
}

/// Monic polynomial with the given roots (real coefficients assumed; the
/// imaginary residue of conjugate pairs is discarded).
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut acc = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (i, &c) in acc.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}

/// Characteristic polynomial `det(zI - A)` via Hessenberg reduction and the
/// Hyman-style recurrence over leading principal submatrices.
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "characteristic polynomial of a non-square matrix");
    if n == 0 {
        return vec![1.0];
    }
    let h = a.clone().hessenberg().h();
    let mut polys: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    polys.push(vec![1.0]);
    for k in 0..n {
        let mut pk = poly_mul(&[1.0, -h[(k, k)]], &polys[k]);
        let mut prod = 1.0;
        for i in (0..k).rev() {
            prod *= h[(i + 1, i)];
            let term = poly_scale(&polys[i], h[(i, k)] * prod);
            pk = poly_add(&pk, &poly_scale(&term, -1.0));
        }
        polys.push(pk);
    }
    polys.pop().unwrap()
}

/// Taylor coefficients `p^(k)(c) / k!` for `k = 0..=deg`.
fn taylor_coefficients(coeffs: &[f64], c: Complex64) -> Vec<Complex64> {
    let mut work: Vec<Complex64> = coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let n = work.len();
    let mut out = Vec::with_capacity(n);
    for len in (1..=n).rev() {
        for i in 1..len {
            let prev = work[i - 1];
            work[i] += prev * c;
        }
        out.push(work[len - 1]);
    }
    out
}

fn rounding_scale(coeffs: &[f64], z: Complex64) -> f64 {
    let r = z.norm();
    coeffs.iter().fold(0.0, |acc, &c| acc * r + c.abs())
}

/// Roots of a real polynomial by Durand-Kerner (Weierstrass) iteration.
///
/// Initial guesses lie on a circle of radius `1 + max|c_i / c_0|` rotated by
/// 0.4 rad. Iteration stops when every update is below `tol` relative to the
/// root magnitude, or when every residual sits at the rounding floor (the
/// usual situation for multiple roots). Clusters that are indistinguishable
/// from a multiple root at rounding level are replaced by their centroid.
pub fn poly_roots(coeffs: &[f64], tol: f64) -> Result<Vec<Complex64>, DiscretizationError> {
    if coeffs.len() < 2 {
        return Err(DiscretizationError::DegreeTooLow);
    }
    let lead = coeffs[0];
    if lead == 0.0 || !lead.is_finite() {
        return Err(DiscretizationError::ZeroLeadingCoefficient);
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(DiscretizationError::NonFinite("polynomial coefficient"));
    }
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let n = monic.len() - 1;
    if n == 1 {
        return Ok(vec![Complex64::new(-monic[1], 0.0)]);
    }

    let radius = 1.0 + monic[1..].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4))
        .collect();

    let floor = |zi: Complex64| 8.0 * (n as f64) * f64::EPSILON * rounding_scale(&monic, zi);
    let mut converged = false;
    for _ in 0..ROOT_MAX_ITER {
        let mut deltas = vec![Complex64::new(0.0, 0.0); n];
        let mut max_rel = 0.0_f64;
        let mut at_floor = true;
        for i in 0..n {
            let p = poly_eval(&monic, z[i]);
            if p.norm() > floor(z[i]) {
                at_floor = false;
            }
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    let mut diff = z[i] - z[j];
                    if diff.norm() == 0.0 {
                        diff = Complex64::new(f64::EPSILON, f64::EPSILON) * (1.0 + z[i].norm());
                    }
                    denom *= diff;
                }
            }
            deltas[i] = p / denom;
            max_rel = max_rel.max(deltas[i].norm() / (1.0 + z[i].norm()));
        }
        if at_floor {
            converged = true;
            break;
        }
        for (zi, d) in z.iter_mut().zip(&deltas) {
            *zi -= d;
        }
        if max_rel <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let residual = z.iter().map(|&zi| poly_eval(&monic, zi).norm()).fold(0.0, f64::max);
        return Err(DiscretizationError::RootsDidNotConverge { best: z, residual });
    }
    merge_multiple_roots(&monic, &mut z);
    for zi in z.iter_mut() {
        if zi.im.abs() <= 4.0 * f64::EPSILON * (1.0 + zi.re.abs()) {
            zi.im = 0.0;
        }
    }
    Ok(z)
}

fn merge_multiple_roots(monic: &[f64], z: &mut [Complex64]) {
    let n = z.len();
    let mut group: Vec<usize> = (0..n).collect();
    fn find(g: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while g[r] != r {
            r = g[r];
        }
        g[i] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = 1.0 + z[i].norm().max(z[j].norm());
            if (z[i] - z[j]).norm() <= 1e-3 * scale {
                let (a, b) = (find(&mut group, i), find(&mut group, j));
                group[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut group, i)).collect();
    let mut seen = Vec::new();
    for &r in &roots {
        if seen.contains(&r) {
            continue;
        }
        seen.push(r);
        let members: Vec<usize> = (0..n).filter(|&i| roots[i] == r).collect();
        let m = members.len();
        if m < 2 {
            continue;
        }
        let centroid = members.iter().map(|&i| z[i]).sum::<Complex64>() / m as f64;
        let taylor = taylor_coefficients(monic, centroid);
        let lead = taylor[m].norm();
        if lead == 0.0 {
            continue;
        }
        let noise = 16.0 * f64::EPSILON * rounding_scale(monic, centroid);
        let radius = (noise / lead).powf(1.0 / m as f64);
        let spread = members.iter().map(|&i| (z[i] - centroid).norm()).fold(0.0, f64::max);
        if spread <= 10.0 * radius {
            for &i in &members {
                z[i] = centroid;
            }
        }
    }
}

/// Weierstrass corrections of root estimates against an arbitrary monic
/// evaluator, e.g. `det(zI - A)` computed by LU. Coincident estimates are
/// left untouched.
pub fn polish_roots<F>(roots: &mut [Complex64], eval: F, iterations: usize)
where
    F: Fn(Complex64) -> Complex64,
{
    let n = roots.len();
    for _ in 0..iterations {
        let mut deltas = vec![Complex64::new(0.0, 0.0); n];
        let mut max_rel = 0.0_f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            let mut degenerate = false;
            for j in 0..n {
                if i != j {
                    let diff = roots[i] - roots[j];
                    if diff.norm() <= 1e-14 * (1.0 + roots[i].norm()) {
                        degenerate = true;
                        break;
                    }
                    denom *= diff;
                }
            }
            if degenerate {
                continue;
            }
            let d = eval(roots[i]) / denom;
            if d.re.is_finite() && d.im.is_finite() {
                deltas[i] = d;
                max_rel = max_rel.max(d.norm() / (1.0 + roots[i].norm()));
            }
        }
        for (r, d) in roots.iter_mut().zip(&deltas) {
            *r -= d;
        }
        if max_rel <= 1e-16 {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        v
    }

    #[test]
    fn difference_of_squares() {
        let r = sorted_re(poly_roots(&[1.0, 0.0, -1.0], ROOT_TOL).unwrap());
        assert!((r[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!((r[1] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn triple_root() {
        let p = poly_from_roots(&[Complex64::new(0.5, 0.0); 3]);
        let r = poly_roots(&p, ROOT_TOL).unwrap();
        assert_eq!(r.len(), 3);
        for z in r {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-6, "{z}");
        }
    }

    #[test]
    fn complex_pair_against_quadratic_formula() {
        // 2z^2 - 5z + 7: z = (5 +- i sqrt(31)) / 4
        let r = poly_roots(&[2.0, -5.0, 7.0], ROOT_TOL).unwrap();
        let expected = [
            Complex64::new(1.25, 31f64.sqrt() / 4.0),
            Complex64::new(1.25, -(31f64.sqrt()) / 4.0),
        ];
        for e in expected {
            assert!(r.iter().any(|z| (z - e).norm() < 1e-12));
        }
        for z in r {
            assert!((z.norm() - 56f64.sqrt() / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            poly_roots(&[3.0], ROOT_TOL),
            Err(DiscretizationError::DegreeTooLow)
        ));
        assert!(matches!(
            poly_roots(&[0.0, 1.0, 2.0], ROOT_TOL),
            Err(DiscretizationError::ZeroLeadingCoefficient)
        ));
    }

    #[test]
    fn charpoly_of_companion() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = characteristic_polynomial(&a);
        let expected = [1.0, -2.0, 1.0, -0.5];
        for (x, y) in p.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_close_roots_are_not_merged() {
        let roots = [
            Complex64::new(0.9999, 0.0),
            Complex64::new(0.9997, 0.0),
            Complex64::new(0.5, 0.0),
        ];
        let p = poly_from_roots(&roots);
        let r = sorted_re(poly_roots(&p, ROOT_TOL).unwrap());
        assert!((r[1].re - 0.9997).abs() < 1e-9);
        assert!((r[2].re - 0.9999).abs() < 1e-9);
    }
}
