//! Small dense linear algebra for 3×3 problems: cubic roots, eigenvectors,
//! complementary invariant subspaces and a partial-pivot solver for the
//! modest systems built by the continuation code.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;

/// Tolerance used to decide whether a root is real.
pub const IMAG_EPS: f64 = 1e-9;

/// Returns true when `z` counts as complex under the classification threshold
/// `|Im z| > 1e-9 (1 + |Re z|)`.
pub fn is_complex(z: Complex64) -> bool {
    z.im.abs() > IMAG_EPS * (1.0 + z.re.abs())
}

/// Sorts by real part ascending, ties broken by imaginary part ascending.
pub fn sort_eigenvalues(values: &mut [Complex64]) {
    values.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

fn cubic_eval(p1: f64, p2: f64, p3: f64, x: f64) -> (f64, f64) {
    let v = ((x + p1) * x + p2) * x + p3;
    let d = (3.0 * x + 2.0 * p1) * x + p2;
    (v, d)
}

fn polish_real_root(p1: f64, p2: f64, p3: f64, mut x: f64) -> f64 {
    for _ in 0..8 {
        let (v, d) = cubic_eval(p1, p2, p3, x);
        if d == 0.0 || v == 0.0 {
            break;
        }
        let step = v / d;
        let next = x - step;
        // keep the better of the two
        if cubic_eval(p1, p2, p3, next).0.abs() >= v.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Roots of `x² + b x + c`, computed without cancellation.
pub fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let q = -0.5 * (b + b.signum() * s);
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        }
        let r1 = q;
        let r2 = c / q;
        [Complex64::new(r1, 0.0), Complex64::new(r2, 0.0)]
    } else {
        let re = -0.5 * b;
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(re, -im), Complex64::new(re, im)]
    }
}

/// Roots of the monic cubic `λ³ + p1 λ² + p2 λ + p3`, sorted by real part.
///
/// A real root is found with Cardano's formula (trigonometric form when all
/// roots are real), polished by Newton on the original polynomial and then
/// deflated to a quadratic.
pub fn cubic_roots(p1: f64, p2: f64, p3: f64) -> [Complex64; 3] {
    let shift = p1 / 3.0;
    let p = p2 - p1 * p1 / 3.0;
    let q = 2.0 * p1 * p1 * p1 / 27.0 - p1 * p2 / 3.0 + p3;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let real_root = if p == 0.0 && q == 0.0 {
        -shift
    } else if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 - q.signum() * s).cbrt();
        let t = if u != 0.0 { u - p / (3.0 * u) } else { 0.0 };
        t - shift
    } else {
        // three real roots; take the one of largest magnitude for deflation
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = if m != 0.0 {
            (3.0 * q / (p * m)).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let theta = arg.acos() / 3.0;
        let mut best = f64::NAN;
        for k in 0..3 {
            let t = m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift;
            if best.is_nan() || t.abs() > best.abs() {
                best = t;
            }
        }
        best
    };
    let r = polish_real_root(p1, p2, p3, real_root);
    let b = p1 + r;
    let c = if r.abs() > 1.0 && r != 0.0 {
        -p3 / r
    } else {
        p2 + r * b
    };
    let [a1, a2] = quadratic_roots(b, c);
    let mut roots = [Complex64::new(r, 0.0), a1, a2];
    // polish the real quadratic roots too, they inherit deflation error
    for z in roots.iter_mut().skip(1) {
        if z.im == 0.0 {
            z.re = polish_real_root(p1, p2, p3, z.re);
        }
    }
    sort_eigenvalues(&mut roots);
    roots
}

/// Coefficients `(p1, p2, p3)` of `det(λI − A) = λ³ + p1 λ² + p2 λ + p3`.
pub fn char_poly_coeffs(a: &Matrix3<f64>) -> (f64, f64, f64) {
    let trace = a.trace();
    let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)] + a[(0, 0)] * a[(2, 2)]
        - a[(0, 2)] * a[(2, 0)]
        + a[(1, 1)] * a[(2, 2)]
        - a[(1, 2)] * a[(2, 1)];
    (-trace, minors, -a.determinant())
}

/// Applies the sign convention used for every eigenvector in the crate: unit
/// length, and the first component whose magnitude exceeds `1e-8` of the norm
/// is real-positive.
pub fn normalize_sign(v: Vector3<Complex64>) -> Vector3<Complex64> {
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        return v;
    }
    let mut v = v / Complex64::new(n, 0.0);
    if let Some(c) = v.iter().find(|c| c.norm() > 1e-8).copied() {
        let phase = c / Complex64::new(c.norm(), 0.0);
        v = v / phase;
    }
    v
}

/// Null vector of `A − λI` taken as the largest cross product of two rows.
pub fn eigenvector(a: &Matrix3<f64>, lambda: Complex64) -> Vector3<Complex64> {
    let m: Matrix3<Complex64> = a.map(|x| Complex64::new(x, 0.0)) - Matrix3::identity() * lambda;
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let cross = |u: &Vector3<Complex64>, v: &Vector3<Complex64>| {
        Vector3::new(
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        )
    };
    let candidates = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|x, y| {
            let nx: f64 = x.iter().map(|c| c.norm_sqr()).sum();
            let ny: f64 = y.iter().map(|c| c.norm_sqr()).sum();
            nx.partial_cmp(&ny).unwrap_or(std::cmp::Ordering::Equal)
        })
        .copied()
        .unwrap_or_else(Vector3::zeros);
    let norm: f64 = best.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm < 1e-300 {
        // A − λI vanished to rounding: any direction is an eigenvector
        return Vector3::new(Complex64::new(1.0, 0.0), Complex64::default(), Complex64::default());
    }
    normalize_sign(best)
}

/// Real unit eigenvector for a simple real eigenvalue.
pub fn real_eigenvector(a: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    eigenvector(a, Complex64::new(lambda, 0.0)).map(|c| c.re).normalize()
}

/// Orthonormal basis of the two-dimensional invariant subspace complementary
/// to the eigenvector of the simple real eigenvalue `lambda`, computed as the
/// range of `A − λI`. Well defined when the complementary block is defective
/// or a complex pair.
pub fn complementary_subspace(a: &Matrix3<f64>, lambda: f64) -> [Vector3<f64>; 2] {
    let m = a - Matrix3::identity() * lambda;
    let mut cols: Vec<Vector3<f64>> = (0..3).map(|j| m.column(j).into_owned()).collect();
    cols.sort_by(|x, y| y.norm().partial_cmp(&x.norm()).unwrap_or(std::cmp::Ordering::Equal));
    let q1 = cols[0].normalize();
    let mut best = Vector3::zeros();
    for c in &cols[1..] {
        let r = c - q1 * q1.dot(c);
        if r.norm() > best.norm() {
            best = r;
        }
    }
    let q2 = if best.norm() > 1e-14 * cols[0].norm() {
        best.normalize()
    } else {
        // rank deficiency: complete with any orthogonal direction
        let trial = if q1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        (trial - q1 * q1.dot(&trial)).normalize()
    };
    [q1, q2]
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting. Returns
/// `None` when a pivot falls below `1e-300` or the result is not finite.
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}
