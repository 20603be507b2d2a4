//! Two-parameter Hopf loci and the first Lyapunov coefficient.

use nalgebra::{DVector, Matrix3, Vector3};
use num_complex::Complex64;

use super::{continue_branch, Branch, ContinuationSettings, SpecialKind, ZeroProblem};
use crate::error::{Error, Result};
use crate::local::Subject;
use crate::model::{self, CharPoly, Params, ParamName, State};

/// Characteristic polynomial at the subject equilibrium. For E3,4 the
/// coefficients are continued polynomially past the existence boundary,
/// where `p3 = 2 x²` changes sign.
pub fn char_poly(p: &Params, subject: Subject) -> Result<CharPoly> {
    match subject {
        Subject::E1 => Ok(model::char_poly_at_origin(p)),
        Subject::E2 => Ok(model::char_poly_at_origin(&model::conjugate_params(p)?.0)),
        Subject::E34 => {
            let a = p.eps2 + p.b_coef * p.eps1;
            let c = p.eps3 + 2.0 * p.d_coef * p.eps1;
            Ok(CharPoly { p1: -(a + c), p2: a * c, p3: -2.0 * p.eps1 * (p.eps3 + p.d_coef * p.eps1) })
        }
    }
}

pub fn subject_state(p: &Params, subject: Subject) -> Result<State> {
    match subject {
        Subject::E1 => Ok(State::zeros()),
        Subject::E2 => {
            let (_, shift) = model::conjugate_params(p)?;
            Ok(State::new(0.0, 0.0, shift))
        }
        Subject::E34 => model::e3_state(p).ok_or_else(|| Error::Domain("E3,4 do not exist".into())),
    }
}

/// Unknowns are the two free parameters; the residual is the Hurwitz
/// expression `p1 p2 - p3`.
#[derive(Debug, Clone)]
pub struct HopfProblem {
    pub subject: Subject,
    pub base: Params,
    pub free: [ParamName; 2],
    pub weights: [f64; 2],
}

impl HopfProblem {
    pub fn new(subject: Subject, base: Params, free: [ParamName; 2]) -> Self {
        Self { subject, base, free, weights: [1.0, 1.0] }
    }

    pub fn params(&self, u: &DVector<f64>) -> Params {
        self.base.with(self.free[0], u[0]).with(self.free[1], u[1])
    }
}

impl ZeroProblem for HopfProblem {
    fn unknowns(&self) -> usize {
        2
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let cp = char_poly(&self.params(u), self.subject)?;
        Ok(DVector::from_element(1, cp.hurwitz()))
    }

    fn names(&self) -> Vec<String> {
        self.free.iter().map(|n| n.to_string()).collect()
    }

    /// `p2` (zero where the Hopf locus ends) and the first Lyapunov
    /// coefficient (zero at a degenerate Hopf point). For E3,4 also the two
    /// pitchfork factors `e1` and `e3 + D e1`: the locus crosses a pitchfork
    /// line only through a double-zero point, where `p2` has a double root.
    fn test_functions(&self, u: &DVector<f64>) -> Vec<(SpecialKind, f64)> {
        let p = self.params(u);
        let p2 = char_poly(&p, self.subject).map_or(f64::NAN, |c| c.p2);
        let l1 = first_lyapunov_coefficient_with_tol(&p, self.subject, 1e-7).unwrap_or(f64::NAN);
        let mut v = vec![(SpecialKind::UserTestZero, p2), (SpecialKind::DegenerateHopf, l1)];
        if self.subject == Subject::E34 {
            v.push((SpecialKind::UserTestZero, p.eps1));
            v.push((SpecialKind::UserTestZero, p.eps3 + p.d_coef * p.eps1));
        }
        v
    }

    fn domain(&self, u: &DVector<f64>) -> Option<String> {
        let p = self.params(u);
        let cp = match char_poly(&p, self.subject) {
            Ok(c) => c,
            Err(e) => return Some(e.to_string()),
        };
        if self.subject == Subject::E34 && cp.p3 <= 0.0 {
            return Some("E3,4 cease to exist".into());
        }
        (cp.p2 <= 0.0).then(|| "p2 <= 0: Hopf condition leaves validity".into())
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

/// Continues the Hopf locus of `subject` in the plane of `free` from `seed`.
pub fn hopf_curve(problem: &HopfProblem, seed: [f64; 2], settings: &ContinuationSettings) -> Result<Branch> {
    continue_branch(problem, &DVector::from_column_slice(&seed), settings)
}

/// First Lyapunov coefficient of the Hopf point of `subject`, normalised with
/// `<q, q> = 1`, `<p, q> = 1`. Negative means supercritical.
pub fn first_lyapunov_coefficient(p: &Params, subject: Subject) -> Result<f64> {
    first_lyapunov_coefficient_with_tol(p, subject, 1e-9)
}

fn first_lyapunov_coefficient_with_tol(p: &Params, subject: Subject, tol: f64) -> Result<f64> {
    let s = subject_state(p, subject)?;
    let a = model::jacobian(p, &s);
    let lambda = CharPoly::from_matrix(&a)
        .roots()
        .into_iter()
        .filter(|l| l.im > 0.0)
        .max_by(|x, y| x.im.total_cmp(&y.im))
        .ok_or_else(|| Error::NoImaginaryPair(format!("spectrum of {subject:?} is real")))?;
    if lambda.re.abs() > tol * (1.0 + lambda.norm()) {
        return Err(Error::NoImaginaryPair(format!("closest pair {lambda} is not on the imaginary axis")));
    }
    Ok(lyapunov_from_pair(p, &a, lambda.im))
}

fn lyapunov_from_pair(p: &Params, a: &Matrix3<f64>, omega: f64) -> f64 {
    let i = Complex64::new(0.0, 1.0);
    let iw = i * omega;
    let q = crate::linalg::eigenvector(a, iw);
    let q = q / Complex64::new(q.norm(), 0.0);
    let mut pv = crate::linalg::eigenvector(&a.transpose(), -iw);
    let inner = |u: &Vector3<Complex64>, v: &Vector3<Complex64>| u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>();
    let c = inner(&pv, &q);
    pv /= c.conj();
    let qc = q.map(|z| z.conj());
    let ac: Matrix3<Complex64> = a.map(|x| Complex64::new(x, 0.0));
    let bqqc = model::second_derivative(p, &q, &qc);
    let bqq = model::second_derivative(p, &q, &q);
    let h11 = ac.lu().solve(&bqqc).expect("hyperbolic at zero");
    let shifted: Matrix3<Complex64> = Matrix3::identity() * (iw * 2.0) - ac;
    let h20 = shifted.lu().solve(&bqq).expect("no 2iω resonance");
    let r = inner(&pv, &model::second_derivative(p, &qc, &h20)) - inner(&pv, &model::second_derivative(p, &q, &h11)) * 2.0;
    r.re / (2.0 * omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::ContinuationSettings;

    fn base(eps1: f64, eps3: f64) -> Params {
        Params::reference(eps1, eps3)
    }

    /// Planar reduction on the quadratic centre manifold `z = a x² + b x y + c y²`
    /// of the origin at `e2 = 0`; the sign of the cubic normal-form coefficient
    /// must agree with the coefficient computed from eigenvectors.
    fn reduced_sign(eps1: f64, eps3: f64, b_coef: f64) -> f64 {
        let w2 = -eps1;
        // -b w² = e3 a + 1, 2a - 2c w² = e3 b, b = e3 c
        let m = nalgebra::Matrix3::new(eps3, w2, 0.0, 2.0, -eps3, -2.0 * w2, 0.0, 1.0, -eps3);
        let h = m.lu().solve(&nalgebra::Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        let (a, b, c) = (h[0], h[1], h[2]);
        (6.0 * b_coef * c + 2.0 * (b_coef * a - b) / w2).signum()
    }

    #[test]
    fn e1_coefficient_sign_matches_centre_manifold_reduction() {
        let mut checked = 0;
        for eps1 in [-0.3, -1.0, -2.5, -7.0] {
            for eps3 in [-0.4, -0.05, 0.05, 0.3, 1.5] {
                for b in [-0.6, -0.1, 0.2, 0.8] {
                    let p = Params::new(eps1, 0.0, eps3, b, 0.01);
                    let l1 = first_lyapunov_coefficient(&p, Subject::E1).unwrap();
                    if l1.abs() > 1e-8 {
                        assert_eq!(l1.signum(), reduced_sign(eps1, eps3, b), "{p:?} {l1}");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 70);
    }

    #[test]
    fn requires_an_imaginary_pair() {
        assert!(first_lyapunov_coefficient(&base(-9.0, 0.08), Subject::E2).is_err());
        assert!(first_lyapunov_coefficient(&base(1.0, 0.08), Subject::E1).is_err());
    }

    #[test]
    fn e2_locus_is_the_line_eps3_point_one() {
        let problem = HopfProblem::new(Subject::E2, base(-10.5, 0.1), [ParamName::Eps1, ParamName::Eps3]);
        let s = ContinuationSettings { direction: 1.0, orient_index: 0, max_points: 200, h_max: 0.05, ..Default::default() };
        let b = hopf_curve(&problem, [-10.5, 0.1], &s).unwrap();
        for u in &b.points {
            assert!((u[1] - 0.1).abs() < 1e-10);
            assert!(u[0] < -10.0);
        }
        assert!(b.termination.contains("p2"), "{}", b.termination);
        let end: Vec<_> = b.specials(SpecialKind::UserTestZero).collect();
        assert!((end[0].x[0] + 10.0).abs() < 1e-9);
        // degenerate Hopf point between TB and the seed
        let dh: Vec<_> = b.specials(SpecialKind::DegenerateHopf).collect();
        assert_eq!(dh.len(), 1);
        assert!((dh[0].x[0] + 10.2487498).abs() < 1e-2, "{:?}", dh[0].x);
        assert!(first_lyapunov_coefficient(&base(-10.1, 0.1), Subject::E2).unwrap() > 0.0);
        assert!(first_lyapunov_coefficient(&base(-10.5, 0.1), Subject::E2).unwrap() < 0.0);
    }

    #[test]
    fn e1_locus_is_eps2_zero() {
        let problem = HopfProblem::new(Subject::E1, Params::new(-1.0, 0.0, 0.05, -0.1, 0.01), [ParamName::Eps1, ParamName::Eps2]);
        let s = ContinuationSettings { direction: -1.0, orient_index: 0, max_points: 40, ..Default::default() };
        let b = hopf_curve(&problem, [-1.0, 0.0], &s).unwrap();
        assert!(b.points.len() > 30);
        for u in &b.points {
            assert!(u[1].abs() < 1e-10 && u[0] < 0.0);
        }
    }

    #[test]
    fn e34_hopf_is_supercritical_in_second_quadrant() {
        let problem = HopfProblem::new(Subject::E34, base(-5.0, 0.05), [ParamName::Eps1, ParamName::Eps3]);
        let s = ContinuationSettings { max_points: 1, ..Default::default() };
        let b = hopf_curve(&problem, [-5.0, 0.05], &s).unwrap();
        let p = problem.params(&DVector::from_column_slice(&b.points[0]));
        assert!(first_lyapunov_coefficient(&p, Subject::E34).unwrap() < 0.0);
    }
}
