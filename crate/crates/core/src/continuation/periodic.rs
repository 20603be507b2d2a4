//! Periodic orbits by single shooting from the section `y = 0`, and
//! two-parameter continuation of their folds.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use num_complex::Complex64;

use super::{ContinuationSettings, SpecialKind, ZeroProblem};
use crate::error::{Error, Result};
use crate::integrate::{self, IntegratorSettings, StepControl, Trajectory, VARIATIONAL_CONTROL};
use crate::linalg;
use crate::model::{self, Params, ParamName, State};

const Z2: Matrix3<f64> = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);

/// Unknowns `(x0, z0, T, p)` with the orbit anchored at `(x0, 0, z0)`. For a
/// symmetric orbit `T` is the half period and the residual is
/// `Z Φ_T(s0) - s0`, otherwise `Φ_T(s0) - s0`.
#[derive(Debug, Clone)]
pub struct PeriodicOrbitProblem {
    pub base: Params,
    pub free: ParamName,
    pub symmetric: bool,
    pub control: StepControl,
    /// Full periods beyond this end the branch.
    pub max_period: f64,
    pub weights: [f64; 4],
}

impl PeriodicOrbitProblem {
    pub fn new(base: Params, free: ParamName, symmetric: bool) -> Self {
        Self { base, free, symmetric, control: VARIATIONAL_CONTROL, max_period: 2000.0, weights: [1.0; 4] }
    }

    pub fn params(&self, u: &DVector<f64>) -> Params {
        self.base.with(self.free, u[3])
    }

    fn closure(&self) -> Matrix3<f64> {
        if self.symmetric {
            Z2
        } else {
            Matrix3::identity()
        }
    }

    pub fn period(&self, u: &DVector<f64>) -> f64 {
        if self.symmetric {
            2.0 * u[2]
        } else {
            u[2]
        }
    }

    /// Closure error of the full period, `|Φ_period(s0) - s0|`.
    pub fn full_closure_error(&self, u: &DVector<f64>) -> Result<f64> {
        let (end, _) = integrate::flow_with_monodromy(&self.params(u), &anchor(u), self.period(u), self.control)?;
        Ok((end - anchor(u)).norm())
    }

    /// Monodromy matrix of the full orbit.
    pub fn monodromy(&self, u: &DVector<f64>) -> Result<Matrix3<f64>> {
        let (_, m) = integrate::flow_with_monodromy(&self.params(u), &anchor(u), self.period(u), self.control)?;
        Ok(m)
    }

    /// One full period sampled every `dt`.
    pub fn orbit(&self, u: &DVector<f64>, dt: f64) -> Result<Trajectory> {
        let settings = IntegratorSettings {
            rel_tol: self.control.rel_tol,
            abs_tol: self.control.abs_tol,
            max_time: self.period(u),
            sample_dt: Some(dt),
            ..Default::default()
        };
        integrate::integrate(&self.params(u), &anchor(u), &settings, &[])
    }

    /// Small-amplitude orbit near the Hopf point of the equilibrium `center`
    /// at parameter value `p_hopf`: the displacement `amplitude` in `x0` is
    /// kept fixed and `(z0, T, p)` are solved by Newton.
    pub fn seed_from_hopf(&self, p_hopf: f64, center: &State, amplitude: f64) -> Result<DVector<f64>> {
        let p = self.base.with(self.free, p_hopf);
        let a = model::jacobian(&p, center);
        let lambda = model::CharPoly::from_matrix(&a)
            .roots()
            .into_iter()
            .find(|l| l.im > 0.0)
            .ok_or_else(|| Error::NoImaginaryPair(format!("no complex pair at {p:?}")))?;
        let q = linalg::eigenvector(&a, Complex64::new(0.0, lambda.im));
        let rot = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2 - q.y.arg());
        let v = q.map(|c| (c * rot).re);
        let v = v / v.x;
        let s0 = center + v * amplitude;
        let t = std::f64::consts::TAU / lambda.im / if self.symmetric { 2.0 } else { 1.0 };
        let mut u = DVector::from_vec(vec![s0.x, s0.z, t, p_hopf]);
        for _ in 0..30 {
            let r = self.residual(&u)?;
            if r.amax() < 1e-11 {
                return Ok(u);
            }
            let j = self.jacobian(&u)?;
            let sub = j.columns(1, 3).into_owned();
            let d = linalg::solve_dense(&sub, &r).ok_or_else(|| Error::RankDeficient { point: u.iter().copied().collect() })?;
            for k in 0..3 {
                u[k + 1] -= d[k];
            }
        }
        Err(Error::NoConvergence("Hopf seed did not converge".into()))
    }
}

fn anchor(u: &DVector<f64>) -> State {
    State::new(u[0], 0.0, u[1])
}

impl ZeroProblem for PeriodicOrbitProblem {
    fn unknowns(&self) -> usize {
        4
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let s0 = anchor(u);
        let (end, _) = integrate::flow_with_monodromy(&self.params(u), &s0, u[2], self.control)?;
        let r = self.closure() * end - s0;
        Ok(DVector::from_column_slice(r.as_slice()))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.params(u);
        let s0 = anchor(u);
        let (end, m, psi) = integrate::flow_with_sensitivities(&p, &s0, u[2], [self.free, self.free], self.control)?;
        let z = self.closure();
        let zm = z * m;
        let mut j = DMatrix::zeros(3, 4);
        j.set_column(0, &(zm.column(0) - Vector3::x()));
        j.set_column(1, &(zm.column(2) - Vector3::z()));
        j.set_column(2, &(z * model::vector_field(&p, &end)));
        j.set_column(3, &(z * psi.column(0)));
        Ok(j)
    }

    fn names(&self) -> Vec<String> {
        let t = if self.symmetric { "T/2" } else { "T" };
        vec!["x0".into(), "z0".into(), t.into(), self.free.to_string()]
    }

    fn domain(&self, u: &DVector<f64>) -> Option<String> {
        let t = self.period(u);
        if t > self.max_period {
            Some("global-bifurcation proximity".into())
        } else if t <= 0.0 {
            Some("non-positive period".into())
        } else {
            None
        }
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

/// Folds of periodic orbits in the plane of two parameters. Unknowns are
/// `(x0, z0, T, p_fold, p_other)`; the extra equation is the bordered test
/// function `g`, zero where the shooting matrix in `(x0, z0, T)` is singular.
pub struct FoldPoProblem {
    pub orbit: PeriodicOrbitProblem,
    pub other: ParamName,
    pub weights: [f64; 5],
    borders: RefCell<(Vector3<f64>, Vector3<f64>)>,
}

impl FoldPoProblem {
    /// `orbit.free` is the parameter along which the orbit family folds.
    pub fn new(orbit: PeriodicOrbitProblem, other: ParamName) -> Self {
        Self { orbit, other, weights: [1.0; 5], borders: RefCell::new((Vector3::x(), Vector3::x())) }
    }

    /// Initial point from a fold `x` of a one-parameter branch.
    pub fn start(&self, fold: &[f64]) -> DVector<f64> {
        let u = DVector::from_vec(vec![fold[0], fold[1], fold[2], fold[3], self.orbit.base.get(self.other)]);
        self.accept(&u);
        u
    }

    fn orbit_params(&self, u: &DVector<f64>) -> Params {
        self.orbit.base.with(self.orbit.free, u[3]).with(self.other, u[4])
    }

    fn shooting_matrix(&self, u: &DVector<f64>) -> Result<Matrix3<f64>> {
        let p = self.orbit_params(u);
        let s0 = anchor(u);
        let (end, m) = integrate::flow_with_monodromy(&p, &s0, u[2], self.orbit.control)?;
        let zm = self.orbit.closure() * m;
        Ok(Matrix3::from_columns(&[zm.column(0) - Vector3::x(), zm.column(2) - Vector3::z(), self.orbit.closure() * model::vector_field(&p, &end)]))
    }

    fn bordered_g(&self, a: &Matrix3<f64>) -> Result<f64> {
        let (b, c) = *self.borders.borrow();
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&b);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&c.transpose());
        let sol = m.lu().solve(&Vector4::new(0.0, 0.0, 0.0, 1.0)).ok_or_else(|| Error::RankDeficient { point: vec![] })?;
        Ok(sol[3])
    }

    fn g(&self, u: &DVector<f64>) -> Result<f64> {
        self.bordered_g(&self.shooting_matrix(u)?)
    }
}

impl ZeroProblem for FoldPoProblem {
    fn unknowns(&self) -> usize {
        5
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.orbit_params(u);
        let s0 = anchor(u);
        let (end, m) = integrate::flow_with_monodromy(&p, &s0, u[2], self.orbit.control)?;
        let z = self.orbit.closure();
        let zm = z * m;
        let a = Matrix3::from_columns(&[zm.column(0) - Vector3::x(), zm.column(2) - Vector3::z(), z * model::vector_field(&p, &end)]);
        let r = z * end - s0;
        Ok(DVector::from_vec(vec![r.x, r.y, r.z, self.bordered_g(&a)?]))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.orbit_params(u);
        let s0 = anchor(u);
        let (end, m, psi) = integrate::flow_with_sensitivities(&p, &s0, u[2], [self.orbit.free, self.other], self.orbit.control)?;
        let z = self.orbit.closure();
        let zm = z * m;
        let mut j = DMatrix::zeros(4, 5);
        j.view_mut((0, 0), (3, 1)).copy_from(&(zm.column(0) - Vector3::x()));
        j.view_mut((0, 1), (3, 1)).copy_from(&(zm.column(2) - Vector3::z()));
        j.view_mut((0, 2), (3, 1)).copy_from(&(z * model::vector_field(&p, &end)));
        j.view_mut((0, 3), (3, 2)).copy_from(&(z * psi));
        for k in 0..5 {
            let h = 1e-7 * (1.0 + u[k].abs());
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += h;
            um[k] -= h;
            j[(3, k)] = (self.g(&up)? - self.g(&um)?) / (2.0 * h);
        }
        Ok(j)
    }

    fn names(&self) -> Vec<String> {
        let mut n = self.orbit.names();
        n.push(self.other.to_string());
        n
    }

    fn domain(&self, u: &DVector<f64>) -> Option<String> {
        self.orbit.domain(&u.rows(0, 4).into_owned())
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    /// Refreshes the borders with the singular vectors of the shooting matrix.
    fn accept(&self, u: &DVector<f64>) {
        if let Ok(a) = self.shooting_matrix(u) {
            let svd = a.svd(true, true);
            let k = svd.singular_values.imin();
            let b = svd.u.expect("requested U").column(k).into_owned();
            let c = svd.v_t.expect("requested V^T").row(k).transpose();
            *self.borders.borrow_mut() = (b, c);
        }
    }
}

/// Settings for a fold-of-periodic-orbit curve with cusp detection on the
/// parameter pair.
pub fn fold_curve_settings(base: &ContinuationSettings) -> ContinuationSettings {
    ContinuationSettings { fold_index: None, detect_branch_points: false, cusp_indices: Some((3, 4)), stop_on_closed_loop: false, ..base.clone() }
}

/// Special points of kind `Fold` in a periodic-orbit branch, as `(x0, z0, T, p)`.
pub fn folds(branch: &super::Branch) -> Vec<Vec<f64>> {
    branch.specials(SpecialKind::Fold).map(|s| s.x.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::continue_branch;

    #[test]
    fn symmetric_closure_matches_full_period() {
        // orbit around E2 born at its Hopf line e3 = 0.1, continued into e3 < 0.1
        let base = Params::reference(-10.5, 0.1);
        let pr = PeriodicOrbitProblem::new(base, ParamName::Eps3, true);
        let e2 = State::new(0.0, 0.0, -10.0);
        let u = pr.seed_from_hopf(0.1, &e2, 0.05).unwrap();
        assert!(pr.residual(&u).unwrap().amax() < 1e-10);
        assert!(pr.full_closure_error(&u).unwrap() < 1e-9);
        // the monodromy has a unit multiplier
        let m = pr.monodromy(&u).unwrap();
        let cp = model::CharPoly::from_matrix(&m);
        assert!(cp.eval(Complex64::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn hopf_amplitude_scales_with_square_root() {
        // orbits around E3 at e3 = 0.02 near the supercritical Hopf of E3,4
        let e3h = 0.02;
        let hurwitz = |e1: f64| super::super::hopf::char_poly(&Params::reference(e1, e3h), crate::local::Subject::E34).unwrap().hurwitz();
        let e1h = crate::roots::brent(hurwitz, -1.9, -1.5, hurwitz(-1.9), hurwitz(-1.5), 1e-14, 200).unwrap();
        let pr = PeriodicOrbitProblem::new(Params::reference(e1h, e3h), ParamName::Eps1, false);
        let center = model::e3_state(&pr.base).unwrap();
        let mut pts = Vec::new();
        for amp in [0.01, 0.02, 0.04] {
            let u = pr.seed_from_hopf(e1h, &center, amp).unwrap();
            pts.push(((u[3] - e1h).abs().ln(), amp.ln()));
        }
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!((slope - 0.5).abs() < 0.05, "{slope}");
    }

    #[test]
    fn fold_of_symmetric_orbits_near_degenerate_hopf() {
        let base = Params::reference(-10.2, 0.1);
        let pr = PeriodicOrbitProblem::new(base, ParamName::Eps3, true);
        let u = pr.seed_from_hopf(0.1, &State::new(0.0, 0.0, -10.0), 0.05).unwrap();
        let s = ContinuationSettings { fold_index: Some(3), detect_branch_points: false, max_points: 80, h0: 0.02, h_max: 0.1, orient_index: 0, direction: 1.0, ..Default::default() };
        let b = continue_branch(&pr, &u, &s).unwrap();
        let f = folds(&b);
        assert!(!f.is_empty(), "{}", b.termination);
        let tv = b.test_values.iter().map(|v| v[0]).collect::<Vec<_>>();
        assert!(tv.iter().any(|t| *t > 0.0) && tv.iter().any(|t| *t < 0.0));
        assert!(f[0][3] < 0.1);
    }
}
