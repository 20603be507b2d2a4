//! Pseudo-arclength continuation of the zero set of `R: R^{n+1} -> R^n`, with
//! fold, branch-point, cusp and problem-specific test functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::linalg::solve_dense;
use crate::roots;

pub mod equilibrium;
pub mod hopf;
pub mod periodic;

pub use equilibrium::EquilibriumProblem;
pub use hopf::{first_lyapunov_coefficient, hopf_curve, HopfProblem};
pub use periodic::{FoldPoProblem, PeriodicOrbitProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialKind {
    Fold,
    Hopf,
    BranchPoint,
    DegenerateHopf,
    Cusp,
    UserTestZero,
}

pub trait ZeroProblem {
    /// Number of unknowns `n + 1`.
    fn unknowns(&self) -> usize;

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jacobian(|y| self.residual(y), x)
    }

    fn names(&self) -> Vec<String>;

    /// Problem-specific test functions; a sign change between consecutive
    /// points is refined and reported with the given kind.
    fn test_functions(&self, _x: &DVector<f64>) -> Vec<(SpecialKind, f64)> {
        Vec::new()
    }

    /// Labels of the problem's test functions, in order.
    fn test_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// `Some(reason)` when `x` leaves the working domain.
    fn domain(&self, _x: &DVector<f64>) -> Option<String> {
        None
    }

    /// Weights of the arclength norm.
    fn weights(&self) -> DVector<f64> {
        DVector::from_element(self.unknowns(), 1.0)
    }

    /// Signs of the Z₂ action on the unknowns, if the problem is equivariant.
    fn symmetry(&self) -> Option<DVector<f64>> {
        None
    }

    /// Called once for every accepted point.
    fn accept(&self, _x: &DVector<f64>) {}
}

/// Central differences with step `sqrt(eps) (1 + |x_j|)`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let f0 = f(x)?;
    let mut j = DMatrix::zeros(f0.len(), x.len());
    for k in 0..x.len() {
        let h = f64::EPSILON.sqrt() * (1.0 + x[k].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (f(&xp)? - f(&xm)?) / (2.0 * h);
        j.set_column(k, &col);
    }
    Ok(j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSettings {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_points: usize,
    pub newton_tol: f64,
    pub step_tol: f64,
    pub max_newton: usize,
    /// Unknown whose tangent component is the fold test function.
    pub fold_index: Option<usize>,
    pub detect_branch_points: bool,
    /// Pair of unknowns whose joint tangent reversal marks a cusp.
    pub cusp_indices: Option<(usize, usize)>,
    /// Orientation of the initial tangent: sign of its component `orient_index`.
    pub orient_index: usize,
    pub direction: f64,
    pub refine_tol: f64,
    pub stop_on_closed_loop: bool,
    /// Minimal cosine between consecutive tangents before the step is halved.
    pub min_tangent_cos: f64,
    /// Special-point kinds that end the branch once refined.
    pub stop_at: Vec<SpecialKind>,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            h0: 0.01,
            h_min: 1e-6,
            h_max: 0.1,
            max_points: 500,
            newton_tol: 1e-10,
            step_tol: 1e-10,
            max_newton: 10,
            fold_index: None,
            detect_branch_points: true,
            cusp_indices: None,
            orient_index: 0,
            direction: 1.0,
            refine_tol: 1e-12,
            stop_on_closed_loop: true,
            min_tangent_cos: 0.9,
            stop_at: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoint {
    /// Index of the last branch point before the crossing.
    pub index: usize,
    pub kind: SpecialKind,
    pub label: String,
    pub x: Vec<f64>,
    pub tangent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub names: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub tangents: Vec<Vec<f64>>,
    pub steps: Vec<f64>,
    pub test_values: Vec<Vec<f64>>,
    pub special_points: Vec<SpecialPoint>,
    pub termination: String,
}

impl Branch {
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[k]).collect()
    }

    pub fn specials(&self, kind: SpecialKind) -> impl Iterator<Item = &SpecialPoint> {
        self.special_points.iter().filter(move |s| s.kind == kind)
    }

    /// One row per point plus one annotated row per special point.
    pub fn to_csv(&self) -> String {
        let mut out = format!("index,{},label\n", self.names.join(","));
        let mut specials = self.special_points.iter().peekable();
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!("{i},{},\n", export::csv_row(p)));
            while let Some(s) = specials.next_if(|s| s.index == i) {
                out.push_str(&format!("{i},{},{:?}\n", export::csv_row(&s.x), s.kind));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("branch serializes")
    }
}

struct Tester<'a, P: ZeroProblem + ?Sized> {
    problem: &'a P,
    settings: &'a ContinuationSettings,
    w: DVector<f64>,
}

fn wdot(w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).zip(w.iter()).map(|((x, y), w)| w * x * y).sum()
}

impl<P: ZeroProblem + ?Sized> Tester<'_, P> {
    fn wnorm(&self, a: &DVector<f64>) -> f64 {
        wdot(&self.w, a, a).sqrt()
    }

    fn augmented(&self, j: &DMatrix<f64>, t: &DVector<f64>) -> DMatrix<f64> {
        let n1 = j.ncols();
        let mut a = DMatrix::zeros(n1, n1);
        a.rows_mut(0, n1 - 1).copy_from(j);
        for k in 0..n1 {
            a[(n1 - 1, k)] = self.w[k] * t[k];
        }
        a
    }

    /// Unit tangent. With a reference tangent, solves `[J; w∘t_ref] t = e`.
    fn tangent(&self, j: &DMatrix<f64>, t_ref: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let n1 = j.ncols();
        let t = match t_ref {
            Some(r) => {
                let mut rhs = DVector::zeros(n1);
                rhs[n1 - 1] = 1.0;
                solve_dense(&self.augmented(j, r), &rhs).ok_or_else(|| Error::RankDeficient { point: vec![] })?
            }
            None => null_vectors(j, 1).remove(0),
        };
        let n = self.wnorm(&t);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::RankDeficient { point: vec![] });
        }
        Ok(t / n)
    }

    /// Newton on `R(x) = 0`, `w∘t · (x - x_pred) = 0`.
    fn correct(&self, x_pred: &DVector<f64>, t: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let n1 = x_pred.len();
        let mut x = x_pred.clone();
        for it in 1..=self.settings.max_newton {
            let r = self.problem.residual(&x)?;
            let j = self.problem.jacobian(&x)?;
            let mut g = DVector::zeros(n1);
            g.rows_mut(0, n1 - 1).copy_from(&r);
            g[n1 - 1] = wdot(&self.w, t, &(&x - x_pred));
            let dx = solve_dense(&self.augmented(&j, t), &g).ok_or_else(|| Error::RankDeficient { point: x.iter().copied().collect() })?;
            x -= &dx;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Corrector("non-finite iterate".into()));
            }
            let small = dx.amax() <= self.settings.step_tol * (1.0 + x.amax());
            if small || r.amax() <= 1e-3 * self.settings.newton_tol {
                let r = self.problem.residual(&x)?;
                if r.amax() <= self.settings.newton_tol {
                    return Ok((x, it));
                }
            }
        }
        Err(Error::Corrector(format!("no convergence in {} iterations", self.settings.max_newton)))
    }

    fn labels(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        if self.settings.fold_index.is_some() {
            v.push("fold".into());
        }
        if self.settings.detect_branch_points {
            v.push("branch point".into());
        }
        if self.settings.cusp_indices.is_some() {
            v.push("cusp".into());
        }
        v.extend(self.problem.test_names());
        v
    }

    fn tests(&self, x: &DVector<f64>, j: &DMatrix<f64>, t: &DVector<f64>, t_ref: &DVector<f64>) -> Vec<(SpecialKind, f64)> {
        let mut v = Vec::new();
        if let Some(i) = self.settings.fold_index {
            v.push((SpecialKind::Fold, t[i]));
        }
        if self.settings.detect_branch_points {
            v.push((SpecialKind::BranchPoint, self.augmented(j, t).determinant()));
        }
        if let Some((a, b)) = self.settings.cusp_indices {
            v.push((SpecialKind::Cusp, t[a] * t_ref[a] * self.w[a] + t[b] * t_ref[b] * self.w[b]));
        }
        v.extend(self.problem.test_functions(x));
        v
    }

    /// Locates the zero of test `idx` between `xa` (tangent `ta`) and `xb`.
    fn refine(&self, xa: &DVector<f64>, ta: &DVector<f64>, xb: &DVector<f64>, idx: usize, fa: f64, fb: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let sb = wdot(&self.w, ta, &(xb - xa));
        let eval = |s: f64| -> Result<(DVector<f64>, DVector<f64>, f64)> {
            let xp = xa + ta * s;
            let solved = self.correct(&xp, ta).and_then(|(x, _)| {
                let j = self.problem.jacobian(&x)?;
                let t = self.tangent(&j, Some(ta))?;
                Ok((x, j, t))
            });
            match solved {
                Ok((x, j, t)) => {
                    let f = self.tests(&x, &j, &t, ta)[idx].1;
                    Ok((x, t, f))
                }
                // landed exactly on a singular point of the augmented system
                Err(Error::RankDeficient { .. }) => Ok((xp, ta.clone(), 0.0)),
                Err(e) => Err(e),
            }
        };
        let mut failure = None;
        let s = roots::brent(
            |s| match eval(s) {
                Ok((_, _, f)) => f,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            },
            0.0,
            sb,
            fa,
            fb,
            self.settings.refine_tol,
            100,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let (x, t, _) = eval(s?)?;
        Ok((x, t))
    }
}

/// Orthonormal basis of the `k` smallest right singular directions of `j`.
pub fn null_vectors(j: &DMatrix<f64>, k: usize) -> Vec<DVector<f64>> {
    let n1 = j.ncols();
    let mut padded = DMatrix::zeros(n1.max(j.nrows()), n1);
    padded.rows_mut(0, j.nrows()).copy_from(j);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|a, b| svd.singular_values[*a].partial_cmp(&svd.singular_values[*b]).unwrap());
    idx.iter().take(k).map(|&i| vt.row(i).transpose()).collect()
}

/// Traces the branch through `start`, first correcting it onto the zero set.
pub fn continue_branch<P: ZeroProblem + ?Sized>(problem: &P, start: &DVector<f64>, settings: &ContinuationSettings) -> Result<Branch> {
    let tester = Tester { problem, settings, w: problem.weights() };
    let j0 = problem.jacobian(start)?;
    let mut t0 = tester.tangent(&j0, None)?;
    if t0[settings.orient_index] * settings.direction < 0.0 {
        t0 = -t0;
    }
    continue_with_tangent(problem, start, &t0, settings)
}

/// As [`continue_branch`] with a prescribed initial direction (used for branch
/// switching).
pub fn continue_with_tangent<P: ZeroProblem + ?Sized>(
    problem: &P,
    start: &DVector<f64>,
    t_init: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<Branch> {
    let tester = Tester { problem, settings, w: problem.weights() };
    let t_init = t_init / tester.wnorm(t_init);
    let (x0, _) = tester
        .correct(start, &t_init)
        .map_err(|e| Error::Corrector(format!("initial correction failed: {e}")))?;
    let j0 = problem.jacobian(&x0)?;
    let mut t = tester.tangent(&j0, Some(&t_init))?;
    problem.accept(&x0);
    let mut branch = Branch {
        names: problem.names(),
        points: vec![x0.iter().copied().collect()],
        tangents: vec![t.iter().copied().collect()],
        steps: vec![0.0],
        test_values: Vec::new(),
        special_points: Vec::new(),
        termination: String::new(),
    };
    let mut tv = tester.tests(&x0, &j0, &t, &t);
    let labels = tester.labels();
    branch.test_values.push(tv.iter().map(|v| v.1).collect());
    let mut x = x0.clone();
    let mut h = settings.h0;
    let mut travelled = 0.0;
    while branch.points.len() < settings.max_points {
        let attempt = tester.correct(&(&x + &t * h), &t).and_then(|(xn, it)| {
            let jn = problem.jacobian(&xn)?;
            let tn = tester.tangent(&jn, Some(&t))?;
            Ok((xn, jn, tn, it))
        });
        let (xn, jn, tn, iters) = match attempt {
            Ok(v) if wdot(&tester.w, &v.2, &t) >= settings.min_tangent_cos || h <= settings.h_min => v,
            _ => {
                h *= 0.5;
                if h < settings.h_min {
                    branch.termination = "step size underflow".into();
                    return Ok(branch);
                }
                continue;
            }
        };
        let tvn = tester.tests(&xn, &jn, &tn, &t);
        let i = branch.points.len() - 1;
        for (k, ((kind, fa), (_, fb))) in tv.iter().zip(&tvn).enumerate() {
            let crossed = match kind {
                SpecialKind::Cusp => *fb < 0.0,
                _ => fa * fb < 0.0 || (*fb == 0.0 && *fa != 0.0),
            };
            if crossed {
                let fa = if *kind == SpecialKind::Cusp { tester.tests(&x, &problem.jacobian(&x)?, &t, &t)[k].1 } else { *fa };
                if let Ok((xs, ts)) = tester.refine(&x, &t, &xn, k, fa, *fb) {
                    branch.special_points.push(SpecialPoint {
                        index: i,
                        kind: *kind,
                        label: labels.get(k).cloned().unwrap_or_else(|| format!("{kind:?}")),
                        x: xs.iter().copied().collect(),
                        tangent: ts.iter().copied().collect(),
                    });
                }
            }
        }
        if let Some(sp) = branch.special_points.iter().rev().find(|s| s.index == i && settings.stop_at.contains(&s.kind)) {
            branch.termination = format!("reached {:?}", sp.kind);
            return Ok(branch);
        }
        if let Some(reason) = problem.domain(&xn) {
            branch.termination = reason;
            return Ok(branch);
        }
        problem.accept(&xn);
        travelled += h;
        branch.points.push(xn.iter().copied().collect());
        branch.tangents.push(tn.iter().copied().collect());
        branch.steps.push(h);
        branch.test_values.push(tvn.iter().map(|v| v.1).collect());
        if settings.stop_on_closed_loop && travelled > 4.0 * h && tester.wnorm(&(&xn - &x0)) < 0.5 * h && wdot(&tester.w, &tn, &t_init) > 0.0 {
            branch.termination = "closed loop".into();
            return Ok(branch);
        }
        x = xn;
        t = tn;
        tv = tvn;
        if iters <= 3 {
            h = (h * 1.5).min(settings.h_max);
        } else if iters >= 6 {
            h = (h * 0.7).max(settings.h_min);
        }
    }
    branch.termination = "maximum number of points".into();
    Ok(branch)
}

/// Starts the branch bifurcating at a symmetry-breaking branch point along the
/// null direction that is odd under the problem's Z₂ action.
pub fn switch_branch_symmetric<P: ZeroProblem + ?Sized>(problem: &P, bp: &SpecialPoint, h: f64, settings: &ContinuationSettings) -> Result<Branch> {
    let signs = problem
        .symmetry()
        .ok_or_else(|| Error::Other("problem has no symmetry for branch switching".into()))?;
    let x = DVector::from_column_slice(&bp.x);
    let j = problem.jacobian(&x)?;
    let odd = DVector::from_iterator(signs.len(), signs.iter().map(|s| if *s < 0.0 { 1.0 } else { 0.0 }));
    // the antisymmetric part of the two-dimensional kernel at the branch point
    let mut best: Option<DVector<f64>> = None;
    for v in null_vectors(&j, 2) {
        let a = v.component_mul(&odd);
        if best.as_ref().map_or(true, |b| a.norm() > b.norm()) {
            best = Some(a);
        }
    }
    let v = best.expect("two null vectors");
    if v.norm() < 1e-8 {
        return Err(Error::Other("no antisymmetric null direction at branch point".into()));
    }
    let v = v.normalize();
    continue_with_tangent(problem, &(&x + &v * h), &v, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Circle;
    impl ZeroProblem for Circle {
        fn unknowns(&self) -> usize {
            2
        }
        fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - 1.0))
        }
        fn names(&self) -> Vec<String> {
            vec!["x".into(), "y".into()]
        }
    }

    struct FoldNf;
    impl ZeroProblem for FoldNf {
        fn unknowns(&self) -> usize {
            2
        }
        fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, x[0] * x[0] - x[1]))
        }
        fn names(&self) -> Vec<String> {
            vec!["x".into(), "mu".into()]
        }
    }

    #[test]
    fn circle_is_closed_without_special_points() {
        let s = ContinuationSettings { h0: 0.05, h_max: 0.1, orient_index: 1, detect_branch_points: false, ..Default::default() };
        let b = continue_branch(&Circle, &DVector::from_vec(vec![1.0, 0.0]), &s).unwrap();
        assert_eq!(b.termination, "closed loop");
        assert!(b.special_points.is_empty());
        for p in &b.points {
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-9);
        }
        let angle: f64 = b.points.windows(2).map(|w| (w[1][1].atan2(w[1][0]) - w[0][1].atan2(w[0][0])).rem_euclid(std::f64::consts::TAU)).sum();
        assert!(angle > 5.5, "{angle}");
        for w in b.tangents.windows(2) {
            let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| a * b).sum();
            assert!(d > 0.0);
        }
    }

    #[test]
    fn fold_of_quadratic_is_refined() {
        let s = ContinuationSettings { h0: 0.05, fold_index: Some(1), orient_index: 0, direction: -1.0, max_points: 60, ..Default::default() };
        let b = continue_branch(&FoldNf, &DVector::from_vec(vec![1.0, 1.0]), &s).unwrap();
        let folds: Vec<_> = b.specials(SpecialKind::Fold).collect();
        assert_eq!(folds.len(), 1);
        assert!(folds[0].x[1].abs() < 1e-10 && folds[0].x[0].abs() < 1e-5);
    }

    #[test]
    fn fd_jacobian_is_accurate() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0].sin() * x[1], x[1].exp()]));
        let j = fd_jacobian(f, &DVector::from_vec(vec![0.3, 0.7])).unwrap();
        assert!((j[(0, 0)] - 0.3f64.cos() * 0.7).abs() < 1e-8);
        assert!((j[(1, 1)] - 0.7f64.exp()).abs() < 1e-8);
    }
}
