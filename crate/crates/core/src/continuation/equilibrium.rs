//! Equilibrium branches in one free parameter.

use nalgebra::{DMatrix, DVector};

use super::ZeroProblem;
use crate::error::Result;
use crate::model::{self, Params, ParamName, State};

/// Unknowns `(x, y, z, free)`.
#[derive(Debug, Clone)]
pub struct EquilibriumProblem {
    pub base: Params,
    pub free: ParamName,
}

impl EquilibriumProblem {
    fn split(&self, u: &DVector<f64>) -> (Params, State) {
        (self.base.with(self.free, u[3]), State::new(u[0], u[1], u[2]))
    }
}

impl ZeroProblem for EquilibriumProblem {
    fn unknowns(&self) -> usize {
        4
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (p, s) = self.split(u);
        Ok(DVector::from_column_slice(model::vector_field(&p, &s).as_slice()))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (p, s) = self.split(u);
        let mut j = DMatrix::zeros(3, 4);
        j.view_mut((0, 0), (3, 3)).copy_from(&model::jacobian(&p, &s));
        j.view_mut((0, 3), (3, 1)).copy_from(&model::param_derivative(self.free, &s));
        Ok(j)
    }

    fn names(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into(), self.free.to_string()]
    }

    fn symmetry(&self) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![-1.0, -1.0, 1.0, 1.0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{continue_branch, switch_branch_symmetric, ContinuationSettings, SpecialKind};

    #[test]
    fn pitchfork_of_the_origin_at_eps1_zero() {
        let problem = EquilibriumProblem { base: Params::new(0.5, -1.0, 0.05, -0.1, 0.01), free: ParamName::Eps1 };
        let s = ContinuationSettings { orient_index: 3, direction: -1.0, max_points: 40, h_max: 0.05, ..Default::default() };
        let b = continue_branch(&problem, &DVector::from_vec(vec![0.0, 0.0, 0.0, 0.5]), &s).unwrap();
        let bps: Vec<_> = b.specials(SpecialKind::BranchPoint).collect();
        assert_eq!(bps.len(), 1);
        assert!(bps[0].x[3].abs() < 1e-10, "{:?}", bps[0].x);

        // the bifurcating branch is E3,4: x² = -e1 (e3 + D e1), z = e1
        let s2 = ContinuationSettings { max_points: 30, detect_branch_points: false, ..s.clone() };
        let side = switch_branch_symmetric(&problem, bps[0], 1e-2, &s2).unwrap();
        assert!(side.points.len() > 10);
        for u in &side.points[1..] {
            let (x, z, e1) = (u[0], u[2], u[3]);
            assert!(u[1].abs() < 1e-12);
            assert!((z - e1).abs() < 1e-10);
            assert!((x * x + e1 * (0.05 + 0.01 * e1)).abs() < 1e-10);
        }
        assert!(side.points.iter().any(|u| u[0].abs() > 0.05));
    }
}
