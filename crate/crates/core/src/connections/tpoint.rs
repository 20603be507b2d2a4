//! T-points: heteroclinic loops between the real saddle E2 and the
//! saddle-focus E3 (and, by symmetry, E4).
//!
//! The E2 → E3 leg joins two one-dimensional manifolds and costs two
//! conditions; it is solved by Newton on two parameters. The E3 → E2 leg
//! joins two-dimensional manifolds and persists; it is found by shooting
//! from a small circle in the unstable plane of E3.

use nalgebra::{DVector, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{shoot_from, target_frame, ConnectionProblem, ConnectionType, MissDistance, TargetFrame};
use crate::error::{Error, Result};
use crate::integrate::{self, ManifoldKind, Trajectory};
use crate::model::{self, EquilibriumKind, Params, ParamName, State};
use crate::roots;

/// Downward crossings of `y = 0`, split as `(x > 0, x < 0)`, along each leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Winding {
    pub e2_to_e3: (usize, usize),
    pub e3_to_e2: (usize, usize),
}

impl Winding {
    pub fn forward(&self) -> usize {
        self.e2_to_e3.0 + self.e2_to_e3.1
    }

    pub fn returning(&self) -> usize {
        self.e3_to_e2.0 + self.e3_to_e2.1
    }
}

#[derive(Debug, Clone)]
pub struct TPoint {
    pub params: Params,
    /// Sign of `x` on the branch of E2's unstable manifold that departs.
    pub side: f64,
    pub free: [ParamName; 2],
    pub miss: MissDistance,
    pub return_miss: MissDistance,
    /// Angle in the unstable plane of E3 of the returning leg.
    pub return_angle: f64,
    pub winding: Winding,
    pub legs: [Trajectory; 2],
    pub iterations: usize,
}

fn forward_problem() -> ConnectionProblem {
    ConnectionProblem::new(EquilibriumKind::E2, EquilibriumKind::E3, ConnectionType::TPointLoop)
}

fn return_problem() -> ConnectionProblem {
    ConnectionProblem::new(EquilibriumKind::E3, EquilibriumKind::E2, ConnectionType::TPointLoop)
}

/// Seed on the branch of E2's unstable manifold with `sign(x) = side`.
fn forward_seed(p: &Params, frame: &TargetFrame, side: f64) -> Result<State> {
    let e2 = model::equilibria(p).e2.ok_or(Error::UndefinedEquilibrium)?;
    let (_, v) = integrate::manifold_direction(p, &e2, ManifoldKind::Unstable)?;
    let v = if v.x * side >= 0.0 { v } else { -v };
    let offset = super::default_offset(&e2.state, frame);
    Ok(e2.state + v * offset)
}

/// Shot from E2 to E3 along the branch with `sign(x) = side`; the miss has
/// two components.
pub fn forward_leg(p: &Params, side: f64, record: bool) -> Result<super::Shot> {
    let pr = forward_problem();
    let frame = target_frame(p, &pr)?;
    let s0 = forward_seed(p, &frame, side)?;
    let e2 = model::equilibria(p).e2.ok_or(Error::UndefinedEquilibrium)?.state;
    shoot_from(p, &e2, &s0, &frame, pr.control, pr.t_max, record)
}

fn forward_miss(p: &Params, side: f64) -> Result<Vector2<f64>> {
    let m = forward_leg(p, side, false)?.miss;
    Ok(Vector2::new(m.value[0], m.value[1]))
}

/// Shot from E3 at angle `theta` in its unstable plane, toward E2.
pub fn return_leg(p: &Params, theta: f64, record: bool) -> Result<super::Shot> {
    let pr = return_problem();
    let frame = target_frame(p, &pr)?;
    let e3 = model::equilibria(p).e34.ok_or_else(|| Error::Domain("E3,4 do not exist".into()))?[0];
    let source = super::TargetFrame::new(p, &e3)?;
    let r = super::default_offset(&e3.state, &frame);
    let dir: Vector3<f64> = source.v.column(1) * theta.cos() + source.v.column(2) * theta.sin();
    let s0 = e3.state + dir * r;
    shoot_from(p, &e3.state, &s0, &frame, pr.control, pr.t_max, record)
}

/// Angles in `[0, 2π)` at which the return leg connects, found by a scan of
/// `n` samples refined by Brent. Only zeros with bounded miss on both sides
/// are kept.
pub fn return_angles(p: &Params, n: usize) -> Result<Vec<(f64, MissDistance)>> {
    let g = |th: f64| return_leg(p, th, false).map(|s| s.miss.value[0]);
    let two_pi = std::f64::consts::TAU;
    let thetas: Vec<f64> = (0..=n).map(|k| two_pi * k as f64 / n as f64).collect();
    let vals: Vec<Option<f64>> = thetas.iter().map(|t| g(*t).ok()).collect();
    let scale = vals.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::new();
    for k in 0..n {
        let (Some(a), Some(b)) = (vals[k], vals[k + 1]) else { continue };
        if a * b > 0.0 || (a - b).abs() > 0.5 * scale {
            // a jump across the target's stable manifold, not a zero
            continue;
        }
        let th = roots::brent(|t| g(t).unwrap_or(f64::NAN), thetas[k], thetas[k + 1], a, b, 1e-13, 200)?;
        let m = return_leg(p, th, false)?.miss;
        if m.value[0].abs() < 1e-6 {
            out.push((th % two_pi, m));
        }
    }
    Ok(out)
}

/// Newton on `free` for the E2 → E3 leg leaving along `side` from `seed`,
/// then the return leg with the fewest crossings. With `expected = Some(n)`
/// the forward leg must cross `y = 0` exactly `n` times (0 for the principal
/// T-point, 1 for the secondary); `None` accepts whatever Newton reaches.
/// The return count depends on the shooting offset and is not checked.
pub fn find_tpoint(seed: &Params, free: [ParamName; 2], side: f64, expected: Option<usize>) -> Result<TPoint> {
    let mut p = *seed;
    let mut f = forward_miss(&p, side)?;
    let mut iterations = 0;
    let tol = 1e-10;
    while f.norm() > tol {
        iterations += 1;
        if iterations > 40 {
            return Err(Error::NoConvergence(format!("T-point Newton stalled at |miss| = {:e}", f.norm())));
        }
        let mut jac = Matrix2::zeros();
        for (j, name) in free.iter().enumerate() {
            let v = p.get(*name);
            let h = 1e-7 * (1.0 + v.abs());
            let fp = forward_miss(&p.with(*name, v + h), side)?;
            let fm = forward_miss(&p.with(*name, v - h), side)?;
            jac.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        let dx = jac.lu().solve(&(-f)).ok_or_else(|| Error::RankDeficient { point: vec![p.get(free[0]), p.get(free[1])] })?;
        let mut lambda = 1.0;
        loop {
            let q = p.with(free[0], p.get(free[0]) + lambda * dx[0]).with(free[1], p.get(free[1]) + lambda * dx[1]);
            match forward_miss(&q, side) {
                Ok(fq) if fq.norm() < f.norm() => {
                    p = q;
                    f = fq;
                    break;
                }
                _ if lambda > 1e-4 => lambda *= 0.5,
                _ => return Err(Error::NoConvergence(format!("T-point line search failed at |miss| = {:e}", f.norm()))),
            }
        }
    }
    let forward = forward_leg(&p, side, true)?;
    let angles = return_angles(&p, 720)?;
    let (theta, ret_shot) = angles
        .iter()
        .filter_map(|(th, _)| return_leg(&p, *th, true).ok().map(|s| (*th, s)))
        .min_by_key(|(_, s)| s.miss.crossings.0 + s.miss.crossings.1)
        .ok_or_else(|| Error::NoConvergence("no returning leg to E2".into()))?;
    let winding = Winding { e2_to_e3: forward.miss.crossings, e3_to_e2: ret_shot.miss.crossings };
    if let Some(n) = expected {
        let k = winding.forward();
        if k != n {
            return Err(Error::Classification(format!("forward leg winds {k} times, template expects {n}")));
        }
    }
    Ok(TPoint {
        params: p,
        side,
        free,
        miss: forward.miss,
        return_miss: ret_shot.miss,
        return_angle: theta,
        winding,
        legs: [forward.trajectory, ret_shot.trajectory],
        iterations,
    })
}

/// The residual vector of the forward leg, exposed for diagnostics.
pub fn forward_residual(p: &Params, side: f64) -> Result<DVector<f64>> {
    let m = forward_miss(p, side)?;
    Ok(DVector::from_column_slice(m.as_slice()))
}
