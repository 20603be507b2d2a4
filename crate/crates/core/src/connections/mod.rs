//! Heteroclinic and homoclinic connections between the equilibria, found by
//! shooting along one-dimensional unstable manifolds.
//!
//! The miss distance is measured where the shot trajectory enters a box
//! around the target, in the coordinates `ξ = V⁻¹ (s - e)` of the target's
//! stable/unstable eigenspaces: `miss = ξ_U - h(ξ_S)`, with `h` the quadratic
//! approximation of the stable manifold as a graph over the stable
//! eigenspace. The box is `|ξ_S| ≤ ρ_S`, `|ξ_U| ≤ ρ_U`; both radii scale with
//! the distance from the target to the nearest other equilibrium.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuation::{continue_branch, Branch, ContinuationSettings, SpecialKind, ZeroProblem};
use crate::error::{Error, Result};
use crate::export;
use crate::integrate::{self, Direction, Event, ManifoldKind, Stop, StepControl, Trajectory};
use crate::linalg;
use crate::local;
use crate::model::{self, Equilibrium, EquilibriumKind, Params, ParamName, State};
use crate::roots;

pub mod tpoint;

pub use tpoint::{find_tpoint, TPoint, Winding};

/// The connecting arc on the invariant z-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisConnection {
    pub from: EquilibriumKind,
    pub to: EquilibriumKind,
    pub z_from: f64,
    pub z_to: f64,
    pub eps3: f64,
    pub d_coef: f64,
}

impl AxisConnection {
    /// Point of the arc at time `t`, with `t = 0` at the midpoint of the two
    /// equilibria. Solves `z' = z (e3 + D z)` in closed form.
    pub fn z_at(&self, t: f64) -> f64 {
        let (e3, d) = (self.eps3, self.d_coef);
        let z0 = -e3 / (2.0 * d);
        let g = (e3 * t).exp();
        e3 * z0 * g / (e3 + d * z0 * (1.0 - g))
    }
}

/// The axis arc between E1 and E2 and its direction, read off the phase line.
pub fn axis_connection(p: &Params) -> Result<AxisConnection> {
    if p.d_coef == 0.0 {
        return Err(Error::UndefinedEquilibrium);
    }
    if p.eps3 == 0.0 {
        return Err(Error::Domain("E2 coincides with E1, no axis arc".into()));
    }
    let z2 = -p.eps3 / p.d_coef;
    let zdot = |z: f64| z * (p.eps3 + p.d_coef * z);
    // the flow on the open interval has one sign: sample it
    let samples: Vec<f64> = (1..10).map(|k| zdot(z2 * k as f64 / 10.0)).collect();
    let up = samples[0] > 0.0;
    assert!(samples.iter().all(|v| (*v > 0.0) == up), "phase line changes sign between adjacent fixed points");
    // moving toward larger z means leaving the lower endpoint
    let e1_is_lower = 0.0 < z2;
    let from_e1 = up == e1_is_lower;
    let (from, to, z_from, z_to) = if from_e1 {
        (EquilibriumKind::E1, EquilibriumKind::E2, 0.0, z2)
    } else {
        (EquilibriumKind::E2, EquilibriumKind::E1, z2, 0.0)
    };
    Ok(AxisConnection { from, to, z_from, z_to, eps3: p.eps3, d_coef: p.d_coef })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectionType {
    HeteroclinicOffAxis,
    HeteroclinicOnAxis,
    Homoclinic,
    TPointLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionProblem {
    pub source: EquilibriumKind,
    pub target: EquilibriumKind,
    pub kind: ConnectionType,
    /// Branch of the source's unstable manifold, `±1`.
    pub side: f64,
    /// Distance of the initial point from the source; `None` selects
    /// `min(1e-6 (1 + |e|), 1e-3 ρ_S)`.
    pub offset: Option<f64>,
    /// `ρ_S` and `ρ_U` as fractions of the target's nearest-equilibrium distance.
    pub stable_radius: f64,
    pub unstable_radius: f64,
    pub control: StepControl,
    pub t_max: f64,
}

impl ConnectionProblem {
    pub fn new(source: EquilibriumKind, target: EquilibriumKind, kind: ConnectionType) -> Self {
        Self {
            source,
            target,
            kind,
            side: 1.0,
            offset: None,
            stable_radius: 0.2,
            unstable_radius: 0.5,
            control: StepControl { rel_tol: 1e-11, abs_tol: 1e-13, ..Default::default() },
            t_max: 1e5,
        }
    }

    /// The off-axis leg of the E1–E2 cycle, opposite to the axis arc.
    pub fn he_off_axis(p: &Params) -> Result<Self> {
        let axis = axis_connection(p)?;
        Ok(Self::new(axis.to, axis.from, ConnectionType::HeteroclinicOffAxis))
    }

    pub fn homoclinic(eq: EquilibriumKind) -> Self {
        Self::new(eq, eq, ConnectionType::Homoclinic)
    }
}

/// Target frame: `s = e + V ξ` with the stable columns first.
#[derive(Debug, Clone)]
pub struct TargetFrame {
    pub state: State,
    pub v: Matrix3<f64>,
    pub v_inv: Matrix3<f64>,
    pub n_stable: usize,
    pub rho_s: f64,
    pub rho_u: f64,
    /// Coefficients of `h` on the monomials of `ξ_S`: `(ξ1², ξ1ξ2, ξ2²)` for a
    /// two-dimensional stable space, `(ξ1²)` otherwise; one row per unstable
    /// coordinate.
    quad: DMatrix<f64>,
}

fn monomials(xs: &[f64]) -> Vec<f64> {
    match xs {
        [a] => vec![a * a],
        [a, b] => vec![a * a, a * b, b * b],
        _ => unreachable!("stable dimension is one or two"),
    }
}

impl TargetFrame {
    pub fn new(p: &Params, eq: &Equilibrium) -> Result<Self> {
        let a = eq.jacobian(p);
        let spec = &eq.spectrum;
        let (ns, nu) = (spec.stable_dim(), spec.unstable_dim());
        if ns + nu != 3 || ns == 0 || nu == 0 {
            return Err(Error::Dimension(format!("{} is not a hyperbolic saddle: {:?}", eq.kind, spec.eigenvalues)));
        }
        let v = if nu == 1 {
            let mut vu = linalg::real_eigenvector(&a, spec.eigenvalues[2].re);
            if vu[vu.iamax()] < 0.0 {
                vu = -vu;
            }
            let [s1, s2] = linalg::complementary_subspace(&a, spec.eigenvalues[2].re);
            Matrix3::from_columns(&[s1, s2, vu])
        } else {
            let mut vs = linalg::real_eigenvector(&a, spec.eigenvalues[0].re);
            if vs[vs.iamax()] < 0.0 {
                vs = -vs;
            }
            let [u1, u2] = fixed_plane_basis(&linalg::complementary_subspace(&a, spec.eigenvalues[0].re));
            Matrix3::from_columns(&[vs, u1, u2])
        };
        let v_inv = v.try_inverse().ok_or_else(|| Error::Dimension("degenerate eigenbasis".into()))?;
        let dist = model::equilibria(p)
            .all()
            .iter()
            .filter(|o| o.kind != eq.kind)
            .map(|o| (o.state - eq.state).norm())
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        let scale = if dist.is_finite() { dist } else { 1.0 };
        let mut frame = Self { state: eq.state, v, v_inv, n_stable: ns, rho_s: scale, rho_u: scale, quad: DMatrix::zeros(0, 0) };
        frame.quad = frame.manifold_coefficients(p, &a);
        Ok(frame)
    }

    fn with_radii(mut self, fs: f64, fu: f64) -> Self {
        self.rho_s *= fs;
        self.rho_u *= fu;
        self
    }

    pub fn xi(&self, s: &State) -> Vector3<f64> {
        self.v_inv * (s - self.state)
    }

    /// Solves `2 H(ξ, A_S ξ) - A_U H(ξ, ξ) = N_U(ξ, 0)` for the quadratic graph
    /// `ξ_U = H(ξ_S, ξ_S)` of the local stable manifold.
    fn manifold_coefficients(&self, p: &Params, a: &Matrix3<f64>) -> DMatrix<f64> {
        let ns = self.n_stable;
        let nu = 3 - ns;
        let lam = self.v_inv * a * self.v;
        let a_s = lam.view((0, 0), (ns, ns)).into_owned();
        let a_u = lam.view((ns, ns), (nu, nu)).into_owned();
        let nm = if ns == 2 { 3 } else { 1 };
        let samples: Vec<Vec<f64>> = if ns == 2 { vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]] } else { vec![vec![1.0]] };
        let n_unknowns = nu * nm;
        let mut lhs = DMatrix::zeros(samples.len() * nu, n_unknowns);
        let mut rhs = DVector::zeros(samples.len() * nu);
        let c = |x: f64| Complex64::new(x, 0.0);
        for (k, xs) in samples.iter().enumerate() {
            let xi_s = DVector::from_column_slice(xs);
            let axs = &a_s * &xi_s;
            // H(ξ, η) as a polarised monomial evaluation
            let polar = |u: &DVector<f64>, w: &DVector<f64>| -> Vec<f64> {
                if ns == 2 {
                    vec![u[0] * w[0], 0.5 * (u[0] * w[1] + u[1] * w[0]), u[1] * w[1]]
                } else {
                    vec![u[0] * w[0]]
                }
            };
            let m_cross = polar(&xi_s, &axs);
            let m_sq = polar(&xi_s, &xi_s);
            for r in 0..nu {
                for q in 0..nu {
                    for m in 0..nm {
                        let mut val = -a_u[(r, q)] * m_sq[m];
                        if r == q {
                            val += 2.0 * m_cross[m];
                        }
                        lhs[(k * nu + r, q * nm + m)] += val;
                    }
                }
            }
            let w = self.v.columns(0, ns) * &xi_s;
            let wc = Vector3::new(c(w[0]), c(w[1]), c(w[2]));
            let n = self.v_inv * model::second_derivative(p, &wc, &wc).map(|z| 0.5 * z.re);
            for r in 0..nu {
                rhs[k * nu + r] = n[ns + r];
            }
        }
        let sol = lhs.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n_unknowns));
        DMatrix::from_row_slice(nu, nm, sol.as_slice())
    }

    /// `ξ_U - h(ξ_S)`.
    pub fn miss(&self, xi: &Vector3<f64>) -> DVector<f64> {
        let ns = self.n_stable;
        let mono = DVector::from_vec(monomials(&xi.as_slice()[..ns]));
        let h = &self.quad * mono;
        DVector::from_iterator(3 - ns, (0..3 - ns).map(|r| xi[ns + r] - h[r]))
    }

    /// Near the box with the unstable coordinate dominating: a trajectory
    /// here is being pushed away rather than still converging.
    fn expelled(&self, s: &State) -> bool {
        let xi = self.xi(s);
        let ns = self.n_stable;
        let xs = xi.rows(0, ns).norm() / self.rho_s;
        let xu = xi.rows(ns, 3 - ns).norm() / self.rho_u;
        xu >= xs && xu < NEAR_MISS_BOX
    }

    /// Scaled box function: negative inside the box, zero on its boundary.
    pub fn box_function(&self, s: &State) -> f64 {
        let xi = self.xi(s);
        let ns = self.n_stable;
        let xs = xi.rows(0, ns).norm();
        let xu = xi.rows(ns, 3 - ns).norm();
        (xs / self.rho_s).max(xu / self.rho_u) - 1.0
    }
}

/// Basis of a plane chosen continuously in parameters: projections of the
/// two coordinate axes most nearly in the plane, orthonormalised.
fn fixed_plane_basis(q: &[Vector3<f64>; 2]) -> [Vector3<f64>; 2] {
    let n = q[0].cross(&q[1]).normalize();
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    let mut proj: Vec<Vector3<f64>> = axes.iter().map(|e| e - n * n.dot(e)).collect();
    let k = (0..3).min_by(|a, b| n[*a].abs().total_cmp(&n[*b].abs())).unwrap();
    let first = proj.remove(k).normalize();
    let second_raw = proj
        .iter()
        .map(|v| v - first * first.dot(v))
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap();
    [first, second_raw.normalize()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissDistance {
    /// `ξ_U - h(ξ_S)` at box entry (one component per unstable direction).
    pub value: Vec<f64>,
    /// Miss as a vector in state space, `V_U (ξ_U - h(ξ_S))`.
    pub ambient: [f64; 3],
    pub flight_time: f64,
    pub closest_approach: f64,
    pub entry: [f64; 3],
    /// Crossings of `y = 0` downward with `x > 0` and with `x < 0`.
    pub crossings: (usize, usize),
    /// Whether the trajectory entered the box (otherwise the miss is read at
    /// the closest passage).
    pub entered: bool,
}

/// Shot trajectory together with its miss distance.
#[derive(Debug, Clone)]
pub struct Shot {
    pub miss: MissDistance,
    pub trajectory: Trajectory,
}

fn require_equilibrium(p: &Params, kind: EquilibriumKind) -> Result<Equilibrium> {
    model::equilibria(p)
        .get(kind)
        .ok_or_else(|| Error::Domain(format!("{kind} does not exist at {p:?}")))
}

pub fn target_frame(p: &Params, problem: &ConnectionProblem) -> Result<TargetFrame> {
    let target = require_equilibrium(p, problem.target)?;
    Ok(TargetFrame::new(p, &target)?.with_radii(problem.stable_radius, problem.unstable_radius))
}

/// Box-function level below which a passing trajectory still yields a miss.
const NEAR_MISS_BOX: f64 = 4.0;

/// Radius, relative to the distance to the nearest other equilibrium, that
/// the trajectory must leave around its source before passages count.
const DEPARTURE_FRACTION: f64 = 0.1;

/// Distance from `s` to the nearest equilibrium other than `s` itself.
fn nearest_distance(p: &Params, s: &State) -> f64 {
    let d = model::equilibria(p)
        .all()
        .iter()
        .map(|o| (o.state - s).norm())
        .filter(|d| *d > 1e-12 * (1.0 + s.norm()))
        .fold(f64::INFINITY, f64::min);
    if d.is_finite() { d } else { 1.0 }
}

/// Section crossings closer than this to the z-axis are not counted.
const AXIS_CROSSING_FLOOR: f64 = 1e-9;

/// Integrates from `s0` until the trajectory enters the target box, having
/// first left the box three times as large. A trajectory passing by the box
/// is stopped at its first closest passage (in the box metric, below
/// `NEAR_MISS_BOX`); the miss read there has the right sign but is not
/// continuous with the in-box value.
pub fn shoot_from(p: &Params, source: &State, s0: &State, frame: &TargetFrame, control: StepControl, t_max: f64, record: bool) -> Result<Shot> {
    let pp = *p;
    let f = move |_: f64, y: &SVector<f64, 3>| model::vector_field(&pp, y);
    let mut times = Vec::new();
    let mut states = Vec::new();
    if record {
        times.push(0.0);
        states.push([s0.x, s0.y, s0.z]);
    }
    let mut closest = (s0 - frame.state).norm();
    let mut crossings = (0usize, 0usize);
    let mut prev = *s0;
    let mut observe = |seg: &integrate::Segment<3>, t_off: f64| {
        let y = seg.end();
        if record {
            times.push(t_off + seg.t1);
            states.push([y.x, y.y, y.z]);
        }
        closest = closest.min((y - frame.state).norm());
        if prev.y > 0.0 && y.y <= 0.0 && y.x.abs() > AXIS_CROSSING_FLOOR {
            if y.x > 0.0 {
                crossings.0 += 1;
            } else {
                crossings.1 += 1;
            }
        }
        prev = y;
    };
    let mut t0 = 0.0;
    let mut y0 = *s0;
    let depart = DEPARTURE_FRACTION * nearest_distance(p, source);
    // leave the source, then the enlarged target box
    let legs: [(Box<dyn Fn(&State) -> f64 + '_>, bool); 2] = [
        (Box::new(|y: &State| (y - source).norm() - depart), (s0 - source).norm() < depart),
        (Box::new(|y: &State| frame.box_function(y) - 2.0), true),
    ];
    for (g, needed) in legs {
        if !needed || g(&y0) >= 0.0 {
            continue;
        }
        let arm = [Event::new(|_, y: &SVector<f64, 3>| g(y), Direction::Up, true)];
        let r = integrate::run(f, t0, y0, t_max, control, &arm, Some(integrate::ESCAPE_RADIUS), |s| observe(s, 0.0))?;
        match r.stop {
            Stop::Event(_) => {}
            Stop::Escape => return Err(Error::Divergence { t: r.t, radius: integrate::ESCAPE_RADIUS }),
            Stop::Time => return Err(Error::SectionNotReached { t_max }),
        }
        t0 = r.t;
        y0 = r.y;
    }
    let rate = |y: &State| {
        let v = model::vector_field(p, y);
        let d = 1e-7 / (1.0 + v.norm());
        (frame.box_function(&(y + v * d)) - frame.box_function(&(y - v * d))) / (2.0 * d)
    };
    let events = [
        Event::new(|_, y: &SVector<f64, 3>| frame.box_function(y), Direction::Down, true),
        Event::new(|_, y: &SVector<f64, 3>| if frame.expelled(y) { rate(y) } else { -1.0 }, Direction::Up, true),
    ];
    let r = integrate::run(f, t0, y0, t_max, control, &events, Some(integrate::ESCAPE_RADIUS), |s| observe(s, 0.0))?;
    match r.stop {
        Stop::Event(_) => {}
        Stop::Escape => return Err(Error::Divergence { t: r.t, radius: integrate::ESCAPE_RADIUS }),
        Stop::Time => return Err(Error::SectionNotReached { t_max }),
    }
    let xi = frame.xi(&r.y);
    let value = frame.miss(&xi);
    let ns = frame.n_stable;
    let ambient = frame.v.columns(ns, 3 - ns) * &value;
    Ok(Shot {
        miss: MissDistance {
            value: value.iter().copied().collect(),
            ambient: [ambient[0], ambient[1], ambient[2]],
            flight_time: r.t,
            closest_approach: closest,
            entry: [r.y.x, r.y.y, r.y.z],
            crossings,
            entered: r.stop == Stop::Event(0),
        },
        trajectory: Trajectory { times, states, events: Vec::new(), stop: r.stop },
    })
}

/// Initial point on the source's one-dimensional unstable manifold.
pub fn source_seed(p: &Params, problem: &ConnectionProblem, frame: &TargetFrame) -> Result<State> {
    let source = require_equilibrium(p, problem.source)?;
    let offset = problem.offset.unwrap_or_else(|| default_offset(&source.state, frame));
    integrate::local_manifold_seed(p, &source, ManifoldKind::Unstable, offset, problem.side)
}

pub fn default_offset(source: &State, frame: &TargetFrame) -> f64 {
    (1e-6 * (1.0 + source.norm())).min(1e-3 * frame.rho_s)
}

pub fn shoot(p: &Params, problem: &ConnectionProblem) -> Result<MissDistance> {
    Ok(shoot_traj(p, problem, false)?.miss)
}

pub fn shoot_traj(p: &Params, problem: &ConnectionProblem, record: bool) -> Result<Shot> {
    let frame = target_frame(p, problem)?;
    let s0 = source_seed(p, problem, &frame)?;
    let source = require_equilibrium(p, problem.source)?.state;
    shoot_from(p, &source, &s0, &frame, problem.control, problem.t_max, record)
}

fn scalar_miss(p: &Params, problem: &ConnectionProblem) -> Result<f64> {
    let m = shoot(p, problem)?;
    if m.value.len() != 1 {
        return Err(Error::Dimension("scalar miss needs a one-dimensional unstable target direction".into()));
    }
    Ok(m.value[0])
}

#[derive(Debug, Clone)]
pub struct Connection {
    pub params: Params,
    pub free: ParamName,
    pub value: f64,
    pub miss: MissDistance,
    pub trajectory: Trajectory,
    /// Shift of the located value when the shooting offset is halved.
    pub offset_shift: Option<f64>,
}

/// Brent refinement of `free` on `bracket` to `|miss| ≤ 1e-8`.
pub fn find_connection(p: &Params, problem: &ConnectionProblem, free: ParamName, bracket: (f64, f64)) -> Result<Connection> {
    let value = locate_connection(p, problem, free, bracket)?;
    let q = p.with(free, value);
    let shot = shoot_traj(&q, problem, true)?;
    if shot.miss.value[0].abs() > 1e-8 {
        return Err(Error::NoConvergence(format!("miss {} after refinement", shot.miss.value[0])));
    }
    Ok(Connection { params: q, free, value, miss: shot.miss, trajectory: shot.trajectory, offset_shift: None })
}

/// As [`find_connection`], also locating the connection with half the offset.
pub fn find_connection_checked(p: &Params, problem: &ConnectionProblem, free: ParamName, bracket: (f64, f64)) -> Result<Connection> {
    let mut c = find_connection(p, problem, free, bracket)?;
    let frame = target_frame(&c.params, problem)?;
    let source = require_equilibrium(&c.params, problem.source)?;
    let half = ConnectionProblem { offset: Some(0.5 * problem.offset.unwrap_or_else(|| default_offset(&source.state, &frame))), ..*problem };
    c.offset_shift = Some((locate_connection(p, &half, free, bracket)? - c.value).abs());
    Ok(c)
}

/// Every connection found by scanning `window` with `samples` subintervals,
/// in scan order. Sign changes that do not refine to a zero (jumps of the
/// miss across a stable manifold) are dropped.
pub fn scan_connections(p: &Params, problem: &ConnectionProblem, free: ParamName, window: (f64, f64), samples: usize) -> Vec<Connection> {
    let (a, b) = window;
    let grid: Vec<f64> = (0..=samples).map(|k| a + (b - a) * k as f64 / samples as f64).collect();
    let vals: Vec<Option<f64>> = grid.iter().map(|v| scalar_miss(&p.with(free, *v), problem).ok()).collect();
    (0..samples)
        .filter(|&k| matches!((vals[k], vals[k + 1]), (Some(x), Some(y)) if x * y <= 0.0))
        .filter_map(|k| find_connection(p, problem, free, (grid[k], grid[k + 1])).ok())
        .collect()
}

/// The connection in `window` with the fewest crossings of `y = 0`; the
/// first one found on ties.
pub fn principal_connection(p: &Params, problem: &ConnectionProblem, free: ParamName, window: (f64, f64), samples: usize) -> Result<Connection> {
    scan_connections(p, problem, free, window, samples)
        .into_iter()
        .min_by_key(|c| c.miss.crossings.0 + c.miss.crossings.1)
        .ok_or_else(|| Error::NoBracket(format!("no connection for {free} in [{}, {}]", window.0, window.1)))
}

/// Samples used to look for a sign change inside the bracket; endpoints
/// where shooting fails (E2 merging with E1, escape) are skipped.
const BRACKET_SAMPLES: usize = 16;

fn locate_connection(p: &Params, problem: &ConnectionProblem, free: ParamName, (a, b): (f64, f64)) -> Result<f64> {
    let g = |v: f64| scalar_miss(&p.with(free, v), problem);
    let grid: Vec<f64> = (0..=BRACKET_SAMPLES).map(|k| a + (b - a) * k as f64 / BRACKET_SAMPLES as f64).collect();
    let vals: Vec<Option<f64>> = grid.iter().map(|v| g(*v).ok()).collect();
    let k = (0..BRACKET_SAMPLES)
        .find(|&k| matches!((vals[k], vals[k + 1]), (Some(x), Some(y)) if x * y <= 0.0))
        .ok_or_else(|| Error::NoBracket(format!("miss keeps its sign on [{a}, {b}] for {free}")))?;
    let (lo, hi) = (grid[k], grid[k + 1]);
    let mut failure = None;
    let xtol = 1e-14 * (1.0 + lo.abs().max(hi.abs()));
    let v = roots::brent(
        |v| match g(v) {
            Ok(m) => m,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        lo,
        hi,
        vals[k].unwrap(),
        vals[k + 1].unwrap(),
        xtol,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    v
}

/// Zero set of the scalar miss in the plane of two parameters.
#[derive(Debug, Clone)]
pub struct ConnectionCurveProblem {
    pub base: Params,
    pub problem: ConnectionProblem,
    pub free: [ParamName; 2],
    pub weights: [f64; 2],
}

impl ConnectionCurveProblem {
    pub fn params(&self, u: &DVector<f64>) -> Params {
        self.base.with(self.free[0], u[0]).with(self.free[1], u[1])
    }
}

impl ZeroProblem for ConnectionCurveProblem {
    fn unknowns(&self) -> usize {
        2
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, scalar_miss(&self.params(u), &self.problem)?))
    }

    fn names(&self) -> Vec<String> {
        self.free.iter().map(|n| n.to_string()).collect()
    }

    /// Discriminants of E1 and E2 (a saddle becomes a saddle-focus) and
    /// `δ_E2 - 1`.
    fn test_functions(&self, u: &DVector<f64>) -> Vec<(SpecialKind, f64)> {
        let d = CurvePoint::at(&self.params(u), 0.0);
        vec![
            (SpecialKind::UserTestZero, d.disc_e1),
            (SpecialKind::UserTestZero, d.disc_e2),
            (SpecialKind::UserTestZero, d.delta_e2.map_or(f64::NAN, |v| v - 1.0)),
        ]
    }

    fn test_names(&self) -> Vec<String> {
        vec!["DHe".into(), "DHe".into(), "DH".into()]
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eps1: f64,
    pub eps3: f64,
    pub delta_e1: Option<f64>,
    pub delta_e2: Option<f64>,
    /// `e2² + 4 e1`; negative when E1 has a complex pair.
    pub disc_e1: f64,
    /// `(e2 - (B/D) e3)² + 4 (e1 + e3/D)`; negative when E2 has a complex pair.
    pub disc_e2: f64,
    pub miss: f64,
}

impl CurvePoint {
    pub fn at(p: &Params, miss: f64) -> Self {
        let s1 = model::eigenvalues_e1(p);
        let s2 = model::eigenvalues_e2(p).ok();
        Self {
            eps1: p.eps1,
            eps3: p.eps3,
            delta_e1: local::saddle_quantity(&s1, EquilibriumKind::E1).ok(),
            delta_e2: s2.and_then(|s| local::saddle_quantity(&s, EquilibriumKind::E2).ok()),
            disc_e1: s1.discriminant,
            disc_e2: s2.map_or(f64::NAN, |s| s.discriminant),
            miss,
        }
    }

    /// `δ_E1 δ_E2 > 1`, when both are defined.
    pub fn attractive_cycle(&self) -> Option<bool> {
        Some(self.delta_e1? * self.delta_e2? > 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    DHe,
    DH,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub kind: MarkerKind,
    /// Index of the curve point preceding the marker.
    pub index: usize,
    pub eps1: f64,
    pub eps3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalCurve {
    pub problem: ConnectionProblem,
    pub base: Params,
    pub points: Vec<CurvePoint>,
    pub markers: Vec<Marker>,
    pub termination: String,
    #[serde(skip)]
    pub branch: Option<Branch>,
}

impl GlobalCurve {
    pub fn markers_of(&self, kind: MarkerKind) -> impl Iterator<Item = &Marker> {
        self.markers.iter().filter(move |m| m.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), export::fmt17);
        let mut out = String::from("eps1,eps3,delta_e1,delta_e2,disc_e1,disc_e2,marker\n");
        let mut markers = self.markers.iter().peekable();
        for (i, c) in self.points.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},\n",
                export::fmt17(c.eps1),
                export::fmt17(c.eps3),
                opt(c.delta_e1),
                opt(c.delta_e2),
                export::fmt17(c.disc_e1),
                export::fmt17(c.disc_e2)
            ));
            while let Some(m) = markers.next_if(|m| m.index == i) {
                let d = CurvePoint::at(&self.base.with(ParamName::Eps1, m.eps1).with(ParamName::Eps3, m.eps3), 0.0);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{:?}\n",
                    export::fmt17(m.eps1),
                    export::fmt17(m.eps3),
                    opt(d.delta_e1),
                    opt(d.delta_e2),
                    export::fmt17(d.disc_e1),
                    export::fmt17(d.disc_e2),
                    m.kind
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("curve serializes")
    }
}

/// Default settings for connection curves: residual tolerance 1e-10 on the
/// miss, no fold or branch-point tests.
pub fn curve_settings() -> ContinuationSettings {
    ContinuationSettings { detect_branch_points: false, stop_on_closed_loop: false, newton_tol: 1e-10, ..Default::default() }
}

/// Pseudo-arclength continuation of a connection in `(e1, e3)` from `seed`.
pub fn continue_connection(curve: &ConnectionCurveProblem, seed: [f64; 2], settings: &ContinuationSettings) -> Result<GlobalCurve> {
    let branch = continue_branch(curve, &DVector::from_column_slice(&seed), settings)?;
    let points = branch
        .points
        .iter()
        .map(|u| {
            let p = curve.params(&DVector::from_column_slice(u));
            CurvePoint::at(&p, scalar_miss(&p, &curve.problem).unwrap_or(f64::NAN))
        })
        .collect();
    let markers = branch
        .special_points
        .iter()
        .filter_map(|s| {
            let kind = match s.label.as_str() {
                "DHe" => MarkerKind::DHe,
                "DH" => MarkerKind::DH,
                _ => return None,
            };
            let p = curve.params(&DVector::from_column_slice(&s.x));
            Some(Marker { kind, index: s.index, eps1: p.eps1, eps3: p.eps3 })
        })
        .collect();
    Ok(GlobalCurve { problem: curve.problem, base: curve.base, points, markers, termination: branch.termination.clone(), branch: Some(branch) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_direction_from_phase_line() {
        let p = Params::reference(0.2, -0.0043175);
        let a = axis_connection(&p).unwrap();
        assert_eq!((a.from, a.to), (EquilibriumKind::E2, EquilibriumKind::E1));
        assert!((a.z_from - 0.43175).abs() < 1e-12);
        let p = Params::reference(-0.2, 0.0037414);
        let a = axis_connection(&p).unwrap();
        assert_eq!((a.from, a.to), (EquilibriumKind::E1, EquilibriumKind::E2));
        assert!(axis_connection(&Params::reference(0.2, 0.0)).is_err());
        assert!(axis_connection(&Params::new(0.2, -1.0, 0.1, -0.1, 0.0)).is_err());
    }

    #[test]
    fn axis_arc_solves_the_line_flow() {
        for e3 in [-0.004, 0.003, 0.5] {
            let a = axis_connection(&Params::reference(0.1, e3)).unwrap();
            let (d, h) = (0.01, 1e-4);
            for t in [-500.0, -3.0, 0.0, 2.0, 100.0] {
                let z = a.z_at(t);
                let dz = (a.z_at(t + h) - a.z_at(t - h)) / (2.0 * h);
                assert!((dz - z * (e3 + d * z)).abs() < 1e-9 * (1.0 + z.abs()), "{e3} {t}");
            }
            let (lo, hi) = (a.z_from.min(a.z_to), a.z_from.max(a.z_to));
            assert!((a.z_at(-50.0 / e3.abs()) - a.z_from).abs() < 1e-6 * hi.abs().max(lo.abs()));
            assert!((a.z_at(50.0 / e3.abs()) - a.z_to).abs() < 1e-6 * hi.abs().max(lo.abs()));
        }
    }

    #[test]
    fn axis_direction_flips_under_conjugacy() {
        for (e1, e3) in [(0.2, -0.004), (-0.2, 0.0037), (1.0, 0.3)] {
            let p = Params::reference(e1, e3);
            let (q, _) = model::conjugate_params(&p).unwrap();
            let a = axis_connection(&p).unwrap();
            let b = axis_connection(&q).unwrap();
            // E1 and E2 trade places under the conjugacy
            assert_eq!(a.from, b.to);
            assert_eq!(a.to, b.from);
        }
    }

    #[test]
    fn quadratic_graph_is_invariant() {
        // the stable manifold of E2 is tangent to h to third order: points on
        // h flow with |ξ_U - h| = O(|ξ_S|³)
        let p = Params::reference(0.2, -0.0043175);
        let e2 = model::equilibria(&p).e2.unwrap();
        let frame = TargetFrame::new(&p, &e2).unwrap();
        let defect = |r: f64| {
            let xs = [r * 0.6, r * 0.8];
            let h = &frame.quad * DVector::from_vec(monomials(&xs));
            let xi = Vector3::new(xs[0], xs[1], h[0]);
            let s = frame.state + frame.v * xi;
            let xidot = frame.v_inv * model::vector_field(&p, &s);
            // d/dt (ξ_U - h(ξ_S)) on the graph
            let dh = 2.0 * frame.quad[(0, 0)] * xs[0] * xidot[0]
                + frame.quad[(0, 1)] * (xs[0] * xidot[1] + xs[1] * xidot[0])
                + 2.0 * frame.quad[(0, 2)] * xs[1] * xidot[1];
            (xidot[2] - dh).abs()
        };
        let (a, b) = (defect(1e-2), defect(5e-3));
        assert!(a / b > 6.0, "{a} {b}");
    }

    #[test]
    fn he_miss_changes_sign_and_mirrors() {
        let base = Params::reference(0.2, -0.0043175);
        let pr = ConnectionProblem::he_off_axis(&base).unwrap();
        assert_eq!((pr.source, pr.target), (EquilibriumKind::E1, EquilibriumKind::E2));
        let lo = shoot(&base.with(ParamName::Eps3, -0.0053175), &pr).unwrap().value[0];
        let hi = shoot(&base.with(ParamName::Eps3, -0.0033175), &pr).unwrap().value[0];
        assert!(lo * hi < 0.0, "{lo} {hi}");
        let m = shoot(&base, &pr).unwrap();
        let mirrored = shoot(&base, &ConnectionProblem { side: -1.0, ..pr }).unwrap();
        assert!((m.value[0] - mirrored.value[0]).abs() < 1e-9 * (1.0 + m.value[0].abs()));
        assert!((m.entry[0] + mirrored.entry[0]).abs() < 1e-8);
    }
}
