//! Dormand–Prince 5(4) integration with dense output, event location,
//! trajectory recording, tangent propagation and Lyapunov exponents.

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::linalg;
use crate::model::{self, Equilibrium, ParamName, Params, State};
use crate::roots;

// Dormand–Prince coefficients
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    /// End of the valid range; earlier than `t0 + h` for a step cut short by
    /// a terminal event.
    pub t1: f64,
    h: f64,
    truncated: bool,
    r: [SVector<f64, N>; 5],
}

impl<const N: usize> Segment<N> {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn start(&self) -> SVector<f64, N> {
        self.r[0]
    }

    pub fn end(&self) -> SVector<f64, N> {
        if self.truncated {
            self.eval(self.t1)
        } else {
            self.r[0] + self.r[1]
        }
    }

    /// Fourth-order interpolant at `t` within the step.
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        self.r[0] + (self.r[1] + (self.r[2] + (self.r[3] + self.r[4] * th1) * th) * th1) * th
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { rel_tol: 1e-9, abs_tol: 1e-11, max_step: f64::INFINITY, max_steps: 10_000_000 }
    }
}

/// Adaptive Dormand–Prince stepper. Integrates in the direction of `dir`
/// (`+1` forward, `-1` backward).
pub struct Dopri5<const N: usize, F> {
    f: F,
    t: f64,
    y: SVector<f64, N>,
    k1: SVector<f64, N>,
    h: f64,
    dir: f64,
    ctl: StepControl,
    err_old: f64,
    rejected: bool,
    pub steps: usize,
}

impl<const N: usize, F> Dopri5<N, F>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    pub fn new(mut f: F, t0: f64, y0: SVector<f64, N>, dir: f64, ctl: StepControl) -> Self {
        let k1 = f(t0, &y0);
        let mut s = Self {
            f,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            dir: dir.signum(),
            ctl,
            err_old: 1e-4,
            rejected: false,
            steps: 0,
        };
        s.h = s.initial_step();
        s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &SVector<f64, N> {
        &self.y
    }

    fn scale(&self, a: &SVector<f64, N>, b: &SVector<f64, N>) -> SVector<f64, N> {
        a.zip_map(b, |x, y| self.ctl.abs_tol + self.ctl.rel_tol * x.abs().max(y.abs()))
    }

    fn initial_step(&mut self) -> f64 {
        let sk = self.scale(&self.y, &self.y);
        let dnf: f64 = self.k1.component_div(&sk).norm_squared();
        let dny: f64 = self.y.component_div(&sk).norm_squared();
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.ctl.max_step);
        let y1 = self.y + self.k1 * (self.dir * h);
        let f1 = (self.f)(self.t + self.dir * h, &y1);
        let der2 = (f1 - self.k1).component_div(&sk).norm() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        (100.0 * h).min(h1).min(self.ctl.max_step) * self.dir
    }

    /// Advances one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<Segment<N>> {
        loop {
            if self.steps >= self.ctl.max_steps {
                return Err(Error::Other(format!("step limit {} reached at t = {}", self.ctl.max_steps, self.t)));
            }
            let mut h = self.h;
            if h.abs() > self.ctl.max_step {
                h = self.ctl.max_step * self.dir;
            }
            let remaining = t_limit - self.t;
            let last = self.dir * (self.t + h - t_limit) >= 0.0;
            if last {
                h = remaining;
            }
            let h_min = 16.0 * f64::EPSILON * self.t.abs().max(1.0);
            if h.abs() < h_min && !last {
                return Err(Error::StepUnderflow { t: self.t });
            }
            if h == 0.0 {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let (t, y, k1) = (self.t, self.y, self.k1);
            let f = &mut self.f;
            let k2 = f(t + C2 * h, &(y + k1 * (h * A21)));
            let k3 = f(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h));
            let k4 = f(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
            let k5 = f(t + C5 * h, &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
            let k6 = f(t + h, &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h));
            let y_new = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
            let k7 = f(t + h, &y_new);
            self.steps += 1;
            let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
            let sk = self.scale(&y, &y_new);
            let err = (err_vec.component_div(&sk).norm_squared() / N as f64).sqrt();
            if !err.is_finite() || !y_new.iter().all(|v| v.is_finite()) {
                if h.abs() < 1e3 * h_min {
                    return Err(Error::NonFinite { t });
                }
                self.h = h * FAC_MIN;
                self.rejected = true;
                continue;
            }
            let fac11 = err.powf(EXPO1);
            let fac = (fac11 / self.err_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            if err <= 1.0 {
                self.err_old = err.max(1e-4);
                let ydiff = y_new - y;
                let bspl = k1 * h - ydiff;
                let r = [
                    y,
                    ydiff,
                    bspl,
                    ydiff - k7 * h - bspl,
                    (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h,
                ];
                let mut h_new = h / fac;
                if self.rejected && h_new.abs() > h.abs() {
                    h_new = h;
                }
                self.rejected = false;
                let seg = Segment { t0: t, t1: if last { t_limit } else { t + h }, h, truncated: false, r };
                self.t = seg.t1;
                self.y = y_new;
                self.k1 = k7;
                if !last {
                    self.h = h_new;
                }
                return Ok(seg);
            }
            self.h = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            self.rejected = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Any,
    Up,
    Down,
}

impl Direction {
    fn crosses(self, g0: f64, g1: f64) -> bool {
        if g0 == 0.0 {
            return false;
        }
        let up = g0 < 0.0 && g1 >= 0.0;
        let down = g0 > 0.0 && g1 <= 0.0;
        match self {
            Direction::Any => up || down,
            Direction::Up => up,
            Direction::Down => down,
        }
    }
}

pub type EventFn<'a, const N: usize> = Box<dyn Fn(f64, &SVector<f64, N>) -> f64 + 'a>;

pub struct Event<'a, const N: usize> {
    pub function: EventFn<'a, N>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a, const N: usize> Event<'a, N> {
    pub fn new(f: impl Fn(f64, &SVector<f64, N>) -> f64 + 'a, direction: Direction, terminal: bool) -> Self {
        Self { function: Box::new(f), direction, terminal }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit<const N: usize> {
    pub t: f64,
    pub id: usize,
    pub y: SVector<f64, N>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stop {
    Time,
    Event(usize),
    Escape,
}

#[derive(Debug, Clone)]
pub struct RunResult<const N: usize> {
    pub t: f64,
    pub y: SVector<f64, N>,
    pub stop: Stop,
    pub events: Vec<EventHit<N>>,
    pub steps: usize,
}

/// Locates a sign change of `g` on the continuous extension of `seg`.
pub fn locate<const N: usize>(seg: &Segment<N>, g: impl Fn(f64, &SVector<f64, N>) -> f64, g0: f64, g1: f64) -> Result<f64> {
    let xtol = 1e-14 * (1.0 + seg.t0.abs().max(seg.t1.abs()));
    let (a, b, fa, fb) = if seg.t0 < seg.t1 { (seg.t0, seg.t1, g0, g1) } else { (seg.t1, seg.t0, g1, g0) };
    roots::brent(|t| g(t, &seg.eval(t)), a, b, fa, fb, xtol, 200)
}

/// Integrates from `t0` toward `t_end`, watching `events` and calling
/// `on_segment` for every accepted step (the last one truncated at a
/// terminal event). When `escape` is `Some(r)`, stops once the norm of the
/// first three components exceeds `r`.
pub fn run<const N: usize, F>(
    f: F,
    t0: f64,
    y0: SVector<f64, N>,
    t_end: f64,
    ctl: StepControl,
    events: &[Event<'_, N>],
    escape: Option<f64>,
    mut on_segment: impl FnMut(&Segment<N>),
) -> Result<RunResult<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut stepper = Dopri5::new(f, t0, y0, dir, ctl);
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.function)(t0, &y0)).collect();
    let mut hits = Vec::new();
    if t_end == t0 {
        return Ok(RunResult { t: t0, y: y0, stop: Stop::Time, events: hits, steps: 0 });
    }
    loop {
        let mut seg = stepper.step(t_end)?;
        let y1 = seg.r[0] + seg.r[1];
        let mut step_hits: Vec<EventHit<N>> = Vec::new();
        for (id, ev) in events.iter().enumerate() {
            let g1 = (ev.function)(seg.t1, &y1);
            if ev.direction.crosses(g_prev[id], g1) {
                let t = locate(&seg, |t, y| (ev.function)(t, y), g_prev[id], g1)?;
                step_hits.push(EventHit { t, id, y: seg.eval(t) });
            }
            g_prev[id] = g1;
        }
        step_hits.sort_by(|a, b| ((a.t - seg.t0) * dir).partial_cmp(&((b.t - seg.t0) * dir)).unwrap());
        let mut terminal: Option<EventHit<N>> = None;
        for h in step_hits {
            let is_term = events[h.id].terminal;
            hits.push(h.clone());
            if is_term {
                terminal = Some(h);
                break;
            }
        }
        if let Some(h) = terminal {
            seg.t1 = h.t;
            seg.truncated = true;
            on_segment(&seg);
            return Ok(RunResult { t: h.t, y: h.y, stop: Stop::Event(h.id), events: hits, steps: stepper.steps });
        }
        on_segment(&seg);
        if let Some(r) = escape {
            if y1.fixed_rows::<3>(0).norm() > r {
                return Ok(RunResult { t: seg.t1, y: y1, stop: Stop::Escape, events: hits, steps: stepper.steps });
            }
        }
        if seg.t1 == t_end {
            return Ok(RunResult { t: t_end, y: y1, stop: Stop::Time, events: hits, steps: stepper.steps });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_time: f64,
    /// Record every accepted step; otherwise only the endpoints and events.
    pub dense_output: bool,
    /// Resample the recorded trajectory on a uniform grid.
    pub sample_dt: Option<f64>,
    pub backward: bool,
    /// Norm beyond which the trajectory is declared divergent.
    pub escape_radius: Option<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: f64::INFINITY,
            max_time: 100.0,
            dense_output: true,
            sample_dt: None,
            backward: false,
            escape_radius: Some(ESCAPE_RADIUS),
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be positive".into()));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::InvalidParams("max_time must be positive".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParams("max_step must be positive".into()));
        }
        if let Some(dt) = self.sample_dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParams("sample_dt must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn control(&self) -> StepControl {
        StepControl { rel_tol: self.rel_tol, abs_tol: self.abs_tol, max_step: self.max_step, ..Default::default() }
    }
}

pub const ESCAPE_RADIUS: f64 = 1e6;

pub struct EventSpec {
    pub function: Box<dyn Fn(&State) -> f64 + Send + Sync>,
    pub direction: Direction,
    pub terminal: bool,
}

impl EventSpec {
    pub fn new(f: impl Fn(&State) -> f64 + Send + Sync + 'static, direction: Direction, terminal: bool) -> Self {
        Self { function: Box::new(f), direction, terminal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub id: usize,
    pub state: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub events: Vec<TrajectoryEvent>,
    pub stop: Stop,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> State {
        let s = self.states.last().expect("trajectory has at least the initial point");
        State::new(s[0], s[1], s[2])
    }

    pub fn state(&self, i: usize) -> State {
        State::from(self.states[i])
    }

    /// `t,x,y,z` with a header row, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,z\n");
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&export::csv_row(&[*t, s[0], s[1], s[2]]));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Other(format!("trajectory json: {e}")))
    }

    /// Componentwise bounding box `(min, max)`.
    pub fn bounding_box(&self, from: usize) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &self.states[from..] {
            for k in 0..3 {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        (lo, hi)
    }
}

/// Integrates the model from `s0` over `settings.max_time` (backward when
/// requested), recording the trajectory and the events of `events`.
pub fn integrate(p: &Params, s0: &State, settings: &IntegratorSettings, events: &[EventSpec]) -> Result<Trajectory> {
    settings.validate()?;
    p.validate()?;
    let t_end = if settings.backward { -settings.max_time } else { settings.max_time };
    let evs: Vec<Event<3>> = events
        .iter()
        .map(|e| Event::new(move |_, y: &State| (e.function)(y), e.direction, e.terminal))
        .collect();
    let mut times = vec![0.0];
    let mut states = vec![[s0.x, s0.y, s0.z]];
    let dt = settings.sample_dt;
    let mut next_sample = dt.map(|d| if settings.backward { -d } else { d });
    let dense = settings.dense_output;
    let pp = *p;
    let res = run(
        move |_, y: &State| model::vector_field(&pp, y),
        0.0,
        *s0,
        t_end,
        settings.control(),
        &evs,
        settings.escape_radius,
        |seg| {
            if let (Some(d), Some(ns)) = (dt, next_sample.as_mut()) {
                let step = if settings.backward { -d } else { d };
                while (*ns - seg.t1) * step.signum() <= 0.0 {
                    let y = seg.eval(*ns);
                    times.push(*ns);
                    states.push([y.x, y.y, y.z]);
                    *ns += step;
                }
            } else if dense {
                let y = seg.end();
                times.push(seg.t1);
                states.push([y.x, y.y, y.z]);
            }
        },
    )?;
    if res.stop == Stop::Escape {
        return Err(Error::Divergence { t: res.t, radius: settings.escape_radius.unwrap_or(ESCAPE_RADIUS) });
    }
    if times.last() != Some(&res.t) {
        times.push(res.t);
        states.push([res.y.x, res.y.y, res.y.z]);
    }
    Ok(Trajectory {
        times,
        states,
        events: res
            .events
            .iter()
            .map(|h| TrajectoryEvent { time: h.t, id: h.id, state: [h.y.x, h.y.y, h.y.z] })
            .collect(),
        stop: res.stop,
    })
}

/// Tolerances for variational flows used by Newton-type solvers.
pub const VARIATIONAL_CONTROL: StepControl =
    StepControl { rel_tol: 1e-11, abs_tol: 1e-13, max_step: f64::INFINITY, max_steps: 10_000_000 };

fn unpack_state<const N: usize>(y: &SVector<f64, N>) -> State {
    State::new(y[0], y[1], y[2])
}

fn unpack_mat3<const N: usize>(y: &SVector<f64, N>, off: usize) -> Matrix3<f64> {
    Matrix3::from_column_slice(&y.as_slice()[off..off + 9])
}

/// Flow map and its state derivative (the monodromy when `t` is a period).
pub fn flow_with_monodromy(p: &Params, s0: &State, t: f64, ctl: StepControl) -> Result<(State, Matrix3<f64>)> {
    let mut y0 = SVector::<f64, 12>::zeros();
    y0.fixed_rows_mut::<3>(0).copy_from(s0);
    y0.as_mut_slice()[3..12].copy_from_slice(Matrix3::<f64>::identity().as_slice());
    let pp = *p;
    let f = move |_: f64, y: &SVector<f64, 12>| {
        let s = unpack_state(y);
        let phi = unpack_mat3(y, 3);
        let mut out = SVector::<f64, 12>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&model::vector_field(&pp, &s));
        out.as_mut_slice()[3..12].copy_from_slice((model::jacobian(&pp, &s) * phi).as_slice());
        out
    };
    let r = run(f, 0.0, y0, t, ctl, &[], Some(ESCAPE_RADIUS), |_| {})?;
    if r.stop == Stop::Escape {
        return Err(Error::Divergence { t: r.t, radius: ESCAPE_RADIUS });
    }
    Ok((unpack_state(&r.y), unpack_mat3(&r.y, 3)))
}

/// Flow map, state derivative and derivative with respect to two parameters.
pub fn flow_with_sensitivities(
    p: &Params,
    s0: &State,
    t: f64,
    names: [ParamName; 2],
    ctl: StepControl,
) -> Result<(State, Matrix3<f64>, SMatrix<f64, 3, 2>)> {
    let mut y0 = SVector::<f64, 18>::zeros();
    y0.fixed_rows_mut::<3>(0).copy_from(s0);
    y0.as_mut_slice()[3..12].copy_from_slice(Matrix3::<f64>::identity().as_slice());
    let pp = *p;
    let f = move |_: f64, y: &SVector<f64, 18>| {
        let s = unpack_state(y);
        let phi = unpack_mat3(y, 3);
        let psi = SMatrix::<f64, 3, 2>::from_column_slice(&y.as_slice()[12..18]);
        let j = model::jacobian(&pp, &s);
        let mut fp = SMatrix::<f64, 3, 2>::zeros();
        for (k, n) in names.iter().enumerate() {
            fp.set_column(k, &model::param_derivative(*n, &s));
        }
        let mut out = SVector::<f64, 18>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&model::vector_field(&pp, &s));
        out.as_mut_slice()[3..12].copy_from_slice((j * phi).as_slice());
        out.as_mut_slice()[12..18].copy_from_slice((j * psi + fp).as_slice());
        out
    };
    let r = run(f, 0.0, y0, t, ctl, &[], Some(ESCAPE_RADIUS), |_| {})?;
    if r.stop == Stop::Escape {
        return Err(Error::Divergence { t: r.t, radius: ESCAPE_RADIUS });
    }
    Ok((
        unpack_state(&r.y),
        unpack_mat3(&r.y, 3),
        SMatrix::<f64, 3, 2>::from_column_slice(&r.y.as_slice()[12..18]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambda_max: f64,
    pub stderr: f64,
    pub blocks: usize,
    /// Base point at the end of the run.
    pub final_state: [f64; 3],
}

pub const LYAPUNOV_BLOCKS: usize = 20;

/// Largest Lyapunov exponent of `x' = field(x)` by propagating one tangent
/// vector with the Jacobian `jac` and renormalizing every `renorm_interval`.
/// The standard error is taken over `LYAPUNOV_BLOCKS` consecutive blocks.
pub fn max_lyapunov_system(
    field: impl Fn(&State) -> State + Copy,
    jac: impl Fn(&State) -> Matrix3<f64> + Copy,
    s0: &State,
    transient: f64,
    horizon: f64,
    renorm_interval: f64,
    ctl: StepControl,
) -> Result<LyapunovEstimate> {
    if !(renorm_interval > 0.0 && horizon >= renorm_interval * LYAPUNOV_BLOCKS as f64) {
        return Err(Error::InvalidParams("horizon must span at least one renormalization interval per block".into()));
    }
    let base = |_: f64, y: &State| field(y);
    let mut s = *s0;
    if transient > 0.0 {
        let r = run(base, 0.0, s, transient, ctl, &[], Some(ESCAPE_RADIUS), |_| {})?;
        if r.stop == Stop::Escape {
            return Err(Error::Divergence { t: r.t, radius: ESCAPE_RADIUS });
        }
        s = r.y;
    }
    let tangent = move |_: f64, y: &SVector<f64, 6>| {
        let x = State::new(y[0], y[1], y[2]);
        let v = State::new(y[3], y[4], y[5]);
        let fx = field(&x);
        let jv = jac(&x) * v;
        SVector::<f64, 6>::new(fx.x, fx.y, fx.z, jv.x, jv.y, jv.z)
    };
    let n = (horizon / renorm_interval).round() as usize;
    let per_block = n / LYAPUNOV_BLOCKS;
    let mut v = State::new(1.0, 1.0, 1.0).normalize();
    let mut logs = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..per_block * LYAPUNOV_BLOCKS {
        let y0 = SVector::<f64, 6>::new(s.x, s.y, s.z, v.x, v.y, v.z);
        let r = run(tangent, t, y0, t + renorm_interval, ctl, &[], Some(ESCAPE_RADIUS), |_| {})?;
        if r.stop == Stop::Escape {
            return Err(Error::Divergence { t: r.t + transient, radius: ESCAPE_RADIUS });
        }
        t = r.t;
        s = State::new(r.y[0], r.y[1], r.y[2]);
        let w = State::new(r.y[3], r.y[4], r.y[5]);
        let g = w.norm();
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::NonFinite { t });
        }
        logs.push(g.ln());
        v = w / g;
    }
    let total_time = renorm_interval * logs.len() as f64;
    let lambda = logs.iter().sum::<f64>() / total_time;
    let block_time = renorm_interval * per_block as f64;
    let means: Vec<f64> = logs.chunks(per_block).map(|c| c.iter().sum::<f64>() / block_time).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    Ok(LyapunovEstimate {
        lambda_max: lambda,
        stderr: (var / means.len() as f64).sqrt(),
        blocks: means.len(),
        final_state: [s.x, s.y, s.z],
    })
}

pub const DEFAULT_TRANSIENT: f64 = 500.0;
pub const DEFAULT_HORIZON: f64 = 5000.0;
pub const DEFAULT_RENORM: f64 = 1.0;

pub fn max_lyapunov(p: &Params, s0: &State, transient: f64, horizon: f64, renorm_interval: f64) -> Result<LyapunovEstimate> {
    p.validate()?;
    let pp = *p;
    let ctl = StepControl { rel_tol: 1e-9, abs_tol: 1e-11, ..Default::default() };
    max_lyapunov_system(
        move |s| model::vector_field(&pp, s),
        move |s| model::jacobian(&pp, s),
        s0,
        transient,
        horizon,
        renorm_interval,
        ctl,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    Unstable,
    Stable,
}

/// Real unit eigenvector spanning the one-dimensional stable or unstable
/// eigenspace of `eq`, sign-normalized so its first significant component is
/// positive.
pub fn manifold_direction(p: &Params, eq: &Equilibrium, which: ManifoldKind) -> Result<(f64, State)> {
    let spec = &eq.spectrum;
    let (dim, lam) = match which {
        ManifoldKind::Unstable => (spec.unstable_dim(), spec.eigenvalues[2]),
        ManifoldKind::Stable => (spec.stable_dim(), spec.eigenvalues[0]),
    };
    if dim != 1 || linalg::is_complex(lam) {
        return Err(Error::Dimension(format!("{:?} eigenspace of {} has dimension {dim}", which, eq.kind)));
    }
    let v = linalg::real_eigenvector(&eq.jacobian(p), lam.re);
    Ok((lam.re, v))
}

/// `eq + side * offset * v` for the unit eigenvector `v` of the requested
/// one-dimensional eigenspace.
pub fn local_manifold_seed(p: &Params, eq: &Equilibrium, which: ManifoldKind, offset: f64, side: f64) -> Result<State> {
    let (_, v) = manifold_direction(p, eq, which)?;
    Ok(eq.state + v * (offset * side.signum()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> StepControl {
        StepControl { rel_tol: 1e-12, abs_tol: 1e-14, ..Default::default() }
    }

    #[test]
    fn harmonic_oscillator_accuracy_and_dense_output() {
        let f = |_: f64, y: &SVector<f64, 2>| SVector::<f64, 2>::new(y[1], -y[0]);
        let mut worst: f64 = 0.0;
        let r = run(f, 0.0, SVector::<f64, 2>::new(1.0, 0.0), 10.0, tight(), &[], None, |seg| {
            for k in 0..5 {
                let t = seg.t0 + seg.h() * k as f64 / 4.0;
                worst = worst.max((seg.eval(t)[0] - t.cos()).abs());
            }
        })
        .unwrap();
        assert!((r.y[0] - 10f64.cos()).abs() < 1e-10);
        assert!(worst < 1e-9, "dense error {worst}");
    }

    #[test]
    fn error_scales_with_tolerance() {
        let f = |_: f64, y: &SVector<f64, 2>| SVector::<f64, 2>::new(y[1], -y[0]);
        let err = |tol: f64| {
            let ctl = StepControl { rel_tol: tol, abs_tol: tol, ..Default::default() };
            let r = run(f, 0.0, SVector::<f64, 2>::new(1.0, 0.0), 20.0, ctl, &[], None, |_| {}).unwrap();
            (r.y[0] - 20f64.cos()).abs()
        };
        let (a, b) = (err(1e-6), err(1e-8));
        assert!(a / b > 10.0, "{a} {b}");
    }

    #[test]
    fn events_are_located_precisely() {
        let f = |_: f64, y: &SVector<f64, 2>| SVector::<f64, 2>::new(y[1], -y[0]);
        let ev = [Event::new(|_, y: &SVector<f64, 2>| y[0], Direction::Down, false), Event::new(|t, _| t - 8.0, Direction::Up, true)];
        let r = run(f, 0.0, SVector::<f64, 2>::new(1.0, 0.0), 100.0, tight(), &ev, None, |_| {}).unwrap();
        assert_eq!(r.stop, Stop::Event(1));
        assert!((r.t - 8.0).abs() < 1e-12);
        let downs: Vec<f64> = r.events.iter().filter(|h| h.id == 0).map(|h| h.t).collect();
        let expected = [std::f64::consts::FRAC_PI_2, 2.5 * std::f64::consts::PI];
        assert_eq!(downs.len(), 2);
        for (a, b) in downs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_integration_returns() {
        let p = Params::reference(-8.0, 0.085);
        let s0 = State::new(0.1, 0.2, -8.0);
        let fwd = IntegratorSettings { max_time: 2.0, rel_tol: 1e-12, abs_tol: 1e-14, ..Default::default() };
        let a = integrate(&p, &s0, &fwd, &[]).unwrap();
        let bwd = IntegratorSettings { backward: true, ..fwd };
        let b = integrate(&p, &a.last_state(), &bwd, &[]).unwrap();
        assert!((b.last_state() - s0).norm() < 1e-7);
    }

    #[test]
    fn z_axis_is_invariant_and_riccati() {
        let p = Params::reference(-1.0, 0.05);
        let z0 = -2.0;
        let tr = integrate(&p, &State::new(0.0, 0.0, z0), &IntegratorSettings { max_time: 10.0, ..Default::default() }, &[]).unwrap();
        let (e3, d) = (p.eps3, p.d_coef);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            assert!(s[0].abs() <= 1e-12 && s[1].abs() <= 1e-12);
            let z = 1.0 / ((1.0 / z0 + d / e3) * (-e3 * t).exp() - d / e3);
            assert!((s[2] - z).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_regime_matches_closed_form() {
        // x' = y, y' = -x, z' = -z with B = D = 0 and small amplitude
        let p = Params::new(-1.0, 0.0, -1.0, 0.0, 0.0);
        let s0 = State::new(1e-5, 0.0, 0.0);
        let set = IntegratorSettings { max_time: 10.0, ..Default::default() };
        let tr = integrate(&p, &s0, &set, &[]).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            // z stays O(x²), x is nearly harmonic
            assert!((s[0] - 1e-5 * t.cos()).abs() < 1e-7);
        }
    }

    #[test]
    fn trajectory_json_round_trip() {
        let p = Params::reference(-8.0, 0.085);
        let tr = integrate(&p, &State::new(0.0, 0.1, -8.0), &IntegratorSettings { max_time: 5.0, ..Default::default() }, &[]).unwrap();
        let back = Trajectory::from_json(&tr.to_json()).unwrap();
        assert_eq!(back, tr);
        assert!(tr.to_csv().starts_with("t,x,y,z\n"));
    }

    #[test]
    fn model_event_residual() {
        let p = Params::reference(-8.0, 0.085);
        let ev = [EventSpec::new(|s| s.y, Direction::Any, false)];
        let tr = integrate(&p, &State::new(0.0, 0.1, -8.0), &IntegratorSettings { max_time: 50.0, ..Default::default() }, &ev).unwrap();
        assert!(!tr.events.is_empty());
        for e in &tr.events {
            assert!(e.state[1].abs() <= 1e-10);
        }
    }

    #[test]
    fn monodromy_matches_finite_differences() {
        let p = Params::reference(-8.0, 0.085);
        let s0 = State::new(0.3, -0.1, -7.5);
        let (s1, m) = flow_with_monodromy(&p, &s0, 3.0, VARIATIONAL_CONTROL).unwrap();
        let (s1b, _, psi) = flow_with_sensitivities(&p, &s0, 3.0, [ParamName::Eps1, ParamName::Eps3], VARIATIONAL_CONTROL).unwrap();
        assert!((s1 - s1b).norm() < 1e-12);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = State::zeros();
            e[k] = h;
            let a = flow_with_monodromy(&p, &(s0 + e), 3.0, VARIATIONAL_CONTROL).unwrap().0;
            let b = flow_with_monodromy(&p, &(s0 - e), 3.0, VARIATIONAL_CONTROL).unwrap().0;
            let col = (a - b) / (2.0 * h);
            assert!((col - m.column(k)).norm() < 1e-5 * (1.0 + col.norm()));
        }
        let a = flow_with_monodromy(&p.with(ParamName::Eps3, p.eps3 + h), &s0, 3.0, VARIATIONAL_CONTROL).unwrap().0;
        let b = flow_with_monodromy(&p.with(ParamName::Eps3, p.eps3 - h), &s0, 3.0, VARIATIONAL_CONTROL).unwrap().0;
        assert!(((a - b) / (2.0 * h) - psi.column(1)).norm() < 1e-4);
    }

    #[test]
    fn lyapunov_of_linear_system_is_leading_eigenvalue() {
        let a = Matrix3::new(-0.3, 1.0, 0.0, -1.0, -0.3, 0.0, 0.0, 0.0, -0.8);
        let est = max_lyapunov_system(move |s| a * s, move |_| a, &State::new(1.0, 0.0, 1.0), 0.0, 400.0, 1.0, StepControl::default()).unwrap();
        assert!((est.lambda_max + 0.3).abs() <= 2.0 * est.stderr.max(1e-3), "{est:?}");
    }

    #[test]
    fn manifold_seed_along_unstable_direction() {
        let p = Params::reference(0.2, -0.0043175);
        let e1 = model::equilibria(&p).e1;
        let (lam, v) = manifold_direction(&p, &e1, ManifoldKind::Unstable).unwrap();
        assert!((model::jacobian(&p, &e1.state) * v - v * lam).norm() < 1e-12);
        let plus = local_manifold_seed(&p, &e1, ManifoldKind::Unstable, 1e-6, 1.0).unwrap();
        let minus = local_manifold_seed(&p, &e1, ManifoldKind::Unstable, 1e-6, -1.0).unwrap();
        assert!((model::z2_image(&plus) - minus).norm() < 1e-20);
        let ratio = |off: f64| {
            let s = local_manifold_seed(&p, &e1, ManifoldKind::Unstable, off, 1.0).unwrap();
            model::vector_field(&p, &s).norm() / off
        };
        assert!((ratio(1e-7) - lam).abs() < 1e-5);
        assert!((ratio(1e-7) - lam).abs() < (ratio(1e-5) - lam).abs());
        assert!(local_manifold_seed(&p, &e1, ManifoldKind::Stable, 1e-6, 1.0).is_err());
    }
}
