use clap::Args;
use lorenz_tz::connections::tpoint::find_tpoint;
use lorenz_tz::connections::{self, ConnectionCurveProblem, ConnectionProblem};
use lorenz_tz::continuation::ContinuationSettings;
use lorenz_tz::integrate::{self, IntegratorSettings};
use lorenz_tz::local::{self, BifurcationLabel};
use lorenz_tz::model::{self, EquilibriumKind, Spectrum};
use lorenz_tz::{ParamName, Params, State};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::echo;
use crate::output::{num, Sink, Table};
use crate::{CliError, ModelArgs};

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EquilibriaOpts {
    /// Tolerance of the bifurcation conditions.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl EquilibriaOpts {
    pub fn with_defaults(&self) -> Self {
        Self { tol: Some(self.tol.unwrap_or(local::DEFAULT_TOL)) }
    }
}

fn stability(s: &Spectrum, tol: f64) -> &'static str {
    if s.eigenvalues.iter().any(|z| z.re.abs() <= tol * (1.0 + z.norm())) {
        "non-hyperbolic"
    } else if s.is_real_saddle {
        "real saddle"
    } else if s.is_saddle_focus {
        "saddle-focus"
    } else if s.eigenvalues.iter().all(|z| z.re < 0.0) {
        "sink"
    } else {
        "source"
    }
}

pub fn equilibria(model: &ModelArgs, opts: &EquilibriaOpts, out: &Sink) -> Result<(), CliError> {
    let (model, p) = model.resolved()?;
    let tol = opts.tol.unwrap();
    let set = model::equilibria(&p);
    let labels_e1 = local::classify_origin(&p, tol);
    let labels_e2 = local::classify_e2(&p, tol).unwrap_or_default();
    let labels_for = |k: EquilibriumKind| -> &[BifurcationLabel] {
        match k {
            EquilibriumKind::E1 => &labels_e1,
            EquilibriumKind::E2 => &labels_e2,
            _ => &[],
        }
    };
    let mut table = Table::new(&["kind", "x", "y", "z", "re1", "im1", "re2", "im2", "re3", "im3", "type", "bifurcations"]);
    let mut rows = Vec::new();
    for e in set.all() {
        let ev = e.spectrum.eigenvalues;
        let labels: Vec<String> = labels_for(e.kind).iter().map(|l| l.to_string()).collect();
        let kind = stability(&e.spectrum, tol);
        let mut row = vec![e.kind.to_string()];
        row.extend([e.state.x, e.state.y, e.state.z].map(num));
        row.extend(ev.iter().flat_map(|z| [num(z.re), num(z.im)]));
        row.push(kind.into());
        row.push(labels.join(";"));
        table.push(row);
        rows.push(json!({ "equilibrium": e, "type": kind, "bifurcations": labels_for(e.kind) }));
    }
    // E2 is absent when it coincides with E1; its labels still apply there
    if set.e2.is_none() && !labels_e2.is_empty() {
        let labels: Vec<String> = labels_e2.iter().map(|l| l.to_string()).collect();
        if let Some(row) = table.rows.first_mut() {
            let cell = row.last_mut().unwrap();
            for l in labels {
                if !cell.split(';').any(|c| c == l) {
                    if !cell.is_empty() {
                        cell.push(';');
                    }
                    cell.push_str(&l);
                }
            }
        }
    }
    let echo = echo("equilibria", out.format, &model, opts);
    out.emit(&echo, &table, json!({ "equilibria": rows, "boundaries": set.boundaries }))
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InitialState {
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub y0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub z0: Option<f64>,
}

impl InitialState {
    fn with_defaults(&self) -> Self {
        Self { x0: Some(self.x0.unwrap_or(0.0)), y0: Some(self.y0.unwrap_or(0.1)), z0: Some(self.z0.unwrap_or(-8.0)) }
    }

    fn state(&self) -> State {
        State::new(self.x0.unwrap(), self.y0.unwrap(), self.z0.unwrap())
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub start: InitialState,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub backward: Option<bool>,
}

impl SimulateOpts {
    pub fn with_defaults(&self) -> Self {
        let d = IntegratorSettings::default();
        Self {
            start: self.start.with_defaults(),
            t_end: Some(self.t_end.unwrap_or(1000.0)),
            sample_dt: Some(self.sample_dt.unwrap_or(0.01)),
            rel_tol: Some(self.rel_tol.unwrap_or(d.rel_tol)),
            abs_tol: Some(self.abs_tol.unwrap_or(d.abs_tol)),
            backward: Some(self.backward.unwrap_or(false)),
        }
    }
}

pub fn simulate(model: &ModelArgs, opts: &SimulateOpts, out: &Sink) -> Result<(), CliError> {
    let (model, p) = model.resolved()?;
    let settings = IntegratorSettings {
        max_time: opts.t_end.unwrap(),
        sample_dt: opts.sample_dt,
        rel_tol: opts.rel_tol.unwrap(),
        abs_tol: opts.abs_tol.unwrap(),
        backward: opts.backward.unwrap(),
        ..Default::default()
    };
    settings.validate().map_err(|e| usage(e.to_string()))?;
    let tr = integrate::integrate(&p, &opts.start.state(), &settings, &[])?;
    let mut table = Table::new(&["t", "x", "y", "z"]);
    for (t, s) in tr.times.iter().zip(&tr.states) {
        table.push_nums(&[*t, s[0], s[1], s[2]]);
    }
    let echo = echo("simulate", out.format, &model, opts);
    out.emit(&echo, &table, serde_json::to_value(&tr).expect("trajectory serializes"))
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LyapunovOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub start: InitialState,
    #[arg(long)]
    pub transient: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub renorm: Option<f64>,
}

impl LyapunovOpts {
    pub fn with_defaults(&self) -> Self {
        Self {
            start: self.start.with_defaults(),
            transient: Some(self.transient.unwrap_or(integrate::DEFAULT_TRANSIENT)),
            horizon: Some(self.horizon.unwrap_or(integrate::DEFAULT_HORIZON)),
            renorm: Some(self.renorm.unwrap_or(integrate::DEFAULT_RENORM)),
        }
    }
}

pub fn lyapunov(model: &ModelArgs, opts: &LyapunovOpts, out: &Sink) -> Result<(), CliError> {
    let (model, p) = model.resolved()?;
    let est = integrate::max_lyapunov(&p, &opts.start.state(), opts.transient.unwrap(), opts.horizon.unwrap(), opts.renorm.unwrap())?;
    let mut table = Table::new(&["lambda_max", "stderr", "blocks", "x_end", "y_end", "z_end"]);
    let f = est.final_state;
    table.push(vec![num(est.lambda_max), num(est.stderr), est.blocks.to_string(), num(f[0]), num(f[1]), num(f[2])]);
    let echo = echo("lyapunov", out.format, &model, opts);
    out.emit(&echo, &table, serde_json::to_value(est).expect("estimate serializes"))
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ConnectOpts {
    /// `name=value` assignments applied to the model, e.g. `eps1=0.2`.
    #[arg(long, allow_negative_numbers = true)]
    pub fix: Option<Vec<String>>,
    /// Parameter solved for.
    #[arg(long)]
    pub free: Option<String>,
    #[arg(long, num_args = 2, allow_negative_numbers = true)]
    pub bracket: Option<Vec<f64>>,
    /// `he` (E1 to E2 off the z-axis) or `homoclinic` (to E2).
    #[arg(long)]
    pub kind: Option<String>,
    /// Also locate with half the shooting offset and report the shift.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub checked: Option<bool>,
    /// Continue the connection in the (eps1, eps3) plane.
    #[arg(long = "continue", num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "continue")]
    pub continue_curve: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub direction: Option<f64>,
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub h_max: Option<f64>,
}

impl ConnectOpts {
    pub fn with_defaults(&self) -> Self {
        Self {
            fix: Some(self.fix.clone().unwrap_or_default()),
            free: Some(self.free.clone().unwrap_or_else(|| "eps3".into())),
            bracket: self.bracket.clone(),
            kind: Some(self.kind.clone().unwrap_or_else(|| "he".into())),
            checked: Some(self.checked.unwrap_or(false)),
            continue_curve: Some(self.continue_curve.unwrap_or(false)),
            direction: Some(self.direction.unwrap_or(1.0)),
            max_points: Some(self.max_points.unwrap_or(100)),
            h_max: Some(self.h_max.unwrap_or(0.02)),
        }
    }
}

fn parse_fix(items: &[String], model: &mut ModelArgs) -> Result<(), CliError> {
    for it in items {
        let (name, value) = it.split_once('=').ok_or_else(|| usage(format!("--fix expects name=value, got {it:?}")))?;
        let name: ParamName = name.trim().parse().map_err(|e: lorenz_tz::Error| usage(e.to_string()))?;
        let value: f64 = value.trim().parse().map_err(|_| usage(format!("bad value in --fix {it:?}")))?;
        set_param(model, name, value);
    }
    Ok(())
}

fn set_param(model: &mut ModelArgs, name: ParamName, value: f64) {
    let slot = match name {
        ParamName::Eps1 => &mut model.eps1,
        ParamName::Eps2 => &mut model.eps2,
        ParamName::Eps3 => &mut model.eps3,
        ParamName::B => &mut model.b,
        ParamName::D => &mut model.d,
    };
    *slot = Some(value);
}

pub fn connect(model: &ModelArgs, opts: &ConnectOpts, out: &Sink) -> Result<(), CliError> {
    let mut model = model.clone();
    parse_fix(opts.fix.as_deref().unwrap_or_default(), &mut model)?;
    let free: ParamName = opts.free.as_deref().unwrap().parse().map_err(|e: lorenz_tz::Error| usage(e.to_string()))?;
    let bracket = match opts.bracket.as_deref() {
        Some([a, b]) => (*a, *b),
        _ => return Err(usage("--bracket LO HI is required")),
    };
    set_param(&mut model, free, 0.5 * (bracket.0 + bracket.1));
    let (model, p) = model.resolved()?;
    let problem = match opts.kind.as_deref().unwrap() {
        "he" => ConnectionProblem::he_off_axis(&p)?,
        "homoclinic" => ConnectionProblem::homoclinic(EquilibriumKind::E2),
        k => return Err(usage(format!("unknown connection kind {k:?}"))),
    };
    let c = if opts.checked.unwrap() {
        connections::find_connection_checked(&p, &problem, free, bracket)?
    } else {
        connections::find_connection(&p, &problem, free, bracket)?
    };
    let echo = echo("connect", out.format, &model, opts);
    if opts.continue_curve.unwrap() {
        if !matches!(free, ParamName::Eps1 | ParamName::Eps3) {
            return Err(usage("--continue needs --free eps1 or eps3"));
        }
        let cp = ConnectionCurveProblem { base: c.params, problem, free: [ParamName::Eps1, ParamName::Eps3], weights: [1.0, 100.0] };
        let s = ContinuationSettings {
            direction: opts.direction.unwrap(),
            orient_index: 0,
            max_points: opts.max_points.unwrap(),
            h0: 0.25 * opts.h_max.unwrap(),
            h_max: opts.h_max.unwrap(),
            ..connections::curve_settings()
        };
        let g = connections::continue_connection(&cp, [c.params.eps1, c.params.eps3], &s)?;
        let csv = g.to_csv();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let mut table = Table::new(&header);
        for l in lines {
            table.push(l.split(',').map(str::to_string).collect());
        }
        let result: serde_json::Value = serde_json::from_str(&g.to_json()).expect("curve json");
        return out.emit(&echo, &table, result);
    }
    let mut table = Table::new(&["free", "value", "miss", "flight_time", "crossings_pos", "crossings_neg", "offset_shift"]);
    table.push(vec![
        free.to_string(),
        num(c.value),
        num(c.miss.value[0]),
        num(c.miss.flight_time),
        c.miss.crossings.0.to_string(),
        c.miss.crossings.1.to_string(),
        c.offset_shift.map_or(String::new(), num),
    ]);
    let result = json!({
        "free": free.to_string(),
        "value": c.value,
        "miss": c.miss,
        "offset_shift": c.offset_shift,
        "trajectory": c.trajectory,
    });
    out.emit(&echo, &table, result)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TpointOpts {
    #[arg(long, allow_negative_numbers = true)]
    pub seed_eps1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub seed_eps3: Option<f64>,
    /// Sign of x on the branch of E2's unstable manifold that is followed.
    #[arg(long, allow_negative_numbers = true)]
    pub side: Option<f64>,
    /// Required crossings of the E2 to E3 leg (0 principal, 1 secondary).
    #[arg(long)]
    pub winding: Option<usize>,
}

impl TpointOpts {
    pub fn with_defaults(&self) -> Self {
        Self {
            seed_eps1: Some(self.seed_eps1.unwrap_or(-8.375)),
            seed_eps3: Some(self.seed_eps3.unwrap_or(0.0842)),
            side: Some(self.side.unwrap_or(-1.0)),
            winding: self.winding,
        }
    }
}

pub fn tpoint(model: &ModelArgs, opts: &TpointOpts, out: &Sink) -> Result<(), CliError> {
    let mut model = model.clone();
    model.eps1 = opts.seed_eps1;
    model.eps3 = opts.seed_eps3;
    let (model, p): (ModelArgs, Params) = model.resolved()?;
    let side = opts.side.unwrap();
    if side.abs() != 1.0 {
        return Err(usage("--side must be 1 or -1"));
    }
    let t = find_tpoint(&p, [ParamName::Eps1, ParamName::Eps3], side, opts.winding)?;
    let mut table = Table::new(&["eps1", "eps3", "forward_crossings", "return_crossings", "return_angle", "iterations"]);
    let w = t.winding;
    table.push(vec![
        num(t.params.eps1),
        num(t.params.eps3),
        w.forward().to_string(),
        w.returning().to_string(),
        num(t.return_angle),
        t.iterations.to_string(),
    ]);
    let echo = echo("tpoint", out.format, &model, opts);
    let result = json!({
        "eps1": t.params.eps1,
        "eps3": t.params.eps3,
        "winding": w,
        "miss": t.miss,
        "return_miss": t.return_miss,
        "return_angle": t.return_angle,
        "legs": t.legs,
    });
    out.emit(&echo, &table, result)
}
