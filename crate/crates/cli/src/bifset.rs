//! Curves and markers of a partial bifurcation set in the (eps1, eps3) plane.
//!
//! Straight lines are emitted analytically. Numerical curves are seeded at
//! points placed relative to the TB point of E2, `(-eps2/B, eps2 D/B)`, and
//! clipped to the window.

use std::path::{Path, PathBuf};

use clap::Args;
use lorenz_tz::connections::tpoint::find_tpoint;
use lorenz_tz::connections::{self, ConnectionCurveProblem, ConnectionProblem, GlobalCurve, MarkerKind};
use lorenz_tz::continuation::periodic::{fold_curve_settings, folds, FoldPoProblem, PeriodicOrbitProblem};
use lorenz_tz::continuation::{continue_branch, hopf_curve, ContinuationSettings, HopfProblem, SpecialKind};
use lorenz_tz::local::{dz_heteroclinic_prediction, Subject};
use lorenz_tz::model::{self, EquilibriumKind};
use lorenz_tz::roots::brent;
use lorenz_tz::{ParamName, Params, State};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::echo;
use crate::output::{num, render, write_file, Table};
use crate::{CliError, Format, ModelArgs};

pub const ALL_CURVES: [&str; 10] = ["P1", "P2", "T", "h", "h2", "He", "H", "SN1", "SN2", "DZ-prediction"];

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BifsetOpts {
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["LO", "HI"])]
    pub eps1_range: Option<Vec<f64>>,
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["LO", "HI"])]
    pub eps3_range: Option<Vec<f64>>,
    /// Comma-separated subset of P1,P2,T,h,h2,He,H,SN1,SN2,DZ-prediction;
    /// an empty value leaves only the markers.
    #[arg(long, value_delimiter = ',')]
    pub curves: Option<Vec<String>>,
    /// Directory receiving one file per curve and `markers.csv`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Cap on continuation steps per curve.
    #[arg(long)]
    pub max_points: Option<usize>,
}

impl BifsetOpts {
    pub fn with_defaults(&self) -> Self {
        let curves = self.curves.clone().unwrap_or_else(|| ALL_CURVES.iter().map(|s| s.to_string()).collect());
        Self {
            eps1_range: Some(self.eps1_range.clone().unwrap_or(vec![-12.0, 0.0])),
            eps3_range: Some(self.eps3_range.clone().unwrap_or(vec![0.0, 0.12])),
            curves: Some(curves.into_iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()),
            out_dir: Some(self.out_dir.clone().unwrap_or_else(|| "bifurcation-set".into())),
            max_points: Some(self.max_points.unwrap_or(400)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    e1: (f64, f64),
    e3: (f64, f64),
}

impl Window {
    fn contains(&self, (a, b): (f64, f64)) -> bool {
        (self.e1.0..=self.e1.1).contains(&a) && (self.e3.0..=self.e3.1).contains(&b)
    }

    /// Segment of the line `eps3 = slope eps1 + icpt` inside the window.
    fn clip_line(&self, slope: f64, icpt: f64) -> Vec<(f64, f64)> {
        let mut lo = self.e1.0;
        let mut hi = self.e1.1;
        if slope != 0.0 {
            let a = (self.e3.0 - icpt) / slope;
            let b = (self.e3.1 - icpt) / slope;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        } else if !(self.e3.0..=self.e3.1).contains(&icpt) {
            return Vec::new();
        }
        if lo > hi {
            return Vec::new();
        }
        vec![(lo, slope * lo + icpt), (hi, slope * hi + icpt)]
    }

    /// Longest step count a curve needs to cross the window at step `h`.
    fn steps(&self, h: f64, cap: usize) -> usize {
        let span = (self.e1.1 - self.e1.0).abs() + 100.0 * (self.e3.1 - self.e3.0).abs();
        ((2.0 * span / h) as usize + 20).min(cap)
    }
}

#[derive(Debug, Clone, Serialize)]
struct Marker {
    name: &'static str,
    eps1: f64,
    eps3: f64,
    source: String,
}

#[derive(Debug, Default, Serialize)]
struct Curve {
    points: Vec<(f64, f64)>,
    markers: Vec<Marker>,
    termination: String,
}

struct Slice {
    eps2: f64,
    b: f64,
    d: f64,
}

impl Slice {
    fn at(&self, e1: f64, e3: f64) -> Params {
        Params::new(e1, self.eps2, e3, self.b, self.d)
    }

    fn tb(&self) -> (f64, f64) {
        (-self.eps2 / self.b, self.eps2 * self.d / self.b)
    }
}

fn marker(name: &'static str, (eps1, eps3): (f64, f64), source: &str) -> Marker {
    Marker { name, eps1, eps3, source: source.into() }
}

fn analytic(points: Vec<(f64, f64)>) -> Curve {
    Curve { points, markers: Vec::new(), termination: "analytic".into() }
}

fn from_global(g: &GlobalCurve, w: &Window, kinds: &[(MarkerKind, &'static str)], name: &str) -> Curve {
    let markers = kinds
        .iter()
        .flat_map(|(k, label)| g.markers_of(*k).map(move |m| marker(label, (m.eps1, m.eps3), name)))
        .filter(|m| w.contains((m.eps1, m.eps3)))
        .collect();
    Curve { points: g.points.iter().map(|c| (c.eps1, c.eps3)).filter(|p| w.contains(*p)).collect(), markers, termination: g.termination.clone() }
}

fn he(s: &Slice, w: &Window, cap: usize) -> lorenz_tz::Result<Curve> {
    let mut out = Curve::default();
    let mut ends = Vec::new();
    for (e1, bracket, dir) in [(-0.2, (0.0, 0.01), -1.0), (0.2, (-0.01, 0.0), 1.0)] {
        if !(w.e1.0..=w.e1.1).contains(&e1) {
            continue;
        }
        let p = s.at(e1, 0.5 * (bracket.0 + bracket.1));
        let c = connections::find_connection(&p, &ConnectionProblem::he_off_axis(&p)?, ParamName::Eps3, bracket)?;
        let cp = ConnectionCurveProblem { base: c.params, problem: ConnectionProblem::he_off_axis(&c.params)?, free: [ParamName::Eps1, ParamName::Eps3], weights: [1.0, 100.0] };
        let st = ContinuationSettings { direction: dir, orient_index: 0, max_points: w.steps(0.02, cap), h0: 0.005, h_max: 0.02, ..connections::curve_settings() };
        let g = connections::continue_connection(&cp, [e1, c.value], &st)?;
        let part = from_global(&g, w, &[(MarkerKind::DHe, "DHe")], "He");
        // branches are stored outward from DZ, the negative one reversed
        if dir < 0.0 {
            out.points.splice(0..0, part.points.into_iter().rev());
        } else {
            out.points.extend(part.points);
        }
        out.markers.extend(part.markers);
        ends.push(part.termination);
    }
    out.termination = ends.join("; ");
    Ok(out)
}

fn homoclinic(s: &Slice, w: &Window, cap: usize) -> lorenz_tz::Result<Curve> {
    let (tb1, _) = s.tb();
    let e1 = 0.07 * tb1;
    let lo = -s.d * e1;
    let pr = ConnectionProblem::homoclinic(EquilibriumKind::E2);
    let c = connections::principal_connection(&s.at(e1, lo), &pr, ParamName::Eps3, (lo, 2.0 * lo), 64)?;
    let cp = ConnectionCurveProblem { base: c.params, problem: pr, free: [ParamName::Eps1, ParamName::Eps3], weights: [1.0, 100.0] };
    let st = ContinuationSettings { direction: -1.0, orient_index: 0, max_points: cap, h0: 0.01, h_max: 0.2, ..connections::curve_settings() };
    let g = connections::continue_connection(&cp, [e1, c.value], &st)?;
    Ok(from_global(&g, w, &[(MarkerKind::DH, "DH")], "H"))
}

fn hopf_e2(s: &Slice, w: &Window, cap: usize) -> lorenz_tz::Result<Curve> {
    let (tb1, tb3) = s.tb();
    let seed = [tb1 - 0.05 * tb1.abs(), tb3];
    let hp = HopfProblem::new(Subject::E2, s.at(seed[0], seed[1]), [ParamName::Eps1, ParamName::Eps3]);
    let mut out = Curve::default();
    let mut ends = Vec::new();
    for dir in [-1.0, 1.0] {
        let st = ContinuationSettings { direction: dir, orient_index: 0, max_points: w.steps(0.05, cap), h_max: 0.05, ..Default::default() };
        let b = hopf_curve(&hp, seed, &st)?;
        let pts = b.points.iter().map(|u| (u[0], u[1])).filter(|p| w.contains(*p));
        if dir < 0.0 {
            out.points.extend(pts.collect::<Vec<_>>().into_iter().rev());
        } else {
            out.points.extend(pts.skip(1));
        }
        out.markers.extend(b.specials(SpecialKind::DegenerateHopf).map(|sp| marker("Dh2", (sp.x[0], sp.x[1]), "h2")).filter(|m| w.contains((m.eps1, m.eps3))));
        ends.push(b.termination);
    }
    out.termination = ends.join("; ");
    Ok(out)
}

/// Hopf locus of E3,4: seeded on the row `eps3 = eps3_TB / 2` and continued
/// to both of its ends.
fn hopf_e34(s: &Slice, w: &Window, cap: usize) -> lorenz_tz::Result<Curve> {
    let (tb1, tb3) = s.tb();
    let e3 = 0.5 * tb3;
    let h = |e1: f64| model::char_poly_e34(&s.at(e1, e3)).map_or(f64::NAN, |c| c.hurwitz());
    let grid: Vec<f64> = (0..=400).map(|k| tb1 * (1.0 - k as f64 / 400.0)).collect();
    let seed = grid
        .windows(2)
        .find_map(|ab| {
            let (fa, fb) = (h(ab[0]), h(ab[1]));
            if !(fa * fb < 0.0) {
                return None;
            }
            let e1 = brent(h, ab[0], ab[1], fa, fb, 1e-13, 200).ok()?;
            let sp = model::equilibria(&s.at(e1, e3)).e34?[0].spectrum;
            sp.eigenvalues.iter().any(|z| z.im.abs() > 1e-8 && z.re.abs() < 1e-6).then_some(e1)
        })
        .ok_or_else(|| lorenz_tz::Error::NoBracket("no Hopf point of E3,4 on the seed row".into()))?;
    let mut hp = HopfProblem::new(Subject::E34, s.at(seed, e3), [ParamName::Eps1, ParamName::Eps3]);
    hp.weights = [1.0, 100.0];
    let mut out = Curve::default();
    let mut ends = Vec::new();
    for dir in [-1.0, 1.0] {
        let st = ContinuationSettings { direction: dir, orient_index: 0, max_points: cap.max(w.steps(0.1, cap)), h_max: 0.1, stop_at: vec![SpecialKind::UserTestZero], ..Default::default() };
        let b = hopf_curve(&hp, [seed, e3], &st)?;
        let mut pts: Vec<(f64, f64)> = b.points.iter().map(|u| (u[0], u[1])).collect();
        pts.extend(b.specials(SpecialKind::UserTestZero).map(|sp| (sp.x[0], sp.x[1])));
        let pts = pts.into_iter().filter(|p| w.contains(*p));
        if dir < 0.0 {
            out.points.extend(pts.collect::<Vec<_>>().into_iter().rev());
        } else {
            out.points.extend(pts.skip(1));
        }
        ends.push(b.termination);
    }
    out.termination = ends.join("; ");
    Ok(out)
}

/// Folds of symmetric periodic orbits born at the Hopf line of E2: the
/// branch toward Dh2 and up to the cusp is SN2, past the cusp SN1.
fn saddle_nodes(s: &Slice, w: &Window, cap: usize) -> lorenz_tz::Result<(Curve, Curve)> {
    let (tb1, tb3) = s.tb();
    let e1 = 1.02 * tb1;
    let pr = PeriodicOrbitProblem::new(s.at(e1, tb3), ParamName::Eps3, true);
    let u = pr.seed_from_hopf(tb3, &State::new(0.0, 0.0, -tb3 / s.d), 0.05)?;
    let st = ContinuationSettings { fold_index: Some(3), detect_branch_points: false, max_points: 80, h0: 0.02, h_max: 0.1, orient_index: 0, direction: 1.0, stop_at: vec![SpecialKind::Fold], ..Default::default() };
    let f = folds(&continue_branch(&pr, &u, &st)?);
    let fold = f.first().ok_or_else(|| lorenz_tz::Error::NoBracket("no fold on the periodic-orbit branch".into()))?;
    let mut fp = FoldPoProblem::new(pr.clone(), ParamName::Eps1);
    fp.weights = [1.0, 1.0, 0.01, 1e4, 1.0];
    let start = fp.start(fold);
    let run = |dir: f64| {
        let st = fold_curve_settings(&ContinuationSettings { h0: 0.01, h_max: 0.05, max_points: cap, orient_index: 4, direction: dir, ..Default::default() });
        continue_branch(&fp, &start, &st)
    };
    let ahead = run(1.0)?;
    let behind = run(-1.0)?;
    let pt = |x: &Vec<f64>| (x[4], x[3]);
    let cusp = ahead.specials(SpecialKind::Cusp).next();
    let split = cusp.map_or(ahead.points.len(), |c| c.index + 1);
    // past Dh2 the branch retraces the mirrored family; cut at the turn in eps1
    let turn = behind.points.windows(2).position(|v| v[1][4] > v[0][4]).map_or(behind.points.len(), |k| k + 1);
    let mut sn2: Vec<(f64, f64)> = behind.points[..turn].iter().rev().map(pt).collect();
    sn2.extend(ahead.points[1..split].iter().map(pt));
    let mut sn1 = Vec::new();
    let mut markers = Vec::new();
    if let Some(c) = cusp {
        sn2.push(pt(&c.x));
        sn1.push(pt(&c.x));
        markers.push(marker("CU", pt(&c.x), "SN1/SN2"));
    }
    sn1.extend(ahead.points[split..].iter().map(pt));
    let clip = |v: Vec<(f64, f64)>| v.into_iter().filter(|p| w.contains(*p)).collect();
    let markers: Vec<Marker> = markers.into_iter().filter(|m| w.contains((m.eps1, m.eps3))).collect();
    let two = Curve { points: clip(sn2), markers: markers.clone(), termination: format!("{}; {}", if turn < behind.points.len() { "Hopf line of E2" } else { behind.termination.as_str() }, if cusp.is_some() { "cusp" } else { ahead.termination.as_str() }) };
    let one = Curve { points: clip(sn1), markers: Vec::new(), termination: ahead.termination.clone() };
    Ok((one, two))
}

fn dz_prediction(s: &Slice, w: &Window) -> Curve {
    let pts = (0..=200)
        .filter_map(|k| {
            let e3 = w.e3.0 + (w.e3.1 - w.e3.0) * k as f64 / 200.0;
            let d = dz_heteroclinic_prediction(s.eps2, s.b, s.d, e3).ok()?;
            (d.converged && w.contains((d.eps1, e3))).then_some((d.eps1, e3))
        })
        .collect();
    Curve { points: pts, markers: Vec::new(), termination: "analytic".into() }
}

enum Job {
    One(&'static str),
    SaddleNodes,
}

fn compute(job: &Job, s: &Slice, w: &Window, cap: usize) -> Vec<(&'static str, lorenz_tz::Result<Curve>)> {
    match job {
        Job::One(name) => {
            let c = match *name {
                "P1" => Ok(analytic(if (w.e1.0..=w.e1.1).contains(&0.0) { vec![(0.0, w.e3.0), (0.0, w.e3.1)] } else { Vec::new() })),
                "T" => Ok(analytic(w.clip_line(0.0, 0.0))),
                "P2" => Ok(analytic(w.clip_line(-s.d, 0.0))),
                "h" => hopf_e34(s, w, cap),
                "h2" => hopf_e2(s, w, cap),
                "He" => he(s, w, cap),
                "H" => homoclinic(s, w, cap),
                "DZ-prediction" => Ok(dz_prediction(s, w)),
                _ => unreachable!(),
            };
            vec![(*name, c)]
        }
        Job::SaddleNodes => match saddle_nodes(s, w, cap) {
            Ok((one, two)) => vec![("SN1", Ok(one)), ("SN2", Ok(two))],
            Err(e) => vec![("SN1", Err(e.clone())), ("SN2", Err(e))],
        },
    }
}

fn tpoint_marker(s: &Slice, w: &Window) -> Option<Marker> {
    let (tb1, tb3) = s.tb();
    let seed = s.at(0.8375 * tb1, 0.842 * tb3);
    let t = find_tpoint(&seed, [ParamName::Eps1, ParamName::Eps3], -1.0, Some(0)).ok()?;
    let m = marker("TP", (t.params.eps1, t.params.eps3), "tpoint");
    w.contains((m.eps1, m.eps3)).then_some(m)
}

fn file_name(name: &str, format: Format) -> String {
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    format!("{name}.{ext}")
}

fn emit_curve(dir: &Path, name: &str, format: Format, echo: &serde_json::Value, c: &Curve) -> Result<(), CliError> {
    let mut t = Table::new(&["eps1", "eps3"]);
    for (a, b) in &c.points {
        t.push_nums(&[*a, *b]);
    }
    let result = json!({ "curve": name, "points": c.points, "termination": c.termination });
    write_file(&dir.join(file_name(name, format)), &render(format, echo, &t, result))
}

pub fn run(model: &ModelArgs, opts: &BifsetOpts, jobs: usize, format: Format) -> Result<(), CliError> {
    let range = |v: &Option<Vec<f64>>, flag: &str| match v.as_deref() {
        Some([a, b]) if a < b => Ok((*a, *b)),
        _ => Err(CliError::Usage(format!("--{flag} expects LO HI with LO < HI"))),
    };
    let w = Window { e1: range(&opts.eps1_range, "eps1-range")?, e3: range(&opts.eps3_range, "eps3-range")? };
    let curves = opts.curves.clone().unwrap_or_default();
    if let Some(bad) = curves.iter().find(|c| !ALL_CURVES.contains(&c.as_str())) {
        return Err(CliError::Usage(format!("unknown curve {bad:?}; expected one of {}", ALL_CURVES.join(","))));
    }
    let mut m = model.clone();
    m.eps1 = Some(0.5 * (w.e1.0 + w.e1.1));
    m.eps3 = Some(0.5 * (w.e3.0 + w.e3.1));
    let (mut m, p) = m.resolved()?;
    if p.b_coef == 0.0 || p.d_coef == 0.0 {
        return Err(CliError::Usage("bifurcation-set needs B != 0 and D != 0".into()));
    }
    (m.eps1, m.eps3) = (None, None);
    let s = Slice { eps2: p.eps2, b: p.b_coef, d: p.d_coef };
    let cap = opts.max_points.unwrap();

    let mut work: Vec<Job> = Vec::new();
    for c in ALL_CURVES {
        if !curves.iter().any(|x| x == c) {
            continue;
        }
        match c {
            "SN1" | "SN2" => {
                if !work.iter().any(|j| matches!(j, Job::SaddleNodes)) {
                    work.push(Job::SaddleNodes);
                }
            }
            _ => work.push(Job::One(c)),
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| CliError::Usage(e.to_string()))?;
    let (results, tp) = pool.install(|| {
        let r: Vec<_> = work.par_iter().map(|j| compute(j, &s, &w, cap)).collect();
        (r, tpoint_marker(&s, &w))
    });

    let dir = opts.out_dir.clone().unwrap();
    std::fs::create_dir_all(&dir)?;
    let echo = echo("bifurcation-set", format, &m, opts);
    let mut markers = vec![marker("DZ", (0.0, 0.0), "analytic"), marker("TB", s.tb(), "analytic")];
    markers.retain(|m| w.contains((m.eps1, m.eps3)));
    let mut failed = Vec::new();
    let mut report = Table::new(&["curve", "status", "points", "detail"]);
    for (name, r) in results.into_iter().flatten() {
        if !curves.iter().any(|x| x == name) {
            continue;
        }
        match r {
            Ok(c) => {
                emit_curve(&dir, name, format, &echo, &c)?;
                report.push(vec![name.into(), "ok".into(), c.points.len().to_string(), c.termination.replace(',', ";")]);
                markers.extend(c.markers);
            }
            Err(e) => {
                report.push(vec![name.into(), "failed".into(), "0".into(), e.to_string().replace(',', ";")]);
                failed.push(name);
            }
        }
    }
    markers.extend(tp);
    let mut t = Table::new(&["marker", "eps1", "eps3", "source"]);
    for mk in &markers {
        t.push(vec![mk.name.into(), num(mk.eps1), num(mk.eps3), mk.source.clone()]);
    }
    write_file(&dir.join(file_name("markers", format)), &render(format, &echo, &t, json!({ "markers": markers })))?;
    print!("{}", render(Format::Csv, &echo, &report, serde_json::Value::Null));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial(format!("curves failed: {}", failed.join(", "))))
    }
}
