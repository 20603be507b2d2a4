//! Local bifurcations: classification at the origin and at E2, normal-form
//! coefficients of the Takens–Bogdanov point, rescalings, predicted curve
//! catalogue and saddle quantities.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, EquilibriumKind, Params};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Saddle-node of symmetric periodic orbits, homoclinic TB case.
pub const C_SNPO: f64 = 0.752;
/// Cusp of saddle-nodes of periodic orbits in the codimension-three unfolding.
pub const C3_CUSP: f64 = 1.5713;
pub const C4_CUSP: f64 = -3.3484;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BifurcationKind {
    Pitchfork,
    Transcritical,
    Hopf,
    TakensBogdanov,
    HopfZero,
    DiagonalDoubleZero,
    TripleZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subject {
    E1,
    E2,
    E34,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubType {
    None,
    HomoclinicCase,
    HeteroclinicCase,
    DegenerateTB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationLabel {
    pub kind: BifurcationKind,
    pub subject: Subject,
    pub sub_type: SubType,
    pub residuals: Vec<(String, f64)>,
}

impl fmt::Display for BifurcationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} of {:?}", self.kind, self.subject)?;
        if self.sub_type != SubType::None {
            write!(f, " ({:?})", self.sub_type)?;
        }
        Ok(())
    }
}

fn label(kind: BifurcationKind, sub_type: SubType, residuals: &[(&str, f64)]) -> BifurcationLabel {
    BifurcationLabel {
        kind,
        subject: Subject::E1,
        sub_type,
        residuals: residuals.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
    }
}

/// Codimension one to three bifurcations of the origin holding within `tol`.
pub fn classify_origin(p: &Params, tol: f64) -> Vec<BifurcationLabel> {
    use BifurcationKind::*;
    let (e1, e2, e3) = (p.eps1, p.eps2, p.eps3);
    let zero = |v: f64| v.abs() <= tol;
    let mut out = Vec::new();
    if zero(e1) && !zero(e2) && !zero(e3) {
        out.push(label(Pitchfork, SubType::None, &[("eps1", e1)]));
    }
    if zero(e3) && !zero(e1) && !zero(e2) && p.d_coef != 0.0 {
        out.push(label(Transcritical, SubType::None, &[("eps3", e3)]));
    }
    if zero(e2) && e1 < -tol && !zero(e3) {
        out.push(label(Hopf, SubType::None, &[("eps2", e2)]));
    }
    if zero(e1) && zero(e2) && !zero(e3) {
        let degenerate = p.b_coef != 0.0 && (e3 - 2.0 / p.b_coef).abs() <= tol;
        let sub = if degenerate {
            SubType::DegenerateTB
        } else if e3 > 0.0 {
            SubType::HeteroclinicCase
        } else {
            SubType::HomoclinicCase
        };
        out.push(label(TakensBogdanov, sub, &[("eps1", e1), ("eps2", e2)]));
    }
    if zero(e2) && zero(e3) && e1 < -tol {
        out.push(label(HopfZero, SubType::None, &[("eps2", e2), ("eps3", e3)]));
    }
    if zero(e1) && zero(e3) && !zero(e2) {
        out.push(label(DiagonalDoubleZero, SubType::None, &[("eps1", e1), ("eps3", e3)]));
    }
    if zero(e1) && zero(e2) && zero(e3) {
        out.push(label(TripleZero, SubType::None, &[("eps1", e1), ("eps2", e2), ("eps3", e3)]));
    }
    out
}

/// Bifurcations of E2, obtained by classifying the origin of the conjugate
/// system.
pub fn classify_e2(p: &Params, tol: f64) -> Result<Vec<BifurcationLabel>> {
    let (q, _) = model::conjugate_params(p)?;
    Ok(classify_origin(&q, tol)
        .into_iter()
        .map(|mut l| {
            l.subject = Subject::E2;
            l
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFormCoeffs {
    pub a3: f64,
    pub b3: f64,
    /// Not available in closed form; left empty.
    pub a5_over_a3: Option<f64>,
    /// Fifth-order coefficient, populated near the `b3 = 0` degeneracy.
    pub b5: Option<f64>,
}

pub fn b5_coefficient(b: f64, d: f64) -> f64 {
    -(b.powi(4) / 8.0) * (5.0 * b + 3.0 * d)
}

pub fn tb_normal_form(p: &Params) -> Result<NormalFormCoeffs> {
    let e3 = p.eps3;
    if e3 == 0.0 {
        return Err(Error::Degenerate("eps3 = 0 (triple zero)".into()));
    }
    let b3 = (2.0 - e3 * p.b_coef) / (e3 * e3);
    let degenerate = (b3 * e3 * e3).abs() <= 1e-6 * (2.0 + (p.b_coef * e3).abs());
    Ok(NormalFormCoeffs {
        a3: 1.0 / e3,
        b3,
        a5_over_a3: None,
        b5: degenerate.then(|| b5_coefficient(p.b_coef, p.d_coef)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveCase {
    TBHomoclinic,
    TBHeteroclinic,
    Codim3Homoclinic,
    Codim3Heteroclinic,
    DZHeteroclinic,
}

/// Accuracy of a predicted curve: `Exact`, or leading order with error of
/// the given order in the free parameter's distance to the organizing point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truncation {
    Exact,
    Order(u32),
}

/// Which parameter the curve map takes as its argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreeParam {
    Eps1,
    Eps3,
}

type CurveMap = Arc<dyn Fn(f64) -> Option<[f64; 3]> + Send + Sync>;

#[derive(Clone)]
pub struct CurvePrediction {
    pub name: String,
    pub case: CurveCase,
    pub free: FreeParam,
    pub truncation: Truncation,
    pub attribute: Option<String>,
    pub constants: Vec<(String, f64)>,
    pub validity: String,
    map: CurveMap,
}

impl fmt::Debug for CurvePrediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CurvePrediction")
            .field("name", &self.name)
            .field("case", &self.case)
            .field("free", &self.free)
            .field("truncation", &self.truncation)
            .field("attribute", &self.attribute)
            .field("constants", &self.constants)
            .field("validity", &self.validity)
            .finish()
    }
}

impl CurvePrediction {
    fn new(
        name: &str,
        case: CurveCase,
        free: FreeParam,
        truncation: Truncation,
        validity: &str,
        map: impl Fn(f64) -> Option<[f64; 3]> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            case,
            free,
            truncation,
            attribute: None,
            constants: Vec::new(),
            validity: validity.into(),
            map: Arc::new(map),
        }
    }

    fn attribute(mut self, a: &str) -> Self {
        self.attribute = Some(a.into());
        self
    }

    fn constant(mut self, name: &str, v: f64) -> Self {
        self.constants.push((name.into(), v));
        self
    }

    /// `(eps1, eps2, eps3)` on the curve, or a domain error when the free
    /// value violates the validity inequality.
    pub fn eval(&self, free: f64) -> Result<[f64; 3]> {
        (self.map)(free).ok_or_else(|| {
            Error::Domain(format!("{}: {} violated at {free}", self.name, self.validity))
        })
    }
}

/// Curves emanating from the Takens–Bogdanov point `(0, 0, eps3)`, as
/// functions of `eps1`.
pub fn tb_unfolding_curves(eps3: f64, b: f64, d: f64) -> Result<Vec<CurvePrediction>> {
    let _ = d;
    if eps3 == 0.0 {
        return Err(Error::Degenerate("eps3 = 0".into()));
    }
    if b != 0.0 && (eps3 - 2.0 / b).abs() <= DEFAULT_TOL {
        return Err(Error::Degenerate("eps3 = 2/B (degenerate TB)".into()));
    }
    let k = 2.0 - b * eps3;
    let (tb_case, pos) = if eps3 < 0.0 {
        (CurveCase::TBHomoclinic, true)
    } else {
        (CurveCase::TBHeteroclinic, false)
    };
    let side = move |e1: f64| if pos { e1 > 0.0 } else { e1 < 0.0 };
    let mut v = vec![
        CurvePrediction::new("pitchfork of E1", tb_case, FreeParam::Eps1, Truncation::Exact, "eps1 = 0", move |e1| {
            (e1 == 0.0).then_some([0.0, 0.0, eps3])
        }),
        CurvePrediction::new("Hopf of E1", tb_case, FreeParam::Eps1, Truncation::Exact, "eps1 < 0", move |e1| {
            (e1 < 0.0).then_some([e1, 0.0, eps3])
        }),
    ];
    if eps3 < 0.0 {
        v.push(
            CurvePrediction::new("Hopf of E3,4", tb_case, FreeParam::Eps1, Truncation::Order(2), "eps1 > 0", move |e1| {
                side(e1).then_some([e1, k * e1 / eps3, eps3])
            })
            .attribute("supercritical"),
        );
        v.push(
            CurvePrediction::new("homoclinic to E1", tb_case, FreeParam::Eps1, Truncation::Order(2), "eps1 > 0", move |e1| {
                side(e1).then_some([e1, 4.0 * k * e1 / (5.0 * eps3), eps3])
            })
            .attribute("attractive"),
        );
        v.push(
            CurvePrediction::new(
                "saddle-node of symmetric periodic orbits",
                tb_case,
                FreeParam::Eps1,
                Truncation::Order(2),
                "eps1 > 0",
                move |e1| side(e1).then_some([e1, C_SNPO * e1 * k / eps3, eps3]),
            )
            .constant("c", C_SNPO),
        );
    } else {
        v.push(
            CurvePrediction::new("heteroclinic to E3,4", tb_case, FreeParam::Eps1, Truncation::Order(2), "eps1 < 0", move |e1| {
                side(e1).then_some([e1, k * e1 / (5.0 * eps3), eps3])
            })
            .attribute("repulsive"),
        );
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Codim3Case {
    Homoclinic,
    Heteroclinic,
}

/// Curves through the degenerate TB point `(0, 0, 2/B)`.
pub fn codim3_curves(b: f64, d: f64, case: Codim3Case) -> Result<Vec<CurvePrediction>> {
    if b == 0.0 {
        return Err(Error::Degenerate("B = 0".into()));
    }
    let s = 5.0 * b + 3.0 * d;
    if s == 0.0 {
        return Err(Error::Degenerate("5B + 3D = 0".into()));
    }
    let e3d = 2.0 / b;
    let (cc, curve_case) = match case {
        Codim3Case::Homoclinic => (CurveCase::Codim3Homoclinic, true),
        Codim3Case::Heteroclinic => (CurveCase::Codim3Heteroclinic, false),
    };
    let b4 = b.powi(4);
    let mut v = vec![
        CurvePrediction::new("nondegenerate TB", cc, FreeParam::Eps3, Truncation::Exact, "eps3 != 2/B", move |e3| {
            (e3 != e3d && e3 != 0.0).then_some([0.0, 0.0, e3])
        }),
        CurvePrediction::new("degenerate Hopf of E1", cc, FreeParam::Eps1, Truncation::Exact, "eps1 < 0", move |e1| {
            (e1 < 0.0).then_some([e1, 0.0, e3d])
        }),
    ];
    if curve_case {
        v.push(CurvePrediction::new(
            "degenerate Hopf of E3,4",
            cc,
            FreeParam::Eps1,
            Truncation::Order(3),
            "eps1 > 0",
            move |e1| (e1 > 0.0).then_some([e1, -0.5 * e1 * e1 * b * b * s, e3d]),
        ));
        v.push(CurvePrediction::new(
            "zero-trace homoclinic to E1",
            cc,
            FreeParam::Eps3,
            Truncation::Order(2),
            "eps1 > 0",
            move |e3| {
                let e1 = 7.0 * (2.0 - b * e3) / (b4 * e3 * s);
                (e1 > 0.0).then_some([e1, 0.0, e3])
            },
        ));
        v.push(
            CurvePrediction::new(
                "cusp of saddle-nodes of periodic orbits",
                cc,
                FreeParam::Eps3,
                Truncation::Order(2),
                "eps1 > 0",
                move |e3| {
                    let k = 2.0 - b * e3;
                    let e2 = 2.0 * C3_CUSP * k * k / (C4_CUSP * C4_CUSP * b * b * s);
                    let e1 = -8.0 * k / (C4_CUSP * e3 * b4 * s);
                    (e1 > 0.0).then_some([e1, e2, e3])
                },
            )
            .constant("c3", C3_CUSP)
            .constant("c4", C4_CUSP),
        );
    } else {
        v.push(CurvePrediction::new(
            "zero-trace heteroclinic",
            cc,
            FreeParam::Eps3,
            Truncation::Order(2),
            "stated form, eps1 < 0",
            move |e3| {
                let e1 = -(7.0 / 3.0) * (2.0 - b * e3).powi(3);
                (e1 < 0.0).then_some([e1, 0.0, e3])
            },
        ));
        v.push(CurvePrediction::new(
            "zero-trace heteroclinic (from mu-tilde relation)",
            cc,
            FreeParam::Eps3,
            Truncation::Order(2),
            "eps1 < 0",
            move |e3| {
                let e1 = -56.0 * (2.0 - b * e3) / (3.0 * e3 * b4 * s);
                (e1 < 0.0).then_some([e1, 0.0, e3])
            },
        ));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuTilde {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

fn check_codim3(p: &Params) -> Result<f64> {
    if p.b_coef == 0.0 {
        return Err(Error::Degenerate("B = 0".into()));
    }
    let s = 5.0 * p.b_coef + 3.0 * p.d_coef;
    if s == 0.0 {
        return Err(Error::Degenerate("5B + 3D = 0".into()));
    }
    if p.eps3 == 0.0 {
        return Err(Error::Degenerate("eps3 = 0".into()));
    }
    Ok(s)
}

/// Rescaled unfolding parameters in the form stated alongside the
/// codimension-three scaling. Cube roots are real cube roots.
pub fn mu_tilde(p: &Params) -> Result<MuTilde> {
    let s = check_codim3(p)?;
    let (b, e3) = (p.b_coef, p.eps3);
    Ok(MuTilde {
        mu1: p.eps1 / 4.0 * (e3.powi(4) * b.powi(8) * s * s).cbrt(),
        mu2: -p.eps2 / 2.0 * (-b.powi(4) * e3 * e3 * s).cbrt(),
        mu3: -2.0 * (2.0 - b * e3) * e3.cbrt() / (b.powi(4) * s).cbrt(),
    })
}

/// Rescaled parameters obtained by applying the scaling to the unfolding
/// `y' = mu1 x + mu2 y + a3 x³ + mu3 x² y + b5 x⁴ y` with `mu3 = (2 - B e3)/e3²`.
pub fn mu_tilde_from_scaling(p: &Params) -> Result<MuTilde> {
    check_codim3(p)?;
    let sc = Codim3Scaling::new(p)?;
    let mu3 = (2.0 - p.b_coef * p.eps3) / (p.eps3 * p.eps3);
    Ok(MuTilde {
        mu1: sc.t * sc.t * p.eps1,
        mu2: sc.t * p.eps2,
        mu3: sc.t * sc.x * sc.x * mu3,
    })
}

/// Scale factors `x = X x̄, y = Y ȳ, t = T τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Scaling {
    /// The planar field `(x, y) -> (y, g(x, y))` written in the barred
    /// variables at `(u, v)`.
    pub fn transform(&self, g: impl Fn(f64, f64) -> f64, u: f64, v: f64) -> (f64, f64) {
        let (x, y) = (self.x * u, self.y * v);
        (self.t * y / self.x, self.t * g(x, y) / self.y)
    }
}

/// Scaling taking the cubic TB unfolding to coefficients `sgn(e3)` on x̄³ and
/// `+1` on x̄²ȳ. The y-scale is `e3² sqrt|e3| / (2 - B e3)²`, the only choice
/// that keeps `x̄' = ȳ`.
pub fn tb_scaling(eps3: f64, b: f64) -> Scaling {
    let k = 2.0 - b * eps3;
    let a = eps3.abs();
    Scaling {
        x: a * a.sqrt() / k,
        y: eps3 * eps3 * a.sqrt() / (k * k),
        t: k / a,
    }
}

/// The y-scale as printed with the TB rescaling, `e3² sqrt|e3| / (2 + B e3²)`.
pub fn tb_scaling_printed_y(eps3: f64, b: f64) -> f64 {
    eps3 * eps3 * eps3.abs().sqrt() / (2.0 + b * eps3 * eps3)
}

/// Coefficients `(x̄, ȳ, x̄³, x̄²ȳ)` of the rescaled TB unfolding.
pub fn tb_rescaled_coefficients(p: &Params) -> [f64; 4] {
    let k = 2.0 - p.b_coef * p.eps3;
    let a = p.eps3.abs();
    [p.eps1 * k * k / (p.eps3 * p.eps3), p.eps2 * k / a, p.eps3.signum(), 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Codim3Scaling {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub a3: f64,
    pub b5: f64,
}

impl Codim3Scaling {
    pub fn new(p: &Params) -> Result<Self> {
        check_codim3(p)?;
        let a3 = 1.0 / p.eps3;
        let b5 = b5_coefficient(p.b_coef, p.d_coef);
        if b5 <= 0.0 {
            return Err(Error::Domain("scaling requires b5 > 0".into()));
        }
        let a = a3.abs();
        Ok(Self {
            x: (a / (b5 * b5)).powf(1.0 / 6.0),
            y: b5 * (a.powi(5) / b5.powi(10)).powf(1.0 / 6.0),
            t: (b5 / (a * a)).cbrt(),
            a3,
            b5,
        })
    }

    pub fn scaling(&self) -> Scaling {
        Scaling { x: self.x, y: self.y, t: self.t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DzPrediction {
    pub eps1: f64,
    pub a: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Heteroclinic E1–E2 curve near the diagonal double zero, solving the
/// implicit second-order relation for `eps1` by fixed-point iteration from
/// `-eps3 / (2 D)`.
pub fn dz_heteroclinic_prediction(eps2: f64, b: f64, d: f64, eps3: f64) -> Result<DzPrediction> {
    if eps2 == 0.0 {
        return Err(Error::Degenerate("eps2 = 0".into()));
    }
    if d == 0.0 {
        return Err(Error::UndefinedEquilibrium);
    }
    let delta = 1.0 / eps2;
    let a_of = |e1: f64| (delta.powi(3) * e1 - delta) / d;
    let rhs = |e1: f64| {
        let a = a_of(e1);
        -eps3 / (2.0 * d)
            + a * a * (-2.0 * delta + b) / (4.0 * d * (3.0 * a + 2.0) * (1.0 - delta * delta * e1)) * eps3 * eps3
    };
    let mut e1 = -eps3 / (2.0 * d);
    for it in 1..=100 {
        let next = rhs(e1);
        if !next.is_finite() {
            return Err(Error::NoConvergence("DZ prediction produced a non-finite iterate".into()));
        }
        let step = (next - e1).abs();
        e1 = next;
        if step <= 1e-12 {
            let a = a_of(e1);
            if a <= 0.0 {
                return Err(Error::Domain(format!("a = {a} <= 0")));
            }
            return Ok(DzPrediction { eps1: e1, a, iterations: it, converged: true });
        }
    }
    Err(Error::NoConvergence("DZ prediction fixed point after 100 iterations".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleQuantities {
    pub delta_e1: f64,
    pub delta_e2: f64,
    pub product: f64,
    pub attractive: bool,
}

/// Ratio of the leading stable real part to the unstable eigenvalue for an
/// equilibrium with a one-dimensional unstable manifold.
pub fn saddle_quantity(spec: &model::Spectrum, kind: EquilibriumKind) -> Result<f64> {
    if spec.unstable_dim() != 1 || spec.stable_dim() != 2 {
        return Err(Error::Classification(format!(
            "{kind} needs two stable and one unstable eigenvalue, found {:?}",
            spec.eigenvalues
        )));
    }
    let u = spec.eigenvalues[2].re;
    let s = spec.leading_stable().expect("two stable eigenvalues").re;
    Ok((s / u).abs())
}

pub fn saddle_quantities(p: &Params) -> Result<SaddleQuantities> {
    let d1 = saddle_quantity(&model::eigenvalues_e1(p), EquilibriumKind::E1)?;
    let d2 = saddle_quantity(&model::eigenvalues_e2(p)?, EquilibriumKind::E2)?;
    Ok(SaddleQuantities { delta_e1: d1, delta_e2: d2, product: d1 * d2, attractive: d1 * d2 > 1.0 })
}
