//! The unfolding vector field
//!
//! ```text
//! x' = y
//! y' = e1 x + e2 y - x z + B y z
//! z' = e3 z + x^2 + D z^2
//! ```
//!
//! together with its derivatives, equilibria and their spectra.
//!
//! Matrices follow the usual row convention: `jacobian(p, s)[(i, j)]` is the
//! derivative of component `i` of the field with respect to coordinate `j`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type State = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub b_coef: f64,
    pub d_coef: f64,
}

impl Params {
    pub const fn new(eps1: f64, eps2: f64, eps3: f64, b_coef: f64, d_coef: f64) -> Self {
        Self { eps1, eps2, eps3, b_coef, d_coef }
    }

    /// The fixed slice `eps2 = -1, B = -0.1, D = 0.01` used throughout the
    /// numerical study, at the given `(eps1, eps3)`.
    pub const fn reference(eps1: f64, eps3: f64) -> Self {
        Self::new(eps1, -1.0, eps3, -0.1, 0.01)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("non-finite entry in {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.eps1, self.eps2, self.eps3, self.b_coef, self.d_coef]
    }

    pub fn get(&self, name: ParamName) -> f64 {
        self.as_array()[name as usize]
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        match name {
            ParamName::Eps1 => self.eps1 = value,
            ParamName::Eps2 => self.eps2 = value,
            ParamName::Eps3 => self.eps3 = value,
            ParamName::B => self.b_coef = value,
            ParamName::D => self.d_coef = value,
        }
    }

    pub fn with(mut self, name: ParamName, value: f64) -> Self {
        self.set(name, value);
        self
    }

    fn require_d(&self) -> Result<()> {
        if self.d_coef == 0.0 {
            Err(Error::UndefinedEquilibrium)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    Eps1 = 0,
    Eps2 = 1,
    Eps3 = 2,
    B = 3,
    D = 4,
}

impl ParamName {
    pub const ALL: [ParamName; 5] = [Self::Eps1, Self::Eps2, Self::Eps3, Self::B, Self::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Eps1 => "eps1",
            Self::Eps2 => "eps2",
            Self::Eps3 => "eps3",
            Self::B => "B",
            Self::D => "D",
        }
    }
}

impl std::str::FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps1" | "e1" => Ok(Self::Eps1),
            "eps2" | "e2" => Ok(Self::Eps2),
            "eps3" | "e3" => Ok(Self::Eps3),
            "B" | "b" => Ok(Self::B),
            "D" | "d" => Ok(Self::D),
            _ => Err(Error::InvalidParams(format!("unknown parameter name {s:?}"))),
        }
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[inline]
pub fn vector_field(p: &Params, s: &State) -> State {
    let (x, y, z) = (s.x, s.y, s.z);
    State::new(
        y,
        p.eps1 * x + p.eps2 * y - x * z + p.b_coef * y * z,
        p.eps3 * z + x * x + p.d_coef * z * z,
    )
}

#[inline]
pub fn jacobian(p: &Params, s: &State) -> Matrix3<f64> {
    let (x, y, z) = (s.x, s.y, s.z);
    Matrix3::new(
        0.0, 1.0, 0.0,
        p.eps1 - z, p.eps2 + p.b_coef * z, -x + p.b_coef * y,
        2.0 * x, 0.0, p.eps3 + 2.0 * p.d_coef * z,
    )
}

/// Derivative of the field with respect to one parameter.
pub fn param_derivative(name: ParamName, s: &State) -> State {
    let (x, y, z) = (s.x, s.y, s.z);
    match name {
        ParamName::Eps1 => State::new(0.0, x, 0.0),
        ParamName::Eps2 => State::new(0.0, y, 0.0),
        ParamName::Eps3 => State::new(0.0, 0.0, z),
        ParamName::B => State::new(0.0, y * z, 0.0),
        ParamName::D => State::new(0.0, 0.0, z * z),
    }
}

/// The symmetric bilinear form of second derivatives, `B(u, v) = D²f(u, v)`.
/// It does not depend on the base point since the field is quadratic.
pub fn second_derivative(p: &Params, u: &Vector3<Complex64>, v: &Vector3<Complex64>) -> Vector3<Complex64> {
    let b = Complex64::new(p.b_coef, 0.0);
    let d = Complex64::new(p.d_coef, 0.0);
    let two = Complex64::new(2.0, 0.0);
    Vector3::new(
        Complex64::new(0.0, 0.0),
        -(u.x * v.z + u.z * v.x) + b * (u.y * v.z + u.z * v.y),
        two * u.x * v.x + two * d * u.z * v.z,
    )
}

/// `(x, y, z) -> (-x, -y, z)`.
#[inline]
pub fn z2_image(s: &State) -> State {
    State::new(-s.x, -s.y, s.z)
}

/// Parameters of the conjugate system obtained by moving E2 to the origin,
/// and the z-shift relating the two flows: the field at `p` evaluated at `s`
/// equals the field at the returned parameters evaluated at `s - (0, 0, shift)`.
pub fn conjugate_params(p: &Params) -> Result<(Params, f64)> {
    p.require_d()?;
    let r = p.eps3 / p.d_coef;
    Ok((
        Params::new(p.eps1 + r, p.eps2 - p.b_coef * r, -p.eps3, p.b_coef, p.d_coef),
        -r,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharPoly {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl CharPoly {
    pub fn from_matrix(a: &Matrix3<f64>) -> Self {
        let (p1, p2, p3) = linalg::char_poly_coeffs(a);
        Self { p1, p2, p3 }
    }

    pub fn roots(&self) -> [Complex64; 3] {
        linalg::cubic_roots(self.p1, self.p2, self.p3)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        ((z + self.p1) * z + self.p2) * z + self.p3
    }

    /// The Hurwitz expression whose zero with `p2 > 0` marks a purely
    /// imaginary pair.
    pub fn hurwitz(&self) -> f64 {
        self.p1 * self.p2 - self.p3
    }

    pub fn max_abs(&self) -> f64 {
        self.p1.abs().max(self.p2.abs()).max(self.p3.abs()).max(1.0)
    }
}

pub fn char_poly_at_origin(p: &Params) -> CharPoly {
    CharPoly {
        p1: -(p.eps2 + p.eps3),
        p2: p.eps2 * p.eps3 - p.eps1,
        p3: p.eps1 * p.eps3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Sorted by real part, then imaginary part.
    #[serde(with = "complex3")]
    pub eigenvalues: [Complex64; 3],
    pub is_real_saddle: bool,
    pub is_saddle_focus: bool,
    /// Radicand of the quadratic factor for closed forms, otherwise the
    /// cubic discriminant (negative iff a complex pair exists).
    pub discriminant: f64,
}

impl Spectrum {
    pub fn from_eigenvalues(mut eigenvalues: [Complex64; 3], discriminant: f64) -> Self {
        linalg::sort_eigenvalues(&mut eigenvalues);
        let n_complex = eigenvalues.iter().filter(|z| linalg::is_complex(**z)).count();
        let pos = eigenvalues.iter().any(|z| z.re > 0.0);
        let neg = eigenvalues.iter().any(|z| z.re < 0.0);
        let hyperbolic = eigenvalues.iter().all(|z| z.re != 0.0);
        let saddle = pos && neg && hyperbolic;
        Self {
            eigenvalues,
            is_real_saddle: saddle && n_complex == 0,
            is_saddle_focus: saddle && n_complex == 2,
            discriminant,
        }
    }

    pub fn from_matrix(a: &Matrix3<f64>) -> Self {
        let cp = CharPoly::from_matrix(a);
        Self::from_eigenvalues(cp.roots(), cubic_discriminant(&cp))
    }

    pub fn unstable_dim(&self) -> usize {
        self.eigenvalues.iter().filter(|z| z.re > 0.0).count()
    }

    pub fn stable_dim(&self) -> usize {
        self.eigenvalues.iter().filter(|z| z.re < 0.0).count()
    }

    /// The eigenvalue with largest real part among those with negative real
    /// part (the leading stable one).
    pub fn leading_stable(&self) -> Option<Complex64> {
        self.eigenvalues.iter().rev().find(|z| z.re < 0.0).copied()
    }

    /// The eigenvalue with smallest positive real part.
    pub fn leading_unstable(&self) -> Option<Complex64> {
        self.eigenvalues.iter().find(|z| z.re > 0.0).copied()
    }

    pub fn has_complex_pair(&self) -> bool {
        self.eigenvalues.iter().any(|z| linalg::is_complex(*z))
    }
}

fn cubic_discriminant(cp: &CharPoly) -> f64 {
    let (a, b, c) = (cp.p1, cp.p2, cp.p3);
    18.0 * a * b * c - 4.0 * a.powi(3) * c + a * a * b * b - 4.0 * b.powi(3) - 27.0 * c * c
}

mod complex3 {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64; 3], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Complex64; 3], D::Error> {
        let pairs: [[f64; 2]; 3] = Deserialize::deserialize(d)?;
        Ok(pairs.map(|[re, im]| Complex64::new(re, im)))
    }
}

/// Closed-form spectrum at the origin: `e3` and `[e2 ± sqrt(e2² + 4 e1)] / 2`.
pub fn eigenvalues_e1(p: &Params) -> Spectrum {
    let disc = p.eps2 * p.eps2 + 4.0 * p.eps1;
    let [a, b] = linalg::quadratic_roots(-p.eps2, -p.eps1);
    Spectrum::from_eigenvalues([Complex64::new(p.eps3, 0.0), a, b], disc)
}

/// Closed-form spectrum at E2 = (0, 0, -e3/D): `-e3` and the roots of the
/// x-y block with trace `e2 - (B/D) e3` and determinant `-(e1 + e3/D)`.
pub fn eigenvalues_e2(p: &Params) -> Result<Spectrum> {
    p.require_d()?;
    let tr = p.eps2 - p.b_coef / p.d_coef * p.eps3;
    let q = p.eps1 + p.eps3 / p.d_coef;
    let disc = tr * tr + 4.0 * q;
    let [a, b] = linalg::quadratic_roots(-tr, -q);
    Ok(Spectrum::from_eigenvalues([Complex64::new(-p.eps3, 0.0), a, b], disc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquilibriumKind {
    E1,
    E2,
    E3,
    E4,
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub state: State,
    pub spectrum: Spectrum,
}

impl Equilibrium {
    pub fn jacobian(&self, p: &Params) -> Matrix3<f64> {
        jacobian(p, &self.state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// `e3 = 0`: E2 coincides with E1.
    E2MergesE1,
    /// `e1 (e3 + D e1) = 0`: E3 and E4 sit on the z-axis, merged with E1 or E2.
    E34OnAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub e1: Equilibrium,
    pub e2: Option<Equilibrium>,
    pub e34: Option<[Equilibrium; 2]>,
    pub boundaries: Vec<Boundary>,
}

impl EquilibriumSet {
    pub fn all(&self) -> Vec<Equilibrium> {
        let mut v = vec![self.e1];
        v.extend(self.e2);
        if let Some([a, b]) = self.e34 {
            v.push(a);
            v.push(b);
        }
        v
    }

    pub fn get(&self, kind: EquilibriumKind) -> Option<Equilibrium> {
        match kind {
            EquilibriumKind::E1 => Some(self.e1),
            EquilibriumKind::E2 => self.e2,
            EquilibriumKind::E3 => self.e34.map(|e| e[0]),
            EquilibriumKind::E4 => self.e34.map(|e| e[1]),
        }
    }
}

/// Location of E3 (the `x > 0` member of the symmetric pair), if it exists.
pub fn e3_state(p: &Params) -> Option<State> {
    let prod = p.eps1 * (p.eps3 + p.d_coef * p.eps1);
    (prod < 0.0).then(|| State::new((-prod).sqrt(), 0.0, p.eps1))
}

pub fn equilibria(p: &Params) -> EquilibriumSet {
    let e1 = Equilibrium {
        kind: EquilibriumKind::E1,
        state: State::zeros(),
        spectrum: eigenvalues_e1(p),
    };
    let mut boundaries = Vec::new();
    let e2 = if p.d_coef != 0.0 {
        if p.eps3 == 0.0 {
            boundaries.push(Boundary::E2MergesE1);
        }
        Some(Equilibrium {
            kind: EquilibriumKind::E2,
            state: State::new(0.0, 0.0, -p.eps3 / p.d_coef),
            spectrum: eigenvalues_e2(p).expect("D checked nonzero"),
        })
    } else {
        None
    };
    let prod = p.eps1 * (p.eps3 + p.d_coef * p.eps1);
    let scale = p.eps1.abs() * (p.eps3.abs() + (p.d_coef * p.eps1).abs());
    if prod.abs() <= 1e-14 * scale || prod == 0.0 {
        boundaries.push(Boundary::E34OnAxis);
    }
    let e34 = e3_state(p).map(|s3| {
        let spectrum = Spectrum::from_matrix(&jacobian(p, &s3));
        [
            Equilibrium { kind: EquilibriumKind::E3, state: s3, spectrum },
            Equilibrium { kind: EquilibriumKind::E4, state: z2_image(&s3), spectrum },
        ]
    });
    EquilibriumSet { e1, e2, e34, boundaries }
}

/// Characteristic polynomial of the Jacobian at E3/E4:
/// `λ³ - (a + c) λ² + a c λ + 2 x²` with `a = e2 + B e1`, `c = e3 + 2 D e1`.
pub fn char_poly_e34(p: &Params) -> Option<CharPoly> {
    let s = e3_state(p)?;
    let a = p.eps2 + p.b_coef * p.eps1;
    let c = p.eps3 + 2.0 * p.d_coef * p.eps1;
    Some(CharPoly { p1: -(a + c), p2: a * c, p3: 2.0 * s.x * s.x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &State, b: &State, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn vector_field_by_substitution() {
        let p = Params::new(0.0, 0.0, 0.0, -0.1, 0.01);
        assert_eq!(vector_field(&p, &State::zeros()), State::zeros());
        // y' = -x z + B y z = -3 - 0.6, z' = x² + D z² = 1 + 0.09
        let f = vector_field(&p, &State::new(1.0, 2.0, 3.0));
        assert!(close(&f, &State::new(2.0, -3.6, 1.09), 1e-15));
        let p = Params::new(1.0, 1.0, 1.0, 0.0, 0.0);
        let f = vector_field(&p, &State::new(1.0, 1.0, 1.0));
        assert!(close(&f, &State::new(1.0, 1.0, 2.0), 1e-15));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = Params::new(0.1, -1.0, 0.05, -0.1, 0.01);
        let s = State::new(1.0, 2.0, 3.0);
        let j = jacobian(&p, &s);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = State::zeros();
            e[k] = h;
            let col = (vector_field(&p, &(s + e)) - vector_field(&p, &(s - e))) / (2.0 * h);
            for i in 0..3 {
                assert!((col[i] - j[(i, k)]).abs() <= 1e-6);
            }
        }
        let j0 = jacobian(&p, &State::zeros());
        assert_eq!(j0, Matrix3::new(0.0, 1.0, 0.0, 0.1, -1.0, 0.0, 0.0, 0.0, 0.05));
    }

    #[test]
    fn jacobian_at_e2_entries() {
        let p = Params::reference(-3.0, 0.07);
        let e2 = State::new(0.0, 0.0, -p.eps3 / p.d_coef);
        let j = jacobian(&p, &e2);
        assert!((j[(1, 0)] - (p.eps1 + p.eps3 / p.d_coef)).abs() < 1e-12);
        assert!((j[(1, 1)] - (p.eps2 - p.b_coef / p.d_coef * p.eps3)).abs() < 1e-12);
    }

    #[test]
    fn equilibria_cases() {
        let p = Params::new(-0.2, -1.0, 0.01, -0.1, 0.01);
        let set = equilibria(&p);
        let [e3, e4] = set.e34.unwrap();
        assert!(close(&e3.state, &State::new(0.04, 0.0, -0.2), 1e-15));
        assert!(close(&e4.state, &State::new(-0.04, 0.0, -0.2), 1e-15));
        for e in set.all() {
            assert!(vector_field(&p, &e.state).norm() <= 1e-14);
        }

        let p = Params::new(1.0, 0.0, 1.0, 0.0, 0.5);
        let set = equilibria(&p);
        assert!(set.e34.is_none());
        assert_eq!(set.e2.unwrap().state, State::new(0.0, 0.0, -2.0));

        let set = equilibria(&Params::reference(-10.0, 0.1));
        assert_eq!(set.e2.unwrap().state.z, -10.0);
        assert!(set.e34.is_none());
        assert!(set.boundaries.contains(&Boundary::E34OnAxis));

        let set = equilibria(&Params::new(1.0, 1.0, 1.0, 0.0, 0.0));
        assert!(set.e2.is_none());
    }

    #[test]
    fn char_poly_at_origin_closed_forms() {
        let cp = char_poly_at_origin(&Params::new(1.0, 2.0, 3.0, 0.0, 0.0));
        assert_eq!((cp.p1, cp.p2, cp.p3), (-5.0, 5.0, 3.0));
        let cp = char_poly_at_origin(&Params::new(0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!((cp.p1, cp.p2, cp.p3), (0.0, 0.0, 0.0));
        let p = Params::new(-0.25, -1.0, 0.004611, -0.1, 0.01);
        let cp = char_poly_at_origin(&p);
        assert!((cp.p2 - (0.25 - 0.004611)).abs() < 1e-15);
        assert!((cp.p1 - 0.995389).abs() < 1e-15);
        assert_eq!(cp, CharPoly::from_matrix(&jacobian(&p, &State::zeros())));
    }

    #[test]
    fn closed_form_spectra() {
        let s = eigenvalues_e1(&Params::new(-0.25, -1.0, 0.01, -0.1, 0.01));
        assert_eq!(s.discriminant, 0.0);
        assert!(s.eigenvalues[..2].iter().all(|z| (z.re + 0.5).abs() < 1e-15 && z.im == 0.0));

        let s = eigenvalues_e2(&Params::reference(-10.0, 0.1)).unwrap();
        let zeros = s.eigenvalues.iter().filter(|z| z.norm() < 1e-14).count();
        assert_eq!(zeros, 2);

        let s = eigenvalues_e1(&Params::new(0.0, -1.0, 0.5, 0.0, 0.0));
        let re: Vec<f64> = s.eigenvalues.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![-1.0, 0.0, 0.5]);

        assert_eq!(
            eigenvalues_e2(&Params::new(1.0, 1.0, 1.0, 0.0, 0.0)),
            Err(Error::UndefinedEquilibrium)
        );
    }

    #[test]
    fn classification_flags() {
        // E1 at (0.2, -1, -0.0043): real saddle
        let s = eigenvalues_e1(&Params::reference(0.2, -0.0043));
        assert!(s.is_real_saddle && !s.is_saddle_focus);
        assert_eq!(s.unstable_dim(), 1);
        // E1 at (-0.3, -1, 0.004): complex stable pair, unstable e3
        let s = eigenvalues_e1(&Params::reference(-0.3, 0.004));
        assert!(s.is_saddle_focus && !s.is_real_saddle);
    }

    #[test]
    fn conjugacy_of_tb_points() {
        let (q, shift) = conjugate_params(&Params::reference(-10.0, 0.1)).unwrap();
        assert!((q.eps1).abs() < 1e-12 && (q.eps2).abs() < 1e-12);
        assert_eq!(q.eps3, -0.1);
        assert!((shift + 10.0).abs() < 1e-12);
        let p = Params::reference(-3.7, 0.02);
        let (q, _) = conjugate_params(&p).unwrap();
        let (r, _) = conjugate_params(&q).unwrap();
        for (a, b) in p.as_array().iter().zip(r.as_array()) {
            assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        }
        assert!(conjugate_params(&Params::new(1.0, 1.0, 1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn e34_polynomial_matches_jacobian() {
        let p = Params::reference(-5.0, 0.06);
        let s = e3_state(&p).unwrap();
        let a = CharPoly::from_matrix(&jacobian(&p, &s));
        let b = char_poly_e34(&p).unwrap();
        assert!((a.p1 - b.p1).abs() < 1e-14 && (a.p2 - b.p2).abs() < 1e-14 && (a.p3 - b.p3).abs() < 1e-14);
    }
}
