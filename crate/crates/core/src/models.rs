//! Vector fields on boxes: the 3D Goodwin oscillator, the Field–Noyes
//! reduction of the Belousov–Zhabotinskii reaction, and user-defined systems.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::mat3::{Mat3, Vec3};
use crate::signpat::{self, Sign, SignPattern};

/// Right-hand side of `ẋ = f(x)` on `ℝ³`.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &Vec3) -> Vec3;

    /// Defaults to central differences with `h = 1e-6·(1 + |xᵢ|)`.
    fn jacobian(&self, x: &Vec3) -> Mat3 {
        fd_jacobian(|y| self.eval(y), x)
    }
}

pub fn fd_jacobian<F: Fn(&Vec3) -> Vec3>(f: F, x: &Vec3) -> Mat3 {
    let mut j = Mat3::zeros();
    for i in 0..3 {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        j.set_column(i, &col);
    }
    j
}

/// Closed box `lower <= x <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Box3 {
    pub fn new(lower: [f64; 3], upper: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(lower[i].is_finite() && upper[i].is_finite()) || lower[i] > upper[i]) {
            return Err(Error::InvalidParams(format!(
                "box bounds must be finite with lower <= upper, got {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lo(&self) -> Vec3 {
        Vec3::from(self.lower)
    }

    pub fn hi(&self) -> Vec3 {
        Vec3::from(self.upper)
    }

    pub fn width(&self) -> Vec3 {
        self.hi() - self.lo()
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    pub fn contains_interior(&self, x: &Vec3) -> bool {
        (0..3).all(|i| x[i] > self.lower[i] && x[i] < self.upper[i])
    }

    /// Sup-norm distance from `x` to the box (zero inside).
    pub fn excursion(&self, x: &Vec3) -> f64 {
        (0..3)
            .map(|i| (self.lower[i] - x[i]).max(x[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Grid point `idx / steps` along each axis, `idx` in `0..=steps`.
    pub fn lattice_point(&self, idx: [usize; 3], steps: usize) -> Vec3 {
        Vec3::from_fn(|i, _| {
            self.lower[i] + (self.upper[i] - self.lower[i]) * idx[i] as f64 / steps as f64
        })
    }

    /// `n³` points strictly inside the box, at cell centres of an `n`-cell grid.
    pub fn interior_grid(&self, n: usize) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(Vec3::from_fn(|d, _| {
                        let idx = [i, j, k][d] as f64 + 0.5;
                        self.lower[d] + (self.upper[d] - self.lower[d]) * idx / n as f64
                    }));
                }
            }
        }
        out
    }

    /// `n` uniform points from a ChaCha8 stream seeded with `seed`.
    pub fn seeded_points(&self, n: usize, seed: u64) -> Vec<Vec3> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::from_fn(|i, _| rng.gen_range(self.lower[i]..=self.upper[i])))
            .collect()
    }

    /// Image under `x ↦ D x`, `D = diag(signature)`.
    pub fn signed(&self, signature: &Vec3) -> Box3 {
        let mut lower = [0.0; 3];
        let mut upper = [0.0; 3];
        for i in 0..3 {
            let (a, b) = (signature[i] * self.lower[i], signature[i] * self.upper[i]);
            lower[i] = a.min(b);
            upper[i] = a.max(b);
        }
        Box3 { lower, upper }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodwinParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub m: u32,
}

impl GoodwinParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok || self.m < 1 {
            return Err(Error::InvalidParams(format!(
                "Goodwin needs alpha, beta, gamma > 0 and m >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldNoyesParams {
    pub s: f64,
    pub q: f64,
    pub f: f64,
    pub w: f64,
}

impl FieldNoyesParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.s, self.q, self.f, self.w]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::InvalidParams(format!(
                "Field-Noyes needs s, q, f, w > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

struct Goodwin(GoodwinParams);

impl VectorField for Goodwin {
    fn eval(&self, x: &Vec3) -> Vec3 {
        let p = &self.0;
        Vec3::new(
            -p.alpha * x[0] + 1.0 / (1.0 + x[2].powi(p.m as i32)),
            -p.beta * x[1] + x[0],
            -p.gamma * x[2] + x[1],
        )
    }

    fn jacobian(&self, x: &Vec3) -> Mat3 {
        let p = &self.0;
        let m = p.m as i32;
        let xm = x[2].powi(m);
        let k = -(m as f64) * x[2].powi(m - 1) / (1.0 + xm).powi(2);
        Mat3::new(-p.alpha, 0.0, k, 1.0, -p.beta, 0.0, 0.0, 1.0, -p.gamma)
    }
}

struct FieldNoyes(FieldNoyesParams);

impl VectorField for FieldNoyes {
    fn eval(&self, x: &Vec3) -> Vec3 {
        let FieldNoyesParams { s, q, f, w } = self.0;
        Vec3::new(
            s * (x[1] - x[0] * x[1] + x[0] - q * x[0] * x[0]),
            (x[2] * f - x[1] - x[0] * x[1]) / s,
            w * (x[0] - x[2]),
        )
    }

    fn jacobian(&self, x: &Vec3) -> Mat3 {
        let FieldNoyesParams { s, q, f, w } = self.0;
        Mat3::new(
            s * (1.0 - x[1] - 2.0 * q * x[0]),
            s * (1.0 - x[0]),
            0.0,
            -x[1] / s,
            -(1.0 + x[0]) / s,
            f / s,
            w,
            0.0,
            -w,
        )
    }
}

struct ExprField {
    rhs: [Expr; 3],
}

impl VectorField for ExprField {
    fn eval(&self, x: &Vec3) -> Vec3 {
        let x = [x[0], x[1], x[2]];
        Vec3::from_fn(|i, _| self.rhs[i].eval(&x))
    }

    fn jacobian(&self, x: &Vec3) -> Mat3 {
        let x = [x[0], x[1], x[2]];
        let mut j = Mat3::zeros();
        for i in 0..3 {
            let d = self.rhs[i].eval_dual(&x);
            for k in 0..3 {
                j[(i, k)] = d.d[k];
            }
        }
        j
    }
}

struct LinearField(Mat3);

impl VectorField for LinearField {
    fn eval(&self, x: &Vec3) -> Vec3 {
        self.0 * x
    }

    fn jacobian(&self, _x: &Vec3) -> Mat3 {
        self.0
    }
}

struct FnField<F>(F);

impl<F: Fn(&Vec3) -> Vec3 + Send + Sync> VectorField for FnField<F> {
    fn eval(&self, x: &Vec3) -> Vec3 {
        (self.0)(x)
    }
}

// f̃(y) = D f(D y) with D = diag(±1)
struct SignedField {
    inner: Arc<dyn VectorField>,
    d: Vec3,
}

impl VectorField for SignedField {
    fn eval(&self, y: &Vec3) -> Vec3 {
        self.inner.eval(&self.d.component_mul(y)).component_mul(&self.d)
    }

    fn jacobian(&self, y: &Vec3) -> Mat3 {
        let j = self.inner.jacobian(&self.d.component_mul(y));
        Mat3::from_fn(|i, k| self.d[i] * j[(i, k)] * self.d[k])
    }
}

/// How the unique equilibrium in the box is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMethod {
    /// Unique positive root of a strictly increasing polynomial.
    GoodwinMonotonePolynomial,
    /// Closed form; the only other equilibrium is the origin, outside the box.
    FieldNoyesClosedForm,
    /// Newton iterations from a grid of seeds; evidence, not proof.
    MultiStartNewton,
    /// No analytic argument available.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Goodwin(GoodwinParams),
    FieldNoyes(FieldNoyesParams),
    Generic,
}

/// A vector field with its invariant box and structural metadata.
#[derive(Clone)]
pub struct SystemModel {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub bounds: Box3,
    /// Pattern claimed for the Jacobian on the interior of the box.
    pub sign_certificate: Option<SignPattern>,
    /// `D = diag(±1)` such that `D J D` has the 2-positivity pattern. All
    /// sign-variation quantities are measured in the coordinates `y = D x`.
    pub signature: Vec3,
    pub kind: ModelKind,
    pub warnings: Vec<String>,
    field: Arc<dyn VectorField>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("bounds", &self.bounds)
            .field("signature", &self.signature)
            .field("kind", &self.kind)
            .finish()
    }
}

impl SystemModel {
    pub fn new(name: impl Into<String>, field: Arc<dyn VectorField>, bounds: Box3) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
            bounds,
            sign_certificate: None,
            signature: Vec3::repeat(1.0),
            kind: ModelKind::Generic,
            warnings: Vec::new(),
            field,
        }
    }

    /// `ẋ = A x`.
    pub fn linear(name: impl Into<String>, a: Mat3, bounds: Box3) -> Self {
        Self::new(name, Arc::new(LinearField(a)), bounds)
    }

    /// Closure-backed model with a finite-difference Jacobian.
    pub fn from_fn<F>(name: impl Into<String>, f: F, bounds: Box3) -> Self
    where
        F: Fn(&Vec3) -> Vec3 + Send + Sync + 'static,
    {
        Self::new(name, Arc::new(FnField(f)), bounds)
    }

    /// Model from three expressions in `x1, x2, x3` and named parameters;
    /// the Jacobian is computed by forward-mode differentiation.
    pub fn from_expressions(
        name: impl Into<String>,
        rhs: &[String],
        params: BTreeMap<String, f64>,
        bounds: Box3,
    ) -> Result<Self> {
        if rhs.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: rhs.len(),
            });
        }
        let parsed = rhs
            .iter()
            .map(|s| expr::parse(s)?.bind(&params))
            .collect::<Result<Vec<_>>>()?;
        let [a, b, c]: [Expr; 3] = parsed
            .try_into()
            .map_err(|_| Error::ModelSpec("need three equations".into()))?;
        let mut m = Self::new(name, Arc::new(ExprField { rhs: [a, b, c] }), bounds);
        m.params = params;
        Ok(m)
    }

    pub fn with_certificate(mut self, pattern: SignPattern) -> Result<Self> {
        if pattern.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: pattern.dim(),
            });
        }
        if let Some(d) = signpat::find_a2_signature(&pattern)? {
            self.signature = Vec3::from_vec(d);
        }
        self.sign_certificate = Some(pattern);
        Ok(self)
    }

    pub fn with_signature(mut self, signature: Vec3) -> Self {
        self.signature = signature;
        self
    }

    pub fn f(&self, x: &Vec3) -> Vec3 {
        self.field.eval(x)
    }

    pub fn jac(&self, x: &Vec3) -> Mat3 {
        self.field.jacobian(x)
    }

    pub fn field(&self) -> Arc<dyn VectorField> {
        Arc::clone(&self.field)
    }

    pub fn is_identity_signature(&self) -> bool {
        self.signature.iter().all(|&d| d > 0.0)
    }

    /// The same system in the coordinates `y = D x`, with the Jacobian
    /// `D J D` and the box mapped accordingly.
    pub fn cooperative_view(&self) -> SystemModel {
        if self.is_identity_signature() {
            return self.clone();
        }
        let mut out = self.clone();
        out.field = Arc::new(SignedField {
            inner: Arc::clone(&self.field),
            d: self.signature,
        });
        out.bounds = self.bounds.signed(&self.signature);
        out.sign_certificate = self
            .sign_certificate
            .as_ref()
            .and_then(|p| p.with_signature(self.signature.as_slice()).ok());
        out.signature = Vec3::repeat(1.0);
        out
    }

    /// Equilibrium from the model's own analytic routine, if it has one.
    pub fn analytic_equilibrium(&self) -> Option<(Vec3, EquilibriumMethod)> {
        match self.kind {
            ModelKind::Goodwin(p) => Some((
                goodwin_equilibrium(&p),
                EquilibriumMethod::GoodwinMonotonePolynomial,
            )),
            ModelKind::FieldNoyes(p) => Some((
                field_noyes_equilibrium(&p),
                EquilibriumMethod::FieldNoyesClosedForm,
            )),
            ModelKind::Generic => None,
        }
    }
}

/// `ẋ₁ = -αx₁ + 1/(1+x₃^m)`, `ẋ₂ = -βx₂ + x₁`, `ẋ₃ = -γx₃ + x₂` on
/// `[0,1/α]×[0,1/(αβ)]×[0,1/(αβγ)]`.
pub fn goodwin(p: GoodwinParams) -> Result<SystemModel> {
    p.validate()?;
    let bounds = Box3::new(
        [0.0; 3],
        [
            1.0 / p.alpha,
            1.0 / (p.alpha * p.beta),
            1.0 / (p.alpha * p.beta * p.gamma),
        ],
    )?;
    let mut m = SystemModel::new("goodwin", Arc::new(Goodwin(p)), bounds)
        .with_certificate(signpat::pattern_a2(3)?)?;
    m.params = BTreeMap::from([
        ("alpha".to_string(), p.alpha),
        ("beta".to_string(), p.beta),
        ("gamma".to_string(), p.gamma),
        ("m".to_string(), p.m as f64),
    ]);
    m.kind = ModelKind::Goodwin(p);
    Ok(m)
}

/// `Q(s) = αβγ s^{m+1} + αβγ s - 1`.
pub fn goodwin_q(p: &GoodwinParams, s: f64) -> f64 {
    let k = p.alpha * p.beta * p.gamma;
    k * s.powi(p.m as i32 + 1) + k * s - 1.0
}

/// Unique equilibrium: `e₃` is the positive root of `Q`, `e₂ = γe₃`, `e₁ = βγe₃`.
///
/// `Q(0) = -1`, `Q(1/(αβγ)) > 0` and `Q` is increasing on `(0, ∞)`, so
/// bisection on that bracket always converges; a few Newton steps finish it.
pub fn goodwin_equilibrium(p: &GoodwinParams) -> Vec3 {
    let k = p.alpha * p.beta * p.gamma;
    let (mut lo, mut hi) = (0.0f64, 1.0 / k);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if goodwin_q(p, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    let mut s = 0.5 * (lo + hi);
    let m = p.m as i32;
    for _ in 0..8 {
        let q = goodwin_q(p, s);
        if q.abs() <= 1e-15 {
            break;
        }
        let dq = k * (m + 1) as f64 * s.powi(m) + k;
        let next = s - q / dq;
        if !(next > 0.0) || goodwin_q(p, next).abs() >= q.abs() {
            break;
        }
        s = next;
    }
    Vec3::new(p.beta * p.gamma * s, p.gamma * s, s)
}

/// The Jacobian pattern displayed for the Field–Noyes system on the interior
/// of its box.
pub fn field_noyes_pattern() -> SignPattern {
    use Sign::*;
    SignPattern::from_rows(vec![
        vec![Any, NonPos, Zero],
        vec![NonPos, Any, NonNeg],
        vec![NonNeg, Zero, Any],
    ])
    .expect("3x3 literal")
}

/// Field–Noyes model on `[1,1/q]×[qf/(1+q), f/(2q)]×[1,1/q]`.
pub fn field_noyes(p: FieldNoyesParams) -> Result<SystemModel> {
    p.validate()?;
    let bounds = Box3::new(
        [1.0, p.q * p.f / (1.0 + p.q), 1.0],
        [1.0 / p.q, p.f / (2.0 * p.q), 1.0 / p.q],
    )?;
    let mut m = SystemModel::new("field-noyes", Arc::new(FieldNoyes(p)), bounds)
        .with_certificate(field_noyes_pattern())?;
    m.params = BTreeMap::from([
        ("s".to_string(), p.s),
        ("q".to_string(), p.q),
        ("f".to_string(), p.f),
        ("w".to_string(), p.w),
    ]);
    if p.q >= 0.01 {
        m.warnings.push(format!(
            "q = {} is not small; the box and its invariance assume q << 1",
            p.q
        ));
    }
    m.kind = ModelKind::FieldNoyes(p);
    Ok(m)
}

/// `√((1-f-q)² + 4q(1+f))`, the discriminant root shared by the equilibrium
/// and `det J(e)`.
pub fn field_noyes_root(p: &FieldNoyesParams) -> f64 {
    let b = 1.0 - p.f - p.q;
    (b * b + 4.0 * p.q * (1.0 + p.f)).sqrt()
}

/// Positive equilibrium `e₁ = (1-f-q+√D)/(2q)`, `e₂ = e₁f/(1+e₁)`, `e₃ = e₁`.
pub fn field_noyes_equilibrium(p: &FieldNoyesParams) -> Vec3 {
    let b = 1.0 - p.f - p.q;
    let r = field_noyes_root(p);
    // e₁ is the positive root of q e² - b e - (1+f); use the form without
    // cancellation for either sign of b
    let e1 = if b >= 0.0 {
        (b + r) / (2.0 * p.q)
    } else {
        2.0 * (1.0 + p.f) / (r - b)
    };
    let e2 = e1 * p.f / (1.0 + e1);
    Vec3::new(e1, e2, e1)
}

/// `det J(e) = -w·e₁·√((1-f-q)² + 4q(1+f))`.
pub fn field_noyes_det_formula(p: &FieldNoyesParams) -> f64 {
    let e = field_noyes_equilibrium(p);
    -p.w * e[0] * field_noyes_root(p)
}

fn default_name() -> String {
    "custom".to_string()
}

/// JSON description of a model: either a built-in (`"builtin": "goodwin"` or
/// `"field-noyes"` with its parameters) or three right-hand sides in
/// `x1, x2, x3` with a parameter map and a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub equations: Option<Vec<String>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, rename = "box")]
    pub bounds: Option<Box3>,
    #[serde(default)]
    pub sign_certificate: Option<SignPattern>,
    #[serde(default)]
    pub signature: Option<[f64; 3]>,
}

fn param(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| Error::ModelSpec(format!("missing parameter '{key}'")))
}

/// Built-in model by name with parameters from a map.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemModel> {
    match name {
        "goodwin" => {
            let m = param(params, "m")?;
            if m.fract() != 0.0 || m < 1.0 || m > i32::MAX as f64 {
                return Err(Error::InvalidParams(format!("m must be a positive integer, got {m}")));
            }
            goodwin(GoodwinParams {
                alpha: param(params, "alpha")?,
                beta: param(params, "beta")?,
                gamma: param(params, "gamma")?,
                m: m as u32,
            })
        }
        "field-noyes" | "field_noyes" | "fn" => field_noyes(FieldNoyesParams {
            s: param(params, "s")?,
            q: param(params, "q")?,
            f: param(params, "f")?,
            w: param(params, "w")?,
        }),
        other => Err(Error::ModelSpec(format!(
            "unknown built-in model '{other}' (expected goodwin or field-noyes)"
        ))),
    }
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<SystemModel> {
        if let Some(name) = &self.builtin {
            if self.equations.is_some() || self.bounds.is_some() {
                return Err(Error::ModelSpec(
                    "a built-in model takes only parameters".into(),
                ));
            }
            return builtin(name, &self.params);
        }
        let eqs = self
            .equations
            .as_ref()
            .ok_or_else(|| Error::ModelSpec("need either 'builtin' or 'equations'".into()))?;
        let bounds = self
            .bounds
            .ok_or_else(|| Error::ModelSpec("custom models need a 'box'".into()))?;
        let bounds = Box3::new(bounds.lower, bounds.upper)?;
        let mut m = SystemModel::from_expressions(&self.name, eqs, self.params.clone(), bounds)?;
        if let Some(p) = &self.sign_certificate {
            m = m.with_certificate(p.clone())?;
        }
        if let Some(d) = self.signature {
            if d.iter().any(|v| v.abs() != 1.0) {
                return Err(Error::ModelSpec(format!("signature entries must be +1 or -1, got {d:?}")));
            }
            m = m.with_signature(Vec3::from(d));
        }
        Ok(m)
    }
}
