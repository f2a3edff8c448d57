//! Dense 3×3 linear algebra for the spectral side of the certificate.
//!
//! Characteristic polynomial, closed-form cubic roots with a Newton polish,
//! the Routh test for cubics, a scaling-and-squaring matrix exponential,
//! and the saddle classification of an unstable matrix with negative
//! determinant, together with a real block form
//!
//! ```text
//!            [ λ₃  0       0     ]
//! T⁻¹ A T =  [ 0   u₁      v₁/δ  ]
//!            [ 0   v₂·δ    u₂    ]
//! ```
//!
//! whose first column of `T` is the stable eigenvector.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signvar;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Zero-snapping tolerance applied to the unit stable eigenvector before its
/// sign pattern is read.
pub const ZETA_SNAP_TOL: f64 = 1e-10;
/// Relative discriminant below which the unstable pair is handled as defective.
pub const DEFECTIVE_TOL: f64 = 1e-8;
/// Largest accepted condition number of `T`.
pub const MAX_COND: f64 = 1e12;
/// Equality tolerance in the Routh test.
pub const ROUTH_TOL: f64 = 1e-12;

pub fn det3(a: &Mat3) -> f64 {
    a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
        - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
        + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
}

/// Monic cubic `s³ + c2·s² + c1·s + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharPoly3 {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CharPoly3 {
    pub fn new(c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0 }
    }

    /// Monic cubic with the given roots.
    pub fn from_roots(r: [Complex64; 3]) -> Self {
        let c2 = -(r[0] + r[1] + r[2]);
        let c1 = r[0] * r[1] + r[0] * r[2] + r[1] * r[2];
        let c0 = -(r[0] * r[1] * r[2]);
        Self::new(c2.re, c1.re, c0.re)
    }

    pub fn eval(&self, s: f64) -> f64 {
        ((s + self.c2) * s + self.c1) * s + self.c0
    }

    pub fn eval_c(&self, s: Complex64) -> Complex64 {
        ((s + self.c2) * s + self.c1) * s + self.c0
    }

    fn deriv_c(&self, s: Complex64) -> Complex64 {
        (3.0 * s + 2.0 * self.c2) * s + self.c1
    }

    /// Max-abs coefficient norm including the leading 1.
    pub fn norm(&self) -> f64 {
        1f64.max(self.c2.abs()).max(self.c1.abs()).max(self.c0.abs())
    }

    pub fn coeffs(&self) -> [f64; 3] {
        [self.c2, self.c1, self.c0]
    }
}

/// `det(sI - A)` from the trace, the principal 2×2 minors and the determinant.
pub fn charpoly3(a: &Mat3) -> CharPoly3 {
    let tr = a.trace();
    let m01 = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let m02 = a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)];
    let m12 = a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)];
    CharPoly3::new(-tr, m01 + m02 + m12, -det3(a))
}

/// Roots of a monic cubic.
///
/// One real root and a conjugate pair come back as `[r, z, conj(z)]` with
/// `z.im > 0`; three real roots come back sorted ascending with zero
/// imaginary parts.
pub fn cubic_roots(p: &CharPoly3) -> [Complex64; 3] {
    let (a, b, c) = (p.c2, p.c1, p.c0);
    let shift = a / 3.0;
    let pp = b - a * a / 3.0;
    let qq = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (qq / 2.0).powi(2) + (pp / 3.0).powi(3);

    let real_root = |t: f64| polish_real(p, t - shift);

    if disc > 0.0 {
        // one real root; pick the cube-root branch that avoids cancellation
        let sq = disc.sqrt();
        let w = -qq / 2.0 - qq.signum() * sq;
        let u = w.cbrt();
        let v = if u != 0.0 { -pp / (3.0 * u) } else { 0.0 };
        let r = real_root(u + v);
        // deflate: s³ + a s² + b s + c = (s - r)(s² + bq s + cq)
        let bq = a + r;
        let cq = if r.abs() > 1e-3 * (1.0 + a.abs()) {
            -c / r
        } else {
            b + r * bq
        };
        let re = -bq / 2.0;
        let d = cq - re * re;
        if d > 0.0 {
            let z = polish_complex(p, Complex64::new(re, d.sqrt()));
            let z = Complex64::new(z.re, z.im.abs());
            [Complex64::new(r, 0.0), z, z.conj()]
        } else {
            let h = (-d).sqrt();
            let mut rs = [r, polish_real(p, re - h), polish_real(p, re + h)];
            rs.sort_by(f64::total_cmp);
            rs.map(|x| Complex64::new(x, 0.0))
        }
    } else if pp == 0.0 {
        let r = real_root(0.0);
        [Complex64::new(r, 0.0); 3]
    } else {
        let m = 2.0 * (-pp / 3.0).sqrt();
        let arg = (3.0 * qq / (pp * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        let two_pi_3 = 2.0 * std::f64::consts::PI / 3.0;
        let mut rs = [0, 1, 2].map(|k| real_root(m * (theta - two_pi_3 * k as f64).cos()));
        rs.sort_by(f64::total_cmp);
        rs.map(|x| Complex64::new(x, 0.0))
    }
}

fn polish_real(p: &CharPoly3, x: f64) -> f64 {
    let z = polish_complex(p, Complex64::new(x, 0.0));
    z.re
}

// One Newton step, kept only if it reduces |p|.
fn polish_complex(p: &CharPoly3, z: Complex64) -> Complex64 {
    let fz = p.eval_c(z);
    let dz = p.deriv_c(z);
    if dz.norm() == 0.0 || fz.norm() == 0.0 {
        return z;
    }
    let cand = z - fz / dz;
    if cand.is_finite() && p.eval_c(cand).norm() < fz.norm() {
        cand
    } else {
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RouthVerdict {
    Hurwitz,
    Unstable,
    Marginal,
}

/// Routh test for a monic cubic: Hurwitz iff `c2 > 0`, `c0 > 0` and `c2·c1 > c0`.
pub fn routh_classify(p: &CharPoly3) -> RouthVerdict {
    let scale = p.norm();
    let margins = [p.c2, p.c0, p.c2 * p.c1 - p.c0];
    let scales = [scale, scale, scale * scale];
    if margins
        .iter()
        .zip(scales)
        .any(|(m, s)| m.abs() <= ROUTH_TOL * s)
    {
        return RouthVerdict::Marginal;
    }
    if margins.iter().all(|&m| m > 0.0) {
        RouthVerdict::Hurwitz
    } else {
        RouthVerdict::Unstable
    }
}

/// Matrix exponential by scaling and squaring around a truncated Taylor series.
pub fn expm3(a: &Mat3) -> Mat3 {
    let norm1 = (0..3)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm1 == 0.0 {
        return Mat3::identity();
    }
    // scale so that ‖A/2^s‖₁ ≤ 1/2; the degree-18 remainder is then < 1e-22
    let s = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = a / 2f64.powi(s);
    let mut term = Mat3::identity();
    let mut sum = Mat3::identity();
    for k in 1..=18 {
        term = term * b / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

/// Adjugate (transposed cofactor matrix).
fn adjugate<T>(m: &Matrix3<T>) -> Matrix3<T>
where
    T: nalgebra::Scalar + Copy + std::ops::Mul<Output = T> + std::ops::Sub<Output = T>,
{
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    // adj[i][j] = cofactor(j, i); signs folded into index order
    Matrix3::new(
        c(1, 2, 1, 2),
        c(0, 2, 2, 1),
        c(0, 1, 1, 2),
        c(1, 2, 2, 0),
        c(0, 2, 0, 2),
        c(0, 1, 2, 0),
        c(1, 2, 0, 1),
        c(0, 2, 1, 0),
        c(0, 1, 0, 1),
    )
}

/// Unit eigenvector for a simple real eigenvalue, from the adjugate column of
/// largest norm, oriented so its first nonzero entry is positive.
pub fn real_eigenvector(a: &Mat3, lambda: f64) -> Vec3 {
    let adj = adjugate(&(a - Mat3::identity() * lambda));
    let j = (0..3)
        .max_by(|&i, &k| adj.column(i).norm().total_cmp(&adj.column(k).norm()))
        .unwrap_or(0);
    let mut v: Vec3 = adj.column(j).into_owned();
    let n = v.norm();
    if n > 0.0 {
        v /= n;
    }
    if let Some(first) = v.iter().find(|x| x.abs() > ZETA_SNAP_TOL) {
        if *first < 0.0 {
            v = -v;
        }
    }
    v
}

/// The two eigenvalues with positive real part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnstablePair {
    Real { lo: f64, hi: f64 },
    Complex { re: f64, im: f64 },
}

impl UnstablePair {
    pub fn eigenvalues(&self) -> [Complex64; 2] {
        match *self {
            UnstablePair::Real { lo, hi } => [Complex64::new(lo, 0.0), Complex64::new(hi, 0.0)],
            UnstablePair::Complex { re, im } => [Complex64::new(re, im), Complex64::new(re, -im)],
        }
    }

    pub fn min_real_part(&self) -> f64 {
        match *self {
            UnstablePair::Real { lo, .. } => lo,
            UnstablePair::Complex { re, .. } => re,
        }
    }
}

/// Saddle spectrum: one negative real eigenvalue with eigenvector `zeta`
/// and an unstable pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spectrum3 {
    pub lambda_real: f64,
    pub pair: UnstablePair,
    pub zeta: [f64; 3],
}

impl Spectrum3 {
    pub fn zeta(&self) -> Vec3 {
        Vec3::from(self.zeta)
    }

    pub fn eigenvalues(&self) -> [Complex64; 3] {
        let [a, b] = self.pair.eigenvalues();
        [a, b, Complex64::new(self.lambda_real, 0.0)]
    }
}

/// Classifies an unstable 3×3 matrix with negative determinant whose linear
/// flow is strongly 2-positive: one negative real eigenvalue, an unstable
/// pair, and a stable eigenvector alternating in sign (`s⁻(ζ) = 2`).
///
/// Any property that fails comes back as [`Error::Lemma1Violation`] with
/// the offending numbers.
pub fn classify_lemma1(a: &Mat3) -> Result<Spectrum3> {
    let p = charpoly3(a);
    let verdict = routh_classify(&p);
    if verdict != RouthVerdict::Unstable {
        return Err(Error::Lemma1Violation(format!(
            "matrix is not unstable (Routh verdict {verdict:?}, charpoly {:?})",
            p.coeffs()
        )));
    }
    let det = det3(a);
    if det >= 0.0 {
        return Err(Error::Lemma1Violation(format!(
            "determinant {det:e} is not negative"
        )));
    }

    let roots = cubic_roots(&p);
    let (lambda_real, pair) = if roots[1].im > 0.0 {
        (
            roots[0].re,
            UnstablePair::Complex {
                re: roots[1].re,
                im: roots[1].im,
            },
        )
    } else {
        // ascending: the negative one must be first
        (
            roots[0].re,
            UnstablePair::Real {
                lo: roots[1].re,
                hi: roots[2].re,
            },
        )
    };
    if lambda_real >= 0.0 {
        return Err(Error::Lemma1Violation(format!(
            "no negative real eigenvalue among {roots:?}"
        )));
    }
    if pair.min_real_part() <= 0.0 {
        return Err(Error::Lemma1Violation(format!(
            "unstable pair {pair:?} does not have positive real parts"
        )));
    }

    let zeta = real_eigenvector(a, lambda_real);
    let anorm = a.norm();
    let resid = (a * zeta - zeta * lambda_real).norm();
    if resid > 1e-8 * anorm.max(f64::MIN_POSITIVE) {
        return Err(Error::Lemma1Violation(format!(
            "stable eigenvector residual {resid:e} exceeds 1e-8·‖A‖"
        )));
    }
    let snapped = signvar::snap(zeta.as_slice(), ZETA_SNAP_TOL);
    let sv = signvar::s_minus(&snapped);
    if sv != 2 || snapped.contains(&0.0) {
        return Err(Error::Lemma1Violation(format!(
            "stable eigenvector {:?} has s⁻ = {sv}, expected an alternating pattern",
            zeta.as_slice()
        )));
    }
    Ok(Spectrum3 {
        lambda_real,
        pair,
        zeta: zeta.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PairCase {
    RealPair,
    ComplexPair,
    DefectivePair,
}

/// Real block form of an unstable saddle matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockSchur3 {
    pub t: Mat3,
    pub lambda3: f64,
    pub u1: f64,
    pub u2: f64,
    pub v1: f64,
    pub v2: f64,
    pub delta: f64,
    pub case_tag: PairCase,
}

impl BlockSchur3 {
    /// The 3×3 block matrix `T⁻¹AT` is expected to equal.
    pub fn block(&self) -> Mat3 {
        Mat3::new(
            self.lambda3,
            0.0,
            0.0,
            0.0,
            self.u1,
            self.v1 / self.delta,
            0.0,
            self.v2 * self.delta,
            self.u2,
        )
    }

    /// Symmetric matrix of the quadratic form `(q₂,q₃) ↦ q₂q̇₂ + q₃q̇₃` of the
    /// linear part.
    pub fn quadratic_form(&self) -> Matrix2<f64> {
        let off = 0.5 * (self.v1 / self.delta + self.delta * self.v2);
        Matrix2::new(self.u1, off, off, self.u2)
    }

    /// Smallest eigenvalue of [`Self::quadratic_form`].
    pub fn kappa(&self) -> f64 {
        let q = self.quadratic_form();
        let mean = 0.5 * (q[(0, 0)] + q[(1, 1)]);
        let half_gap = (0.25 * (q[(0, 0)] - q[(1, 1)]).powi(2) + q[(0, 1)].powi(2)).sqrt();
        mean - half_gap
    }

    pub fn t_inverse(&self) -> Option<Mat3> {
        self.t.try_inverse()
    }
}

// Orthonormal basis of the column space of a rank-2 matrix.
fn range_basis(m: &Mat3) -> Result<(Vec3, Vec3)> {
    let cols: Vec<Vec3> = (0..3).map(|j| m.column(j).into_owned()).collect();
    let i0 = (0..3)
        .max_by(|&i, &k| cols[i].norm().total_cmp(&cols[k].norm()))
        .unwrap_or(0);
    let n0 = cols[i0].norm();
    if n0 == 0.0 {
        return Err(Error::Lemma1Violation("A - λ₃I vanishes".into()));
    }
    let q1 = cols[i0] / n0;
    let resid: Vec<Vec3> = cols.iter().map(|c| c - q1 * q1.dot(c)).collect();
    let i1 = (0..3)
        .filter(|&i| i != i0)
        .max_by(|&i, &k| resid[i].norm().total_cmp(&resid[k].norm()))
        .unwrap_or(0);
    let n1 = resid[i1].norm();
    if n1 <= 1e-14 * n0 {
        return Err(Error::Lemma1Violation(
            "unstable invariant subspace is degenerate".into(),
        ));
    }
    let q2 = resid[i1] / n1;
    // one reorthogonalization pass
    let q2 = (q2 - q1 * q1.dot(&q2)).normalize();
    Ok((q1, q2))
}

// Eigenvector of a 2×2 matrix for a (possibly complex) eigenvalue.
fn eigvec2(r: &Matrix2<f64>, lambda: Complex64) -> (Vector2<f64>, Vector2<f64>) {
    let c1 = [
        Complex64::new(r[(0, 1)], 0.0),
        lambda - r[(0, 0)],
    ];
    let c2 = [lambda - r[(1, 1)], Complex64::new(r[(1, 0)], 0.0)];
    let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
    let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
    let w = if n1 >= n2 { c1 } else { c2 };
    (
        Vector2::new(w[0].re, w[1].re),
        Vector2::new(w[0].im, w[1].im),
    )
}

/// Builds `T` with `T[:,0] = ζ` and the remaining columns spanning the
/// unstable invariant subspace, in one of three canonical forms:
///
/// * two distinct real eigenvalues: `v₁ = v₂ = 0`, `δ = 1`;
/// * a complex pair `u ± iv`: `u₁ = u₂`, `v₁/δ = -v₂δ`, `δ = 1`;
/// * a (near-)defective double eigenvalue `u`: `v₁ = 1`, `δ = 1/u`.
///
/// The reported `(u₁, u₂, v₁, v₂)` are read back from `T⁻¹AT`, so the block
/// form holds to rounding; in the near-defective case `v₂` carries the
/// residual coupling instead of being forced to zero.
pub fn block_schur3(a: &Mat3, spec: &Spectrum3) -> Result<BlockSchur3> {
    let zeta = spec.zeta();
    let (q1, q2) = range_basis(&(a - Mat3::identity() * spec.lambda_real))?;
    let w = nalgebra::Matrix3x2::from_columns(&[q1, q2]);
    let r: Matrix2<f64> = w.transpose() * a * w;

    let tr = r.trace();
    let det = r.determinant();
    let disc = tr * tr - 4.0 * det;
    let mean_mod2 = det.abs().max(tr * tr / 4.0);
    let n = r - Matrix2::identity() * (tr / 2.0);

    let (s, case_tag, delta) = if disc.abs() <= DEFECTIVE_TOL * mean_mod2 {
        let u = tr / 2.0;
        if u <= 0.0 {
            return Err(Error::Lemma1Violation(format!(
                "double eigenvalue {u:e} is not unstable"
            )));
        }
        if n.norm() <= 1e-12 * r.norm() {
            // semisimple double eigenvalue: already diagonal
            (Matrix2::identity(), PairCase::RealPair, 1.0)
        } else {
            let j = if n.column(0).norm() >= n.column(1).norm() { 0 } else { 1 };
            let mut w2 = Vector2::zeros();
            w2[j] = 1.0;
            let w1 = n * w2;
            let delta = 1.0 / u;
            let s = Matrix2::from_columns(&[w1, w2 / delta]);
            let scale = s.column(0).norm().max(s.column(1).norm());
            (s / scale, PairCase::DefectivePair, delta)
        }
    } else if disc > 0.0 {
        let h = disc.sqrt() / 2.0;
        let (lo, hi) = (tr / 2.0 - h, tr / 2.0 + h);
        let (e1, _) = eigvec2(&r, Complex64::new(lo, 0.0));
        let (e2, _) = eigvec2(&r, Complex64::new(hi, 0.0));
        (
            Matrix2::from_columns(&[e1.normalize(), e2.normalize()]),
            PairCase::RealPair,
            1.0,
        )
    } else {
        let lambda = Complex64::new(tr / 2.0, (-disc).sqrt() / 2.0);
        let (re, im) = eigvec2(&r, lambda);
        let s = Matrix2::from_columns(&[re, im]);
        let scale = re.norm().max(im.norm());
        (s / scale, PairCase::ComplexPair, 1.0)
    };

    let ws = w * s;
    let t = Mat3::from_columns(&[zeta, ws.column(0).into_owned(), ws.column(1).into_owned()]);
    let t_inv = t.try_inverse().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let cond = t.norm() * t_inv.norm();
    if !cond.is_finite() || cond > MAX_COND {
        return Err(Error::IllConditioned { cond });
    }
    let b = t_inv * a * t;
    let out = BlockSchur3 {
        t,
        lambda3: spec.lambda_real,
        u1: b[(1, 1)],
        u2: b[(2, 2)],
        v1: b[(1, 2)] * delta,
        v2: b[(2, 1)] / delta,
        delta,
        case_tag,
    };
    let resid = (b - out.block()).norm();
    if resid > 1e-8 * a.norm() {
        return Err(Error::Lemma1Violation(format!(
            "block form residual {resid:e} exceeds 1e-8·‖A‖"
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn goodwin_je() -> Mat3 {
        // Goodwin Jacobian at the equilibrium of alpha=0.5, beta=0.4, gamma=0.6, m=10
        let (a, b, g, m) = (0.5, 0.4, 0.6, 10);
        let abg: f64 = a * b * g;
        let mut lo = 0.0;
        let mut hi = 1.0 / abg;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if abg * mid.powi(m + 1) + abg * mid - 1.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let e3: f64 = 0.5 * (lo + hi);
        let k = m as f64 * e3.powi(m - 1) / (1.0 + e3.powi(m)).powi(2);
        Mat3::new(-a, 0.0, -k, 1.0, -b, 0.0, 0.0, 1.0, -g)
    }

    #[test]
    fn det_examples() {
        assert_eq!(det3(&Mat3::identity()), 1.0);
        let s = Mat3::new(1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(det3(&s), 0.0);
        let r = Mat3::new(2.0, -1.0, 0.5, 0.3, 4.0, 1.0, -2.0, 0.7, 3.0);
        assert_relative_eq!(det3(&r), r.determinant(), max_relative = 1e-14);
    }

    #[test]
    fn charpoly_examples() {
        let p = charpoly3(&goodwin_je());
        assert!((p.c2 - 1.5).abs() < 1e-3);
        assert!((p.c1 - 0.74).abs() < 1e-3);
        assert!((p.c0 - 1.1478).abs() < 1e-3);
        assert_eq!(charpoly3(&Mat3::zeros()).coeffs(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn charpoly_matches_determinant_at_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = Mat3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let p = charpoly3(&a);
            for s in [0.0, 1.0, -1.0] {
                let direct = det3(&(Mat3::identity() * s - a));
                assert!((p.eval(s) - direct).abs() < 1e-12 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn cubic_examples() {
        let r = cubic_roots(&CharPoly3::new(1.5, 0.74, 1.1478));
        assert!((r[0].re + 1.5125).abs() < 1e-3);
        assert!((r[1].re - 0.0062).abs() < 1e-3 && (r[1].im - 0.8711).abs() < 1e-3);
        assert_eq!(r[2], r[1].conj());

        let r = cubic_roots(&CharPoly3::new(0.0, 0.0, -1.0));
        assert!((r[0].re - 1.0).abs() < 1e-14);
        assert!((r[1].re + 0.5).abs() < 1e-14);
        assert!((r[1].im - 3f64.sqrt() / 2.0).abs() < 1e-14);

        let r = cubic_roots(&CharPoly3::new(-6.0, 11.0, -6.0));
        for (z, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((z.re - want).abs() < 1e-12 && z.im == 0.0);
        }
    }

    #[test]
    fn cubic_residuals_and_triple_root() {
        let p = CharPoly3::new(3.0, 3.0, 1.0);
        for z in cubic_roots(&p) {
            assert!((z.re + 1.0).abs() < 1e-5);
        }
        let p = CharPoly3::new(0.0, 0.0, 0.0);
        assert_eq!(cubic_roots(&p), [Complex64::new(0.0, 0.0); 3]);
    }

    fn match_multiset(got: [Complex64; 3], want: [Complex64; 3], tol: f64) -> bool {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        perms
            .iter()
            .any(|p| (0..3).all(|i| (got[i] - want[p[i]]).norm() <= tol))
    }

    #[test]
    fn cubic_random_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..1000 {
            let roots = if case % 2 == 0 {
                [0, 1, 2].map(|_| Complex64::new(rng.gen_range(-10.0..10.0), 0.0))
            } else {
                let r = rng.gen_range(-10.0..10.0);
                let z = Complex64::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
                [Complex64::new(r, 0.0), z, z.conj()]
            };
            let p = CharPoly3::from_roots(roots);
            let got = cubic_roots(&p);
            for z in got {
                assert!(p.eval_c(z).norm() <= 1e-9 * (1.0 + p.norm()) * (1.0 + z.norm()).powi(3));
            }
            assert!(
                match_multiset(got, roots, 1e-7),
                "case {case}: {roots:?} vs {got:?}"
            );
        }
    }

    #[test]
    fn routh_examples() {
        assert_eq!(routh_classify(&CharPoly3::new(1.5, 0.74, 1.1478)), RouthVerdict::Unstable);
        assert_eq!(
            routh_classify(&CharPoly3::new(1630.8886, -4.8311, 1.1722)),
            RouthVerdict::Unstable
        );
        assert_eq!(routh_classify(&CharPoly3::new(3.0, 3.0, 1.0)), RouthVerdict::Hurwitz);
        // s³ + s² + s + 1 has roots on the imaginary axis
        assert_eq!(routh_classify(&CharPoly3::new(1.0, 1.0, 1.0)), RouthVerdict::Marginal);
    }

    #[test]
    fn expm_examples() {
        assert_eq!(expm3(&Mat3::zeros()), Mat3::identity());
        let d = expm3(&Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0)));
        for (i, k) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert_relative_eq!(d[(i, i)], k.exp(), max_relative = 1e-13);
        }
        assert!(d[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn expm_liouville() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            // det of exp(A) cancels badly for large non-normal A, keep the oracle well-posed
            let scale = rng.gen_range(0.1..2.0);
            let a = Mat3::from_fn(|_, _| rng.gen_range(-scale..scale));
            let e = expm3(&a);
            let lhs = det3(&e);
            let rhs = a.trace().exp();
            assert!((lhs - rhs).abs() <= 1e-8 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn expm_against_eigendecomposition() {
        // A = P diag(l) P⁻¹ so exp(A) = P diag(e^l) P⁻¹
        let p = Mat3::new(1.0, 0.5, -0.2, 0.3, 2.0, 0.1, -0.4, 0.2, 1.5);
        let l = Vec3::new(-3.0, 0.5, 2.0);
        let pinv = p.try_inverse().unwrap();
        let a = p * Mat3::from_diagonal(&l) * pinv;
        let want = p * Mat3::from_diagonal(&l.map(f64::exp)) * pinv;
        assert!((expm3(&a) - want).norm() <= 1e-12 * want.norm());
    }

    #[test]
    fn expm_large_norm() {
        let p = Mat3::new(1.0, 0.5, -0.2, 0.3, 2.0, 0.1, -0.4, 0.2, 1.5);
        let pinv = p.try_inverse().unwrap();
        for l in [Vec3::new(-40.0, 10.0, 35.0), Vec3::new(-60.0, -20.0, 5.0)] {
            let a = p * Mat3::from_diagonal(&l) * pinv;
            assert!(a.norm() <= 100.0 * 3.0);
            let want = p * Mat3::from_diagonal(&l.map(f64::exp)) * pinv;
            let err = (expm3(&a) - want).norm() / want.norm();
            assert!(err <= 1e-10, "relative error {err:e}");
        }
        // rotation generator: exp is a rotation by the angle
        let w = 30.0;
        let a = Mat3::new(0.0, -w, 0.0, w, 0.0, 0.0, 0.0, 0.0, 0.0);
        let e = expm3(&a);
        assert!((e[(0, 0)] - w.cos()).abs() < 1e-10 && (e[(1, 0)] - w.sin()).abs() < 1e-10);
    }

    #[test]
    fn lemma1_goodwin() {
        let s = classify_lemma1(&goodwin_je()).unwrap();
        assert!((s.lambda_real + 1.5125).abs() < 1e-3);
        let want = [0.5999, -0.5393, 0.5910];
        for i in 0..3 {
            assert!((s.zeta[i] - want[i]).abs() < 1e-3, "{:?}", s.zeta);
        }
        match s.pair {
            UnstablePair::Complex { re, im } => {
                assert!((re - 0.0062).abs() < 1e-3 && (im - 0.8711).abs() < 1e-3)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lemma1_constructed_spectrum() {
        // block diag(-1, rotation-scaled 2x2 with eigenvalues 0.1 ± i), placed so that
        // the stable eigenvector alternates in sign
        let zeta = Vec3::new(1.0, -1.0, 1.0);
        let a1 = Vec3::new(1.0, 1.0, 0.0);
        let a2 = Vec3::new(0.0, 1.0, 1.0);
        let p = Mat3::from_columns(&[zeta, a1, a2]);
        let blk = Mat3::new(-1.0, 0.0, 0.0, 0.0, 0.1, 1.0, 0.0, -1.0, 0.1);
        let a = p * blk * p.try_inverse().unwrap();
        let s = classify_lemma1(&a).unwrap();
        assert!((s.lambda_real + 1.0).abs() < 1e-12);
        let z = s.zeta();
        assert!((z - zeta.normalize()).norm() < 1e-10);
        let b = block_schur3(&a, &s).unwrap();
        assert_eq!(b.case_tag, PairCase::ComplexPair);
        assert!((b.u1 - 0.1).abs() < 1e-10 && (b.u2 - 0.1).abs() < 1e-10);
    }

    #[test]
    fn lemma1_rejects_hurwitz() {
        let a = Mat3::from_diagonal(&Vec3::new(-1.0, -2.0, -3.0));
        assert!(matches!(classify_lemma1(&a), Err(Error::Lemma1Violation(_))));
    }

    #[test]
    fn lemma1_rejects_nonalternating_zeta() {
        // unstable with det < 0 but stable eigenvector e1 has s⁻ = 0
        let a = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 2.0));
        assert!(matches!(classify_lemma1(&a), Err(Error::Lemma1Violation(_))));
    }

    #[test]
    fn block_schur_goodwin() {
        let a = goodwin_je();
        let s = classify_lemma1(&a).unwrap();
        let b = block_schur3(&a, &s).unwrap();
        assert_eq!(b.case_tag, PairCase::ComplexPair);
        assert!((b.u1 - 0.0062).abs() < 1e-3 && (b.u2 - 0.0062).abs() < 1e-3);
        assert!((b.v1 / b.delta + b.v2 * b.delta).abs() < 1e-10);
        let tinv = b.t_inverse().unwrap();
        assert!((tinv * a * b.t - b.block()).norm() <= 1e-8 * a.norm());
        let e1 = tinv * s.zeta();
        assert!(e1[1].abs() < 1e-12 && e1[2].abs() < 1e-12);
        assert!(b.kappa() > 0.0);
    }

    #[test]
    fn block_schur_real_pair() {
        let a = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 2.0));
        let s = Spectrum3 {
            lambda_real: -1.0,
            pair: UnstablePair::Real { lo: 1.0, hi: 2.0 },
            zeta: [1.0, 0.0, 0.0],
        };
        let b = block_schur3(&a, &s).unwrap();
        assert_eq!(b.case_tag, PairCase::RealPair);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(b.t[(i, j)].abs() < 1e-14, "{}", b.t);
                }
            }
        }
        assert_eq!((b.u1, b.u2, b.v1, b.v2, b.delta), (1.0, 2.0, 0.0, 0.0, 1.0));
        assert_relative_eq!(b.kappa(), 1.0);
    }

    #[test]
    fn block_schur_defective() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let u = rng.gen_range(0.1..2.0);
            let l3 = -rng.gen_range(0.1..3.0);
            let p = Mat3::new(
                1.0,
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                -1.0,
                rng.gen_range(0.5..1.5),
                rng.gen_range(-0.5..0.5),
                1.0,
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.5..1.5),
            );
            let j = Mat3::new(l3, 0.0, 0.0, 0.0, u, 1.0, 0.0, 0.0, u);
            let a = p * j * p.try_inverse().unwrap();
            let zeta = p.column(0).normalize();
            let s = Spectrum3 {
                lambda_real: l3,
                pair: UnstablePair::Real { lo: u, hi: u },
                zeta: zeta.into(),
            };
            let b = block_schur3(&a, &s).unwrap();
            assert_eq!(b.case_tag, PairCase::DefectivePair);
            assert!(b.delta > 1.0 / (2.0 * u));
            assert!((b.v1 - 1.0).abs() < 1e-8, "v1 = {}", b.v1);
            assert!(b.v2.abs() < 1e-8);
            let tinv = b.t_inverse().unwrap();
            assert!((tinv * a * b.t - b.block()).norm() <= 1e-8 * a.norm());
            assert!(b.kappa() > 0.0);
        }
    }
}
