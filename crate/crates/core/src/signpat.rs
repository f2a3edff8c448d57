//! Qualitative (sign-pattern) matrix analysis.
//!
//! Covers conformance of a numeric matrix to a [`SignPattern`], the
//! 2-positivity pattern `Ā₂`, the Metzler test, irreducibility, and a
//! numerical witness for strong 2-positivity through the 2×2 minors of
//! `exp(A)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Dim, Matrix, Matrix3, Storage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat3;

/// Default tolerance for conformance of sampled numerical matrices.
pub const SAMPLED_TOL: f64 = 1e-12;

/// One cell of a sign pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Any,
    Zero,
    NonNeg,
    NonPos,
}

impl Sign {
    pub fn admits(self, a: f64, tol: f64) -> bool {
        match self {
            Sign::Any => true,
            Sign::Zero => a.abs() <= tol,
            Sign::NonNeg => a >= -tol,
            Sign::NonPos => a <= tol,
        }
    }

    /// Symbol seen after multiplying the entry by `-1`.
    pub fn negated(self) -> Sign {
        match self {
            Sign::NonNeg => Sign::NonPos,
            Sign::NonPos => Sign::NonNeg,
            s => s,
        }
    }

    /// True when every value admitted by `self` is admitted by `other`.
    pub fn implies(self, other: Sign) -> bool {
        match other {
            Sign::Any => true,
            Sign::Zero => self == Sign::Zero,
            Sign::NonNeg => matches!(self, Sign::Zero | Sign::NonNeg),
            Sign::NonPos => matches!(self, Sign::Zero | Sign::NonPos),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Any => "*",
            Sign::Zero => "0",
            Sign::NonNeg => ">=0",
            Sign::NonPos => "<=0",
        })
    }
}

impl FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "*" | "any" => Ok(Sign::Any),
            "0" | "zero" => Ok(Sign::Zero),
            ">=0" | ">0" | "+" | "nonneg" => Ok(Sign::NonNeg),
            "<=0" | "<0" | "-" | "nonpos" => Ok(Sign::NonPos),
            other => Err(Error::ModelSpec(format!("unknown sign symbol '{other}'"))),
        }
    }
}

/// Square grid of [`Sign`] symbols, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPattern {
    n: usize,
    cells: Vec<Sign>,
}

impl SignPattern {
    pub fn filled(n: usize, sign: Sign) -> Self {
        Self {
            n,
            cells: vec![sign; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Sign>>) -> Result<Self> {
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            cells.extend(row);
        }
        Ok(Self { n, cells })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Sign {
        self.cells[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, s: Sign) {
        self.cells[i * self.n + j] = s;
    }

    pub fn rows(&self) -> Vec<Vec<Sign>> {
        self.cells.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// Pattern of `D A D` for `A` with this pattern and `D = diag(signature)`.
    pub fn with_signature(&self, signature: &[f64]) -> Result<Self> {
        if signature.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: signature.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if signature[i] * signature[j] < 0.0 {
                    out.set(i, j, self.get(i, j).negated());
                }
            }
        }
        Ok(out)
    }

    /// True when every matrix with pattern `self` also has pattern `other`.
    pub fn is_subpattern_of(&self, other: &SignPattern) -> bool {
        self.n == other.n
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.implies(*b))
    }
}

impl Serialize for SignPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<String>> = self
            .rows()
            .into_iter()
            .map(|r| r.into_iter().map(|c| c.to_string()).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SignPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<String>> = Vec::deserialize(d)?;
        let rows = rows
            .into_iter()
            .map(|r| r.iter().map(|c| c.parse::<Sign>()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        SignPattern::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.n) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>3}")).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        Ok(())
    }
}

/// The 2-positivity pattern: `*` diagonal, `>= 0` on the sub- and
/// super-diagonal, `<= 0` in the corners `(1,n)` and `(n,1)`, zero elsewhere.
pub fn pattern_a2(n: usize) -> Result<SignPattern> {
    if n < 3 {
        return Err(Error::PatternTooSmall(n));
    }
    let mut p = SignPattern::filled(n, Sign::Zero);
    for i in 0..n {
        p.set(i, i, Sign::Any);
        if i + 1 < n {
            p.set(i, i + 1, Sign::NonNeg);
            p.set(i + 1, i, Sign::NonNeg);
        }
    }
    p.set(0, n - 1, Sign::NonPos);
    p.set(n - 1, 0, Sign::NonPos);
    Ok(p)
}

/// Searches the diagonal ±1 similarity transforms for one carrying `pattern`
/// into `Ā₂`. `D` and `-D` act identically, so the returned signature always
/// starts with `+1`.
pub fn find_a2_signature(pattern: &SignPattern) -> Result<Option<Vec<f64>>> {
    let n = pattern.dim();
    let target = pattern_a2(n)?;
    for mask in 0u64..(1u64 << (n - 1)) {
        let d: Vec<f64> = (0..n)
            .map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        if pattern.with_signature(&d)?.is_subpattern_of(&target) {
            return Ok(Some(d));
        }
    }
    Ok(None)
}

/// Checks every entry of `a` against its symbol in `p`, up to `tol`.
pub fn conforms<R: Dim, C: Dim, S: Storage<f64, R, C>>(
    a: &Matrix<f64, R, C, S>,
    p: &SignPattern,
    tol: f64,
) -> Result<bool> {
    let n = p.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.nrows().max(a.ncols()),
        });
    }
    for i in 0..n {
        for j in 0..n {
            if !p.get(i, j).admits(a[(i, j)], tol) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// All off-diagonal entries `>= -tol`.
pub fn is_metzler<R: Dim, C: Dim, S: Storage<f64, R, C>>(a: &Matrix<f64, R, C, S>, tol: f64) -> bool {
    let n = a.nrows().min(a.ncols());
    (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] >= -tol))
}

/// Strong connectivity of the digraph with an edge `i -> j` whenever
/// `|a_ij| > tol`, `i != j`.
pub fn is_irreducible<R: Dim, C: Dim, S: Storage<f64, R, C>>(a: &Matrix<f64, R, C, S>, tol: f64) -> bool {
    let n = a.nrows().min(a.ncols());
    if n <= 1 {
        return true;
    }
    let edge = |i: usize, j: usize| i != j && a[(i, j)].abs() > tol;
    // everything reachable from 0, and 0 reachable from everything
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let e = if forward { edge(u, v) } else { edge(v, u) };
                if e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// The nine 2×2 minors of a 3×3 matrix, rows `(i1<i2)` by columns `(j1<j2)`
/// in lexicographic order.
pub fn minors2(m: &Matrix3<f64>) -> [f64; 9] {
    const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
    let mut out = [0.0; 9];
    for (r, &(i1, i2)) in PAIRS.iter().enumerate() {
        for (c, &(j1, j2)) in PAIRS.iter().enumerate() {
            out[3 * r + c] = m[(i1, j1)] * m[(i2, j2)] - m[(i1, j2)] * m[(i2, j1)];
        }
    }
    out
}

/// Whether all nine 2×2 minors of `exp(A)` are strictly positive.
pub fn verify_strong_2positive_minors(a: &Matrix3<f64>) -> bool {
    minors2(&mat3::expm3(a)).iter().all(|&m| m > 0.0)
}
