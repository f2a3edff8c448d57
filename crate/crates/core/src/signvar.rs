//! Sign-variation counts on real vectors and the cones they define.
//!
//! An entry counts as zero only when it is bit-exactly `0.0`. Values coming
//! out of a numerical computation should go through [`snap`] first, with a
//! tolerance chosen by the caller.

use serde::Serialize;

use crate::error::{Error, Result};

/// Default magnitude below which [`snap`] treats an entry as zero.
pub const DEFAULT_SNAP_TOL: f64 = 1e-12;

/// Largest dimension accepted by [`s_plus`], whose cost is `2^zeros`.
pub const MAX_S_PLUS_DIM: usize = 24;

/// Returns a copy of `x` with every entry of magnitude `<= tol` replaced by `0.0`.
pub fn snap(x: &[f64], tol: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| if v.abs() <= tol { 0.0 } else { v })
        .collect()
}

fn count_changes<I: IntoIterator<Item = f64>>(it: I) -> usize {
    let mut prev: Option<bool> = None;
    let mut changes = 0;
    for v in it {
        let neg = v < 0.0;
        if let Some(p) = prev {
            if p != neg {
                changes += 1;
            }
        }
        prev = Some(neg);
    }
    changes
}

/// Number of sign changes between adjacent entries of a vector with no zeros.
pub fn sigma(x: &[f64]) -> Result<usize> {
    if let Some(i) = x.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroEntry { index: i });
    }
    Ok(count_changes(x.iter().copied()))
}

/// `s⁻`: sign changes after deleting zero entries. The zero vector gives 0.
pub fn s_minus(x: &[f64]) -> usize {
    count_changes(x.iter().copied().filter(|&v| v != 0.0))
}

/// `s⁺`: maximum sign changes over every ±1 substitution of the zero entries.
/// The zero vector gives `n - 1`.
///
/// Exhaustive over `2^z` substitutions, `z` the number of zeros.
///
/// # Panics
///
/// If `x` has more than [`MAX_S_PLUS_DIM`] zero entries.
pub fn s_plus(x: &[f64]) -> usize {
    let n = x.len();
    if n == 0 {
        return 0;
    }
    let zeros: Vec<usize> = (0..n).filter(|&i| x[i] == 0.0).collect();
    if zeros.is_empty() {
        return count_changes(x.iter().copied());
    }
    if zeros.len() == n {
        return n - 1;
    }
    assert!(
        zeros.len() <= MAX_S_PLUS_DIM,
        "s_plus: {} zero entries is too many for exhaustive substitution",
        zeros.len()
    );
    let mut buf = x.to_vec();
    let mut best = 0;
    for mask in 0u64..(1u64 << zeros.len()) {
        for (bit, &i) in zeros.iter().enumerate() {
            buf[i] = if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
        }
        best = best.max(count_changes(buf.iter().copied()));
        if best == n - 1 {
            break;
        }
    }
    best
}

/// Membership of a vector in `P^k₋` (closed) and `P^k₊` (its interior).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConeMembership {
    pub k: usize,
    pub in_p_minus: bool,
    pub in_p_plus: bool,
}

/// Tests `x` against the cones of vectors with at most `k - 1` sign variations.
pub fn cone_membership(x: &[f64], k: usize) -> Result<ConeMembership> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::RankOutOfRange { k, n });
    }
    Ok(ConeMembership {
        k,
        in_p_minus: s_minus(x) < k,
        in_p_plus: s_plus(x) < k,
    })
}
