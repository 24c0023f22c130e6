//! Exact rational helpers.

use num::{BigInt, BigRational, One, Signed, Zero};

/// Arbitrary-precision rational used for every cost value.
pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// `2^{-e}`.
pub fn pow2_neg(e: u32) -> Q {
    Q::new(BigInt::one(), BigInt::one() << e as usize)
}

/// `2^{e}`.
pub fn pow2(e: u32) -> Q {
    Q::from_integer(BigInt::one() << e as usize)
}

/// Renders as `p/q`, always with an explicit denominator.
pub fn fmt_q(v: &Q) -> String {
    format!("{}/{}", v.numer(), v.denom())
}

/// Accepts `p/q` or a bare integer.
pub fn parse_q(tok: &str) -> Option<Q> {
    let (n, d) = match tok.split_once('/') {
        Some((n, d)) => (
            n.trim().parse::<BigInt>().ok()?,
            d.trim().parse::<BigInt>().ok()?,
        ),
        None => (tok.trim().parse::<BigInt>().ok()?, BigInt::one()),
    };
    if d.is_zero() {
        return None;
    }
    Some(Q::new(n, d))
}

pub fn is_nonneg(v: &Q) -> bool {
    !v.is_negative()
}

/// Least `n ≥ 0` with `2^{-n} < bound`; `bound` must be positive.
pub fn least_pow2_below(bound: &Q) -> u32 {
    let mut n = 0;
    while pow2_neg(n) >= *bound {
        n += 1;
    }
    n
}

/// `⌈-log₂ ε⌉` for positive `ε` (0 when `ε ≥ 1`).
pub fn ceil_neg_log2(eps: &Q) -> u32 {
    let mut n = 0;
    while pow2_neg(n) > *eps {
        n += 1;
    }
    n
}
