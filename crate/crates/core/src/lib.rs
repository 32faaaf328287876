//! Exact-arithmetic laboratory for a special flow over a Z₂ skew product of a
//! circle rotation, under a roof with logarithmic singularities.
//!
//! Rotation numbers are always rational representatives whose continued
//! fraction matches a digit schedule on a prescribed prefix; every geometric
//! object is a finite union of half-open arcs with rational endpoints, and
//! every inequality involving logarithms is decided with outward-rounded
//! enclosures.

pub mod birkhoff;
pub mod cf;
pub mod construction;
pub mod desk;
pub mod encl;
pub mod error;
pub mod flow;
pub mod logsum;
pub mod piecewise;
pub mod report;
pub mod roof;
pub mod skew;
pub mod suites;
pub mod torus;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub use encl::{Encl, Verdict};
pub use error::{LabError, Result};
pub use logsum::LogSum;

pub type Q = BigRational;

/// `n/d` as a rational.
pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: &BigInt) -> Q {
    Q::from_integer(n.clone())
}

/// Exact fraction string `p/q` (always with a denominator).
pub fn fmt_q(r: &Q) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn parse_q(s: &str) -> Result<Q> {
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| LabError::Parse(format!("bad fraction {:?}", s)))?;
    let d: BigInt = d.parse().map_err(|_| LabError::Parse(format!("bad fraction {:?}", s)))?;
    if d.is_zero() {
        return Err(LabError::Parse(format!("zero denominator in {:?}", s)));
    }
    Ok(Q::new(n, d))
}

/// Representative of `r` in `[0,1)`.
pub fn frac(r: &Q) -> Q {
    r - Q::from_integer(r.floor().to_integer())
}

/// Distance from `r` to the nearest integer.
pub fn norm(r: &Q) -> Q {
    let f = frac(r);
    let g = Q::one() - &f;
    if f <= g { f } else { g }
}

pub(crate) fn half() -> Q {
    q(1, 2)
}
