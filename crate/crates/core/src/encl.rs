//! Dyadic interval enclosures with outward rounding.
//!
//! An [`Encl`] at precision `p` is the closed interval `[lo, hi] * 2^-p` with
//! integer `lo <= hi`. Every operation rounds the lower end down and the upper
//! end up, so the true value always stays inside.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering as AtomicOrdering};
use std::sync::Mutex;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use once_cell::sync::Lazy;

use crate::error::{LabError, Result};

pub const DEFAULT_PRECISION: u32 = 128;
pub const PRECISION_CAP: u32 = 4096;

static CEILING: AtomicU32 = AtomicU32::new(PRECISION_CAP);

/// Process-wide ceiling for precision escalation, clamped to `[64, PRECISION_CAP]`.
pub fn set_precision_ceiling(bits: u32) {
    CEILING.store(bits.clamp(64, PRECISION_CAP), AtomicOrdering::Relaxed);
}

pub fn precision_ceiling() -> u32 {
    CEILING.load(AtomicOrdering::Relaxed)
}

const GUARD_BITS: u32 = 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encl {
    lo: BigInt,
    hi: BigInt,
    prec: u32,
}

fn floor_div(a: &BigInt, b: &BigInt) -> BigInt {
    a.div_floor(b)
}

fn ceil_div(a: &BigInt, b: &BigInt) -> BigInt {
    -((-a).div_floor(b))
}

fn floor_shr(a: &BigInt, k: u32) -> BigInt {
    if k == 0 {
        return a.clone();
    }
    floor_div(a, &(BigInt::one() << k))
}

fn ceil_shr(a: &BigInt, k: u32) -> BigInt {
    if k == 0 {
        return a.clone();
    }
    ceil_div(a, &(BigInt::one() << k))
}

impl Encl {
    pub fn zero(prec: u32) -> Self {
        Encl { lo: BigInt::zero(), hi: BigInt::zero(), prec }
    }

    pub fn from_int(n: &BigInt, prec: u32) -> Self {
        let v = n << prec;
        Encl { lo: v.clone(), hi: v, prec }
    }

    pub fn from_i64(n: i64, prec: u32) -> Self {
        Self::from_int(&BigInt::from(n), prec)
    }

    /// Encloses `num / den` (den nonzero).
    pub fn from_frac(num: &BigInt, den: &BigInt, prec: u32) -> Self {
        let (num, den) = if den.is_negative() { (-num, -den) } else { (num.clone(), den.clone()) };
        let scaled = num << prec;
        let (q, r) = scaled.div_mod_floor(&den);
        let hi = if r.is_zero() { q.clone() } else { &q + 1 };
        Encl { lo: q, hi, prec }
    }

    pub fn from_ratio(r: &BigRational, prec: u32) -> Self {
        Self::from_frac(r.numer(), r.denom(), prec)
    }

    /// Raw fixed-point bounds `lo·2^-prec ≤ v ≤ hi·2^-prec`.
    pub fn from_bounds(lo: BigInt, hi: BigInt, prec: u32) -> Self {
        assert!(lo <= hi, "inverted enclosure");
        Encl { lo, hi, prec }
    }

    pub fn raw(&self) -> (&BigInt, &BigInt) {
        (&self.lo, &self.hi)
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn lo_ratio(&self) -> BigRational {
        BigRational::new(self.lo.clone(), BigInt::one() << self.prec)
    }

    pub fn hi_ratio(&self) -> BigRational {
        BigRational::new(self.hi.clone(), BigInt::one() << self.prec)
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    /// Upper bound on the width, in units of 2^-prec.
    pub fn width_ulps(&self) -> BigInt {
        &self.hi - &self.lo
    }

    pub fn contains(&self, r: &BigRational) -> bool {
        let lo = self.lo_ratio();
        let hi = self.hi_ratio();
        &lo <= r && r <= &hi
    }

    /// Strict sign when the enclosure decides it; `Some(Equal)` only for the exact zero.
    pub fn sign(&self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        if self.lo.is_positive() {
            Some(Greater)
        } else if self.hi.is_negative() {
            Some(Less)
        } else if self.lo.is_zero() && self.hi.is_zero() {
            Some(Equal)
        } else {
            None
        }
    }

    /// `Some(true)` if certainly >= 0, `Some(false)` if certainly < 0.
    pub fn nonneg(&self) -> Option<bool> {
        if !self.lo.is_negative() {
            Some(true)
        } else if self.hi.is_negative() {
            Some(false)
        } else {
            None
        }
    }

    fn align(&self, other: &Encl) -> (Encl, Encl) {
        use std::cmp::Ordering::*;
        match self.prec.cmp(&other.prec) {
            Equal => (self.clone(), other.clone()),
            Less => (self.raise(other.prec), other.clone()),
            Greater => (self.clone(), other.raise(self.prec)),
        }
    }

    fn raise(&self, prec: u32) -> Encl {
        let k = prec - self.prec;
        Encl { lo: &self.lo << k, hi: &self.hi << k, prec }
    }

    /// Rounds outward to a lower precision.
    pub fn round_to(&self, prec: u32) -> Encl {
        if prec >= self.prec {
            return self.raise(prec);
        }
        let k = self.prec - prec;
        Encl { lo: floor_shr(&self.lo, k), hi: ceil_shr(&self.hi, k), prec }
    }

    pub fn add(&self, other: &Encl) -> Encl {
        let (a, b) = self.align(other);
        Encl { lo: a.lo + b.lo, hi: a.hi + b.hi, prec: a.prec }
    }

    pub fn sub(&self, other: &Encl) -> Encl {
        let (a, b) = self.align(other);
        Encl { lo: a.lo - b.hi, hi: a.hi - b.lo, prec: a.prec }
    }

    pub fn neg(&self) -> Encl {
        Encl { lo: -&self.hi, hi: -&self.lo, prec: self.prec }
    }

    pub fn add_assign(&mut self, other: &Encl) {
        if self.prec == other.prec {
            self.lo += &other.lo;
            self.hi += &other.hi;
        } else {
            *self = self.add(other);
        }
    }

    pub fn mul(&self, other: &Encl) -> Encl {
        let (a, b) = self.align(other);
        let cands = [&a.lo * &b.lo, &a.lo * &b.hi, &a.hi * &b.lo, &a.hi * &b.hi];
        let mn = cands.iter().min().unwrap();
        let mx = cands.iter().max().unwrap();
        Encl { lo: floor_shr(mn, a.prec), hi: ceil_shr(mx, a.prec), prec: a.prec }
    }

    pub fn mul_int(&self, k: &BigInt) -> Encl {
        if k.is_negative() {
            Encl { lo: &self.hi * k, hi: &self.lo * k, prec: self.prec }
        } else {
            Encl { lo: &self.lo * k, hi: &self.hi * k, prec: self.prec }
        }
    }

    pub fn mul_ratio(&self, r: &BigRational) -> Encl {
        let t = self.mul_int(r.numer());
        let d = r.denom();
        Encl { lo: floor_div(&t.lo, d), hi: ceil_div(&t.hi, d), prec: self.prec }
    }

    /// Absolute value.
    pub fn abs(&self) -> Encl {
        if !self.lo.is_negative() {
            self.clone()
        } else if !self.hi.is_positive() {
            self.neg()
        } else {
            let m = if -&self.lo > self.hi { -&self.lo } else { self.hi.clone() };
            Encl { lo: BigInt::zero(), hi: m, prec: self.prec }
        }
    }

    /// Upper end of `|self|` as an enclosure-free bound, scaled like `self`.
    pub fn abs_upper(&self) -> BigRational {
        self.abs().hi_ratio()
    }

    pub fn max_upper(&self, other: &Encl) -> Encl {
        let (a, b) = self.align(other);
        Encl {
            lo: if a.lo > b.lo { a.lo } else { b.lo },
            hi: if a.hi > b.hi { a.hi } else { b.hi },
            prec: a.prec,
        }
    }

    /// Enclosure of `min(self, other)`.
    pub fn min(&self, other: &Encl) -> Encl {
        let (a, b) = self.align(other);
        Encl {
            lo: if a.lo < b.lo { a.lo } else { b.lo },
            hi: if a.hi < b.hi { a.hi } else { b.hi },
            prec: a.prec,
        }
    }

    /// Natural log of a positive rational.
    pub fn ln(r: &BigRational, prec: u32) -> Result<Encl> {
        if !r.is_positive() {
            return Err(LabError::SingularPoint(format!("log of nonpositive {}", r)));
        }
        Ok(ln_frac(r.numer(), r.denom(), prec))
    }

    pub fn ln_int(n: &BigInt, prec: u32) -> Result<Encl> {
        Self::ln(&BigRational::from_integer(n.clone()), prec)
    }

    pub fn ln2(prec: u32) -> Encl {
        let w = prec + GUARD_BITS;
        let (lo, hi) = ln2_fixed(w);
        Encl { lo, hi, prec: w }.round_to(prec)
    }

    pub fn to_f64(&self) -> f64 {
        let mid = BigRational::new(&self.lo + &self.hi, BigInt::from(2) << self.prec);
        ratio_to_f64(&mid)
    }

    /// Midpoint rendered with `digits` significant decimals.
    pub fn to_decimal(&self, digits: usize) -> String {
        let mid = BigRational::new(&self.lo + &self.hi, BigInt::from(2) << self.prec);
        ratio_to_decimal(&mid, digits)
    }
}

impl fmt::Display for Encl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", ratio_to_decimal(&self.lo_ratio(), 12), ratio_to_decimal(&self.hi_ratio(), 12))
    }
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    // Scale to keep 64 significant bits before converting.
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift = 64 - (nb - db);
    let scaled = if shift >= 0 {
        (r.numer() << (shift as usize)) / r.denom()
    } else {
        r.numer() / (r.denom() << ((-shift) as usize))
    };
    scaled.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-(shift as i32))
}

/// Decimal rendering of a rational, rounded to `digits` significant digits
/// (fixed notation for moderate magnitudes, scientific otherwise).
pub fn ratio_to_decimal(r: &BigRational, digits: usize) -> String {
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let a = r.abs();
    // exponent e with 10^e <= a < 10^(e+1)
    let mut e: i64 = (a.numer().to_string().len() as i64) - (a.denom().to_string().len() as i64);
    let ten = BigRational::from_integer(BigInt::from(10));
    let pow = |k: i64| -> BigRational {
        if k >= 0 {
            num_traits::pow(ten.clone(), k as usize)
        } else {
            num_traits::pow(ten.clone(), (-k) as usize).recip()
        }
    };
    while a < pow(e) {
        e -= 1;
    }
    while a >= pow(e + 1) {
        e += 1;
    }
    let scale = digits as i64 - 1 - e;
    let scaled = &a * pow(scale);
    let mut m = (scaled + BigRational::new(BigInt::one(), BigInt::from(2))).floor().to_integer();
    let mut s = m.to_string();
    let mut e = e;
    if s.len() > digits {
        m /= 10;
        e += 1;
        s = m.to_string();
    }
    let body = if (-6..=15).contains(&e) {
        if e >= 0 {
            let e = e as usize;
            if s.len() > e + 1 {
                let (i, f) = s.split_at(e + 1);
                let f = f.trim_end_matches('0');
                if f.is_empty() { i.to_string() } else { format!("{}.{}", i, f) }
            } else {
                format!("{}{}", s, "0".repeat(e + 1 - s.len()))
            }
        } else {
            let f = format!("{}{}", "0".repeat((-e - 1) as usize), s);
            format!("0.{}", f.trim_end_matches('0'))
        }
    } else {
        let (i, f) = s.split_at(1);
        let f = f.trim_end_matches('0');
        if f.is_empty() { format!("{}e{}", i, e) } else { format!("{}.{}e{}", i, f, e) }
    };
    if neg { format!("-{}", body) } else { body }
}

/// Fixed-point enclosure of `atanh(num/den)` for `0 <= num/den <= 1/3`, scaled by 2^w.
fn atanh_fixed(num: &BigInt, den: &BigInt, w: u32) -> (BigInt, BigInt) {
    if num.is_zero() {
        return (BigInt::zero(), BigInt::zero());
    }
    let scaled = num << w;
    let zl = floor_div(&scaled, den);
    let zh = ceil_div(&scaled, den);
    let z2l = floor_shr(&(&zl * &zl), w);
    let z2h = ceil_shr(&(&zh * &zh), w);
    let mut pl = zl;
    let mut ph = zh;
    let mut sl = BigInt::zero();
    let mut sh = BigInt::zero();
    let mut k: u64 = 0;
    let one = BigInt::one();
    loop {
        let d = BigInt::from(2 * k + 1);
        sl += floor_div(&pl, &d);
        sh += ceil_div(&ph, &d);
        pl = floor_shr(&(&pl * &z2l), w);
        ph = ceil_shr(&(&ph * &z2h), w);
        k += 1;
        if ph <= one {
            // remaining tail is at most z^(2k+1) / (1 - z^2) <= 2 ulps for z <= 1/3
            sh += 2;
            break;
        }
    }
    (sl, sh)
}

static LN2_CACHE: Lazy<Mutex<HashMap<u32, (BigInt, BigInt)>>> = Lazy::new(|| Mutex::new(HashMap::new()));

fn ln2_fixed(w: u32) -> (BigInt, BigInt) {
    if let Some(v) = LN2_CACHE.lock().unwrap().get(&w) {
        return v.clone();
    }
    let (l, h) = atanh_fixed(&BigInt::one(), &BigInt::from(3), w);
    let v = (l * 2, h * 2);
    LN2_CACHE.lock().unwrap().insert(w, v.clone());
    v
}

fn ln_frac(n: &BigInt, d: &BigInt, prec: u32) -> Encl {
    let w = prec + GUARD_BITS;
    let mut e: i64 = n.bits() as i64 - d.bits() as i64;
    let (mut nn, mut dd) = if e >= 0 {
        (n.clone(), d << (e as usize))
    } else {
        (n << ((-e) as usize), d.clone())
    };
    // bring m = nn/dd into [3/4, 3/2)
    if &nn * 4 < &dd * 3 {
        nn <<= 1;
        e -= 1;
    } else if &nn * 2 >= &dd * 3 {
        dd <<= 1;
        e += 1;
    }
    let sum = &nn + &dd;
    let (ml, mh) = if nn >= dd {
        let (l, h) = atanh_fixed(&(&nn - &dd), &sum, w);
        (l * BigInt::from(2), h * BigInt::from(2))
    } else {
        let (l, h) = atanh_fixed(&(&dd - &nn), &sum, w);
        (-(h * BigInt::from(2)), -(l * BigInt::from(2)))
    };
    let (l2l, l2h) = ln2_fixed(w);
    let eb = BigInt::from(e);
    let (el, eh) = if e >= 0 { (&l2l * &eb, &l2h * &eb) } else { (&l2h * &eb, &l2l * &eb) };
    Encl { lo: ml + el, hi: mh + eh, prec: w }.round_to(prec)
}

/// Outcome of a sign decision under precision escalation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Undecided,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Verdict {
        if b { Verdict::Pass } else { Verdict::Fail }
    }

    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Undecided, _) | (_, Undecided) => Undecided,
            _ => Pass,
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Undecided => "undecided",
        };
        f.write_str(s)
    }
}

/// Evaluates a margin at increasing precision until its sign is decided.
/// Passing means margin >= 0.
pub fn decide_nonneg<F>(start: u32, cap: u32, mut margin: F) -> Result<(Verdict, Encl)>
where
    F: FnMut(u32) -> Result<Encl>,
{
    let cap = cap.min(precision_ceiling());
    let mut p = start.max(64).min(cap);
    loop {
        let m = margin(p)?;
        match m.nonneg() {
            Some(true) => return Ok((Verdict::Pass, m)),
            Some(false) => return Ok((Verdict::Fail, m)),
            None if p >= cap => return Ok((Verdict::Undecided, m)),
            None => p = (p * 2).min(cap),
        }
    }
}

/// Same as [`decide_nonneg`] but requires a strictly positive margin.
pub fn decide_positive<F>(start: u32, cap: u32, mut margin: F) -> Result<(Verdict, Encl)>
where
    F: FnMut(u32) -> Result<Encl>,
{
    let cap = cap.min(precision_ceiling());
    let mut p = start.max(64).min(cap);
    loop {
        let m = margin(p)?;
        match m.sign() {
            Some(std::cmp::Ordering::Greater) => return Ok((Verdict::Pass, m)),
            Some(_) => return Ok((Verdict::Fail, m)),
            None if p >= cap => return Ok((Verdict::Undecided, m)),
            None => p = (p * 2).min(cap),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn floor_shift_of_negative_rounds_down() {
        assert_eq!(floor_shr(&BigInt::from(-3), 1), BigInt::from(-2));
        assert_eq!(ceil_shr(&BigInt::from(-3), 1), BigInt::from(-1));
        assert_eq!(ceil_shr(&BigInt::from(3), 1), BigInt::from(2));
    }

    #[test]
    fn ln2_matches_f64() {
        let e = Encl::ln2(128);
        assert!((e.to_f64() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(e.width_ulps() <= BigInt::from(4));
    }

    #[test]
    fn ln_encloses_known_values() {
        for (n, d) in [(1, 1), (2, 1), (10, 1), (1, 7), (355, 113), (3, 4), (1, 1000000)] {
            let e = Encl::ln(&q(n, d), 128).unwrap();
            let f = (n as f64 / d as f64).ln();
            assert!((e.to_f64() - f).abs() < 1e-12, "{} {}", n, d);
            assert!(e.width_ulps() <= BigInt::from(16));
        }
        assert!(Encl::ln(&q(1, 1), 128).unwrap().contains(&q(0, 1)));
    }

    #[test]
    fn ln_of_product_is_sum() {
        let a = Encl::ln(&q(7, 3), 200).unwrap();
        let b = Encl::ln(&q(5, 11), 200).unwrap();
        let c = Encl::ln(&q(35, 33), 200).unwrap();
        let diff = a.add(&b).sub(&c);
        assert!(diff.contains(&q(0, 1)));
    }

    #[test]
    fn ln_of_huge_integer() {
        let n = BigInt::one() << 20000u32;
        let e = Encl::ln_int(&n, 128).unwrap();
        assert!((e.to_f64() - 20000.0 * std::f64::consts::LN_2).abs() < 1e-8);
    }

    #[test]
    fn frac_enclosure_is_tight() {
        let e = Encl::from_ratio(&q(1, 3), 64);
        assert!(e.contains(&q(1, 3)));
        assert_eq!(e.width_ulps(), BigInt::one());
        let e = Encl::from_ratio(&q(-5, 4), 64);
        assert!(e.is_exact());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(ratio_to_decimal(&q(1, 4), 6), "0.25");
        assert_eq!(ratio_to_decimal(&q(-22, 7), 4), "-3.143");
        assert_eq!(ratio_to_decimal(&q(123456789, 1), 3), "123000000");
        assert_eq!(ratio_to_decimal(&q(1, 3000000000), 2), "3.3e-10");
        assert_eq!(ratio_to_decimal(&q(999, 1000), 2), "1");
    }

    #[test]
    fn decide_escalates_then_settles() {
        let mut seen = vec![];
        let (v, _) = decide_nonneg(128, 4096, |p| {
            seen.push(p);
            // ln(2) - 693147/1000000 > 0, resolvable at the first precision
            Ok(Encl::ln2(p).sub(&Encl::from_ratio(&q(693147, 1000000), p)))
        })
        .unwrap();
        assert_eq!(v, Verdict::Pass);
        assert_eq!(seen, vec![128]);
        let (v, _) = decide_nonneg(128, 512, |p| Ok(Encl::ln2(p).sub(&Encl::ln2(p)))).unwrap();
        assert_eq!(v, Verdict::Undecided);
    }
}
