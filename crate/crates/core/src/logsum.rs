//! Exact values of the form `r + Σ c_i·log(a_i)` with rational `r`, `c_i`, `a_i > 0`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::encl::Encl;
use crate::error::{LabError, Result};
use crate::fmt_q;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LogSum {
    rational: BigRational,
    logs: BTreeMap<BigRational, BigRational>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTerm {
    pub coef: String,
    pub arg: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicValue {
    pub rational: String,
    pub symbolic_terms: Vec<LogTerm>,
    pub numeric: String,
    pub precision_bits: u32,
}

impl LogSum {
    pub fn zero() -> Self {
        LogSum::default()
    }

    pub fn rational(r: BigRational) -> Self {
        LogSum { rational: r, logs: BTreeMap::new() }
    }

    pub fn int(n: i64) -> Self {
        Self::rational(BigRational::from_integer(BigInt::from(n)))
    }

    /// `coef · log(arg)`; `arg` must be positive.
    pub fn log(coef: BigRational, arg: BigRational) -> Result<Self> {
        let mut s = LogSum::zero();
        s.add_log(coef, arg)?;
        Ok(s)
    }

    pub fn add_log(&mut self, coef: BigRational, arg: BigRational) -> Result<()> {
        if !arg.is_positive() {
            return Err(LabError::SingularPoint(format!("log of {}", fmt_q(&arg))));
        }
        if coef.is_zero() || arg.is_one() {
            return Ok(());
        }
        // arguments are kept above 1 so that log(1/a) and −log(a) coincide syntactically
        let (coef, arg) = if arg < BigRational::one() { (-coef, arg.recip()) } else { (coef, arg) };
        let e = self.logs.entry(arg).or_insert_with(BigRational::zero);
        *e += coef;
        if e.is_zero() {
            self.logs.retain(|_, c| !c.is_zero());
        }
        Ok(())
    }

    pub fn add_rational(&mut self, r: &BigRational) {
        self.rational += r;
    }

    pub fn add(&self, other: &LogSum) -> LogSum {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn add_assign(&mut self, other: &LogSum) {
        self.rational += &other.rational;
        for (a, c) in &other.logs {
            self.add_log(c.clone(), a.clone()).expect("stored arguments are positive");
        }
    }

    pub fn sub(&self, other: &LogSum) -> LogSum {
        self.add(&other.scale(&-BigRational::one()))
    }

    pub fn scale(&self, k: &BigRational) -> LogSum {
        if k.is_zero() {
            return LogSum::zero();
        }
        LogSum {
            rational: &self.rational * k,
            logs: self.logs.iter().map(|(a, c)| (a.clone(), c * k)).collect(),
        }
    }

    /// Syntactic zero test: sufficient, not necessary, for the value being 0.
    pub fn is_zero(&self) -> bool {
        self.rational.is_zero() && self.logs.is_empty()
    }

    /// Exact zero test. `r + Σc·log a` with `r ≠ 0` is never 0 (`e^r` is
    /// transcendental); otherwise the value vanishes iff `Π a^{cD} = 1` for the
    /// common denominator `D`. `None` when the exponents are too large to expand.
    pub fn vanishes(&self) -> Option<bool> {
        if self.logs.is_empty() {
            return Some(self.rational.is_zero());
        }
        if !self.rational.is_zero() {
            return Some(false);
        }
        let d = self.logs.values().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
        let mut num = BigInt::one();
        let mut den = BigInt::one();
        for (a, c) in &self.logs {
            let e = (c * BigRational::from_integer(d.clone())).to_integer();
            let k = e.abs().to_u32().filter(|&k| k <= 4096)?;
            let (n, m) = (a.numer().pow(k), a.denom().pow(k));
            if e.is_positive() {
                num *= n;
                den *= m;
            } else {
                num *= m;
                den *= n;
            }
        }
        Some(num == den)
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        if self.logs.is_empty() {
            Some(&self.rational)
        } else {
            None
        }
    }

    pub fn rational_part(&self) -> &BigRational {
        &self.rational
    }

    pub fn term_count(&self) -> usize {
        self.logs.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&BigRational, &BigRational)> {
        self.logs.iter().map(|(a, c)| (c, a))
    }

    pub fn enclose(&self, prec: u32) -> Result<Encl> {
        let mut acc = Encl::from_ratio(&self.rational, prec);
        for (a, c) in &self.logs {
            acc.add_assign(&Encl::ln(a, prec)?.mul_ratio(c));
        }
        Ok(acc)
    }

    pub fn to_f64(&self) -> f64 {
        self.enclose(64).map(|e| e.to_f64()).unwrap_or(f64::NAN)
    }

    pub fn symbolic(&self, prec: u32) -> Result<SymbolicValue> {
        let e = self.enclose(prec)?;
        Ok(SymbolicValue {
            rational: fmt_q(&self.rational),
            symbolic_terms: self
                .logs
                .iter()
                .map(|(a, c)| LogTerm { coef: fmt_q(c), arg: fmt_q(a) })
                .collect(),
            numeric: e.to_decimal(30),
            precision_bits: prec,
        })
    }

    pub fn from_symbolic(v: &SymbolicValue) -> Result<LogSum> {
        let mut s = LogSum::rational(crate::parse_q(&v.rational)?);
        for t in &v.symbolic_terms {
            s.add_log(crate::parse_q(&t.coef)?, crate::parse_q(&t.arg)?)?;
        }
        Ok(s)
    }
}
