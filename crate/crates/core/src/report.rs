//! Margin records shared by every verifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encl::{decide_nonneg, decide_positive, ratio_to_decimal, Encl, Verdict, PRECISION_CAP};
use crate::error::Result;
use crate::logsum::LogSum;
use crate::Q;

const DIGITS: usize = 20;

/// One checked inequality: `value` against `bound`, with `margin` the slack
/// (nonnegative means the inequality holds).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub condition: String,
    pub k: Option<u64>,
    pub sample: Option<String>,
    pub value: String,
    pub bound: String,
    pub margin: String,
    pub verdict: Verdict,
}

impl Check {
    /// A yes/no structural check with no numeric content.
    pub fn flag(condition: impl Into<String>, ok: bool, detail: impl Into<String>) -> Check {
        let d = detail.into();
        Check {
            condition: condition.into(),
            k: None,
            sample: None,
            value: d,
            bound: String::new(),
            margin: String::new(),
            verdict: Verdict::from_bool(ok),
        }
    }

    /// Exact comparison of rationals: `value <= bound` (or `<` when `strict`).
    pub fn rational_le(condition: impl Into<String>, value: &Q, bound: &Q, strict: bool) -> Check {
        let margin = bound - value;
        let ok = if strict { margin > Q::from_integer(0.into()) } else { margin >= Q::from_integer(0.into()) };
        Check {
            condition: condition.into(),
            k: None,
            sample: None,
            value: ratio_to_decimal(value, DIGITS),
            bound: ratio_to_decimal(bound, DIGITS),
            margin: ratio_to_decimal(&margin, DIGITS),
            verdict: Verdict::from_bool(ok),
        }
    }

    /// Exact lower bound: `value >= bound` (or `>` when `strict`).
    pub fn rational_ge(condition: impl Into<String>, value: &Q, bound: &Q, strict: bool) -> Check {
        let mut c = Check::rational_le(condition, &-value, &-bound, strict);
        c.value = ratio_to_decimal(value, DIGITS);
        c.bound = ratio_to_decimal(bound, DIGITS);
        c
    }

    /// `value <= bound` for exact log-sums, decided by escalating enclosures.
    pub fn logsum_le(condition: impl Into<String>, value: &LogSum, bound: &LogSum, strict: bool, start: u32) -> Result<Check> {
        let diff = bound.sub(value);
        if let Some(r) = diff.as_rational() {
            let zero = Q::from_integer(0.into());
            let ok = if strict { *r > zero } else { *r >= zero };
            return Ok(Check {
                condition: condition.into(),
                k: None,
                sample: None,
                value: value.enclose(start)?.to_decimal(DIGITS),
                bound: bound.enclose(start)?.to_decimal(DIGITS),
                margin: ratio_to_decimal(r, DIGITS),
                verdict: Verdict::from_bool(ok),
            });
        }
        let (verdict, m) = decide(strict, start, |p| diff.enclose(p))?;
        Ok(Check {
            condition: condition.into(),
            k: None,
            sample: None,
            value: value.enclose(start)?.to_decimal(DIGITS),
            bound: bound.enclose(start)?.to_decimal(DIGITS),
            margin: m.to_decimal(DIGITS),
            verdict,
        })
    }

    /// `value(p) <= bound(p)` for quantities only available as enclosures.
    pub fn encl_le<V, B>(condition: impl Into<String>, strict: bool, start: u32, mut value: V, mut bound: B) -> Result<Check>
    where
        V: FnMut(u32) -> Result<Encl>,
        B: FnMut(u32) -> Result<Encl>,
    {
        let mut last = None;
        let (verdict, m) = decide(strict, start, |p| {
            let v = value(p)?;
            let b = bound(p)?;
            let d = b.sub(&v);
            last = Some((v, b));
            Ok(d)
        })?;
        let (v, b) = last.expect("decide evaluates at least once");
        Ok(Check {
            condition: condition.into(),
            k: None,
            sample: None,
            value: v.to_decimal(DIGITS),
            bound: b.to_decimal(DIGITS),
            margin: m.to_decimal(DIGITS),
            verdict,
        })
    }

    pub fn with_k(mut self, k: u64) -> Check {
        self.k = Some(k);
        self
    }

    pub fn with_sample(mut self, s: impl Into<String>) -> Check {
        self.sample = Some(s.into());
        self
    }
}

pub fn decide<F>(strict: bool, start: u32, margin: F) -> Result<(Verdict, Encl)>
where
    F: FnMut(u32) -> Result<Encl>,
{
    if strict {
        decide_positive(start, PRECISION_CAP, margin)
    } else {
        decide_nonneg(start, PRECISION_CAP, margin)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub title: String,
    pub constants: BTreeMap<String, String>,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn new(title: impl Into<String>) -> Self {
        VerificationReport { title: title.into(), ..Default::default() }
    }

    pub fn constant(&mut self, name: impl Into<String>, value: impl ToString) {
        self.constants.insert(name.into(), value.to_string());
    }

    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn extend(&mut self, other: VerificationReport) {
        for (k, v) in other.constants {
            self.constants.entry(k).or_insert(v);
        }
        self.checks.extend(other.checks);
    }

    /// Fail dominates Undecided dominates Pass; an empty report passes.
    pub fn verdict(&self) -> Verdict {
        self.checks.iter().fold(Verdict::Pass, |acc, c| acc.and(c.verdict))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.verdict != Verdict::Pass)
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.checks.iter().filter(|c| c.verdict == v).count()
    }

    /// Rows `condition,k,margin,bound`.
    pub fn criterion_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["condition", "k", "margin", "bound"]).unwrap();
        for c in &self.checks {
            w.write_record([c.condition.as_str(), &opt(c.k), &c.margin, &c.bound]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Human-readable table, one line per check.
    pub fn table(&self) -> String {
        let mut s = format!("# {}\n", self.title);
        for (k, v) in &self.constants {
            s.push_str(&format!("# {} = {}\n", k, v));
        }
        for c in &self.checks {
            s.push_str(&format!(
                "{:<10} {:<40} k={:<4} sample={:<24} value={} bound={} margin={}\n",
                c.verdict.to_string(),
                c.condition,
                opt(c.k),
                c.sample.as_deref().unwrap_or("-"),
                c.value,
                c.bound,
                c.margin
            ));
        }
        s
    }
}

fn opt(k: Option<u64>) -> String {
    k.map(|k| k.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::q;

    #[test]
    fn verdict_aggregation() {
        let mut r = VerificationReport::new("t");
        assert_eq!(r.verdict(), Verdict::Pass);
        r.push(Check::rational_le("a", &q(1, 2), &q(1, 2), false));
        assert_eq!(r.verdict(), Verdict::Pass);
        r.push(Check::rational_le("b", &q(1, 2), &q(1, 2), true));
        assert_eq!(r.verdict(), Verdict::Fail);
    }

    #[test]
    fn log_comparison_escalates() {
        // log 2 vs 693147/1000000: log 2 = 0.693147180...
        let v = LogSum::log(q(1, 1), q(2, 1)).unwrap();
        let b = LogSum::rational(q(693148, 1_000_000));
        let c = Check::logsum_le("log2", &v, &b, true, 64).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
        let b = LogSum::rational(q(693147, 1_000_000));
        let c = Check::logsum_le("log2", &v, &b, false, 64).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
    }

    #[test]
    fn criterion_csv_header() {
        let mut r = VerificationReport::new("t");
        r.push(Check::rational_le("x", &q(1, 3), &q(1, 2), false).with_k(2));
        let csv = r.criterion_csv();
        assert!(csv.starts_with("condition,k,margin,bound\n"));
        assert!(csv.contains("x,2,"));
    }
}
