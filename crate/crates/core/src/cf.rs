//! Continued fractions: convergents, best-approximation gaps, distance to the
//! nearest integer, and the shared-cell property of class members.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::{frac, norm, Q};

pub const DEFAULT_PADDING: usize = 10;

/// Partial quotients `a_1..a_ℓ` plus the checkpoint sequences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitSchedule {
    pub digits: Vec<u64>,
    pub even_checkpoints: Vec<usize>,
    pub odd_checkpoints: Vec<usize>,
    #[serde(rename = "M")]
    pub m_cap: u64,
}

impl DigitSchedule {
    pub fn new(digits: Vec<u64>, even: Vec<usize>, odd: Vec<usize>, m_cap: u64) -> Result<Self> {
        let s = DigitSchedule { digits, even_checkpoints: even, odd_checkpoints: odd, m_cap };
        s.validate()?;
        Ok(s)
    }

    /// A schedule with digits only (no checkpoints).
    pub fn digits_only(digits: Vec<u64>) -> Self {
        DigitSchedule { digits, even_checkpoints: vec![], odd_checkpoints: vec![], m_cap: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.digits.iter().any(|&a| a == 0) {
            return Err(LabError::InvalidSchedule("digits must be >= 1".into()));
        }
        if self.m_cap == 0 {
            return Err(LabError::InvalidSchedule("M must be positive".into()));
        }
        for w in self.even_checkpoints.windows(2) {
            if w[0] >= w[1] {
                return Err(LabError::InvalidSchedule("even checkpoints must increase".into()));
            }
        }
        if let Some(n) = self.even_checkpoints.iter().find(|&&n| n % 2 != 0 || n == 0) {
            return Err(LabError::InvalidSchedule(format!("checkpoint {} is not a positive even index", n)));
        }
        for w in self.odd_checkpoints.windows(2) {
            if w[0] >= w[1] {
                return Err(LabError::InvalidSchedule("odd checkpoints must increase".into()));
            }
        }
        for (i, &n) in self.even_checkpoints.iter().enumerate() {
            if i % 2 == 0 {
                if let Some(&a) = self.digits.get(n) {
                    if a < 3 || a > self.m_cap {
                        return Err(LabError::InvalidSchedule(format!(
                            "digit a_{} = {} after odd-position checkpoint n_{} must lie in [3, {}]",
                            n + 1,
                            a,
                            i + 1,
                            self.m_cap
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// 1-based digit `a_i`.
    pub fn digit(&self, i: usize) -> Option<u64> {
        if i == 0 { None } else { self.digits.get(i - 1).copied() }
    }

    /// 1-based even checkpoint `n_k`.
    pub fn n(&self, k: usize) -> usize {
        self.even_checkpoints[k - 1]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut digits = None;
        let mut even = vec![];
        let mut odd = vec![];
        let mut m_cap = 3u64;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| LabError::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let val = val.trim();
            let list = |v: &str| -> Result<Vec<u64>> {
                if v.is_empty() {
                    return Ok(vec![]);
                }
                v.split(',')
                    .map(|t| t.trim().parse::<u64>().map_err(|_| LabError::Parse(format!("line {}: bad integer {:?}", lineno + 1, t))))
                    .collect()
            };
            match key {
                "digits" => digits = Some(list(val)?),
                "even_checkpoints" => even = list(val)?.into_iter().map(|x| x as usize).collect(),
                "odd_checkpoints" => odd = list(val)?.into_iter().map(|x| x as usize).collect(),
                "M" => m_cap = val.parse().map_err(|_| LabError::Parse(format!("line {}: bad M", lineno + 1)))?,
                other => return Err(LabError::Parse(format!("line {}: unknown key {:?}", lineno + 1, other))),
            }
        }
        let digits = digits.ok_or_else(|| LabError::Parse("missing `digits` line".into()))?;
        DigitSchedule::new(digits, even, odd, m_cap)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "digits = {}\neven_checkpoints = {}\nodd_checkpoints = {}\nM = {}\n",
            self.digits.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            join(&self.even_checkpoints),
            join(&self.odd_checkpoints),
            self.m_cap
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Convergent {
    pub p: BigInt,
    pub q: BigInt,
    pub n: usize,
    pub even: bool,
}

/// `p_n, q_n` for `n = 0..=len(digits)` with `p_0 = 0`, `q_0 = 1`.
#[derive(Clone, Debug)]
pub struct ConvTable {
    pub p: Vec<BigInt>,
    pub q: Vec<BigInt>,
}

impl ConvTable {
    pub fn new<D: AsRef<[u64]>>(digits: D) -> Self {
        let digits = digits.as_ref();
        let mut p = Vec::with_capacity(digits.len() + 1);
        let mut q = Vec::with_capacity(digits.len() + 1);
        let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
        p.push(BigInt::zero());
        q.push(BigInt::one());
        for &a in digits {
            let a = BigInt::from(a);
            let pn = &a * p.last().unwrap() + &p_prev;
            let qn = &a * q.last().unwrap() + &q_prev;
            p_prev = p.last().unwrap().clone();
            q_prev = q.last().unwrap().clone();
            p.push(pn);
            q.push(qn);
        }
        ConvTable { p, q }
    }

    pub fn from_big(digits: &[BigInt]) -> Self {
        let mut p = vec![BigInt::zero()];
        let mut q = vec![BigInt::one()];
        let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
        for a in digits {
            let pn = a * p.last().unwrap() + &p_prev;
            let qn = a * q.last().unwrap() + &q_prev;
            p_prev = p.last().unwrap().clone();
            q_prev = q.last().unwrap().clone();
            p.push(pn);
            q.push(qn);
        }
        ConvTable { p, q }
    }

    /// Largest available index.
    pub fn len(&self) -> usize {
        self.q.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Q {
        Q::new(self.p.last().unwrap().clone(), self.q.last().unwrap().clone())
    }
}

pub fn convergents(schedule: &DigitSchedule, upto: usize) -> Result<Vec<Convergent>> {
    if upto > schedule.digits.len() {
        return Err(LabError::InsufficientPrefix { needed: upto, available: schedule.digits.len() });
    }
    let t = ConvTable::new(&schedule.digits[..upto]);
    Ok((1..=upto)
        .map(|n| Convergent { p: t.p[n].clone(), q: t.q[n].clone(), n, even: n % 2 == 0 })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GapBounds {
    pub lower: Q,
    pub upper: Q,
    /// `α - p_n/q_n > 0`
    pub positive: bool,
}

/// Bounds on `|α - p_n/q_n|` for any α in the class of the schedule.
pub fn approx_gap(schedule: &DigitSchedule, n: usize) -> Result<GapBounds> {
    if n + 1 > schedule.digits.len() {
        return Err(LabError::InsufficientPrefix { needed: n + 1, available: schedule.digits.len() });
    }
    let t = ConvTable::new(&schedule.digits[..n + 1]);
    let (qn, qn1) = (&t.q[n], &t.q[n + 1]);
    Ok(GapBounds {
        lower: Q::new(BigInt::one(), qn * (qn + qn1)),
        upper: Q::new(BigInt::one(), qn * qn1),
        positive: n % 2 == 0,
    })
}

/// Continued-fraction digits of a rational in (0,1), last digit ≥ 2.
pub fn cf_expand(r: &Q) -> Vec<BigInt> {
    let mut out = vec![];
    let mut x = frac(r);
    while !x.is_zero() {
        let inv = x.recip();
        let a = inv.floor().to_integer();
        out.push(a.clone());
        x = inv - Q::from_integer(a);
    }
    out
}

/// A rational stand-in for α.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AngleRep {
    pub value: Q,
    pub matched_prefix_len: usize,
}

impl AngleRep {
    /// Value `[0; digits, 1, …, 1]` with `padding` trailing ones.
    pub fn from_digits(digits: &[u64], padding: usize) -> Result<Self> {
        if digits.is_empty() && padding == 0 {
            return Err(LabError::DegenerateAngle);
        }
        let mut all = digits.to_vec();
        all.extend(std::iter::repeat(1).take(padding));
        let value = ConvTable::new(&all).value();
        let matched = common_prefix(&cf_expand(&value), digits);
        Ok(AngleRep { value, matched_prefix_len: matched })
    }

    /// Representative of the class of the first `ell` schedule digits.
    pub fn for_schedule(schedule: &DigitSchedule, ell: usize, padding: usize) -> Result<Self> {
        if ell > schedule.digits.len() {
            return Err(LabError::InsufficientPrefix { needed: ell, available: schedule.digits.len() });
        }
        Self::from_digits(&schedule.digits[..ell], padding)
    }

    pub fn from_value(value: Q, schedule: &DigitSchedule) -> Result<Self> {
        if value.is_zero() || value.is_negative() || value >= Q::one() {
            return Err(LabError::DegenerateAngle);
        }
        let d = cf_expand(&value);
        let matched = common_prefix(&d, &schedule.digits).max(common_prefix(&alt_expansion(&d), &schedule.digits));
        Ok(AngleRep { value, matched_prefix_len: matched })
    }

    pub fn cf_digits(&self) -> Vec<BigInt> {
        cf_expand(&self.value)
    }

    pub fn table(&self) -> ConvTable {
        ConvTable::from_big(&self.cf_digits())
    }
}

fn common_prefix(a: &[BigInt], b: &[u64]) -> usize {
    a.iter().zip(b).take_while(|(x, &y)| **x == BigInt::from(y)).count()
}

/// The other expansion `[…, a-1, 1]` of a terminating CF.
fn alt_expansion(d: &[BigInt]) -> Vec<BigInt> {
    let mut e = d.to_vec();
    if let Some(last) = e.last_mut() {
        *last -= 1;
        e.push(BigInt::one());
    }
    e
}

/// ‖k·α‖.
pub fn dist_to_int(k: &BigInt, alpha: &AngleRep) -> Q {
    norm(&(Q::from_integer(k.clone()) * &alpha.value))
}

/// Whether α's partial quotients `1..=ell` equal the schedule's.
pub fn class_check(alpha: &AngleRep, schedule: &DigitSchedule, ell: usize) -> Result<bool> {
    if alpha.value.is_zero() {
        return Err(LabError::DegenerateAngle);
    }
    if ell > schedule.digits.len() {
        return Err(LabError::InsufficientPrefix { needed: ell, available: schedule.digits.len() });
    }
    let d = cf_expand(&alpha.value);
    let target = &schedule.digits[..ell];
    if common_prefix(&d, target) == ell {
        return Ok(true);
    }
    // the expansion ending in 1 is a member only when its last digit is inside the prefix
    let alt = alt_expansion(&d);
    Ok(alt.len() == ell && common_prefix(&alt, target) == ell)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SameCell {
    pub q_n: BigInt,
    /// `cells[k-1] = c_k` for `k = 1..q_n-1`
    pub cells: Vec<BigInt>,
    pub surjective: bool,
}

/// Cell indices `c_k` shared by two class members, checked by exact membership.
pub fn same_cell_indices(alpha: &AngleRep, beta: &AngleRep, n: usize) -> Result<SameCell> {
    let da = alpha.cf_digits();
    let db = beta.cf_digits();
    if da.len() <= n || db.len() <= n {
        return Err(LabError::InsufficientPrefix { needed: n + 1, available: da.len().min(db.len()) });
    }
    if da[..n] != db[..n] {
        return Err(LabError::ClassViolation(format!("angles disagree within the first {} partial quotients", n)));
    }
    let t = ConvTable::from_big(&da[..n]);
    let (p_n, q_n) = (t.p[n].clone(), t.q[n].clone());
    let qn_u = q_n.to_u64().ok_or_else(|| LabError::Unsupported("q_n too large for enumeration".into()))?;
    let mut cells = Vec::with_capacity(qn_u.saturating_sub(1) as usize);
    let mut hit = vec![false; qn_u as usize];
    // k = 0 sits on the closed boundary of cell 0 and of cell q_n - 1 (0 ≡ 1)
    hit[0] = true;
    hit[qn_u as usize - 1] = true;
    let qn_q = Q::from_integer(q_n.clone());
    for k in 1..qn_u {
        let kb = BigInt::from(k);
        let c = if n % 2 == 0 { (&kb * &p_n).mod_floor(&q_n) } else { (&kb * &p_n - BigInt::one()).mod_floor(&q_n) };
        let lo = Q::from_integer(c.clone()) / &qn_q;
        let hi = Q::from_integer(&c + 1) / &qn_q;
        for a in [&alpha.value, &beta.value] {
            let x = frac(&(Q::from_integer(kb.clone()) * a));
            if !(lo < x && x < hi) {
                return Err(LabError::ClassViolation(format!("k = {}: {}·α outside cell {}", k, k, c)));
            }
        }
        hit[c.to_usize().unwrap()] = true;
        cells.push(c);
    }
    Ok(SameCell { q_n, cells, surjective: hit.iter().all(|&h| h) })
}

/// `1/(q_n+q_{n+1}) < ‖q_n α‖ < 1/q_{n+1}` for the table of α.
pub fn norm_sandwich_holds(alpha: &Q, t: &ConvTable, n: usize) -> bool {
    let qn = &t.q[n];
    let qn1 = &t.q[n + 1];
    let v = norm(&(Q::from_integer(qn.clone()) * alpha));
    Q::new(BigInt::one(), qn + qn1) < v && v < Q::new(BigInt::one(), qn1.clone())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::q;
    use proptest::prelude::*;

    fn ints(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    #[test]
    fn convergents_of_seed_digits() {
        let s = DigitSchedule::digits_only(vec![1, 1, 3, 1, 5]);
        let c = convergents(&s, 5).unwrap();
        assert_eq!(c.iter().map(|c| c.q.clone()).collect::<Vec<_>>(), ints(&[1, 2, 7, 9, 52]));
        assert_eq!(c.iter().map(|c| c.p.clone()).collect::<Vec<_>>(), ints(&[1, 1, 4, 5, 29]));
        assert!(c[1].even && !c[2].even);
        let one = convergents(&DigitSchedule::digits_only(vec![1]), 1).unwrap();
        assert_eq!((one[0].p.clone(), one[0].q.clone()), (BigInt::one(), BigInt::one()));
        let two = convergents(&DigitSchedule::digits_only(vec![2, 2]), 2).unwrap();
        assert_eq!(two.iter().map(|c| c.q.clone()).collect::<Vec<_>>(), ints(&[2, 5]));
        assert!(matches!(convergents(&s, 6), Err(LabError::InsufficientPrefix { .. })));
    }

    #[test]
    fn gap_bounds() {
        let s = DigitSchedule::digits_only(vec![1, 1, 3, 1, 5]);
        let g = approx_gap(&s, 2).unwrap();
        assert_eq!((g.lower, g.upper, g.positive), (q(1, 18), q(1, 14), true));
        assert!(!approx_gap(&s, 3).unwrap().positive);
        assert!(approx_gap(&s, 5).is_err());
    }

    #[test]
    fn distances() {
        let a = AngleRep { value: q(2, 7), matched_prefix_len: 0 };
        assert_eq!(dist_to_int(&BigInt::from(3), &a), q(1, 7));
        assert_eq!(dist_to_int(&BigInt::zero(), &a), q(0, 1));
        let b = AngleRep { value: q(4, 7), matched_prefix_len: 0 };
        assert_eq!(dist_to_int(&BigInt::from(2), &b), q(1, 7));
    }

    #[test]
    fn class_membership() {
        let a = AngleRep { value: q(4, 7), matched_prefix_len: 3 };
        let s = DigitSchedule::digits_only(vec![1, 1, 3, 1, 5]);
        assert!(class_check(&a, &s, 2).unwrap());
        assert!(class_check(&a, &DigitSchedule::digits_only(vec![1, 1, 3]), 3).unwrap());
        let h = AngleRep { value: q(1, 2), matched_prefix_len: 0 };
        // 1/2 = [0;2]; the trailing-one form [0;1,1] only counts when the prefix spells it out
        assert!(!class_check(&h, &DigitSchedule::digits_only(vec![1]), 1).unwrap());
        assert!(class_check(&h, &DigitSchedule::digits_only(vec![1, 1]), 2).unwrap());
        assert!(!class_check(&h, &DigitSchedule::digits_only(vec![3]), 1).unwrap());
        let z = AngleRep { value: q(0, 1), matched_prefix_len: 0 };
        assert_eq!(class_check(&z, &s, 1), Err(LabError::DegenerateAngle));
        // 4/7 = [0;1,1,2,1] in the alternative expansion
        assert!(class_check(&a, &DigitSchedule::digits_only(vec![1, 1, 2, 1]), 4).unwrap());
    }

    #[test]
    fn padded_representative() {
        let a = AngleRep::from_digits(&[1, 1, 3, 1, 5], DEFAULT_PADDING).unwrap();
        assert_eq!(a.matched_prefix_len, 5);
        let d = a.cf_digits();
        assert_eq!(d.len(), 5 + DEFAULT_PADDING - 1);
        assert_eq!(d.last().unwrap(), &BigInt::from(2));
    }

    #[test]
    fn same_cell_examples() {
        let a = AngleRep::from_digits(&[1, 1, 3, 1, 5], 4).unwrap();
        let b = AngleRep::from_digits(&[1, 1, 3, 2, 7, 1], 3).unwrap();
        let sc = same_cell_indices(&a, &b, 3).unwrap();
        assert_eq!(sc.q_n, BigInt::from(7));
        assert_eq!(sc.cells.len(), 6);
        assert!(sc.surjective);
        let s1 = same_cell_indices(&a, &b, 1).unwrap();
        assert!(s1.cells.is_empty());
        assert!(s1.surjective);
        let c = AngleRep::from_digits(&[1, 2, 3], 4).unwrap();
        assert!(matches!(same_cell_indices(&a, &c, 3), Err(LabError::ClassViolation(_))));
    }

    #[test]
    fn schedule_text_roundtrip() {
        let text = "# seed\ndigits = 1,1,3,1,3 # trailing\neven_checkpoints = 2,4\nodd_checkpoints =\nM = 3\n";
        let s = DigitSchedule::parse(text).unwrap();
        assert_eq!(s.digits, vec![1, 1, 3, 1, 3]);
        assert_eq!(DigitSchedule::parse(&s.to_text()).unwrap(), s);
        assert!(DigitSchedule::parse("even_checkpoints = 2").is_err());
        assert!(DigitSchedule::parse("digits = 1,1,2\neven_checkpoints = 2").is_err());
    }

    proptest! {
        #[test]
        fn recursion_and_sandwich(digits in proptest::collection::vec(1u64..10, 3..20)) {
            let a = AngleRep::from_digits(&digits, DEFAULT_PADDING).unwrap();
            let t = ConvTable::new(&digits);
            for n in 1..digits.len() {
                prop_assert_eq!(&t.q[n + 1], &(BigInt::from(digits[n]) * &t.q[n] + &t.q[n - 1]));
                prop_assert!(t.q[n + 1] > t.q[n] || n == 1);
                prop_assert!(norm_sandwich_holds(&a.value, &t, n));
            }
        }

        #[test]
        fn dist_symmetric_and_subadditive(digits in proptest::collection::vec(1u64..10, 1..8), j in -50i64..50, k in -50i64..50) {
            let a = AngleRep::from_digits(&digits, 3).unwrap();
            let (jb, kb) = (BigInt::from(j), BigInt::from(k));
            prop_assert_eq!(dist_to_int(&jb, &a), dist_to_int(&-&jb, &a));
            prop_assert!(dist_to_int(&(&jb + &kb), &a) <= dist_to_int(&jb, &a) + dist_to_int(&kb, &a));
            prop_assert!(dist_to_int(&jb, &a) <= q(1, 2));
        }
    }
}
