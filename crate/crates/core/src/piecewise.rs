//! Piecewise closed-form functions on the circle: sums of constants,
//! `c/‖x−a‖`, `c/‖x−a‖²` and `c·log‖x−a‖` on half-open pieces.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::encl::Encl;
use crate::error::{LabError, Result};
use crate::logsum::LogSum;
use crate::torus::CircleSet;
use crate::{fmt_q, frac, half, norm, Q};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Const(Q),
    /// `c/d(x,a)^pow` with `d` the circle distance `‖x−a‖`, or the line
    /// distance `|x−a|` of the representative `x ∈ [0,1)` when `line` is set
    Pole { c: Q, a: Q, pow: u8, line: bool },
    /// `c·log‖x−a‖`
    Log { c: Q, a: Q },
}

impl Term {
    pub fn inv(c: Q, a: &Q) -> Term {
        Term::Pole { c, a: frac(a), pow: 1, line: false }
    }

    pub fn inv_sq(c: Q, a: &Q) -> Term {
        Term::Pole { c, a: frac(a), pow: 2, line: false }
    }

    /// `c/|x−a|` for the representative `x ∈ [0,1)`.
    pub fn line_inv(c: Q, a: &Q) -> Term {
        Term::Pole { c, a: a.clone(), pow: 1, line: true }
    }

    pub fn line_inv_sq(c: Q, a: &Q) -> Term {
        Term::Pole { c, a: a.clone(), pow: 2, line: true }
    }

    pub fn log(c: Q, a: &Q) -> Term {
        Term::Log { c, a: frac(a) }
    }

    fn center(&self) -> Option<&Q> {
        match self {
            Term::Const(_) => None,
            Term::Pole { a, .. } | Term::Log { a, .. } => Some(a),
        }
    }

    fn is_line(&self) -> bool {
        matches!(self, Term::Pole { line: true, .. })
    }

    fn coef(&self) -> &Q {
        match self {
            Term::Const(c) | Term::Pole { c, .. } | Term::Log { c, .. } => c,
        }
    }

    fn coef_mut(&mut self) -> &mut Q {
        match self {
            Term::Const(c) | Term::Pole { c, .. } | Term::Log { c, .. } => c,
        }
    }

    fn is_rational(&self) -> bool {
        !matches!(self, Term::Log { .. })
    }

    /// Same shape (kind, center, power, metric) so coefficients may be merged.
    fn same_shape(&self, o: &Term) -> bool {
        match (self, o) {
            (Term::Pole { a, pow, line, .. }, Term::Pole { a: b, pow: p, line: l, .. }) => a == b && pow == p && line == l,
            (Term::Log { a, .. }, Term::Log { a: b, .. }) => a == b,
            _ => false,
        }
    }

    /// Exact value at distance `u`; `None` at a pole.
    fn at_dist(&self, u: &Q) -> Option<Q> {
        match self {
            Term::Const(c) => Some(c.clone()),
            Term::Pole { c, pow, .. } => (!u.is_zero()).then(|| if *pow == 1 { c / u } else { c / (u * u) }),
            Term::Log { .. } => unreachable!("log terms have no rational value"),
        }
    }

    fn dist(&self, x: &Q) -> Q {
        match self.center() {
            Some(a) if self.is_line() => (x - a).abs(),
            Some(a) => norm(&(x - a)),
            None => Q::one(),
        }
    }

    fn eval_q(&self, x: &Q) -> Result<Q> {
        if !self.is_rational() {
            return Err(LabError::Unsupported("log term has no exact value".into()));
        }
        if self.coef().is_zero() {
            return Ok(Q::zero());
        }
        self.at_dist(&self.dist(x)).ok_or_else(|| LabError::SingularPoint(fmt_q(x)))
    }

    fn eval_encl(&self, x: &Q, prec: u32) -> Result<Encl> {
        match self {
            Term::Log { c, .. } => {
                if c.is_zero() {
                    return Ok(Encl::zero(prec));
                }
                let u = self.dist(x);
                if u.is_zero() {
                    return Err(LabError::SingularPoint(fmt_q(x)));
                }
                Ok(Encl::ln(&u, prec)?.mul_ratio(c))
            }
            _ => Ok(Encl::from_ratio(&self.eval_q(x)?, prec)),
        }
    }

    /// +1 if the term increases with the distance, −1 if it decreases, 0 if constant.
    fn dir_in_u(&self) -> i32 {
        let s = if self.coef().is_positive() {
            1
        } else if self.coef().is_negative() {
            -1
        } else {
            return 0;
        };
        match self {
            Term::Const(_) => 0,
            Term::Pole { .. } => -s,
            Term::Log { .. } => s,
        }
    }

    /// Points where the distance stops being affine.
    fn kinks(&self) -> Vec<Q> {
        match self.center() {
            None => vec![],
            Some(a) if self.is_line() => vec![a.clone()],
            Some(a) => vec![a.clone(), frac(&(a + half()))],
        }
    }

    /// `+1` if the distance increases across the cell `(l, r)`, else `−1`.
    fn cell_slope(&self, l: &Q, r: &Q) -> i32 {
        let a = self.center().expect("constant terms have no slope");
        let m = (l + r) * half();
        let up = if self.is_line() { m > *a } else { frac(&(&m - a)) < half() };
        if up { 1 } else { -1 }
    }

    /// The distance continued affinely from inside the cell `(l, r)` to `x ∈ {l, r}`.
    fn cell_dist(&self, x: &Q, l: &Q, r: &Q) -> Q {
        let m = (l + r) * half();
        let dm = self.dist(&m);
        if self.cell_slope(l, r) > 0 { &dm + (x - &m) } else { &dm - (x - &m) }
    }
}

/// A right-continuous function on the circle, given on the pieces
/// `[breaks[i], breaks[i+1])` with `breaks[0] = 0` and an implicit final break at 1.
/// With a level mask the function lives on one level of T×Z₂ and vanishes on the other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PiecewiseFunction {
    breaks: Vec<Q>,
    pieces: Vec<Vec<Term>>,
    level_mask: Option<u8>,
}

impl PiecewiseFunction {
    pub fn zero() -> Self {
        PiecewiseFunction { breaks: vec![Q::zero()], pieces: vec![vec![]], level_mask: None }
    }

    pub fn constant(c: Q) -> Self {
        Self::uniform(vec![Term::Const(c)])
    }

    /// The same terms on the whole circle.
    pub fn uniform(terms: Vec<Term>) -> Self {
        PiecewiseFunction { breaks: vec![Q::zero()], pieces: vec![terms], level_mask: None }
    }

    /// `terms` on `set`, zero elsewhere.
    pub fn on_set(set: &CircleSet, terms: Vec<Term>) -> Self {
        let mut breaks = vec![Q::zero()];
        let mut pieces = vec![vec![]];
        for (l, r) in set.arcs() {
            if l.is_zero() {
                pieces[0] = terms.clone();
            } else {
                breaks.push(l.clone());
                pieces.push(terms.clone());
            }
            if *r < Q::one() {
                breaks.push(r.clone());
                pieces.push(vec![]);
            }
        }
        PiecewiseFunction { breaks, pieces, level_mask: None }.simplified()
    }

    pub fn indicator(set: &CircleSet) -> Self {
        Self::on_set(set, vec![Term::Const(Q::one())])
    }

    /// Step function from `(start, value)` pairs; the first start must be 0.
    pub fn step(steps: &[(Q, Q)]) -> Result<Self> {
        if steps.is_empty() || !steps[0].0.is_zero() {
            return Err(LabError::Precondition("step function must start at 0".into()));
        }
        for w in steps.windows(2) {
            if w[0].0 >= w[1].0 || w[1].0 >= Q::one() {
                return Err(LabError::Precondition("step starts must increase inside [0,1)".into()));
            }
        }
        Ok(PiecewiseFunction {
            breaks: steps.iter().map(|s| s.0.clone()).collect(),
            pieces: steps.iter().map(|s| vec![Term::Const(s.1.clone())]).collect(),
            level_mask: None,
        }
        .simplified())
    }

    pub fn with_level(mut self, level: u8) -> Self {
        self.level_mask = Some(level);
        self
    }

    pub fn level_mask(&self) -> Option<u8> {
        self.level_mask
    }

    pub fn breaks(&self) -> &[Q] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Vec<Term>] {
        &self.pieces
    }

    /// Pointwise sum; both operands must share the level mask.
    pub fn add(&self, other: &PiecewiseFunction) -> Result<Self> {
        if self.level_mask != other.level_mask {
            return Err(LabError::Precondition("level masks differ".into()));
        }
        let mut all: Vec<Q> = self.breaks.iter().chain(&other.breaks).cloned().collect();
        all.sort();
        all.dedup();
        let pieces = all
            .iter()
            .map(|b| {
                let mut t = self.pieces[self.piece_index(b)].clone();
                t.extend(other.pieces[other.piece_index(b)].iter().cloned());
                t
            })
            .collect();
        Ok(PiecewiseFunction { breaks: all, pieces, level_mask: self.level_mask }.simplified())
    }

    pub fn scale(&self, k: &Q) -> Self {
        let scale_term = |t: &Term| {
            let mut t = t.clone();
            *t.coef_mut() *= k;
            t
        };
        PiecewiseFunction {
            breaks: self.breaks.clone(),
            pieces: self.pieces.iter().map(|p| p.iter().map(scale_term).collect()).collect(),
            level_mask: self.level_mask,
        }
        .simplified()
    }

    /// Merges like terms and drops breaks between identical pieces.
    fn simplified(mut self) -> Self {
        for p in &mut self.pieces {
            *p = merge_terms(std::mem::take(p));
        }
        let mut breaks = vec![self.breaks[0].clone()];
        let mut pieces = vec![self.pieces[0].clone()];
        for (b, p) in self.breaks.iter().zip(&self.pieces).skip(1) {
            if *p != *pieces.last().unwrap() {
                breaks.push(b.clone());
                pieces.push(p.clone());
            }
        }
        PiecewiseFunction { breaks, pieces, level_mask: self.level_mask }
    }

    fn piece_index(&self, x: &Q) -> usize {
        let x = frac(x);
        self.breaks.partition_point(|b| *b <= x) - 1
    }

    fn piece_end(&self, i: usize) -> Q {
        self.breaks.get(i + 1).cloned().unwrap_or_else(Q::one)
    }

    pub fn is_rational(&self) -> bool {
        self.pieces.iter().flatten().all(Term::is_rational)
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.is_empty())
    }

    pub fn neg(&self) -> Self {
        self.scale(&-Q::one())
    }

    /// True when no term has a pole (so the function is bounded).
    pub fn is_step(&self) -> bool {
        self.pieces.iter().flatten().all(|t| matches!(t, Term::Const(_)))
    }

    fn masked(&self, level: u8) -> bool {
        matches!(self.level_mask, Some(m) if m != level)
    }

    /// Exact value at `(x, level)`; errors on log terms and at poles.
    pub fn eval_q(&self, x: &Q, level: u8) -> Result<Q> {
        if self.masked(level) {
            return Ok(Q::zero());
        }
        let x = frac(x);
        let mut s = Q::zero();
        for t in &self.pieces[self.piece_index(&x)] {
            s += t.eval_q(&x)?;
        }
        Ok(s)
    }

    pub fn eval_encl(&self, x: &Q, level: u8, prec: u32) -> Result<Encl> {
        if self.masked(level) {
            return Ok(Encl::zero(prec));
        }
        let x = frac(x);
        let mut s = Encl::zero(prec);
        for t in &self.pieces[self.piece_index(&x)] {
            s.add_assign(&t.eval_encl(&x, prec)?);
        }
        Ok(s)
    }

    /// Sub-pieces on which every term has `‖x−a‖` affine in `x`.
    fn monotone_cells(&self) -> Vec<(Q, Q, usize)> {
        let mut out = vec![];
        for i in 0..self.pieces.len() {
            let (l, r) = (self.breaks[i].clone(), self.piece_end(i));
            let mut cuts = vec![l.clone(), r.clone()];
            for t in &self.pieces[i] {
                for c in t.kinks() {
                    if l < c && c < r {
                        cuts.push(c);
                    }
                }
            }
            cuts.sort();
            cuts.dedup();
            for w in cuts.windows(2) {
                out.push((w[0].clone(), w[1].clone(), i));
            }
        }
        out
    }

    /// Value of piece `i` approaching `x` from inside the cell `(l, r)`.
    fn cell_value(&self, i: usize, x: &Q, l: &Q, r: &Q) -> Result<Q> {
        let mut s = Q::zero();
        for t in &self.pieces[i] {
            if t.coef().is_zero() {
                continue;
            }
            let u = match t.center() {
                Some(_) => t.cell_dist(x, l, r),
                None => Q::one(),
            };
            s += t.at_dist(&u).ok_or_else(|| LabError::NotBoundedVariation(format!("pole at {}", fmt_q(x))))?;
        }
        Ok(s)
    }

    /// Total variation over the circle, exact for rational pieces.
    pub fn variation(&self) -> Result<Q> {
        if !self.is_rational() {
            return Err(LabError::Unsupported("variation of log pieces".into()));
        }
        let cells = self.monotone_cells();
        let mut total = Q::zero();
        for (l, r, i) in &cells {
            let mut dirs = self.pieces[*i].iter().filter_map(|t| {
                let d = t.dir_in_u();
                t.center()?;
                (d != 0).then(|| d * t.cell_slope(l, r))
            });
            if let Some(d0) = dirs.next() {
                if dirs.any(|d| d != d0) {
                    return Err(LabError::Unsupported("piece is not monotone".into()));
                }
            }
            let vl = self.cell_value(*i, l, l, r)?;
            let vr = self.cell_value(*i, r, l, r)?;
            total += (vr - vl).abs();
        }
        // jumps between consecutive cells, including across 1 ≡ 0
        for k in 0..cells.len() {
            let (l1, r1, i1) = &cells[k];
            let (l2, r2, i2) = &cells[(k + 1) % cells.len()];
            if i1 == i2 && cells.len() > 1 {
                continue;
            }
            let left = self.cell_value(*i1, r1, l1, r1)?;
            let right = self.cell_value(*i2, l2, l2, r2)?;
            total += (right - left).abs();
        }
        Ok(total)
    }

    /// `∫ F dλ′` over the circle as an exact log-sum.
    pub fn integral(&self) -> Result<LogSum> {
        let mut s = LogSum::zero();
        for (l, r, i) in self.monotone_cells() {
            for t in &self.pieces[i] {
                s.add_assign(&term_integral(t, &l, &r)?);
            }
        }
        Ok(s)
    }

    /// Least common multiple of every denominator appearing in breaks and centers.
    pub fn denominator(&self) -> BigInt {
        let mut d = BigInt::one();
        for b in &self.breaks {
            d = d.lcm(b.denom());
        }
        for t in self.pieces.iter().flatten() {
            if let Some(a) = t.center() {
                d = d.lcm(a.denom());
            }
        }
        d
    }

    /// Compiled form on the grid `(1/den)Z`; `den` must be a multiple of [`Self::denominator`].
    pub fn to_grid(&self, den: &BigInt, prec: u32) -> Result<GridFn> {
        if !(den % self.denominator()).is_zero() {
            return Err(LabError::Precondition("grid denominator too coarse".into()));
        }
        let on_grid = |x: &Q| (x * Q::from_integer(den.clone())).to_integer();
        let unit = BigInt::one() << prec;
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                p.iter()
                    .filter(|t| !t.coef().is_zero())
                    .map(|t| match t {
                        Term::Const(c) => GTerm::Const(Encl::from_ratio(c, prec)),
                        Term::Pole { c, a, pow, line } => GTerm::Pow {
                            num: if *pow == 1 { c.numer() * den * &unit } else { c.numer() * den * den * &unit },
                            den: c.denom().clone(),
                            center: on_grid(a),
                            square: *pow == 2,
                            line: *line,
                        },
                        Term::Log { c, a } => GTerm::Log { c: c.clone(), center: on_grid(a) },
                    })
                    .collect()
            })
            .collect();
        Ok(GridFn {
            den: den.clone(),
            prec,
            breaks: self.breaks.iter().map(on_grid).collect(),
            pieces,
            level_mask: self.level_mask,
        })
    }
}

fn merge_terms(terms: Vec<Term>) -> Vec<Term> {
    let mut out: Vec<Term> = vec![];
    let mut k = Q::zero();
    for t in terms {
        if let Term::Const(c) = &t {
            k += c;
            continue;
        }
        match out.iter_mut().find(|o| o.same_shape(&t)) {
            Some(o) => *o.coef_mut() += t.coef(),
            None => out.push(t),
        }
    }
    out.retain(|t| !t.coef().is_zero());
    out.sort_by(|a, b| format!("{:?}", a).cmp(&format!("{:?}", b)));
    if !k.is_zero() {
        out.insert(0, Term::Const(k));
    }
    out
}

fn term_integral(t: &Term, l: &Q, r: &Q) -> Result<LogSum> {
    let c = t.coef();
    if c.is_zero() {
        return Ok(LogSum::zero());
    }
    let a = match t.center() {
        None => return Ok(LogSum::rational(c * (r - l))),
        Some(a) => a,
    };
    let _ = a;
    let (ul, ur) = (t.cell_dist(l, l, r), t.cell_dist(r, l, r));
    let (u1, u2) = if ul <= ur { (ul, ur) } else { (ur, ul) };
    // ∫ over u from u1 to u2 (the affine change of variable has slope ±1)
    match t {
        Term::Pole { pow, .. } => {
            if u1.is_zero() {
                return Err(LabError::NotBoundedVariation("pole is not integrable".into()));
            }
            if *pow == 1 {
                LogSum::log(c.clone(), &u2 / &u1)
            } else {
                Ok(LogSum::rational(c * (Q::one() / &u1 - Q::one() / &u2)))
            }
        }
        Term::Log { .. } => {
            // u log u − u
            let mut s = LogSum::rational(c * (&u1 - &u2));
            s.add_log(c * &u2, u2.clone())?;
            if !u1.is_zero() {
                s.add_log(-(c * &u1), u1.clone())?;
            }
            Ok(s)
        }
        Term::Const(_) => unreachable!(),
    }
}

#[derive(Clone, Debug)]
enum GTerm {
    Const(Encl),
    /// `num / (den · dist^(1 or 2))` in fixed point
    Pow { num: BigInt, den: BigInt, center: BigInt, square: bool, line: bool },
    Log { c: Q, center: BigInt },
}

/// A [`PiecewiseFunction`] evaluated at grid points `r/den`, accumulating
/// fixed-point enclosures at a fixed precision.
#[derive(Clone, Debug)]
pub struct GridFn {
    den: BigInt,
    prec: u32,
    breaks: Vec<BigInt>,
    pieces: Vec<Vec<GTerm>>,
    level_mask: Option<u8>,
}

/// Lower and upper fixed-point accumulators at a shared precision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Acc {
    pub lo: BigInt,
    pub hi: BigInt,
    pub prec: u32,
}

impl Acc {
    pub fn new(prec: u32) -> Acc {
        Acc { lo: BigInt::zero(), hi: BigInt::zero(), prec }
    }

    pub fn add(&mut self, other: &Acc) {
        self.lo += &other.lo;
        self.hi += &other.hi;
    }

    pub fn to_encl(&self) -> Encl {
        Encl::from_bounds(self.lo.clone(), self.hi.clone(), self.prec)
    }
}

impl GridFn {
    pub fn den(&self) -> &BigInt {
        &self.den
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    /// Adds `F(r/den, level)` to `acc`; `r` must lie in `[0, den)`.
    pub fn accumulate(&self, r: &BigInt, level: u8, acc: &mut Acc) -> Result<()> {
        if matches!(self.level_mask, Some(m) if m != level) {
            return Ok(());
        }
        let i = self.breaks.partition_point(|b| b <= r) - 1;
        for t in &self.pieces[i] {
            match t {
                GTerm::Const(e) => {
                    let (l, h) = e.raw();
                    acc.lo += l;
                    acc.hi += h;
                }
                GTerm::Pow { num, den, center, square, line } => {
                    let d = if *line { (r - center).abs() } else { circ_dist(r, center, &self.den) };
                    if d.is_zero() {
                        return Err(LabError::SingularPoint(format!("{}/{}", r, self.den)));
                    }
                    let q = if *square { den * &d * &d } else { den * &d };
                    let (fl, rem) = num.div_mod_floor(&q);
                    if rem.is_zero() {
                        acc.hi += &fl;
                    } else {
                        acc.hi += &fl + 1;
                    }
                    acc.lo += fl;
                }
                GTerm::Log { c, center } => {
                    let d = circ_dist(r, center, &self.den);
                    if d.is_zero() {
                        return Err(LabError::SingularPoint(format!("{}/{}", r, self.den)));
                    }
                    let e = Encl::ln(&Q::new(d, self.den.clone()), self.prec)?.mul_ratio(c).round_to(self.prec);
                    let (l, h) = e.raw();
                    acc.lo += l;
                    acc.hi += h;
                }
            }
        }
        Ok(())
    }

    /// Smallest grid distance from `r` to a pole of the piece containing `r`.
    pub fn pole_distance(&self, r: &BigInt, level: u8) -> Option<BigInt> {
        if matches!(self.level_mask, Some(m) if m != level) {
            return None;
        }
        let i = self.breaks.partition_point(|b| b <= r) - 1;
        self.pieces[i]
            .iter()
            .filter_map(|t| match t {
                GTerm::Pow { center, line: true, .. } => Some((r - center).abs()),
                GTerm::Pow { center, .. } | GTerm::Log { center, .. } => Some(circ_dist(r, center, &self.den)),
                GTerm::Const(_) => None,
            })
            .min()
    }
}

/// Circular distance between grid points.
pub fn circ_dist(r: &BigInt, c: &BigInt, den: &BigInt) -> BigInt {
    let d = (r - c).mod_floor(den);
    let e = den - &d;
    if d <= e { d } else { e }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::q;
    use proptest::prelude::*;

    #[test]
    fn indicator_variation() {
        let f = PiecewiseFunction::indicator(&CircleSet::interval(q(1, 4), q(1, 2)));
        assert_eq!(f.variation().unwrap(), q(2, 1));
        assert_eq!(f.integral().unwrap().as_rational().unwrap(), &q(1, 4));
    }

    #[test]
    fn inverse_distance_variation() {
        let f = PiecewiseFunction::on_set(&CircleSet::interval(q(1, 8), q(1, 4)), vec![Term::inv(q(1, 1), &q(0, 1))]);
        // 8 + |8 − 4| + 4
        assert_eq!(f.variation().unwrap(), q(16, 1));
        // ∫_{1/8}^{1/4} dx/x = log 2
        let i = f.integral().unwrap();
        assert_eq!(i, LogSum::log(q(1, 1), q(2, 1)).unwrap());
    }

    #[test]
    fn pole_gives_unbounded_variation() {
        let f = PiecewiseFunction::uniform(vec![Term::inv(q(1, 1), &q(1, 3))]);
        assert!(matches!(f.variation(), Err(LabError::NotBoundedVariation(_))));
        assert!(f.integral().is_err());
    }

    #[test]
    fn wrapping_symmetric_integral() {
        // ∫ ‖x‖² over the circle... via c/‖x‖² on [1/4,3/4): 2·(4 − 2) = 4
        let f = PiecewiseFunction::on_set(&CircleSet::interval(q(1, 4), q(3, 4)), vec![Term::inv_sq(q(1, 1), &q(0, 1))]);
        assert_eq!(f.integral().unwrap().as_rational().unwrap(), &q(4, 1));
        assert_eq!(f.eval_q(&q(1, 2), 0).unwrap(), q(4, 1));
        // monotone up to 1/2 then down: jumps 16 and 16, rise 12, fall 12
        assert_eq!(f.variation().unwrap(), q(56, 1));
    }

    #[test]
    fn log_integral() {
        // ∫ log‖x‖ dλ′ = 2∫_0^{1/2} log u du = −log 2 − 1
        let f = PiecewiseFunction::uniform(vec![Term::log(q(1, 1), &q(0, 1))]);
        let v = f.integral().unwrap().to_f64();
        assert!((v - (-(2f64.ln()) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn level_mask_zeroes_other_level() {
        let f = PiecewiseFunction::constant(q(3, 1)).with_level(1);
        assert_eq!(f.eval_q(&q(1, 5), 0).unwrap(), q(0, 1));
        assert_eq!(f.eval_q(&q(1, 5), 1).unwrap(), q(3, 1));
    }

    #[test]
    fn grid_matches_exact() {
        let f = PiecewiseFunction::on_set(&CircleSet::interval(q(1, 7), q(5, 7)), vec![Term::inv(q(2, 3), &q(6, 7))])
            .add(&PiecewiseFunction::uniform(vec![Term::inv_sq(q(-1, 5), &q(1, 14))]))
            .unwrap();
        let den = BigInt::from(14 * 3);
        let g = f.to_grid(&den, 96).unwrap();
        for r in 0..42 {
            let x = Q::new(BigInt::from(r), den.clone());
            if x == q(1, 14) {
                continue;
            }
            let mut acc = Acc::new(96);
            g.accumulate(&BigInt::from(r), 0, &mut acc).unwrap();
            assert!(acc.to_encl().contains(&f.eval_q(&x, 0).unwrap()), "r = {}", r);
        }
    }

    proptest! {
        #[test]
        fn step_variation_is_jump_sum(vals in proptest::collection::vec(-20i64..20, 1..12)) {
            let n = vals.len() as i64;
            let steps: Vec<(Q, Q)> = vals.iter().enumerate().map(|(i, v)| (q(i as i64, n), q(*v, 1))).collect();
            let f = PiecewiseFunction::step(&steps).unwrap();
            let mut expect = 0i64;
            for i in 0..vals.len() {
                expect += (vals[(i + 1) % vals.len()] - vals[i]).abs();
            }
            prop_assert_eq!(f.variation().unwrap(), q(expect, 1));
        }

        #[test]
        fn add_is_pointwise(a in 1i64..30, b in 1i64..30, x in 0i64..60) {
            let f = PiecewiseFunction::indicator(&CircleSet::interval(q(0, 1), q(a, 31)));
            let g = PiecewiseFunction::on_set(&CircleSet::interval(q(b, 31), q(1, 1)), vec![Term::Const(q(2, 1))]);
            let s = f.add(&g).unwrap();
            let x = q(x, 61);
            prop_assert_eq!(s.eval_q(&x, 0).unwrap(), f.eval_q(&x, 0).unwrap() + g.eval_q(&x, 0).unwrap());
        }
    }
}
