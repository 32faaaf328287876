//! Ergodic sums over the rotation and the skew maps, the Denjoy-Koksma check,
//! and verifiers for the explicit Birkhoff-sum bounds on `γ′`, `γ″` and `h₁′`.

use std::cell::RefCell;
use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::{class_check, AngleRep, ConvTable, DigitSchedule};
use crate::encl::{Encl, Verdict, DEFAULT_PRECISION};
use crate::error::{LabError, Result};
use crate::logsum::LogSum;
use crate::piecewise::{Acc, PiecewiseFunction};
use crate::report::{decide, Check};
use crate::roof::{gamma_prime_pieces, gamma_second, h1_prime, phi_constant, phi_function, RoofSpec};
use crate::skew::{build_tower, cumulative_condition, floor_sum, SkewConfig, SkewGrid, SlitMode};
use crate::torus::TorusPoint;
use crate::{fmt_q, frac, norm, qi, Q};

const DIGITS: usize = 20;

/// `(x, j) ↦ (x + α, j + [x + α ∈ [0, slit)])`; a zero slit is the rotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapSpec {
    pub alpha: Q,
    pub slit: Q,
}

impl MapSpec {
    pub fn rotation(alpha: &Q) -> Self {
        MapSpec { alpha: alpha.clone(), slit: Q::zero() }
    }

    pub fn skew(alpha: &Q, slit: &Q) -> Self {
        MapSpec { alpha: alpha.clone(), slit: frac(slit) }
    }

    /// The skew product with its configured slit.
    pub fn full(cfg: &SkewConfig) -> Self {
        Self::skew(cfg.alpha(), &cfg.slit_len())
    }

    /// `T_{α,m}`: slit `2Σ_{s≤m}‖q_{n_s}α‖`.
    pub fn tower(cfg: &SkewConfig, m: usize) -> Self {
        Self::skew(cfg.alpha(), &cfg.slit_sum(m))
    }

    pub fn is_rotation(&self) -> bool {
        self.slit.is_zero()
    }

    /// One exact step.
    pub fn step(&self, z: &TorusPoint) -> TorusPoint {
        let x = frac(&(&z.x + &self.alpha));
        let flip = x < self.slit;
        TorusPoint::new(x, if flip { z.level ^ 1 } else { z.level })
    }

    fn grid_for(&self, start: &Q, fns: &[&PiecewiseFunction]) -> SkewGrid {
        let mut g = SkewGrid::new(&self.alpha, &self.slit, start.denom());
        for f in fns {
            g = g.refine(&f.denominator());
        }
        g
    }
}

/// Streams the orbit of `start` for `n` steps, accumulating every function in
/// `fns`. `visit(i, sums)` sees the partial sums `S_{i+1}`.
pub fn walk<V>(map: &MapSpec, fns: &[&PiecewiseFunction], n: u64, start: &TorusPoint, prec: u32, mut visit: V) -> Result<Vec<Acc>>
where
    V: FnMut(u64, &[Acc]) -> Result<()>,
{
    let grid = map.grid_for(&start.x, fns);
    let gfs = fns.iter().map(|f| f.to_grid(&grid.den, prec)).collect::<Result<Vec<_>>>()?;
    let mut r = grid.point(&start.x)?;
    let mut level = start.level;
    let mut accs = vec![Acc::new(prec); fns.len()];
    for i in 0..n {
        for (g, a) in gfs.iter().zip(accs.iter_mut()) {
            g.accumulate(&r, level, a).map_err(|e| match e {
                LabError::SingularPoint(_) => LabError::SingularOrbit { index: i, x: fmt_q(&grid.value(&r)) },
                e => e,
            })?;
        }
        visit(i, &accs)?;
        grid.advance(&mut r, &mut level);
    }
    Ok(accs)
}

/// `S_n(map, F)(start)` as an enclosure.
pub fn birkhoff_sum(map: &MapSpec, f: &PiecewiseFunction, n: u64, start: &TorusPoint, prec: u32) -> Result<Encl> {
    Ok(walk(map, &[f], n, start, prec, |_, _| Ok(()))?[0].to_encl())
}

/// Term-by-term exact sum; only for rational-valued `F` and short orbits.
pub fn birkhoff_sum_exact(map: &MapSpec, f: &PiecewiseFunction, n: u64, start: &TorusPoint) -> Result<Q> {
    let mut z = TorusPoint::new(frac(&start.x), start.level);
    let mut s = Q::zero();
    for i in 0..n {
        s += f.eval_q(&z.x, z.level).map_err(|e| match e {
            LabError::SingularPoint(_) => LabError::SingularOrbit { index: i, x: fmt_q(&z.x) },
            e => e,
        })?;
        z = map.step(&z);
    }
    Ok(s)
}

/// Exact `S_n(R_α, F)(x)` for a step function `F` in `O(jumps · log n)`,
/// counting visits to each piece with floor sums.
pub fn step_sum_exact(alpha: &Q, f: &PiecewiseFunction, n: &BigInt, x: &Q, level: u8) -> Result<Q> {
    if !f.is_step() {
        return Err(LabError::Unsupported("exact counting needs a step function".into()));
    }
    if matches!(f.level_mask(), Some(l) if l != level) {
        return Ok(Q::zero());
    }
    let den = f.denominator().lcm_with(alpha.denom()).lcm_with(x.denom());
    let dq = Q::from_integer(den.clone());
    let a = (alpha * &dq).to_integer();
    let x0 = (frac(x) * &dq).to_integer();
    // #{k < n : frac(x + kα) < b}
    let below = |b: &Q| -> BigInt {
        if b.is_zero() {
            return BigInt::zero();
        }
        let bb = (b * &dq).to_integer();
        floor_sum(n, &den, &a, &x0) - floor_sum(n, &den, &a, &(&x0 - bb))
    };
    let breaks = f.breaks();
    let mut s = Q::zero();
    for (i, piece) in f.pieces().iter().enumerate() {
        let v: Q = piece
            .iter()
            .map(|t| match t {
                crate::piecewise::Term::Const(c) => c.clone(),
                _ => unreachable!("step functions have constant pieces"),
            })
            .sum();
        if v.is_zero() {
            continue;
        }
        let lo = below(&breaks[i]);
        let hi = match breaks.get(i + 1) {
            Some(b) => below(b),
            None => n.clone(),
        };
        s += v * Q::from_integer(hi - lo);
    }
    Ok(s)
}

trait LcmWith {
    fn lcm_with(&self, o: &BigInt) -> BigInt;
}

impl LcmWith for BigInt {
    fn lcm_with(&self, o: &BigInt) -> BigInt {
        num_integer::Integer::lcm(self, o)
    }
}

/// `min_{s<n, c} ‖x + sα − c‖`.
pub fn closest_approach(alpha: &Q, x: &Q, n: u64, centers: &[Q]) -> Q {
    let mut den = alpha.denom().lcm_with(x.denom());
    for c in centers {
        den = den.lcm_with(c.denom());
    }
    let dq = Q::from_integer(den.clone());
    let step = (alpha * &dq).to_integer();
    let cs: Vec<BigInt> = centers.iter().map(|c| (frac(c) * &dq).to_integer()).collect();
    let mut r = (frac(x) * &dq).to_integer();
    let mut best = den.clone();
    for _ in 0..n {
        for c in &cs {
            let d = crate::piecewise::circ_dist(&r, c, &den);
            if d < best {
                best = d;
            }
        }
        r += &step;
        if r >= den {
            r -= &den;
        }
    }
    Q::new(best, den)
}

/// One verified Birkhoff-sum inequality at one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SumReport {
    pub condition: String,
    pub sample_x: String,
    pub level: u8,
    pub n: usize,
    pub q_n: String,
    pub value: String,
    pub bound: String,
    pub margin: String,
    pub verdict: Verdict,
    pub closest_approach: Option<String>,
}

impl SumReport {
    pub fn passed(&self) -> bool {
        self.verdict.is_pass()
    }

    pub fn to_check(&self, k: Option<u64>) -> Check {
        Check {
            condition: self.condition.clone(),
            k,
            sample: Some(format!("({}, {})", self.sample_x, self.level)),
            value: self.value.clone(),
            bound: self.bound.clone(),
            margin: self.margin.clone(),
            verdict: self.verdict,
        }
    }
}

/// Rows `condition,sample_x,level,n,q_n,value,bound,margin,passed,closest_approach`.
pub fn birkhoff_csv(rows: &[SumReport]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["condition", "sample_x", "level", "n", "q_n", "value", "bound", "margin", "passed", "closest_approach"])
        .unwrap();
    for r in rows {
        w.write_record([
            r.condition.as_str(),
            &r.sample_x,
            &r.level.to_string(),
            &r.n.to_string(),
            &r.q_n,
            &r.value,
            &r.bound,
            &r.margin,
            &r.verdict.to_string(),
            r.closest_approach.as_deref().unwrap_or(""),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Sample metadata shared by the reports of one orbit.
#[derive(Clone, Debug)]
struct Ctx {
    sample: TorusPoint,
    n: usize,
    q_n: BigInt,
    closest: Option<Q>,
}

impl Ctx {
    fn report(&self, condition: &str, verdict: Verdict, value: String, bound: String, margin: String) -> SumReport {
        SumReport {
            condition: condition.to_string(),
            sample_x: fmt_q(&self.sample.x),
            level: self.sample.level,
            n: self.n,
            q_n: self.q_n.to_string(),
            value,
            bound,
            margin,
            verdict,
            closest_approach: self.closest.as_ref().map(fmt_q),
        }
    }

    /// Decides `margin(p) = bound(p) − value(p) >= 0` (or `> 0`) with escalation;
    /// `f` returns `(value, bound, margin)` so two-sided checks can supply their own margin.
    fn judge<F>(&self, condition: &str, strict: bool, start: u32, mut f: F) -> Result<SumReport>
    where
        F: FnMut(u32) -> Result<(Encl, Encl, Encl)>,
    {
        let mut last = None;
        let (verdict, m) = decide(strict, start, |p| {
            let (v, b, m) = f(p)?;
            last = Some((v, b));
            Ok(m)
        })?;
        let (v, b) = last.expect("evaluated at least once");
        Ok(self.report(condition, verdict, v.to_decimal(DIGITS), b.to_decimal(DIGITS), m.to_decimal(DIGITS)))
    }

    fn le<F>(&self, condition: &str, strict: bool, start: u32, mut f: F) -> Result<SumReport>
    where
        F: FnMut(u32) -> Result<(Encl, Encl)>,
    {
        self.judge(condition, strict, start, |p| {
            let (v, b) = f(p)?;
            let m = b.sub(&v);
            Ok((v, b, m))
        })
    }

    /// `lo <= v <= hi`, margin `min(v − lo, hi − v)`; the reported bound is `hi`.
    fn between<F>(&self, condition: &str, start: u32, mut f: F) -> Result<SumReport>
    where
        F: FnMut(u32) -> Result<(Encl, Encl, Encl)>,
    {
        self.judge(condition, false, start, |p| {
            let (lo, v, hi) = f(p)?;
            let m = v.sub(&lo).min(&hi.sub(&v));
            Ok((v, hi, m))
        })
    }
}

/// Memoizes an expensive per-precision computation across several checks.
struct Memo<'a, T: Clone> {
    f: Box<dyn Fn(u32) -> Result<T> + 'a>,
    cache: RefCell<BTreeMap<u32, T>>,
}

impl<'a, T: Clone> Memo<'a, T> {
    fn new(f: impl Fn(u32) -> Result<T> + 'a) -> Self {
        Memo { f: Box::new(f), cache: RefCell::new(BTreeMap::new()) }
    }

    fn get(&self, p: u32) -> Result<T> {
        if let Some(v) = self.cache.borrow().get(&p) {
            return Ok(v.clone());
        }
        let v = (self.f)(p)?;
        self.cache.borrow_mut().insert(p, v.clone());
        Ok(v)
    }
}

fn eq(r: &Q, p: u32) -> Encl {
    Encl::from_ratio(r, p)
}

fn q_log_q(q: &BigInt, p: u32) -> Result<Encl> {
    Ok(Encl::ln_int(q, p)?.mul_int(q))
}

fn conv_q(t: &ConvTable, n: usize) -> Result<BigInt> {
    t.q.get(n).cloned().ok_or(LabError::InsufficientPrefix { needed: n + 1, available: t.len() })
}

/// Total variation as an enclosure; unbounded pieces are a not-BV error.
pub fn variation(f: &PiecewiseFunction, prec: u32) -> Result<Encl> {
    Ok(Encl::from_ratio(&f.variation()?, prec))
}

/// `|S_{q_n}(R_α, F)(x) − q_n∫F| <= Var(F)` at every sample.
pub fn dk_check(f: &PiecewiseFunction, alpha: &AngleRep, n: usize, samples: &[TorusPoint]) -> Result<Vec<SumReport>> {
    let var = f.variation()?;
    let integral = f.integral()?;
    let qn = conv_q(&alpha.table(), n)?;
    let qq = qi(&qn);
    let mut out = vec![];
    for z in samples {
        let ctx = Ctx { sample: z.clone(), n, q_n: qn.clone(), closest: None };
        let masked = matches!(f.level_mask(), Some(l) if l != z.level);
        let mean = if masked { LogSum::zero() } else { integral.scale(&qq) };
        if let (true, Some(m)) = (f.is_step(), mean.as_rational()) {
            let s = step_sum_exact(&alpha.value, f, &qn, &z.x, z.level)?;
            let dev = (s - m).abs();
            let c = Check::rational_le("Denjoy-Koksma", &dev, &var, false);
            out.push(ctx.report("Denjoy-Koksma", c.verdict, c.value, c.bound, c.margin));
        } else {
            let steps = qn.to_u64().ok_or_else(|| LabError::Unsupported("orbit too long to stream".into()))?;
            let map = MapSpec::rotation(&alpha.value);
            let sums = Memo::new(|p| birkhoff_sum(&map, f, steps, z, p));
            out.push(ctx.le("Denjoy-Koksma", false, DEFAULT_PRECISION, |p| {
                Ok((sums.get(p)?.sub(&mean.enclose(p)?).abs(), eq(&var, p)))
            })?);
        }
    }
    Ok(out)
}

/// Constants of the γ-bounds whose values the statements leave implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaConstants {
    /// `|S_{q_n}(γ′) − q_n log q_n| <= k_a / d`
    pub k_a: String,
    /// `|S_{q_n}(γ″)| <= k_second / d²`
    pub k_second: String,
    /// corollary threshold `d > c/q_n`
    pub corollary_c: String,
}

impl Default for GammaConstants {
    fn default() -> Self {
        GammaConstants { k_a: "40".into(), k_second: "54".into(), corollary_c: "1/16".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaOutcome {
    pub reports: Vec<SumReport>,
    /// `|S_{q_n}(γ′) − q_n log q_n|·d`
    pub ratio_a: f64,
    /// `|S_{q_n}(γ″)|·d²`
    pub ratio_second: f64,
    /// `max_{j<q_n}|S_j(γ′)| / (q_n log q_n)`
    pub ratio_partial: f64,
}

#[derive(Clone)]
struct GammaSums {
    pieces: Vec<Encl>,
    second: Encl,
    /// enclosure of `max_{j<q_n}|S_j(γ′)|`
    partial_max: Encl,
}

fn gamma_sums(alpha: &Q, spec: &RoofSpec, q: u64, x: &Q, p: u32) -> Result<GammaSums> {
    let pieces = gamma_prime_pieces(spec);
    let second = gamma_second(spec);
    let mut fns: Vec<&PiecewiseFunction> = pieces.iter().collect();
    fns.push(&second);
    let (mut lo_max, mut hi_max) = (BigInt::zero(), BigInt::zero());
    let sums = walk(&MapSpec::rotation(alpha), &fns, q, &TorusPoint::new(x.clone(), 0), p, |i, accs| {
        if i + 1 < q {
            let lo: BigInt = accs[..5].iter().map(|a| &a.lo).sum();
            let hi: BigInt = accs[..5].iter().map(|a| &a.hi).sum();
            let abs_hi = lo.abs().max(hi.abs());
            let abs_lo = if lo.is_positive() {
                lo
            } else if hi.is_negative() {
                -hi
            } else {
                BigInt::zero()
            };
            if abs_hi > hi_max {
                hi_max = abs_hi;
            }
            if abs_lo > lo_max {
                lo_max = abs_lo;
            }
        }
        Ok(())
    })?;
    Ok(GammaSums {
        pieces: sums[..5].iter().map(Acc::to_encl).collect(),
        second: sums[5].to_encl(),
        partial_max: Encl::from_bounds(lo_max, hi_max, p),
    })
}

/// Items (a)–(e) for `γ′`, `γ″` along the `q_n`-orbit of `x`.
pub fn gamma_bounds_check(alpha: &AngleRep, spec: &RoofSpec, n: usize, x: &Q, consts: &GammaConstants) -> Result<GammaOutcome> {
    let qn = conv_q(&alpha.table(), n)?;
    let q = qn.to_u64().ok_or_else(|| LabError::Unsupported("orbit too long to stream".into()))?;
    let a = &alpha.value;
    let d0 = closest_approach(a, x, q, &[spec.x0.clone()]);
    let d1 = closest_approach(a, x, q, &[spec.x1.clone()]);
    let d = d0.clone().min(d1.clone());
    if d.is_zero() {
        return Err(LabError::SingularOrbit { index: 0, x: fmt_q(x) });
    }
    let k_a = crate::parse_q(&consts.k_a)?;
    let k2 = crate::parse_q(&consts.k_second)?;
    let cc = crate::parse_q(&consts.corollary_c)?;
    let qq = qi(&qn);
    let sums = Memo::new(|p| gamma_sums(a, spec, q, x, p));
    let ctx = Ctx { sample: TorusPoint::new(x.clone(), 0), n, q_n: qn.clone(), closest: Some(d.clone()) };
    let start = DEFAULT_PRECISION;
    let two = Q::from_integer(2.into());
    let l_of = |p: u32| Encl::ln(&(&two / &spec.x0), p);
    let total = |s: &GammaSums| s.pieces.iter().skip(1).fold(s.pieces[0].clone(), |acc, e| acc.add(e));
    let dev = |p: u32| -> Result<Encl> { Ok(total(&sums.get(p)?).sub(&q_log_q(&qn, p)?).abs()) };
    let inv_d = Q::one() / &d;

    let mut out = vec![];
    out.push(ctx.le("gamma (a) |S(g')-q log q| <= K_a/d", false, start, |p| Ok((dev(p)?, eq(&(&k_a * &inv_d), p))))?);
    out.push(ctx.le("gamma (a) explicit 4/d + (28+L)q", false, start, |p| {
        let b = eq(&(Q::from_integer(4.into()) * &inv_d + Q::from_integer(28.into()) * &qq), p).add(&l_of(p)?.mul_ratio(&qq));
        Ok((dev(p)?, b))
    })?);
    out.push(ctx.le("gamma (b) max_j |S_j(g')| <= 7q log q + 7/d + (28+L)q", false, start, |p| {
        let b = q_log_q(&qn, p)?
            .mul_int(&BigInt::from(7))
            .add(&eq(&(Q::from_integer(7.into()) * &inv_d + Q::from_integer(28.into()) * &qq), p))
            .add(&l_of(p)?.mul_ratio(&qq));
        Ok((sums.get(p)?.partial_max, b))
    })?);
    if d > &cc / &qq {
        out.push(ctx.le("gamma (c) |S(g')-q log q| <= (4/c+28+L)q", false, start, |p| {
            let b = eq(&((Q::from_integer(4.into()) / &cc + Q::from_integer(28.into())) * &qq), p).add(&l_of(p)?.mul_ratio(&qq));
            Ok((dev(p)?, b))
        })?);
    }
    out.push(ctx.le("gamma (d) |S(g'')| <= K'/d^2", false, start, |p| Ok((sums.get(p)?.second.abs(), eq(&(&k2 * &inv_d * &inv_d), p))))?);

    // (e): the three sandwiches on the unweighted pieces
    let four_q = Q::from_integer(4.into()) * &qq;
    for (i, di, right, left) in [(0, &d0, 0usize, 1usize), (1, &d1, 3, 4)] {
        let w = if i == 0 { two.clone() } else { Q::one() };
        let inv_di = Q::one() / di;
        out.push(ctx.between(&format!("(L4.3) i={}", i), start, |p| {
            let v = sums.get(p)?.pieces[right].mul_ratio(&(Q::one() / &w));
            // piece = −w·χ/|x−x_i|, so S(−χ/|x−x_i|) = piece/w
            let v = v.add(&q_log_q(&qn, p)?);
            Ok((eq(&(-&inv_di - &four_q), p), v, eq(&four_q, p)))
        })?);
        out.push(ctx.between(&format!("(L4.3') i={}", i), start, |p| {
            let v = sums.get(p)?.pieces[left].mul_ratio(&(Q::one() / &w)).sub(&q_log_q(&qn, p)?);
            Ok((eq(&-four_q.clone(), p), v, eq(&(&inv_di + &four_q), p)))
        })?);
    }
    let inv_d0 = Q::one() / &d0;
    out.push(ctx.between("(L4.3'')", start, |p| {
        let l = l_of(p)?;
        let v = sums.get(p)?.pieces[2].sub(&q_log_q(&qn, p)?);
        let lo = l.sub(&eq(&Q::from_integer(4.into()), p)).mul_ratio(&qq);
        let hi = l.add(&eq(&Q::from_integer(4.into()), p)).mul_ratio(&qq).add(&eq(&inv_d0, p));
        Ok((lo, v, hi))
    })?);

    let s = sums.get(start)?;
    let qlq = q_log_q(&qn, start)?;
    let dq = crate::encl::ratio_to_f64(&d);
    Ok(GammaOutcome {
        reports: out,
        ratio_a: total(&s).sub(&qlq).abs().to_f64() * dq,
        ratio_second: s.second.abs().to_f64() * dq * dq,
        ratio_partial: s.partial_max.to_f64() / qlq.to_f64(),
    })
}

/// Samples `x = (2i+1)/(2N)` whose `q_n`-orbit has closest approach at
/// least `c/q_n` to both `x0` and `x1`.
pub fn gamma_samples(alpha: &AngleRep, spec: &RoofSpec, n: usize, count: usize, c: &Q) -> Result<Vec<Q>> {
    let qn = conv_q(&alpha.table(), n)?;
    let q = qn.to_u64().ok_or_else(|| LabError::Unsupported("orbit too long".into()))?;
    let need = c / qi(&qn);
    let mut big_n = 2 * count as i64 + 1;
    loop {
        let mut out = vec![];
        for i in 0..big_n {
            let x = Q::new(BigInt::from(2 * i + 1), BigInt::from(2 * big_n));
            if closest_approach(&alpha.value, &x, q, &[spec.x0.clone(), spec.x1.clone()]) >= need {
                out.push(x);
                if out.len() == count {
                    return Ok(out);
                }
            }
        }
        if big_n > 1 << 20 {
            return Err(LabError::Precondition(format!("only {} admissible samples", out.len())));
        }
        big_n = big_n * 2 + 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiMode {
    Lemma72,
    PropC,
    Discrepancy,
}

/// Hypotheses shared by the `h₁′` bounds: `m > 1`, `3 <= a_{n_m+1} <= M`, the
/// cumulative condition, and `n_m + 1 < n` within the expansion of α.
pub fn lemma72_hypotheses(cfg: &SkewConfig, m: usize, n: usize) -> Result<()> {
    if m <= 1 {
        return Err(LabError::RegionUndefined(m));
    }
    let nm = cfg.schedule.n(m);
    let digits = cfg.alpha.cf_digits();
    let a = digits.get(nm).cloned().ok_or(LabError::InsufficientPrefix { needed: nm + 1, available: digits.len() })?;
    let big_m = BigInt::from(cfg.schedule.m_cap);
    if a < BigInt::from(3) || a > big_m {
        return Err(LabError::Precondition(format!("a_(n_m+1) = {} outside [3, {}]", a, big_m)));
    }
    if !cumulative_condition(cfg, m) {
        return Err(LabError::Precondition("2Σq_(n_s) < q_(n_r+1) fails".into()));
    }
    if n <= nm + 1 {
        return Err(LabError::Precondition(format!("n = {} must exceed n_m + 1 = {}", n, nm + 1)));
    }
    if n >= cfg.alpha.table().len() {
        return Err(LabError::InsufficientPrefix { needed: n + 1, available: cfg.alpha.table().len() });
    }
    Ok(())
}

/// `z ∈ U_m`, `x ≠ 0` and `min_{k<q_n}‖x+kα‖ >= 1/(16q_n)`; returns the clearance.
pub fn sample_admissible(cfg: &SkewConfig, m: usize, n: usize, z: &TorusPoint) -> Result<Q> {
    let qn = conv_q(&cfg.alpha.table(), n)?;
    let q = qn.to_u64().ok_or_else(|| LabError::Unsupported("orbit too long".into()))?;
    let t = build_tower(cfg, m)?;
    if !t.u.contains(z) {
        return Err(LabError::Precondition(format!("({}, {}) is not in U_m", fmt_q(&z.x), z.level)));
    }
    let d = closest_approach(cfg.alpha(), &z.x, q, &[Q::zero()]);
    if d < Q::one() / (qi(&qn) * Q::from_integer(16.into())) {
        return Err(LabError::Precondition(format!("clearance {} below 1/(16 q_n)", fmt_q(&d))));
    }
    Ok(d)
}

/// Points `((2i+1)/(2N), j)` with `j` the level putting them in `U_m`, filtered by clearance.
pub fn lemma72_samples(cfg: &SkewConfig, m: usize, n: usize, count: usize) -> Result<Vec<TorusPoint>> {
    let qn = conv_q(&cfg.alpha.table(), n)?;
    let q = qn.to_u64().ok_or_else(|| LabError::Unsupported("orbit too long".into()))?;
    let u = build_tower(cfg, m)?.u;
    let need = Q::one() / (qi(&qn) * Q::from_integer(16.into()));
    let mut big_n = 2 * count as i64 + 1;
    loop {
        let mut out = vec![];
        for i in 0..big_n {
            let x = Q::new(BigInt::from(2 * i + 1), BigInt::from(2 * big_n));
            let j = if u.contains(&TorusPoint::new(x.clone(), 0)) { 0 } else { 1 };
            if closest_approach(cfg.alpha(), &x, q, &[Q::zero()]) >= need {
                out.push(TorusPoint::new(x, j));
                if out.len() == count {
                    return Ok(out);
                }
            }
        }
        if big_n > 1 << 20 {
            return Err(LabError::Precondition(format!("only {} admissible samples", out.len())));
        }
        big_n = big_n * 2 + 1;
    }
}

/// `|S_{q_n}(T_{α,m}, h₁′)(z) + q_n log q_n − q_nΦ_{α,m}| <= 43q_n + 64q_{n_m}²`,
/// plus the exact reduction `S(T_m, h₁′)(z) = S(R_α, φ_{α,m})(x)`.
pub fn lemma72_check(cfg: &SkewConfig, m: usize, n: usize, z: &TorusPoint, phi: &LogSum) -> Result<Vec<SumReport>> {
    lemma72_hypotheses(cfg, m, n)?;
    let clearance = sample_admissible(cfg, m, n, z)?;
    let qn = conv_q(&cfg.alpha.table(), n)?;
    let q = qn.to_u64().unwrap();
    let qq = qi(&qn);
    let h = h1_prime();
    let u = build_tower(cfg, m)?.u;
    let phi_fn = phi_function(&u);
    let map = MapSpec::tower(cfg, m);
    let rot = MapSpec::rotation(cfg.alpha());
    let ctx = Ctx { sample: z.clone(), n, q_n: qn.clone(), closest: Some(clearance) };
    let s = Memo::new(|p| birkhoff_sum(&map, &h, q, z, p));
    let s_rot = birkhoff_sum(&rot, &phi_fn, q, &TorusPoint::new(z.x.clone(), 0), DEFAULT_PRECISION)?;
    let s0 = s.get(DEFAULT_PRECISION)?;
    let mut out = vec![ctx.report(
        "reduction S(T_m,h1') = S(R,phi)",
        Verdict::from_bool(s0 == s_rot),
        s0.to_decimal(DIGITS),
        s_rot.to_decimal(DIGITS),
        String::new(),
    )];
    let qm = cfg.qn(m);
    let bound = Q::from_integer(43.into()) * &qq + qi(&(&qm * &qm * 64));
    out.push(ctx.le("lemma72 |S + q log q - q Phi| <= 43q + 64q_nm^2", false, DEFAULT_PRECISION, |p| {
        let v = s.get(p)?.add(&q_log_q(&qn, p)?).sub(&phi.enclose(p)?.mul_ratio(&qq)).abs();
        Ok((v, eq(&bound, p)))
    })?);
    Ok(out)
}

/// The class `A_{ℓ0}` of a schedule at level `m` and its class-level `Φ`.
#[derive(Clone, Debug)]
pub struct ClassContext {
    pub m: usize,
    pub ell0: usize,
    /// `b_1..b_{ℓ0}`
    pub prefix: Vec<u64>,
    pub phi: LogSum,
    pub big_m: u64,
    pub schedule: DigitSchedule,
}

impl ClassContext {
    /// `ℓ0 = min{ℓ : q_ℓ > q_{n_m}²}` read off the representative `cfg.alpha`,
    /// whose `Φ_{α,m}` becomes the class constant.
    pub fn new(cfg: &SkewConfig, m: usize) -> Result<Self> {
        let t = cfg.alpha.table();
        let qm = cfg.qn(m);
        let sq = &qm * &qm;
        let ell0 = (0..t.len()).find(|&l| t.q[l] > sq).ok_or(LabError::InsufficientPrefix { needed: t.len() + 1, available: t.len() })?;
        let prefix = cfg
            .alpha
            .cf_digits()
            .iter()
            .take(ell0)
            .map(|d| d.to_u64().ok_or_else(|| LabError::Unsupported("digit too large".into())))
            .collect::<Result<Vec<_>>>()?;
        if prefix.len() < ell0 {
            return Err(LabError::InsufficientPrefix { needed: ell0, available: prefix.len() });
        }
        Ok(ClassContext { m, ell0, prefix, phi: phi_constant(cfg, m)?, big_m: cfg.schedule.m_cap, schedule: cfg.schedule.clone() })
    }

    /// Members `[b_1..b_{ℓ0}, t, 1, …, 1]` for `t = 1..=count`.
    pub fn members(&self, count: usize, padding: usize) -> Result<Vec<SkewConfig>> {
        (1..=count as u64)
            .map(|t| {
                let mut d = self.prefix.clone();
                d.push(t);
                let a = AngleRep::from_digits(&d, padding)?;
                SkewConfig::new(a, self.schedule.clone(), SlitMode::Full)
            })
            .collect()
    }

    pub fn contains(&self, beta: &AngleRep) -> Result<bool> {
        class_check(beta, &DigitSchedule::digits_only(self.prefix.clone()), self.ell0)
    }
}

/// Prop.-C bound `< (107 + 12(M+1))q_n` for a class member `β`, reported as the
/// single-member sub-margin (107), the discrepancy sub-margin (12(M+1)) and the total.
pub fn propc_check(ctx: &ClassContext, beta: &SkewConfig, n: usize, z: &TorusPoint) -> Result<Vec<SumReport>> {
    let m = ctx.m;
    let nm = beta.schedule.n(m);
    let digits = beta.alpha.cf_digits();
    if digits.get(nm) != Some(&BigInt::from(3)) {
        return Err(LabError::Precondition("b_(n_m+1) must be 3".into()));
    }
    if !ctx.contains(&beta.alpha)? {
        return Err(LabError::Precondition(format!("β is not in the class A_{}", ctx.ell0)));
    }
    if n < ctx.ell0 {
        return Err(LabError::Precondition(format!("n = {} below ℓ0 = {}", n, ctx.ell0)));
    }
    lemma72_hypotheses(beta, m, n)?;
    let clearance = sample_admissible(beta, m, n, z)?;
    let qn = conv_q(&beta.alpha.table(), n)?;
    let q = qn.to_u64().unwrap();
    let qq = qi(&qn);
    let phi_b = phi_constant(beta, m)?;
    let map = MapSpec::tower(beta, m);
    let h = h1_prime();
    let s = Memo::new(|p| birkhoff_sum(&map, &h, q, z, p));
    let c = Ctx { sample: z.clone(), n, q_n: qn.clone(), closest: Some(clearance) };
    let disc = Q::from_integer((12 * (ctx.big_m + 1)).into());
    let total = Q::from_integer(107.into()) + &disc;
    let mut out = vec![];
    out.push(c.le("propC single-member part < 107q", true, DEFAULT_PRECISION, |p| {
        let v = s.get(p)?.add(&q_log_q(&qn, p)?).sub(&phi_b.enclose(p)?.mul_ratio(&qq)).abs();
        Ok((v, eq(&(Q::from_integer(107.into()) * &qq), p)))
    })?);
    out.push(c.le("propC discrepancy part q|Phi_a - Phi_b| < 12(M+1)q", true, DEFAULT_PRECISION, |p| {
        Ok((ctx.phi.sub(&phi_b).enclose(p)?.abs().mul_ratio(&qq), eq(&(&disc * &qq), p)))
    })?);
    out.push(c.le(&format!("propC |S + q log q - q Phi| < {}q", total), true, DEFAULT_PRECISION, |p| {
        let v = s.get(p)?.add(&q_log_q(&qn, p)?).sub(&ctx.phi.enclose(p)?.mul_ratio(&qq)).abs();
        Ok((v, eq(&(&total * &qq), p)))
    })?);
    Ok(out)
}

/// `|Φ_{α,m} − Φ_{β,m}| < 12(M+1)` for two members of one class `A_ℓ` with
/// `ℓ > n_m` and `q_ℓ > q_{n_m}²`.
pub fn discrepancy_check(a: &SkewConfig, b: &SkewConfig, m: usize) -> Result<Check> {
    let ta = a.alpha.cf_digits();
    let tb = b.alpha.cf_digits();
    let ell = ta.iter().zip(&tb).take_while(|(x, y)| x == y).count();
    let qm = a.qn(m);
    let t = a.alpha.table();
    // the shared prefix must reach some ℓ > n_m with q_ℓ > q_{n_m}²
    let ok = (0..=ell.min(t.len() - 1)).any(|l| l > a.schedule.n(m) && t.q[l] > &qm * &qm);
    if !ok {
        return Err(LabError::Precondition("α and β do not share a prefix with q_ℓ > q_(n_m)^2".into()));
    }
    let d = phi_constant(a, m)?.sub(&phi_constant(b, m)?);
    let bound = Q::from_integer((12 * (a.schedule.m_cap + 1)).into());
    Check::encl_le(format!("|Phi_a - Phi_b| < 12(M+1), m = {}", m), true, DEFAULT_PRECISION, |p| Ok(d.enclose(p)?.abs()), |p| {
        Ok(eq(&bound, p))
    })
}

/// Dispatches the three `h₁′`-sum verifiers.
pub fn phi_sum_check(cfg: &SkewConfig, m: usize, n: usize, z: &TorusPoint, which: PhiMode, class: Option<&ClassContext>) -> Result<Vec<SumReport>> {
    match which {
        PhiMode::Lemma72 => lemma72_check(cfg, m, n, z, &phi_constant(cfg, m)?),
        PhiMode::PropC => {
            let ctx = class.ok_or_else(|| LabError::Precondition("propC needs a class context".into()))?;
            propc_check(ctx, cfg, n, z)
        }
        PhiMode::Discrepancy => {
            let ctx = class.ok_or_else(|| LabError::Precondition("discrepancy needs a class context".into()))?;
            let base = ctx.members(1, crate::cf::DEFAULT_PADDING)?.remove(0);
            let c = discrepancy_check(&base, cfg, m)?;
            let qn = conv_q(&cfg.alpha.table(), n)?;
            let x = Ctx { sample: z.clone(), n, q_n: qn, closest: None };
            Ok(vec![x.report(&c.condition, c.verdict, c.value, c.bound, c.margin)])
        }
    }
}

/// Order-preserving parallel map; `workers = None` uses the global pool.
pub fn par_map<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let run = || items.par_iter().map(&f).collect::<Result<Vec<R>>>();
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| LabError::Unsupported(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// `‖q α‖` as a convenience for callers holding only an angle.
pub fn dist_int(q: &BigInt, alpha: &Q) -> Q {
    norm(&(qi(q) * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::q;
    use crate::roof::gamma_prime;
    use crate::torus::CircleSet;
    use proptest::prelude::*;

    fn desk() -> SkewConfig {
        let s = DigitSchedule::new(vec![1, 1, 3, 1, 3, 1, 3], vec![2, 4, 6], vec![], 3).unwrap();
        SkewConfig::for_schedule(s, 10, SlitMode::Full).unwrap()
    }

    #[test]
    fn quarter_rotation_example() {
        let f = PiecewiseFunction::indicator(&CircleSet::interval(q(0, 1), q(1, 2)));
        let r = MapSpec::rotation(&q(1, 4));
        let z = TorusPoint::new(q(0, 1), 0);
        assert_eq!(birkhoff_sum_exact(&r, &f, 3, &z).unwrap(), q(2, 1));
        assert_eq!(step_sum_exact(&q(1, 4), &f, &BigInt::from(3), &q(0, 1), 0).unwrap(), q(2, 1));
        let e = birkhoff_sum(&r, &f, 3, &z, 64).unwrap();
        assert!(e.contains(&q(2, 1)));
        assert_eq!(birkhoff_sum_exact(&r, &f, 1, &z).unwrap(), f.eval_q(&q(0, 1), 0).unwrap());
    }

    #[test]
    fn four_sevenths_pole_sum() {
        // 1/‖x‖ off [0,1/7) along x = 1/14 + k·4/7
        let f = crate::roof::inv_norm_on(&CircleSet::interval(q(1, 7), q(1, 1)));
        let r = MapSpec::rotation(&q(4, 7));
        let z = TorusPoint::new(q(1, 14), 0);
        let mut brute = Q::zero();
        for k in 0..7 {
            let x = frac(&(q(1, 14) + q(4 * k, 7)));
            if x >= q(1, 7) {
                brute += Q::one() / norm(&x);
            }
        }
        let exact = birkhoff_sum_exact(&r, &f, 7, &z).unwrap();
        assert_eq!(exact, brute);
        assert!(birkhoff_sum(&r, &f, 7, &z, 128).unwrap().contains(&exact));
    }

    #[test]
    fn singular_orbit_names_index() {
        let f = crate::roof::inv_norm_on(&CircleSet::full());
        let r = MapSpec::rotation(&q(1, 4));
        let e = birkhoff_sum(&r, &f, 5, &TorusPoint::new(q(1, 2), 0), 64).unwrap_err();
        assert_eq!(e, LabError::SingularOrbit { index: 2, x: "0/1".into() });
        let e = birkhoff_sum_exact(&r, &f, 5, &TorusPoint::new(q(1, 2), 0)).unwrap_err();
        assert!(matches!(e, LabError::SingularOrbit { index: 2, .. }));
    }

    #[test]
    fn dk_constant_and_indicator() {
        let a = AngleRep::from_digits(&[1, 2, 1, 3, 2], 10).unwrap();
        let samples: Vec<TorusPoint> = (0..40).map(|i| TorusPoint::new(q(i, 40), 0)).collect();
        let c = PiecewiseFunction::constant(q(3, 2));
        for r in dk_check(&c, &a, 5, &samples).unwrap() {
            assert!(r.passed());
            assert_eq!(r.margin, "0");
        }
        let f = PiecewiseFunction::indicator(&CircleSet::interval(q(0, 1), q(1, 2)));
        for n in 1..12 {
            assert!(dk_check(&f, &a, n, &samples).unwrap().iter().all(SumReport::passed));
        }
    }

    #[test]
    fn dk_rejects_unbounded() {
        let a = AngleRep::from_digits(&[2, 2], 4).unwrap();
        let f = crate::roof::inv_norm_on(&CircleSet::full());
        assert!(matches!(dk_check(&f, &a, 2, &[]), Err(LabError::NotBoundedVariation(_))));
    }

    #[test]
    fn dk_non_step_bounded_uses_enclosures() {
        let a = AngleRep::from_digits(&[1, 1, 3, 1, 3], 10).unwrap();
        let f = crate::roof::inv_norm_on(&CircleSet::interval(q(1, 8), q(1, 4)));
        let samples: Vec<TorusPoint> = (0..10).map(|i| TorusPoint::new(q(2 * i + 1, 20), 0)).collect();
        for n in 2..8 {
            assert!(dk_check(&f, &a, n, &samples).unwrap().iter().all(SumReport::passed));
        }
    }

    #[test]
    fn skew_walk_matches_exact_oracle() {
        let c = desk();
        let map = MapSpec::full(&c);
        let f = PiecewiseFunction::indicator(&CircleSet::interval(q(1, 3), q(2, 3))).with_level(1);
        let z = TorusPoint::new(q(1, 9), 0);
        let e = birkhoff_sum(&map, &f, 300, &z, 64).unwrap();
        let x = birkhoff_sum_exact(&map, &f, 300, &z).unwrap();
        assert!(e.contains(&x));
    }

    #[test]
    fn gamma_engine_matches_direct_evaluation() {
        // q_n <= 52: direct term-by-term evaluation of γ′ and γ″
        let c = desk();
        let spec = RoofSpec::for_config(&c, q(60, 59)).unwrap();
        let x = q(1, 1000);
        for n in 3..7 {
            let qn = c.alpha.table().q[n].to_u64().unwrap();
            assert!(qn <= 52);
            let r = MapSpec::rotation(c.alpha());
            let z = TorusPoint::new(x.clone(), 0);
            let direct = birkhoff_sum_exact(&r, &gamma_prime(&spec), qn, &z).unwrap();
            let s = gamma_sums(c.alpha(), &spec, qn, &x, 128).unwrap();
            let tot = s.pieces.iter().skip(1).fold(s.pieces[0].clone(), |a, e| a.add(e));
            assert!(tot.contains(&direct));
            let d2 = birkhoff_sum_exact(&r, &gamma_second(&spec), qn, &z).unwrap();
            assert!(s.second.contains(&d2));
            assert!(tot.width_ulps() < BigInt::from(1000), "{}", tot.width_ulps());
        }
    }

    #[test]
    fn gamma_bounds_hold_on_desk_samples() {
        let c = desk();
        let spec = RoofSpec::for_config(&c, q(60, 59)).unwrap();
        let consts = GammaConstants::default();
        for n in [4, 6, 8] {
            let xs = gamma_samples(&c.alpha, &spec, n, 10, &q(1, 16)).unwrap();
            for x in xs {
                let o = gamma_bounds_check(&c.alpha, &spec, n, &x, &consts).unwrap();
                for r in &o.reports {
                    assert!(r.passed(), "{:?}", r);
                }
            }
        }
    }

    #[test]
    fn lemma72_on_desk() {
        let c = desk();
        for m in 2..=3 {
            let phi = phi_constant(&c, m).unwrap();
            let n = c.schedule.n(m) + 2;
            for z in lemma72_samples(&c, m, n, 10).unwrap() {
                for r in lemma72_check(&c, m, n, &z, &phi).unwrap() {
                    assert!(r.passed(), "{:?}", r);
                }
            }
        }
    }

    #[test]
    fn lemma72_rejects_points_outside_u() {
        let c = desk();
        let z = lemma72_samples(&c, 2, 6, 1).unwrap().remove(0);
        let flipped = TorusPoint::new(z.x.clone(), z.level ^ 1);
        let phi = phi_constant(&c, 2).unwrap();
        assert!(matches!(lemma72_check(&c, 2, 6, &flipped, &phi), Err(LabError::Precondition(_))));
        assert!(matches!(lemma72_check(&c, 2, 5, &z, &phi), Err(LabError::Precondition(_))));
    }

    #[test]
    fn propc_and_discrepancy_across_members() {
        let c = desk();
        let m = 2;
        let ctx = ClassContext::new(&c, m).unwrap();
        assert_eq!(ctx.ell0, 7);
        let members = ctx.members(5, 10).unwrap();
        for b in &members {
            let n = ctx.ell0 + 1;
            for z in lemma72_samples(b, m, n, 5).unwrap() {
                let rs = propc_check(&ctx, b, n, &z).unwrap();
                assert_eq!(rs.len(), 3);
                assert!(rs.iter().all(SumReport::passed), "{:?}", rs);
            }
        }
        for w in members.windows(2) {
            assert!(discrepancy_check(&w[0], &w[1], m).unwrap().verdict.is_pass());
        }
    }

    #[test]
    fn csv_schema() {
        let csv = birkhoff_csv(&[]);
        assert_eq!(csv, "condition,sample_x,level,n,q_n,value,bound,margin,passed,closest_approach\n");
    }

    #[test]
    fn parallel_map_preserves_order() {
        let v: Vec<u64> = (0..100).collect();
        let out = par_map(&v, Some(3), |x| Ok(x * 2)).unwrap();
        assert_eq!(out, v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn cocycle_identity(a in 1i64..50, b in 1i64..50, x in 0i64..97) {
            let c = desk();
            let map = MapSpec::full(&c);
            let f = PiecewiseFunction::step(&[(q(0, 1), q(1, 1)), (q(1, 3), q(-2, 1)), (q(3, 4), q(5, 2))]).unwrap().with_level(0);
            let z = TorusPoint::new(q(x, 97), (x % 2) as u8);
            let whole = birkhoff_sum_exact(&map, &f, (a + b) as u64, &z).unwrap();
            let za = crate::skew::skew_apply(&c, &z, &BigInt::from(a));
            let split = birkhoff_sum_exact(&map, &f, a as u64, &z).unwrap() + birkhoff_sum_exact(&map, &f, b as u64, &za).unwrap();
            prop_assert_eq!(whole, split);
        }

        #[test]
        fn step_sum_matches_brute(digits in proptest::collection::vec(1u64..6, 2..8), x in 0i64..50, n in 0u64..200) {
            let a = AngleRep::from_digits(&digits, 2).unwrap();
            let f = PiecewiseFunction::step(&[(q(0, 1), q(1, 1)), (q(2, 7), q(-3, 2)), (q(5, 9), q(0, 1)), (q(7, 8), q(4, 1))]).unwrap();
            let r = MapSpec::rotation(&a.value);
            let brute = birkhoff_sum_exact(&r, &f, n, &TorusPoint::new(q(x, 50), 0)).unwrap();
            prop_assert_eq!(step_sum_exact(&a.value, &f, &BigInt::from(n), &q(x, 50), 0).unwrap(), brute);
        }
    }
}
