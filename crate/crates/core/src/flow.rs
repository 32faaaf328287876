//! The special flow under `f = g + h_A`, the rigidity sets `E_k`, the five
//! criterion conditions along the witnesses, a Monte-Carlo correlation probe
//! and the finite-stage ingredients of unique ergodicity.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{closest_approach, walk, MapSpec};
use crate::construction::{ConstructionState, WitnessRecord};
use crate::encl::{ratio_to_decimal, ratio_to_f64, Encl, Verdict, DEFAULT_PRECISION, PRECISION_CAP};
use crate::error::{LabError, Result};
use crate::logsum::LogSum;
use crate::piecewise::PiecewiseFunction;
use crate::report::{Check, VerificationReport};
use crate::roof::{eval_roof, gamma_prime, gamma_second, h1_prime, h1_second, RoofPart, RoofSpec};
use crate::skew::{build_towers, SkewConfig};
use crate::torus::{CircleSet, TorusIntervalSet, TorusPoint};
use crate::{fmt_q, frac, norm, q, qi, Q};

/// Longest orbit any sweep here will stream.
pub const WALK_CAP: u64 = 1 << 22;
/// Rollovers one `flow_advance` call may perform.
pub const MAX_ROLLOVERS: u64 = 1 << 16;

/// A point `(z, s)` of the flow space, `0 <= s < f(z)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowPoint {
    pub base: TorusPoint,
    pub height: LogSum,
}

impl FlowPoint {
    pub fn new(spec: &RoofSpec, base: TorusPoint, height: LogSum) -> Result<Self> {
        if sign(&height, "flow height")?.is_lt() {
            return Err(LabError::Precondition("flow height must be nonnegative".into()));
        }
        let top = eval_roof(spec, &base, RoofPart::F)?;
        if !sign(&height.sub(&top), "height against roof")?.is_lt() {
            return Err(LabError::Precondition("flow height must lie below the roof".into()));
        }
        Ok(FlowPoint { base, height })
    }
}

/// Exact sign of a log-sum: zero by the exact test, otherwise by escalating enclosures.
fn sign(v: &LogSum, what: &str) -> Result<std::cmp::Ordering> {
    if v.vanishes() == Some(true) {
        return Ok(std::cmp::Ordering::Equal);
    }
    let cap = PRECISION_CAP.min(crate::encl::precision_ceiling());
    let mut p = DEFAULT_PRECISION.min(cap);
    loop {
        if let Some(s) = v.enclose(p)?.sign().filter(|s| s.is_ne()) {
            return Ok(s);
        }
        if p >= cap {
            return Err(LabError::Undecided { bits: p, what: what.into() });
        }
        p = (p * 2).min(cap);
    }
}

/// `Φ_t(z, s)`: raise the height by `t >= 0`, rolling over `(z, f(z)) ~ (Tz, 0)`.
pub fn flow_advance(spec: &RoofSpec, cfg: &SkewConfig, p: &FlowPoint, t: &LogSum) -> Result<FlowPoint> {
    if sign(t, "flow time")?.is_lt() {
        return Err(LabError::Unsupported("negative flow time".into()));
    }
    let map = MapSpec::full(cfg);
    let mut base = p.base.clone();
    let mut h = p.height.add(t);
    for i in 0..MAX_ROLLOVERS {
        let top = eval_roof(spec, &base, RoofPart::F).map_err(|e| match e {
            LabError::SingularPoint(_) => LabError::SingularOrbit { index: i, x: fmt_q(&base.x) },
            e => e,
        })?;
        let rest = h.sub(&top);
        if sign(&rest, "rollover")?.is_lt() {
            return Ok(FlowPoint { base, height: h });
        }
        h = rest;
        base = map.step(&base);
    }
    Err(LabError::Unsupported(format!("more than {} rollovers", MAX_ROLLOVERS)))
}

/// `E_k = ∪_{i<q} T^i(I_k × {j_k})` with its exact checks.
#[derive(Clone, Debug)]
pub struct RigiditySet {
    pub k: usize,
    pub c: Q,
    pub q_t: u64,
    pub y: Q,
    pub j: u8,
    /// `I_k = [y − c/(2q), y + c/(2q)]`
    pub interval: (Q, Q),
    pub e_k: TorusIntervalSet,
    pub measure: Q,
    /// `sup_{z∈E_k} d(z, T^q z)`, when every translate moves rigidly
    pub displacement: Option<Q>,
    pub report: VerificationReport,
}

/// Machine-integer orbit of `y` on the grid `1/den`.
struct Grid {
    den: u128,
    step: u128,
    slit: u128,
}

impl Grid {
    fn new(den: &BigInt, alpha: &Q, slit: &Q) -> Result<Self> {
        let d = den.to_u128().filter(|d| d.leading_zeros() >= 8).ok_or_else(|| LabError::Unsupported("grid denominator beyond 120 bits".into()))?;
        Ok(Grid { den: d, step: scaled(den, &frac(alpha)), slit: scaled(den, slit) })
    }

    fn dist(&self, a: u128, b: u128) -> u128 {
        let d = if a >= b { a - b } else { b - a };
        d.min(self.den - d)
    }
}

fn scaled(den: &BigInt, x: &Q) -> u128 {
    (x * qi(den)).to_integer().to_u128().expect("on the grid")
}

fn lcm_all(xs: &[&Q]) -> BigInt {
    xs.iter().fold(BigInt::one(), |d, x| num_integer::Integer::lcm(&d, x.denom()))
}

fn witness(st: &ConstructionState, k: usize) -> Result<(Q, u8)> {
    match st.witness(k) {
        Some(WitnessRecord::Certified { y, j, .. }) => Ok((crate::parse_q(y)?, *j)),
        Some(w) => Err(LabError::WitnessNotFound(format!("stage {}: {:?}", k, w))),
        None => Err(LabError::Precondition(format!("stage {} not built", k))),
    }
}

fn q_t(st: &ConstructionState, k: usize) -> Result<(BigInt, u64)> {
    let big = st.table().q[st.t[k - 1]].clone();
    let small = big.to_u64().filter(|&v| v <= WALK_CAP).ok_or_else(|| LabError::Unsupported(format!("q_t = {} beyond the walk cap", big)))?;
    Ok((big, small))
}

/// Sweeps the `q_{t_k}` translates of `I_k`, then `q_{t_k}` more steps for the
/// return map, all on one integer grid.
pub fn build_rigidity_set(st: &ConstructionState, k: usize, c: &Q) -> Result<RigiditySet> {
    let cfg = st.config()?;
    let (y, j) = witness(st, k)?;
    let (qt_big, qt) = q_t(st, k)?;
    let kq = k as u64;
    let alpha = cfg.alpha().clone();
    let slit = cfg.slit_len();
    let r = c / (qi(&qt_big) * Q::from_integer(2.into()));
    let den = lcm_all(&[&alpha, &slit, &y, &r]);
    let g = Grid::new(&den, &alpha, &slit)?;
    let rr = scaled(&den, &r);
    let mut pos = scaled(&den, &y);
    let mut level = j;
    let mut levels = Vec::with_capacity(2 * qt as usize + 1);
    let mut pieces: [Vec<(u128, u128)>; 2] = [vec![], vec![]];
    let mut late_hit = None;
    for s in 0..=2 * qt {
        if s > 0 {
            pos += g.step;
            if pos >= g.den {
                pos -= g.den;
            }
            if pos < g.slit {
                level ^= 1;
            }
            // a discontinuity strictly inside T^s(I) splits it
            if g.dist(pos, 0) < rr || g.dist(pos, g.slit) < rr {
                if s <= qt {
                    return Err(LabError::ConstructionViolated { index: s, reason: format!("T^{}(I_{}) meets a discontinuity of T", s, k) });
                }
                late_hit.get_or_insert(s);
            }
        }
        levels.push(level);
        if s < qt {
            let (a, b) = ((pos + g.den - rr) % g.den, pos + rr);
            let v = &mut pieces[level as usize];
            if a < pos {
                if b <= g.den {
                    v.push((a, b));
                } else {
                    v.push((a, g.den));
                    v.push((0, b - g.den));
                }
            } else {
                v.push((a, g.den));
                v.push((0, b));
            }
        }
    }
    let to_set = |mut v: Vec<(u128, u128)>| {
        v.sort_unstable();
        let mut merged: Vec<(u128, u128)> = vec![];
        for (l, r) in v {
            match merged.last_mut() {
                Some(last) if l <= last.1 => last.1 = last.1.max(r),
                _ => merged.push((l, r)),
            }
        }
        let f = |x: u128| Q::new(BigInt::from(x), den.clone());
        CircleSet::from_pieces(merged.into_iter().map(|(l, r)| (f(l), f(r))).collect())
    };
    let [p0, p1] = pieces;
    let e_k = TorusIntervalSet::from_levels(to_set(p0), to_set(p1));
    let measure = e_k.measure();

    let mut rep = VerificationReport::new(format!("rigidity set E_{}", k));
    rep.constant("c", fmt_q(c));
    rep.constant(format!("q_t (k = {})", k), qt);
    let floor = c.clone().min(Q::one()) / Q::from_integer(4.into());
    rep.push(Check::rational_ge("λ(E_k) >= min{1,c}/4", &measure, &floor, false).with_k(kq));
    rep.push(Check::flag("translates pairwise disjoint: λ(E_k) = c/2", measure == c / Q::from_integer(2.into()), fmt_q(&measure)).with_k(kq));
    let prev = st.table().q[st.t[k - 1] - 1].clone();
    let sep = norm(&(qi(&prev) * &alpha));
    rep.push(Check::rational_ge("‖q_(t-1)α‖ > 1/(2q_t)", &sep, &(Q::one() / (qi(&qt_big) * Q::from_integer(2.into()))), true).with_k(kq));
    rep.push(Check::flag("T^i(I_k×{j_k}) single arcs, no discontinuity, i < q_t", true, format!("{} translates", qt)).with_k(kq));
    let shift = norm(&(qi(&qt_big) * &alpha));
    let same_level = (0..qt as usize).all(|i| levels[i] == levels[i + qt as usize]);
    let displacement = if late_hit.is_none() && same_level { Some(shift.clone()) } else { None };
    let detail = match (&late_hit, same_level) {
        (None, true) => fmt_q(&shift),
        (Some(s), _) => format!("T^{}(I) split by a discontinuity", s),
        (None, false) => "T^q changes level on part of E_k".into(),
    };
    rep.push(Check::flag("sup_(E_k) d(z, T^(q_t) z) = ‖q_t α‖", displacement.is_some(), detail).with_k(kq));
    if shift < r {
        let connected = levels[qt as usize] == j && shift <= &r * Q::from_integer(2.into());
        rep.push(Check::flag("H_k = I_k ∪ T^(q_t) I_k connected", connected, format!("shift {} vs |I_k| {}", fmt_q(&shift), fmt_q(&(&r * Q::from_integer(2.into()))))).with_k(kq));
    } else {
        rep.constant(format!("H_k (k = {})", k), "not applicable: ‖q_t α‖ >= c/(2q_t)");
    }
    Ok(RigiditySet { k, c: c.clone(), q_t: qt, interval: (&y - &r, &y + &r), y, j, e_k, measure, displacement, report: rep })
}

/// Largest and smallest partial sums seen along a walk, as fixed-point bounds.
struct PartialMax {
    lo: BigInt,
    hi: BigInt,
}

/// `S_q(f′)`, `max_{j<q}|S_j(f′)|` and the split `S(γ′)`, `S(h_A′)` along the orbit of `z`.
fn first_derivative_sums(cfg: &SkewConfig, spec: &RoofSpec, q: u64, z: &TorusPoint, p: u32) -> Result<(Encl, Encl, Encl, Encl)> {
    let gp = gamma_prime(spec);
    let hp = h1_prime().scale(&spec.a);
    let mut m = PartialMax { lo: BigInt::zero(), hi: BigInt::zero() };
    let sums = walk(&MapSpec::full(cfg), &[&gp, &hp], q, z, p, |i, accs| {
        if i + 1 < q {
            let lo = &accs[0].lo + &accs[1].lo;
            let hi = &accs[0].hi + &accs[1].hi;
            let abs_hi = lo.abs().max(hi.abs());
            let abs_lo = if lo.is_positive() {
                lo
            } else if hi.is_negative() {
                -hi
            } else {
                BigInt::zero()
            };
            if abs_hi > m.hi {
                m.hi = abs_hi;
            }
            if abs_lo > m.lo {
                m.lo = abs_lo;
            }
        }
        Ok(())
    })?;
    let (g, h) = (sums[0].to_encl(), sums[1].to_encl());
    Ok((g.add(&h), Encl::from_bounds(m.lo, m.hi, p), g, h))
}

fn second_derivative(spec: &RoofSpec) -> (PiecewiseFunction, PiecewiseFunction) {
    (gamma_second(spec), h1_second().scale(&spec.a))
}

fn second_sum(cfg: &SkewConfig, spec: &RoofSpec, q: u64, z: &TorusPoint, p: u32) -> Result<Encl> {
    let (g2, h2) = second_derivative(spec);
    let s = walk(&MapSpec::full(cfg), &[&g2, &h2], q, z, p, |_, _| Ok(()))?;
    Ok(s[0].to_encl().add(&s[1].to_encl()))
}

/// Cached evaluation at the default precision, recomputed only on escalation.
fn at<T: Clone>(cache: &T, p: u32, f: impl FnOnce(u32) -> Result<T>) -> Result<T> {
    if p == DEFAULT_PRECISION {
        Ok(cache.clone())
    } else {
        f(p)
    }
}

/// Conditions B1–B5 of the non-mixing criterion at the witness of stage `k`.
pub fn criterion_check(st: &ConstructionState, k: usize, c: &Q, big_c: &Q) -> Result<VerificationReport> {
    let rs = build_rigidity_set(st, k, c)?;
    let mut rep = rs.report.clone();
    rep.title = format!("non-mixing criterion, k = {}", k);
    let kq = k as u64;
    let cfg = st.config()?;
    let spec = RoofSpec::for_config(&cfg, st.constants.roof_a()?)?;
    let (qt_big, qt) = q_t(st, k)?;
    let qq = qi(&qt_big);
    let z = TorusPoint::new(rs.y.clone(), rs.j);
    let alpha = cfg.alpha().clone();
    rep.constant("C", fmt_q(big_c));
    rep.constant("A", fmt_q(&spec.a));
    rep.constant("finite stages", "margins are reported per stage; no conclusion about mixing is drawn from them");

    // B1
    let two_c = Q::from_integer(2.into()) * c / &qq;
    let d = closest_approach(&alpha, &rs.y, qt, &[spec.x0.clone(), spec.x1.clone()]);
    rep.push(Check::rational_ge("B1 min_(s<q) d(T^s z, z_1..z_4) >= 2c/q", &d, &two_c, false).with_k(kq));

    // B2 surrogate: q log q d(T^q z, z) < log q / a_(t+1)
    let shift = rs.displacement.clone().unwrap_or_else(|| norm(&(&qq * &alpha)));
    let a_next = BigInt::from(st.digits[st.t[k - 1]]);
    let lhs = &qq * &shift;
    let b2 = Check::encl_le("B2 q log q·d(T^q z, z) < log q / a_(t+1)", true, DEFAULT_PRECISION, |p| Ok(Encl::ln_int(&qt_big, p)?.mul_ratio(&lhs)), |p| {
        Ok(Encl::ln_int(&qt_big, p)?.mul_ratio(&(Q::one() / qi(&a_next))))
    })?;
    rep.push(b2.with_k(kq));

    // B3, B5
    let first = first_derivative_sums(&cfg, &spec, qt, &z, DEFAULT_PRECISION)?;
    let b3 = Check::encl_le("B3 |S_q(f')(z)| < C q", true, DEFAULT_PRECISION, |p| Ok(at(&first, p, |p| first_derivative_sums(&cfg, &spec, qt, &z, p))?.0.abs()), |p| {
        Ok(Encl::from_ratio(&(big_c * &qq), p))
    })?;
    rep.push(b3.with_k(kq));
    let b5 = Check::encl_le("B5 max_(j<q) |S_j(f')(z)| < C q log q", true, DEFAULT_PRECISION, |p| Ok(at(&first, p, |p| first_derivative_sums(&cfg, &spec, qt, &z, p))?.1), |p| {
        Ok(Encl::ln_int(&qt_big, p)?.mul_ratio(&(big_c * &qq)))
    })?;
    rep.push(b5.with_k(kq));
    let lq = Encl::ln_int(&qt_big, DEFAULT_PRECISION)?.mul_ratio(&qq);
    rep.constant(format!("B3 split |S(g')-q log q| (k = {})", k), first.2.sub(&lq).abs().to_decimal(6));
    rep.constant(format!("B3 split |S(h')+q log q| (k = {})", k), first.3.add(&lq).abs().to_decimal(6));
    let qf = ratio_to_f64(&qq);
    rep.constant(format!("B3 measured C (k = {})", k), format!("{:.4}", first.0.abs().to_f64() / qf));
    rep.constant(format!("B5 measured C (k = {})", k), format!("{:.4}", first.1.to_f64() / (qf * qf.ln())));

    // B4: every term of f'' is convex between singularities, so once the orbit
    // of the window avoids them S_q(f'') is convex there and peaks at an end.
    let w = c / &qq;
    let clear = closest_approach(&alpha, &rs.y, qt, &[spec.x0.clone(), spec.x1.clone(), Q::zero()]);
    rep.push(Check::rational_ge("B4 window orbit clears singularities and discontinuities", &clear, &w, true).with_k(kq));
    let mut worst = 0f64;
    for (name, x) in [("y-c/q", &rs.y - &w), ("y", rs.y.clone()), ("y+c/q", &rs.y + &w)] {
        let zx = TorusPoint::new(x, rs.j);
        let s = second_sum(&cfg, &spec, qt, &zx, DEFAULT_PRECISION)?;
        worst = worst.max(s.to_f64());
        let b4 = Check::encl_le("B4 |S_q(f'')(x)| < C q^2", true, DEFAULT_PRECISION, |p| Ok(at(&s, p, |p| second_sum(&cfg, &spec, qt, &zx, p))?.abs()), |p| {
            Ok(Encl::from_ratio(&(big_c * &qq * &qq), p))
        })?;
        rep.push(b4.with_k(kq).with_sample(name));
    }
    rep.constant(format!("B4 measured C (k = {})", k), format!("{:.4}", worst / (qf * qf)));
    Ok(rep)
}

/// `criterion_check` for every built stage plus decay of the B2 surrogate.
pub fn criterion_all(st: &ConstructionState, c: &Q, big_c: &Q) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new(format!("non-mixing criterion, stages 1..={}", st.stage));
    let mut surrogate = vec![];
    for k in 1..=st.stage {
        rep.extend(criterion_check(st, k, c, big_c)?);
        let (qt_big, _) = q_t(st, k)?;
        let shift = norm(&(qi(&qt_big) * st.alpha()?.value));
        surrogate.push(Encl::ln_int(&qt_big, 64)?.mul_ratio(&(qi(&qt_big) * shift)).to_f64());
    }
    if surrogate.len() >= 2 {
        let ok = surrogate.windows(2).all(|w| w[1] < w[0]);
        rep.push(Check::flag("B2 surrogate q log q ‖qα‖ decreasing across stages", ok, surrogate.iter().map(|v| format!("{:.6}", v)).collect::<Vec<_>>().join(" > ")));
    }
    Ok(rep)
}

/// An indicator on the flow space: base set times a height band.
#[derive(Clone, Debug)]
pub struct FlowObservable {
    pub base: TorusIntervalSet,
    pub heights: (Q, Q),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub seed: u64,
}

/// Double-precision roof, for the diagnostic probe only.
struct FastRoof {
    alpha: f64,
    slit: f64,
    x0: f64,
    x1: f64,
    a: f64,
}

impl FastRoof {
    fn new(spec: &RoofSpec, cfg: &SkewConfig) -> Self {
        FastRoof {
            alpha: ratio_to_f64(cfg.alpha()),
            slit: ratio_to_f64(&cfg.slit_len()),
            x0: ratio_to_f64(&spec.x0),
            x1: ratio_to_f64(&spec.x1),
            a: ratio_to_f64(&spec.a),
        }
    }

    fn nrm(x: f64) -> f64 {
        let f = x.rem_euclid(1.0);
        f.min(1.0 - f)
    }

    fn f(&self, x: f64, level: u8) -> f64 {
        let mut v = 1.0 - 2.0 * Self::nrm(x - self.x0).ln() - Self::nrm(x - self.x1).ln();
        if x < self.x0 {
            v -= (self.x0 - x).ln();
        }
        if level == 1 {
            v -= self.a * Self::nrm(x).ln();
        }
        v
    }

    /// `∫ f dλ` with `λ` the normalized measure on `T × Z₂`.
    fn mean(&self) -> f64 {
        let l = 1.0 + std::f64::consts::LN_2;
        1.0 + 3.0 * l + self.x0 * (1.0 - self.x0.ln()) + self.a * l / 2.0
    }

    fn advance(&self, mut x: f64, mut level: u8, mut s: f64, t: f64) -> (f64, u8, f64) {
        s += t;
        loop {
            let top = self.f(x, level);
            if s < top {
                return (x, level, s);
            }
            s -= top;
            x = (x + self.alpha).rem_euclid(1.0);
            if x < self.slit {
                level ^= 1;
            }
        }
    }
}

/// Seeded stratified Monte-Carlo estimates of `μ(O ∩ Φ_{−t}O′)` in double
/// precision. Diagnostic output only: nothing here is certified.
pub fn correlation_probe(spec: &RoofSpec, cfg: &SkewConfig, obs: &FlowObservable, obs2: &FlowObservable, times: &[f64], samples: usize, seed: u64) -> Vec<CorrelationRow> {
    let roof = FastRoof::new(spec, cfg);
    let cap = ratio_to_f64(&obs.heights.1);
    let (h0, h1) = (ratio_to_f64(&obs.heights.0), cap);
    let (g0, g1) = (ratio_to_f64(&obs2.heights.0), ratio_to_f64(&obs2.heights.1));
    let scale = cap / roof.mean();
    let in_base = |set: &TorusIntervalSet, x: f64, level: u8| {
        set.level(level).arcs().iter().any(|(l, r)| ratio_to_f64(l) <= x && x < ratio_to_f64(r))
    };
    times
        .iter()
        .map(|&t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut sum, mut sum2) = (0f64, 0f64);
            for i in 0..samples {
                let x = (i as f64 + rng.gen::<f64>()) / samples as f64;
                let level = rng.gen::<bool>() as u8;
                let s = rng.gen::<f64>() * cap;
                let mut v = 0.0;
                if s >= h0 && s < h1 && s < roof.f(x, level) && in_base(&obs.base, x, level) {
                    let (x2, l2, s2) = roof.advance(x, level, s, t);
                    if s2 >= g0 && s2 < g1 && in_base(&obs2.base, x2, l2) {
                        v = scale;
                    }
                }
                sum += v;
                sum2 += v * v;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0);
            CorrelationRow { t, estimate: mean, stderr: (var / n).sqrt(), seed }
        })
        .collect()
}

/// `t`, `estimate`, `stderr`, `seed` rows.
pub fn correlation_csv(rows: &[CorrelationRow]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Times `∫f·q_{t_k}` for every built stage, each followed by a generic time nearby.
pub fn rigidity_times(spec: &RoofSpec, st: &ConstructionState) -> Result<Vec<f64>> {
    let cfg = st.config()?;
    let mean = FastRoof::new(spec, &cfg).mean();
    let t = st.table();
    Ok((1..=st.stage).flat_map(|k| {
        let qt = t.q[st.t[k - 1]].to_f64().unwrap_or(f64::INFINITY);
        [mean * qt, mean * qt * std::f64::consts::SQRT_2]
    }).collect())
}

/// `λ{x : |N(x)/q − λ(B)| > eps}` with `N(x) = #{i < q : x + iα ∈ B}`, by an
/// exact sweep over the breakpoints `b − iα`.
fn rotation_deviation(alpha: &Q, b: &CircleSet, q: u64, eps: &Q) -> Result<Q> {
    let mut dens: Vec<&Q> = vec![alpha];
    for (l, r) in b.arcs() {
        dens.push(l);
        dens.push(r);
    }
    let den = lcm_all(&dens);
    let d = den.to_u128().filter(|d| d.leading_zeros() >= 8).ok_or_else(|| LabError::Unsupported("grid denominator beyond 120 bits".into()))?;
    let step = scaled(&den, &frac(alpha));
    let arcs: Vec<(u128, u128)> = b.arcs().iter().map(|(l, r)| (scaled(&den, l), scaled(&den, r))).collect();
    let mut events: HashMap<u128, i64> = HashMap::new();
    let mut start = 0i64;
    let mut shift = 0u128;
    for _ in 0..q {
        let back = d - shift;
        for &(l, r) in &arcs {
            if r - l == d {
                start += 1;
                continue;
            }
            // x + shift ∈ [l, r)  ⇔  x ∈ [l', r') with r' taken in (0, d]
            let l2 = (l + back) % d;
            let r2 = (r + back - 1) % d + 1;
            if l2 > r2 {
                start += 1;
            }
            *events.entry(l2).or_default() += 1;
            if r2 < d {
                *events.entry(r2).or_default() -= 1;
            }
        }
        shift = (shift + step) % d;
    }
    let leb = b.measure();
    let qq = Q::from_integer(q.into());
    let bad: Vec<bool> = (0..=q).map(|n| (Q::from_integer(n.into()) / &qq - &leb).abs() > *eps).collect();
    let mut keys: Vec<u128> = events.keys().copied().collect();
    keys.sort_unstable();
    let mut count = start;
    let mut prev = 0u128;
    let mut total = 0u128;
    for key in keys {
        if bad[count as usize] {
            total += key - prev;
        }
        count += events[&key];
        prev = key;
    }
    if bad[count as usize] {
        total += d - prev;
    }
    Ok(Q::new(BigInt::from(total), den))
}

/// The finite-stage ingredients of unique ergodicity at stage `k`: the
/// deviation measure over `U_{2k}`, the sandwich on `λ(U_{2k+1} △ U_{2k})`.
pub fn ue_probe(cfg: &SkewConfig, k: usize, set: &TorusIntervalSet, eps: &Q) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new(format!("unique-ergodicity ingredients, k = {}", k));
    let kq = k as u64;
    let towers = build_towers(cfg, (2 * k + 1).min(cfg.checkpoint_count()))?;
    let u = &towers[2 * k].u;
    let proj = set.level(0).intersect(u.level(0)).union(&set.level(1).intersect(u.level(1)));
    let qn = cfg.qn(2 * k).to_u64().filter(|&v| v <= WALK_CAP).ok_or_else(|| LabError::Unsupported("q_(n_2k) beyond the walk cap".into()))?;
    let dev = rotation_deviation(cfg.alpha(), &proj, qn, eps)? / Q::from_integer(2.into());
    rep.constant("eps", fmt_q(eps));
    rep.constant(format!("deviation measure (k = {})", k), ratio_to_decimal(&dev, 12));
    rep.push(Check::rational_le("deviation set inside U_2k", &dev, &q(1, 2), false).with_k(kq));
    if towers.len() > 2 * k + 1 {
        let m = cfg.schedule.m_cap as i64;
        let sd = towers[2 * k + 1].sym_diff.measure();
        rep.push(Check::rational_ge("λ(U_(2k+1)△U_2k) > 1/(M+2)", &sd, &q(1, m + 2), true).with_k(kq));
        rep.push(Check::rational_le("λ(U_(2k+1)△U_2k) < 1/3", &sd, &q(1, 3), true).with_k(kq));
    }
    Ok(rep)
}

/// `ue_probe` over every built stage with the cross-stage decay checks.
pub fn ue_report(cfg: &SkewConfig, set: &TorusIntervalSet, eps: &Q) -> Result<VerificationReport> {
    let stages = cfg.checkpoint_count() / 2;
    let mut rep = VerificationReport::new(format!("unique-ergodicity ingredients, stages 1..={}", stages));
    let towers = build_towers(cfg, cfg.checkpoint_count())?;
    let m = cfg.schedule.m_cap as i64;
    let sd1 = towers[1].sym_diff.measure();
    rep.push(Check::rational_ge("λ(U_1△U_0) > 1/(M+2)", &sd1, &q(1, m + 2), true).with_k(0));
    rep.push(Check::rational_le("λ(U_1△U_0) < 1/3", &sd1, &q(1, 3), true).with_k(0));
    let mut devs = vec![];
    let mut even = vec![];
    for k in 1..=stages {
        let r = ue_probe(cfg, k, set, eps)?;
        devs.push(crate::parse_q(&r.constants[&format!("deviation measure (k = {})", k)].clone()).unwrap_or_else(|_| Q::zero()));
        even.push(towers[2 * k].sym_diff.measure());
        rep.extend(r);
    }
    let dev_exact: Vec<Q> = (1..=stages)
        .map(|k| {
            let u = &towers[2 * k].u;
            let proj = set.level(0).intersect(u.level(0)).union(&set.level(1).intersect(u.level(1)));
            let qn = cfg.qn(2 * k).to_u64().unwrap_or(0);
            rotation_deviation(cfg.alpha(), &proj, qn, eps).map(|v| v / Q::from_integer(2.into()))
        })
        .collect::<Result<_>>()?;
    let _ = devs;
    if stages >= 2 {
        let fmt = |v: &[Q]| v.iter().map(|x| ratio_to_decimal(x, 8)).collect::<Vec<_>>().join(" > ");
        rep.push(Check::flag("λ(U_2k△U_(2k-1)) strictly decreasing", even.windows(2).all(|w| w[1] < w[0]), fmt(&even)));
        rep.push(Check::flag("deviation measure decreasing in k", dev_exact.windows(2).all(|w| w[1] < w[0]), fmt(&dev_exact)));
    }
    Ok(rep)
}

/// Verdict of a report as the CLI exit contract sees it.
pub fn report_verdict(r: &VerificationReport) -> Verdict {
    r.verdict()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{base_stage, ConstructionParams};
    use crate::desk;
    use once_cell::sync::Lazy;
    use proptest::prelude::*;

    static STAGE1: Lazy<ConstructionState> = Lazy::new(|| base_stage(&ConstructionParams::relaxed()).unwrap());

    fn desk_spec() -> (SkewConfig, RoofSpec) {
        let c = desk::config("desk").unwrap();
        let s = RoofSpec::for_config(&c, q(3, 1)).unwrap();
        (c, s)
    }

    #[test]
    fn flow_identity_and_no_rollover() {
        let (c, s) = desk_spec();
        let p = FlowPoint::new(&s, TorusPoint::new(q(1, 3), 0), LogSum::rational(q(1, 2))).unwrap();
        assert_eq!(flow_advance(&s, &c, &p, &LogSum::zero()).unwrap(), p);
        let f = flow_advance(&s, &c, &p, &LogSum::rational(q(1, 4))).unwrap();
        assert_eq!(f.base, p.base);
        assert_eq!(f.height, LogSum::rational(q(3, 4)));
    }

    #[test]
    fn exact_rollover_lands_on_zero() {
        let (c, s) = desk_spec();
        let z = TorusPoint::new(q(1, 3), 1);
        let top = eval_roof(&s, &z, RoofPart::F).unwrap();
        let p = FlowPoint::new(&s, z.clone(), LogSum::rational(q(1, 2))).unwrap();
        let t = top.sub(&LogSum::rational(q(1, 2)));
        let f = flow_advance(&s, &c, &p, &t).unwrap();
        assert_eq!(f.base, MapSpec::full(&c).step(&z));
        assert_eq!(f.height.vanishes(), Some(true));
    }

    #[test]
    fn flow_point_rejects_height_above_roof() {
        let (_, s) = desk_spec();
        assert!(FlowPoint::new(&s, TorusPoint::new(q(1, 3), 0), LogSum::int(100)).is_err());
        assert!(FlowPoint::new(&s, TorusPoint::new(q(1, 3), 0), LogSum::int(-1)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn flow_is_a_semigroup(xn in 1i64..97, lv in 0u8..2, a in 0i64..40, b in 0i64..40) {
            let (c, s) = desk_spec();
            let p = FlowPoint::new(&s, TorusPoint::new(q(xn, 97), lv), LogSum::zero()).unwrap();
            let (ta, tb) = (LogSum::rational(q(a, 4)), LogSum::rational(q(b, 4)));
            let one = flow_advance(&s, &c, &p, &ta.add(&tb));
            let two = flow_advance(&s, &c, &p, &ta).and_then(|m| flow_advance(&s, &c, &m, &tb));
            match (one, two) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(&x.base, &y.base);
                    prop_assert_eq!(x.height.sub(&y.height).vanishes(), Some(true));
                }
                (Err(_), Err(_)) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }
    }

    #[test]
    fn fast_roof_mean_matches_integral() {
        let (c, s) = desk_spec();
        let r = FastRoof::new(&s, &c);
        let n = 200_000;
        let mut acc = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            acc += (r.f(x, 0) + r.f(x, 1)) / 2.0;
        }
        assert!((acc / n as f64 - r.mean()).abs() < 1e-2, "{} vs {}", acc / n as f64, r.mean());
    }

    #[test]
    fn rigidity_set_stage_one() {
        let rs = build_rigidity_set(&STAGE1, 1, &q(1, 32)).unwrap();
        assert!(rs.report.verdict().is_pass(), "{}", rs.report.table());
        assert_eq!(rs.measure, q(1, 64));
        let shift = norm(&(qi(&STAGE1.table().q[STAGE1.t[0]]) * STAGE1.alpha().unwrap().value));
        assert_eq!(rs.displacement, Some(shift));
    }

    #[test]
    fn criterion_stage_one() {
        let rep = criterion_check(&STAGE1, 1, &q(1, 32), &q(64, 1)).unwrap();
        assert!(rep.verdict().is_pass(), "{}", rep.table());
        assert_eq!(rep.checks.iter().filter(|c| c.condition.starts_with("B4 |S")).count(), 3);
    }

    #[test]
    fn correlation_probe_is_seeded() {
        let (c, s) = desk_spec();
        let o = FlowObservable { base: TorusIntervalSet::both_levels(CircleSet::interval(q(0, 1), q(1, 2))), heights: (q(0, 1), q(2, 1)) };
        let a = correlation_probe(&s, &c, &o, &o, &[0.0, 0.01, 5.0], 2000, 7);
        let b = correlation_probe(&s, &c, &o, &o, &[0.0, 0.01, 5.0], 2000, 7);
        assert_eq!(a, b);
        // λ(O) = (1/2)·2/∫f
        let target = 1.0 / FastRoof::new(&s, &c).mean();
        assert!((a[0].estimate - target).abs() < 4.0 * a[0].stderr + 1e-3);
        assert!((a[1].estimate - a[0].estimate).abs() < 0.01);
        assert!(correlation_csv(&a).starts_with("t,estimate,stderr,seed\n"));
    }

    #[test]
    fn deviation_of_full_space_is_empty() {
        let c = desk::config("desk").unwrap();
        let rep = ue_probe(&c, 1, &TorusIntervalSet::full(), &q(1, 10)).unwrap();
        assert_eq!(rep.constants["deviation measure (k = 1)"], "0");
        assert!(rep.verdict().is_pass(), "{}", rep.table());
    }

    #[test]
    fn deviation_matches_brute_force() {
        let alpha = q(5, 13);
        let b = CircleSet::interval(q(1, 7), q(3, 5));
        let eps = q(1, 10);
        let got = rotation_deviation(&alpha, &b, 4, &eps).unwrap();
        let n = 13 * 7 * 5 * 8;
        let mut bad = 0;
        for i in 0..n {
            let x = Q::new(BigInt::from(2 * i + 1), BigInt::from(2 * n));
            let cnt = (0..4).filter(|s| b.contains(&(&x + Q::from_integer((*s).into()) * &alpha))).count();
            if (Q::from_integer(cnt.into()) / Q::from_integer(4.into()) - b.measure()).abs() > eps {
                bad += 1;
            }
        }
        assert_eq!(got, Q::new(BigInt::from(bad), BigInt::from(n)));
    }

    #[test]
    fn ue_sandwich_on_desk() {
        let c = desk::config("desk").unwrap();
        let a = TorusIntervalSet::on_level(CircleSet::interval(q(0, 1), q(1, 2)), 0);
        let rep = ue_report(&c, &a, &q(1, 10)).unwrap();
        assert!(rep.checks.iter().filter(|c| c.condition.contains("1/(M+2)") || c.condition.contains("< 1/3")).all(|c| c.verdict.is_pass()), "{}", rep.table());
    }
}
