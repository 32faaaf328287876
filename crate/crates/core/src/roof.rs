//! The roof `f = g + h_A`, its one-sided derivatives, the reduction `φ_{α,m}`
//! of `h₁′` to the circle, the regions `A_m..F_m` and the constant `Φ_{α,m}`.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::cf::AngleRep;
use crate::encl::{Verdict, DEFAULT_PRECISION};
use crate::error::{LabError, Result};
use crate::logsum::{LogSum, SymbolicValue};
use crate::piecewise::{PiecewiseFunction, Term};
use crate::report::{Check, VerificationReport};
use crate::skew::{build_towers, SkewConfig};
use crate::torus::{ArcJson, CircleSet, TorusIntervalSet, TorusPoint};
use crate::{fmt_q, frac, half, norm, qi, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoofPart {
    F,
    G,
    H,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoofSpec {
    pub a: Q,
    pub x0: Q,
    pub x1: Q,
    pub alpha: AngleRep,
}

impl RoofSpec {
    /// `x0 = 1 − α`, `x1 = |J| − α` (mod 1).
    pub fn new(a: Q, alpha: AngleRep, slit_len: &Q) -> Result<Self> {
        if a <= Q::one() {
            return Err(LabError::Precondition(format!("A = {} must exceed 1", fmt_q(&a))));
        }
        let x0 = frac(&(Q::one() - &alpha.value));
        let x1 = frac(&(slit_len - &alpha.value));
        Ok(RoofSpec { a, x0, x1, alpha })
    }

    pub fn for_config(cfg: &SkewConfig, a: Q) -> Result<Self> {
        Self::new(a, cfg.alpha.clone(), &cfg.slit_len())
    }

    /// `z₀ = (0,1)` followed by `(x0,0), (x0,1), (x1,0), (x1,1)`.
    pub fn singularities(&self) -> Vec<TorusPoint> {
        vec![
            TorusPoint::new(Q::zero(), 1),
            TorusPoint::new(self.x0.clone(), 0),
            TorusPoint::new(self.x0.clone(), 1),
            TorusPoint::new(self.x1.clone(), 0),
            TorusPoint::new(self.x1.clone(), 1),
        ]
    }

    fn check_regular(&self, z: &TorusPoint, part: RoofPart) -> Result<Q> {
        let x = frac(&z.x);
        let g_sing = x == self.x0 || x == self.x1;
        let h_sing = x.is_zero() && z.level == 1;
        let bad = match part {
            RoofPart::F => g_sing || h_sing,
            RoofPart::G => g_sing,
            RoofPart::H => h_sing,
        };
        if bad {
            return Err(LabError::SingularPoint(format!("({}, {})", fmt_q(&x), z.level)));
        }
        Ok(x)
    }
}

/// Exact value as `r + Σ c·log(a)`; `+∞` at a singularity is reported as an error.
pub fn eval_roof(spec: &RoofSpec, z: &TorusPoint, part: RoofPart) -> Result<LogSum> {
    let x = spec.check_regular(z, part)?;
    let mut v = LogSum::zero();
    if part != RoofPart::H {
        v.add_rational(&Q::one());
        v.add_log(-Q::from_integer(2.into()), norm(&(&x - &spec.x0)))?;
        if x < spec.x0 {
            v.add_log(-Q::one(), &spec.x0 - &x)?;
        }
        v.add_log(-Q::one(), norm(&(&x - &spec.x1)))?;
    }
    if part != RoofPart::G && z.level == 1 {
        v.add_log(-spec.a.clone(), norm(&x))?;
    }
    Ok(v)
}

/// `d/du(−log‖u‖)`, right-continuous: `+1/‖u‖` on `[1/2,1)`, `−1/‖u‖` on `(0,1/2)`.
fn slope(u: &Q) -> Q {
    let u = frac(u);
    let n = norm(&u);
    if u >= half() { Q::one() / n } else { -Q::one() / n }
}

/// Right-continuous derivative of order 1 or 2 of one part of the roof.
pub fn eval_part_deriv(spec: &RoofSpec, z: &TorusPoint, part: RoofPart, order: u8) -> Result<Q> {
    if order != 1 && order != 2 {
        return Err(LabError::Unsupported(format!("derivative order {}", order)));
    }
    let x = spec.check_regular(z, part)?;
    let two = Q::from_integer(2.into());
    let mut v = Q::zero();
    if part != RoofPart::H {
        let (d0, d1) = (norm(&(&x - &spec.x0)), norm(&(&x - &spec.x1)));
        if order == 1 {
            v += &two * slope(&(&x - &spec.x0)) + slope(&(&x - &spec.x1));
            if x < spec.x0 {
                v += Q::one() / (&spec.x0 - &x);
            }
        } else {
            v += &two / (&d0 * &d0) + Q::one() / (&d1 * &d1);
            if x < spec.x0 {
                let d = &spec.x0 - &x;
                v += Q::one() / (&d * &d);
            }
        }
    }
    if part != RoofPart::G && z.level == 1 {
        let n = norm(&x);
        v += &spec.a * if order == 1 { slope(&x) } else { Q::one() / (&n * &n) };
    }
    Ok(v)
}

/// Derivative of `f`.
pub fn eval_roof_deriv(spec: &RoofSpec, z: &TorusPoint, order: u8) -> Result<Q> {
    eval_part_deriv(spec, z, RoofPart::F, order)
}

/// `h₁′` at `(x, j)`: `[j=1]·(χ_{[1/2,1)} − χ_{(0,1/2)})(x)/‖x‖`.
pub fn h1_prime_at(z: &TorusPoint) -> Result<Q> {
    if z.level == 0 {
        return Ok(Q::zero());
    }
    let x = frac(&z.x);
    if x.is_zero() {
        return Err(LabError::SingularPoint("(0, 1)".into()));
    }
    Ok(slope(&x))
}

/// The five monotone pieces of `γ′ = g′(·, 0)`: the two sides of `x0` in
/// `2/‖x−x0‖`, the one-sided `1/(x0−x)`, and the two sides of `x1`.
pub fn gamma_prime_pieces(spec: &RoofSpec) -> Vec<PiecewiseFunction> {
    let two = Q::from_integer(2.into());
    let side = |c: &Q, left: bool| {
        let start = if left { c + half() } else { c.clone() };
        CircleSet::arc(&start, &half())
    };
    vec![
        PiecewiseFunction::on_set(&side(&spec.x0, false), vec![Term::inv(-two.clone(), &spec.x0)]),
        PiecewiseFunction::on_set(&side(&spec.x0, true), vec![Term::inv(two, &spec.x0)]),
        PiecewiseFunction::on_set(&CircleSet::interval(Q::zero(), spec.x0.clone()), vec![Term::line_inv(Q::one(), &spec.x0)]),
        PiecewiseFunction::on_set(&side(&spec.x1, false), vec![Term::inv(-Q::one(), &spec.x1)]),
        PiecewiseFunction::on_set(&side(&spec.x1, true), vec![Term::inv(Q::one(), &spec.x1)]),
    ]
}

pub fn gamma_prime(spec: &RoofSpec) -> PiecewiseFunction {
    gamma_prime_pieces(spec).iter().fold(PiecewiseFunction::zero(), |acc, p| acc.add(p).expect("unmasked"))
}

pub fn gamma_second(spec: &RoofSpec) -> PiecewiseFunction {
    let two = Q::from_integer(2.into());
    let whole = PiecewiseFunction::uniform(vec![Term::inv_sq(two, &spec.x0), Term::inv_sq(Q::one(), &spec.x1)]);
    let one_sided = PiecewiseFunction::on_set(&CircleSet::interval(Q::zero(), spec.x0.clone()), vec![Term::line_inv_sq(Q::one(), &spec.x0)]);
    whole.add(&one_sided).expect("unmasked")
}

/// `(χ_{[1/2,1)} − χ_{(0,1/2)})/‖x‖` restricted to `set`.
fn signed_inv_on(set: &CircleSet) -> PiecewiseFunction {
    let lo = set.intersect(&CircleSet::interval(Q::zero(), half()));
    let hi = set.intersect(&CircleSet::interval(half(), Q::one()));
    PiecewiseFunction::on_set(&lo, vec![Term::inv(-Q::one(), &Q::zero())])
        .add(&PiecewiseFunction::on_set(&hi, vec![Term::inv(Q::one(), &Q::zero())]))
        .expect("unmasked")
}

/// `h₁′` as a function on level 1.
pub fn h1_prime() -> PiecewiseFunction {
    signed_inv_on(&CircleSet::full()).with_level(1)
}

/// `h₁″ = [j=1]/‖x‖²`.
pub fn h1_second() -> PiecewiseFunction {
    PiecewiseFunction::uniform(vec![Term::inv_sq(Q::one(), &Q::zero())]).with_level(1)
}

/// `φ_{α,m}(x) = h₁′(x, 1)·χ_{U_m}(x, 1)`, a function on the circle.
pub fn phi_function(u: &TorusIntervalSet) -> PiecewiseFunction {
    signed_inv_on(u.level(1))
}

/// `χ_S/‖x‖`.
pub fn inv_norm_on(set: &CircleSet) -> PiecewiseFunction {
    PiecewiseFunction::on_set(set, vec![Term::inv(Q::one(), &Q::zero())])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionFamily {
    pub m: usize,
    /// `‖q_{n_{m−1}}α‖`
    pub window: Q,
    pub a: CircleSet,
    pub b: CircleSet,
    pub c: CircleSet,
    pub d: CircleSet,
    pub e: CircleSet,
    pub f: CircleSet,
    /// `U_m` itself, kept for φ.
    pub u: TorusIntervalSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionJson {
    pub m: usize,
    pub window: String,
    pub regions: Vec<(String, Vec<ArcJson>)>,
}

impl RegionFamily {
    pub fn named(&self) -> [(&'static str, &CircleSet); 6] {
        [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d), ("E", &self.e), ("F", &self.f)]
    }

    pub fn to_json(&self) -> RegionJson {
        RegionJson {
            m: self.m,
            window: fmt_q(&self.window),
            regions: self
                .named()
                .iter()
                .map(|(n, s)| (n.to_string(), TorusIntervalSet::on_level((*s).clone(), 1).to_json()))
                .collect(),
        }
    }

    /// `[−χ_F + χ_E − χ_A − 2χ_C + χ_B − 2χ_D]/‖x‖`.
    pub fn psi_over_norm(&self) -> PiecewiseFunction {
        let k = |s: &CircleSet, c: i64| PiecewiseFunction::on_set(s, vec![Term::inv(Q::from_integer(c.into()), &Q::zero())]);
        [k(&self.f, -1), k(&self.e, 1), k(&self.a, -1), k(&self.c, -2), k(&self.b, 1), k(&self.d, -2)]
            .iter()
            .fold(PiecewiseFunction::zero(), |acc, p| acc.add(p).expect("unmasked"))
    }

    /// All region endpoints except 0.
    pub fn endpoints(&self) -> Vec<Q> {
        let mut v: Vec<Q> = self
            .named()
            .iter()
            .flat_map(|(_, s)| s.arcs().iter().flat_map(|(l, r)| [l.clone(), frac(r)]))
            .filter(|x| !x.is_zero())
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn build_regions(cfg: &SkewConfig, m: usize) -> Result<RegionFamily> {
    if m <= 1 {
        return Err(LabError::RegionUndefined(m));
    }
    let towers = build_towers(cfg, m)?;
    let prev = towers[m - 1].u.level(1);
    let cur = towers[m].u.level(1);
    let w = cfg.gap(m - 1);
    let left = CircleSet::interval(w.clone(), half());
    let right = CircleSet::interval(half(), Q::one() - &w);
    Ok(RegionFamily {
        m,
        a: prev.intersect(&left),
        b: prev.intersect(&right),
        c: cur.difference(prev).intersect(&left),
        d: prev.difference(cur).intersect(&right),
        e: cur.symdiff(prev),
        f: CircleSet::interval(Q::zero(), w.clone()),
        window: w,
        u: towers[m].u.clone(),
    })
}

/// Pointwise `φ_{α,m} = ψ/‖x‖` at the samples and every region endpoint, plus
/// an exact identity check of the two piecewise functions.
pub fn psi_decompose_check(cfg: &SkewConfig, m: usize, samples: &[Q]) -> Result<VerificationReport> {
    let r = build_regions(cfg, m)?;
    let phi = phi_function(&r.u);
    let psi = r.psi_over_norm();
    let mut rep = VerificationReport::new(format!("psi decomposition, m = {}", m));
    rep.constant("alpha", fmt_q(cfg.alpha()));
    rep.constant("window", fmt_q(&r.window));
    let mut pts: Vec<Q> = samples.iter().map(frac).collect();
    pts.extend(r.endpoints());
    pts.push(half());
    pts.sort();
    pts.dedup();
    for x in pts.iter().filter(|x| !x.is_zero()) {
        let lhs = phi.eval_q(x, 1)?;
        let rhs = psi.eval_q(x, 1)?;
        let ok = lhs == rhs;
        rep.push(Check::flag("phi = psi/|x|", ok, format!("{} vs {}", fmt_q(&lhs), fmt_q(&rhs))).with_k(m as u64).with_sample(fmt_q(x)));
    }
    let diff = phi.add(&psi.neg())?;
    rep.push(Check::flag("phi - psi/|x| vanishes identically", diff.is_zero(), format!("{} pieces", diff.pieces().len())).with_k(m as u64));
    Ok(rep)
}

/// `Φ_{α,m} = ∫(φ_{α,m} + χ_{F_m}/‖x‖)dλ − log‖q_{n_{m−1}}α‖`.
pub fn phi_constant(cfg: &SkewConfig, m: usize) -> Result<LogSum> {
    let r = build_regions(cfg, m)?;
    phi_constant_from(&r)
}

pub fn phi_constant_from(r: &RegionFamily) -> Result<LogSum> {
    let integrand = phi_function(&r.u).add(&inv_norm_on(&r.f))?;
    let mut v = integrand.integral()?;
    v.add_log(-Q::one(), r.window.clone())?;
    Ok(v)
}

/// The same constant assembled region by region: `∫_E − ∫_A − 2∫_C + ∫_B − 2∫_D − log w`.
pub fn phi_constant_by_regions(r: &RegionFamily) -> Result<LogSum> {
    let mut v = LogSum::zero();
    for (s, c) in [(&r.e, 1), (&r.a, -1), (&r.c, -2), (&r.b, 1), (&r.d, -2)] {
        v.add_assign(&inv_norm_on(s).integral()?.scale(&Q::from_integer(c.into())));
    }
    v.add_log(-Q::one(), r.window.clone())?;
    Ok(v)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiJson {
    pub m: usize,
    #[serde(flatten)]
    pub value: SymbolicValue,
}

pub fn phi_json(cfg: &SkewConfig, m: usize, prec: u32) -> Result<PhiJson> {
    Ok(PhiJson { m, value: phi_constant(cfg, m)?.symbolic(prec)? })
}

fn log_q(c: Q, n: &num_bigint::BigInt) -> Result<LogSum> {
    LogSum::log(c, qi(n))
}

/// V1–V3 for level `m`.
pub fn v123_check(cfg: &SkewConfig, m: usize) -> Result<VerificationReport> {
    let r = build_regions(cfg, m)?;
    let big_m = Q::from_integer(cfg.schedule.m_cap.into());
    let qm = cfg.qn(m);
    let nm = cfg.schedule.n(m);
    let qm1 = cfg.q(nm + 1)?.clone();
    let qprev1 = cfg.q(cfg.schedule.n(m - 1) + 1)?.clone();
    let mut rep = VerificationReport::new(format!("V1-V3, m = {}", m));
    rep.constant("q_{n_m}", &qm);
    rep.constant("q_{n_m+1}", &qm1);
    rep.constant("q_{n_{m-1}+1}", &qprev1);
    rep.constant("M", &big_m);
    let k = m as u64;

    let v1_bound = qi(&(&qm * &qprev1 * 8));
    for (name, s) in [("A", &r.a), ("B", &r.b), ("C", &r.c), ("D", &r.d)] {
        let var = inv_norm_on(s).variation()?;
        rep.push(Check::rational_le(format!("V1 Var(chi_{}/|x|) < 8 q_nm q_(n_(m-1)+1)", name), &var, &v1_bound, true).with_k(k));
    }

    let var_e = LogSum::rational(inv_norm_on(&r.e).variation()?);
    let mut v2 = LogSum::rational(qi(&((&qm1 + &qm) * 8)));
    v2.add_assign(&log_q(qi(&(&qm * 8)), &qm)?);
    rep.push(Check::logsum_le("V2 Var(chi_E/|x|) < 8(q_(nm+1) + q_nm + q_nm log q_nm)", &var_e, &v2, true, DEFAULT_PRECISION)?.with_k(k));

    let int_e = inv_norm_on(&r.e).integral()?;
    let lower = log_q(Q::one() / (Q::from_integer(2.into()) * (&big_m + Q::from_integer(2.into()))), &qm)?;
    let four_m = Q::from_integer(4.into()) / &big_m;
    let mut upper = LogSum::rational(Q::from_integer(2.into()) + &four_m);
    upper.add_assign(&log_q(four_m, &qm)?);
    rep.push(Check::logsum_le("V3 lower log q_nm/(2(M+2)) <= int_E", &lower, &int_e, false, DEFAULT_PRECISION)?.with_k(k));
    rep.push(Check::logsum_le("V3 upper int_E <= 2 + 4(1+log q_nm)/M", &int_e, &upper, false, DEFAULT_PRECISION)?.with_k(k));
    Ok(rep)
}

/// Two-sided bounds on `Φ_{α,m}` plus agreement of the two closed forms.
pub fn phi_bounds_check(cfg: &SkewConfig, m: usize) -> Result<VerificationReport> {
    let r = build_regions(cfg, m)?;
    let phi = phi_constant_from(&r)?;
    let by_regions = phi_constant_by_regions(&r)?;
    let big_m = Q::from_integer(cfg.schedule.m_cap.into());
    let qm = cfg.qn(m);
    let qprev1 = cfg.q(cfg.schedule.n(m - 1) + 1)?.clone();
    let slack = qi(&(&qprev1 * 18));
    let mut rep = VerificationReport::new(format!("Phi bounds, m = {}", m));
    rep.constant("Phi", phi.enclose(DEFAULT_PRECISION)?.to_decimal(20));
    let k = m as u64;
    let agree = phi.sub(&by_regions).vanishes();
    rep.push(Check {
        verdict: match agree {
            Some(b) => Verdict::from_bool(b),
            None => Verdict::Undecided,
        },
        ..Check::flag("Phi closed forms agree", true, "integral vs regions")
    }
    .with_k(k));
    let mut lower = log_q(Q::one() / (Q::from_integer(2.into()) * (&big_m + Q::from_integer(2.into()))), &qm)?;
    lower.add_rational(&-slack.clone());
    let mut upper = log_q(Q::from_integer(4.into()) / &big_m, &qm)?;
    upper.add_rational(&slack);
    rep.push(Check::logsum_le("Phi lower log q_nm/(2(M+2)) - 18 q_(n_(m-1)+1)", &lower, &phi, false, DEFAULT_PRECISION)?.with_k(k));
    rep.push(Check::logsum_le("Phi upper 4 log q_nm/M + 18 q_(n_(m-1)+1)", &phi, &upper, false, DEFAULT_PRECISION)?.with_k(k));
    Ok(rep)
}
