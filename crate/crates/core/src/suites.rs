//! Named verification suites: one driver per suite, each returning a single
//! report over a configuration (and, for `crit`, a construction state).

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::birkhoff::{
    discrepancy_check, dk_check, gamma_bounds_check, gamma_samples, lemma72_check, lemma72_hypotheses, lemma72_samples, par_map, propc_check,
    ClassContext, GammaConstants, SumReport,
};
use crate::cf::DEFAULT_PADDING;
use crate::construction::ConstructionState;
use crate::error::{LabError, Result};
use crate::flow::{criterion_all, ue_report};
use crate::piecewise::PiecewiseFunction;
use crate::report::{Check, VerificationReport};
use crate::roof::{phi_bounds_check, phi_constant, psi_decompose_check, v123_check, RoofSpec};
use crate::skew::{build_towers, structure_report, SkewConfig};
use crate::torus::{CircleSet, TorusIntervalSet, TorusPoint};
use crate::{fmt_q, q, Q};

pub const SUITES: &[&str] = &["dk", "gamma", "tower", "psi", "v123", "lemma72", "propC", "discrepancy", "crit", "ue"];

/// Orbits longer than this are skipped by the sampled suites.
const SAMPLED_Q_CAP: u64 = 20_000;

#[derive(Clone, Debug)]
pub struct SuiteContext {
    pub cfg: SkewConfig,
    pub state: Option<ConstructionState>,
    pub roof_a: Q,
    pub samples: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub crit_c: Q,
    pub crit_big_c: Q,
    pub ue_eps: Q,
    /// class members per level for `propC` and `discrepancy`
    pub members: usize,
}

impl SuiteContext {
    pub fn new(cfg: SkewConfig, roof_a: Q) -> Self {
        SuiteContext {
            cfg,
            state: None,
            roof_a,
            samples: 20,
            seed: 0,
            workers: None,
            crit_c: q(1, 32),
            crit_big_c: q(64, 1),
            ue_eps: q(1, 10),
            members: 5,
        }
    }

    fn header(&self, rep: &mut VerificationReport) {
        rep.constant("alpha", fmt_q(self.cfg.alpha()));
        rep.constant("digits", self.cfg.schedule.digits.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
        rep.constant("checkpoints", self.cfg.schedule.even_checkpoints.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
        rep.constant("M", self.cfg.schedule.m_cap);
        rep.constant("samples", self.samples);
        rep.constant("seed", self.seed);
    }
}

pub fn run_suite(name: &str, ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = match name {
        "dk" => dk_suite(ctx),
        "gamma" => gamma_suite(ctx),
        "tower" => tower_suite(ctx),
        "psi" => psi_suite(ctx),
        "v123" => v123_suite(ctx),
        "lemma72" => lemma72_suite(ctx),
        "propC" => propc_suite(ctx),
        "discrepancy" => discrepancy_suite(ctx),
        "crit" => {
            let st = ctx.state.as_ref().ok_or_else(|| LabError::Precondition("suite crit needs a construction state (--state)".into()))?;
            criterion_all(st, &ctx.crit_c, &ctx.crit_big_c)
        }
        "ue" => {
            let a = TorusIntervalSet::on_level(CircleSet::interval(q(0, 1), q(1, 2)), 0);
            let mut r = ue_report(&ctx.cfg, &a, &ctx.ue_eps)?;
            r.constant("A", "[0, 1/2) x {0}");
            Ok(r)
        }
        other => Err(LabError::Precondition(format!("unknown suite {:?} (known: {})", other, SUITES.join(", ")))),
    }?;
    rep.title = name.to_string();
    ctx.header(&mut rep);
    Ok(rep)
}

fn push_sums(rep: &mut VerificationReport, rows: Vec<SumReport>, k: u64) {
    for r in rows {
        rep.push(r.to_check(Some(k)));
    }
}

fn orbit_ok(cfg: &SkewConfig, n: usize) -> bool {
    cfg.alpha.table().q.get(n).and_then(|v| v.to_u64()).map_or(false, |v| v <= SAMPLED_Q_CAP)
}

/// A seeded step function with at most `jumps` breaks on the grid `1/den`.
pub fn random_step(rng: &mut ChaCha8Rng, jumps: usize, den: i64) -> Result<PiecewiseFunction> {
    let k = rng.gen_range(0..=jumps);
    let mut starts: Vec<i64> = (0..k).map(|_| rng.gen_range(1..den)).collect();
    starts.push(0);
    starts.sort_unstable();
    starts.dedup();
    let steps: Vec<(Q, Q)> = starts.into_iter().map(|s| (q(s, den), q(rng.gen_range(-20..=20), 4))).collect();
    PiecewiseFunction::step(&steps)
}

/// `|S_{q_n} − q_n∫F| <= Var F` for random step functions along the configured α.
fn dk_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("dk");
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let alpha = &ctx.cfg.alpha;
    let top = (alpha.table().len() - 1).min(15);
    let top = (1..=top).rev().find(|&n| orbit_ok(&ctx.cfg, n)).unwrap_or(1);
    let jobs: Vec<(PiecewiseFunction, usize, Vec<TorusPoint>)> = (0..ctx.samples)
        .map(|_| {
            let f = random_step(&mut rng, 20, 1000)?;
            let n = rng.gen_range(1..=top);
            let pts = (0..4).map(|_| TorusPoint::new(q(rng.gen_range(0..10_000), 10_000), 0)).collect();
            Ok((f, n, pts))
        })
        .collect::<Result<_>>()?;
    let rows = par_map(&jobs, ctx.workers, |(f, n, pts)| Ok((*n, dk_check(f, alpha, *n, pts)?)))?;
    for (n, r) in rows {
        push_sums(&mut rep, r, n as u64);
    }
    Ok(rep)
}

fn gamma_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("gamma");
    let spec = RoofSpec::for_config(&ctx.cfg, ctx.roof_a.clone())?;
    let consts = GammaConstants::default();
    rep.constant("K_a", &consts.k_a);
    rep.constant("K''", &consts.k_second);
    rep.constant("c", &consts.corollary_c);
    let c = crate::parse_q(&consts.corollary_c)?;
    let ns: Vec<usize> = (3..ctx.cfg.alpha.table().len()).filter(|&n| orbit_ok(&ctx.cfg, n)).collect();
    let mut jobs = vec![];
    for &n in &ns {
        for x in gamma_samples(&ctx.cfg.alpha, &spec, n, ctx.samples, &c)? {
            jobs.push((n, x));
        }
    }
    let out = par_map(&jobs, ctx.workers, |(n, x)| Ok((*n, gamma_bounds_check(&ctx.cfg.alpha, &spec, *n, x, &consts)?)))?;
    let mut worst = (0f64, 0f64, 0f64);
    for (n, o) in out {
        worst = (worst.0.max(o.ratio_a), worst.1.max(o.ratio_second), worst.2.max(o.ratio_partial));
        push_sums(&mut rep, o.reports, n as u64);
    }
    rep.constant("measured K_a", format!("{:.4}", worst.0));
    rep.constant("measured K''", format!("{:.4}", worst.1));
    rep.constant("measured partial-sum ratio", format!("{:.4}", worst.2));
    Ok(rep)
}

fn tower_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("tower");
    for t in build_towers(&ctx.cfg, ctx.cfg.checkpoint_count())? {
        rep.extend(structure_report(&t, &ctx.cfg));
    }
    Ok(rep)
}

/// Stratified points `(2i+1)/(2N)` for `i < N`.
pub fn midpoints(n: usize) -> Vec<Q> {
    (0..n as i64).map(|i| q(2 * i + 1, 2 * n as i64)).collect()
}

fn levels_from_two(cfg: &SkewConfig) -> std::ops::RangeInclusive<usize> {
    2..=cfg.checkpoint_count()
}

fn psi_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("psi");
    let pts = midpoints(ctx.samples);
    for m in levels_from_two(&ctx.cfg) {
        rep.extend(psi_decompose_check(&ctx.cfg, m, &pts)?);
    }
    Ok(rep)
}

fn v123_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("v123");
    for m in levels_from_two(&ctx.cfg) {
        rep.extend(v123_check(&ctx.cfg, m)?);
        rep.extend(phi_bounds_check(&ctx.cfg, m)?);
    }
    Ok(rep)
}

/// Levels where the `h₁′` hypotheses hold at `n = n_m + 2`.
fn lemma72_levels(cfg: &SkewConfig, rep: &mut VerificationReport) -> Vec<(usize, usize)> {
    let mut out = vec![];
    for m in levels_from_two(cfg) {
        let n = cfg.schedule.n(m) + 2;
        match lemma72_hypotheses(cfg, m, n) {
            Ok(()) if orbit_ok(cfg, n) => out.push((m, n)),
            Ok(()) => rep.constant(format!("m = {}", m), "skipped: orbit beyond the sampling cap"),
            Err(e) => rep.constant(format!("m = {}", m), format!("skipped: {}", e)),
        }
    }
    out
}

fn lemma72_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("lemma72");
    for (m, n) in lemma72_levels(&ctx.cfg, &mut rep) {
        let phi = phi_constant(&ctx.cfg, m)?;
        let zs = lemma72_samples(&ctx.cfg, m, n, ctx.samples)?;
        for r in par_map(&zs, ctx.workers, |z| lemma72_check(&ctx.cfg, m, n, z, &phi))? {
            push_sums(&mut rep, r, m as u64);
        }
    }
    if rep.checks.is_empty() {
        return Err(LabError::Precondition("no level satisfies the lemma72 hypotheses".into()));
    }
    Ok(rep)
}

fn class_levels(ctx: &SuiteContext, rep: &mut VerificationReport) -> Result<Vec<(usize, ClassContext, Vec<SkewConfig>)>> {
    let mut out = vec![];
    for (m, _) in lemma72_levels(&ctx.cfg, rep) {
        let cc = match ClassContext::new(&ctx.cfg, m) {
            Ok(c) => c,
            Err(e) => {
                rep.constant(format!("class m = {}", m), format!("skipped: {}", e));
                continue;
            }
        };
        let members = cc.members(ctx.members, DEFAULT_PADDING)?;
        rep.constant(format!("class m = {}", m), format!("ell0 = {}, {} members", cc.ell0, members.len()));
        out.push((m, cc, members));
    }
    Ok(out)
}

fn propc_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("propC");
    for (m, cc, members) in class_levels(ctx, &mut rep)? {
        let n = cc.ell0 + 1;
        let mut jobs = vec![];
        for (i, b) in members.iter().enumerate() {
            if !orbit_ok(b, n) {
                continue;
            }
            for z in lemma72_samples(b, m, n, ctx.samples)? {
                jobs.push((i, z));
            }
        }
        for (i, r) in par_map(&jobs, ctx.workers, |(i, z)| Ok((*i, propc_check(&cc, &members[*i], n, z)?)))? {
            for row in r {
                rep.push(row.to_check(Some(m as u64)).with_sample(format!("member {} {}", i + 1, row.sample_x)));
            }
        }
    }
    if rep.checks.is_empty() {
        return Err(LabError::Precondition("no class level is testable for propC".into()));
    }
    Ok(rep)
}

fn discrepancy_suite(ctx: &SuiteContext) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("discrepancy");
    for (m, _, members) in class_levels(ctx, &mut rep)? {
        let mut all = vec![ctx.cfg.clone()];
        all.extend(members);
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let c: Check = discrepancy_check(&all[i], &all[j], m)?;
                rep.push(c.with_k(m as u64).with_sample(format!("{}~{}", i, j)));
            }
        }
    }
    if rep.checks.is_empty() {
        return Err(LabError::Precondition("no class level is testable for discrepancy".into()));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk;

    fn ctx(name: &str) -> SuiteContext {
        let mut c = SuiteContext::new(desk::config(name).unwrap(), q(3, 1));
        c.samples = 4;
        c
    }

    #[test]
    fn desk_suites_pass() {
        for s in ["dk", "gamma", "tower", "psi", "v123", "lemma72", "propC", "discrepancy", "ue"] {
            let r = run_suite(s, &ctx("desk")).unwrap();
            assert!(r.verdict().is_pass(), "{}\n{}", s, r.table());
            assert!(!r.checks.is_empty(), "{}", s);
            assert_eq!(r.title, s);
        }
    }

    #[test]
    fn toy_tower_suite() {
        let r = run_suite("tower", &ctx("toy")).unwrap();
        assert!(r.verdict().is_pass(), "{}", r.table());
        assert!(r.checks.iter().any(|c| c.condition.starts_with("(iv)")));
    }

    #[test]
    fn crit_needs_state_and_unknown_suite_fails() {
        assert!(matches!(run_suite("crit", &ctx("desk")), Err(LabError::Precondition(_))));
        assert!(run_suite("nope", &ctx("desk")).is_err());
    }

    #[test]
    fn dk_suite_is_seeded() {
        let a = run_suite("dk", &ctx("desk")).unwrap();
        let b = run_suite("dk", &ctx("desk")).unwrap();
        assert_eq!(a, b);
        let mut c2 = ctx("desk");
        c2.seed = 1;
        assert_ne!(run_suite("dk", &c2).unwrap().checks, a.checks);
    }
}
