//! Flat sectioned key-value run configuration.
//!
//! ```text
//! [run]
//! mode = relaxed
//! precision_bits = 256
//! workers = 2
//! seed = 7
//! samples = 20
//!
//! [relaxed]
//! tau = 3/2
//! eighteen = 9/5000000
//!
//! [criterion]
//! c = 1/32
//! C = 64
//! eps = 1/10
//! ```

use std::path::Path;

use ergoflow_core::construction::{ConstructionParams, ModeKind};
use ergoflow_core::{parse_q, Q};
use ini::Ini;

use crate::Failure;

const RUN_KEYS: &[&str] = &["mode", "precision_bits", "workers", "seed", "samples", "stages", "cap_bits"];
const RELAXED_KEYS: &[&str] = &["tau", "eighteen", "gap_hi", "gap_lo", "sigma", "power", "M"];
const CRITERION_KEYS: &[&str] = &["c", "C", "eps"];

#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    pub mode: Option<ModeKind>,
    pub precision_bits: Option<u32>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub stages: Option<usize>,
    pub cap_bits: Option<u64>,
    /// `[relaxed]` overrides, in file order
    pub relaxed: Vec<(String, String)>,
    pub crit_c: Option<Q>,
    pub crit_big_c: Option<Q>,
    pub eps: Option<Q>,
}

fn bad(msg: String) -> Failure {
    Failure::usage(msg)
}

fn num<T: std::str::FromStr>(sec: &str, key: &str, v: &str) -> Result<T, Failure> {
    v.trim().parse().map_err(|_| bad(format!("config [{}] {}: cannot parse {:?}", sec, key, v)))
}

fn rational(sec: &str, key: &str, v: &str) -> Result<Q, Failure> {
    parse_q(v.trim()).map_err(|e| bad(format!("config [{}] {}: {}", sec, key, e)))
}

pub fn parse_mode(s: &str) -> Result<ModeKind, Failure> {
    match s.trim() {
        "faithful" => Ok(ModeKind::Faithful),
        "relaxed" => Ok(ModeKind::Relaxed),
        other => Err(bad(format!("unknown mode {:?} (faithful or relaxed)", other))),
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let ini = Ini::load_from_str(text).map_err(|e| bad(format!("config: {}", e)))?;
        let mut c = FileConfig::default();
        for (sec, props) in ini.iter() {
            let sec = sec.unwrap_or("");
            let allowed = match sec {
                "run" => RUN_KEYS,
                "relaxed" => RELAXED_KEYS,
                "criterion" => CRITERION_KEYS,
                "" if props.is_empty() => continue,
                other => return Err(bad(format!("config: unknown section [{}]", other))),
            };
            for (k, v) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(bad(format!("config [{}]: unknown key {:?}", sec, k)));
                }
                match (sec, k) {
                    ("run", "mode") => c.mode = Some(parse_mode(v)?),
                    ("run", "precision_bits") => c.precision_bits = Some(num(sec, k, v)?),
                    ("run", "workers") => c.workers = Some(num(sec, k, v)?),
                    ("run", "seed") => c.seed = Some(num(sec, k, v)?),
                    ("run", "samples") => c.samples = Some(num(sec, k, v)?),
                    ("run", "stages") => c.stages = Some(num(sec, k, v)?),
                    ("run", "cap_bits") => c.cap_bits = Some(num(sec, k, v)?),
                    ("relaxed", _) => c.relaxed.push((k.to_string(), v.trim().to_string())),
                    ("criterion", "c") => c.crit_c = Some(rational(sec, k, v)?),
                    ("criterion", "C") => c.crit_big_c = Some(rational(sec, k, v)?),
                    ("criterion", "eps") => c.eps = Some(rational(sec, k, v)?),
                    _ => unreachable!("keys are whitelisted above"),
                }
            }
        }
        Ok(c)
    }

    /// Applies `[relaxed]` overrides; any override in faithful mode is refused.
    pub fn apply_relaxed(&self, p: &mut ConstructionParams) -> Result<(), Failure> {
        if self.relaxed.is_empty() {
            return Ok(());
        }
        if p.mode == ModeKind::Faithful {
            return Err(bad("constants can only be overridden in relaxed mode".into()));
        }
        for (k, v) in &self.relaxed {
            match k.as_str() {
                "tau" => p.constants.tau = rational("relaxed", k, v).map(|q| ergoflow_core::fmt_q(&q))?,
                "eighteen" => p.constants.eighteen = rational("relaxed", k, v).map(|q| ergoflow_core::fmt_q(&q))?,
                "gap_hi" => p.constants.gap_hi = rational("relaxed", k, v).map(|q| ergoflow_core::fmt_q(&q))?,
                "gap_lo" => p.constants.gap_lo = rational("relaxed", k, v).map(|q| ergoflow_core::fmt_q(&q))?,
                "sigma" => p.constants.sigma = rational("relaxed", k, v).map(|q| ergoflow_core::fmt_q(&q))?,
                "power" => p.constants.power = num("relaxed", k, v)?,
                "M" => p.m_cap = num("relaxed", k, v)?,
                _ => unreachable!("keys are whitelisted in parse"),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ergoflow_core::q;

    #[test]
    fn parses_sections() {
        let c = FileConfig::parse("[run]\nmode = relaxed\nseed = 9\n\n[relaxed]\ntau = 6\n\n[criterion]\nC = 32\n").unwrap();
        assert_eq!(c.mode, Some(ModeKind::Relaxed));
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.crit_big_c, Some(q(32, 1)));
        let mut p = ConstructionParams::relaxed();
        c.apply_relaxed(&mut p).unwrap();
        assert_eq!(p.constants.tau, "6/1");
    }

    #[test]
    fn rejects_unknown_keys_and_faithful_overrides() {
        assert_eq!(FileConfig::parse("[run]\nspeed = 3\n").unwrap_err().code, 2);
        assert_eq!(FileConfig::parse("[extra]\na = 1\n").unwrap_err().code, 2);
        let c = FileConfig::parse("[relaxed]\nsigma = 8\n").unwrap();
        let mut p = ConstructionParams::faithful();
        assert_eq!(c.apply_relaxed(&mut p).unwrap_err().code, 2);
    }
}
