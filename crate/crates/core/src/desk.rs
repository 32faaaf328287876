//! Built-in schedules small enough to verify exhaustively.

use crate::cf::{AngleRep, DigitSchedule, DEFAULT_PADDING};
use crate::error::{LabError, Result};
use crate::q;
use crate::skew::{SkewConfig, SlitMode};

/// Desk schedules: `M = 3`, three checkpoints, digit 3 after `n_1` and `n_3`.
pub const DESK: &[(&str, &[u64], &[usize])] = &[
    ("desk", &[1, 1, 3, 1, 3, 1, 3], &[2, 4, 6]),
    ("desk-248", &[1, 1, 3, 1, 3, 1, 1, 1, 3], &[2, 4, 8]),
    ("desk-268", &[1, 1, 3, 1, 1, 1, 3, 1, 3], &[2, 6, 8]),
    ("desk-468", &[1, 1, 1, 1, 3, 1, 3, 1, 3], &[4, 6, 8]),
];

pub const DESK_M: u64 = 3;

pub fn names() -> Vec<&'static str> {
    let mut v: Vec<&str> = DESK.iter().map(|d| d.0).collect();
    v.push("toy");
    v
}

pub fn schedule(name: &str) -> Result<DigitSchedule> {
    if name == "toy" {
        return DigitSchedule::new(vec![1, 1, 3], vec![2], vec![], DESK_M);
    }
    let (_, d, n) = DESK
        .iter()
        .find(|d| d.0 == name)
        .ok_or_else(|| LabError::Precondition(format!("unknown built-in schedule {:?} (known: {})", name, names().join(", "))))?;
    DigitSchedule::new(d.to_vec(), n.to_vec(), vec![], DESK_M)
}

/// The configuration for a built-in name; `toy` is the single-checkpoint `α = 4/7`.
pub fn config(name: &str) -> Result<SkewConfig> {
    let s = schedule(name)?;
    if name == "toy" {
        return SkewConfig::new(AngleRep { value: q(4, 7), matched_prefix_len: 3 }, s, SlitMode::Full);
    }
    SkewConfig::for_schedule(s, DEFAULT_PADDING, SlitMode::Full)
}

pub fn all() -> Result<Vec<(&'static str, SkewConfig)>> {
    DESK.iter().map(|d| Ok((d.0, config(d.0)?))).collect()
}
