//! Exact geometry on T and T×Z₂: the metric and finite unions of half-open
//! arcs with rational endpoints.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::{fmt_q, frac, norm, parse_q, Q};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TorusPoint {
    pub x: Q,
    pub level: u8,
}

impl TorusPoint {
    pub fn new(x: Q, level: u8) -> Self {
        TorusPoint { x: frac(&x), level: level & 1 }
    }
}

/// ‖x − y‖.
pub fn circle_dist(x: &Q, y: &Q) -> Q {
    norm(&(x - y))
}

/// ‖x − y‖ plus 1 when the levels differ.
pub fn product_dist(a: &TorusPoint, b: &TorusPoint) -> Q {
    let d = circle_dist(&a.x, &b.x);
    if a.level == b.level { d } else { d + Q::one() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersect,
    Difference,
    SymDiff,
}

impl SetOp {
    fn apply(self, a: bool, b: bool) -> bool {
        match self {
            SetOp::Union => a || b,
            SetOp::Intersect => a && b,
            SetOp::Difference => a && !b,
            SetOp::SymDiff => a != b,
        }
    }
}

/// Finite union of half-open arcs `[l, r)` of T, stored split at 0.
/// Invariant: sorted, `0 <= l < r <= 1`, pairwise disjoint and non-adjacent.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CircleSet {
    arcs: Vec<(Q, Q)>,
}

impl CircleSet {
    pub fn empty() -> Self {
        CircleSet { arcs: vec![] }
    }

    pub fn full() -> Self {
        CircleSet { arcs: vec![(Q::zero(), Q::one())] }
    }

    /// `[l, r)` with `0 <= l <= r <= 1`.
    pub fn interval(l: Q, r: Q) -> Self {
        assert!(Q::zero() <= l && l <= r && r <= Q::one(), "interval outside [0,1]");
        if l == r {
            return Self::empty();
        }
        CircleSet { arcs: vec![(l, r)] }
    }

    /// The arc starting at `start` (any real) of length `len`, taken mod 1.
    pub fn arc(start: &Q, len: &Q) -> Self {
        let mut pieces = vec![];
        push_arc(&mut pieces, start, len);
        Self::from_pieces(pieces)
    }

    /// Union of arbitrary (possibly overlapping) pieces inside [0,1].
    pub fn from_pieces(mut pieces: Vec<(Q, Q)>) -> Self {
        pieces.retain(|(l, r)| l < r);
        pieces.sort();
        let mut arcs: Vec<(Q, Q)> = Vec::with_capacity(pieces.len());
        for (l, r) in pieces {
            if let Some(last) = arcs.last_mut() {
                if l <= last.1 {
                    if r > last.1 {
                        last.1 = r;
                    }
                    continue;
                }
            }
            arcs.push((l, r));
        }
        CircleSet { arcs }
    }

    pub fn arcs(&self) -> &[(Q, Q)] {
        &self.arcs
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn measure(&self) -> Q {
        self.arcs.iter().fold(Q::zero(), |acc, (l, r)| acc + (r - l))
    }

    /// Number of circle arcs, counting a piece touching 1 and a piece at 0 once.
    pub fn component_count(&self) -> usize {
        let n = self.arcs.len();
        if n >= 2 && self.arcs[0].0.is_zero() && self.arcs[n - 1].1.is_one() {
            n - 1
        } else {
            n
        }
    }

    /// Circle arcs as `(left, length)` with wrapping halves merged.
    pub fn circle_components(&self) -> Vec<(Q, Q)> {
        let n = self.arcs.len();
        if n >= 2 && self.arcs[0].0.is_zero() && self.arcs[n - 1].1.is_one() {
            let mut out: Vec<(Q, Q)> = self.arcs[1..n - 1].iter().map(|(l, r)| (l.clone(), r - l)).collect();
            let (l, r) = &self.arcs[n - 1];
            out.push((l.clone(), (r - l) + &self.arcs[0].1));
            out
        } else {
            self.arcs.iter().map(|(l, r)| (l.clone(), r - l)).collect()
        }
    }

    fn find(&self, x: &Q) -> Option<usize> {
        // last arc with l <= x
        let i = self.arcs.partition_point(|(l, _)| l <= x);
        if i == 0 { None } else { Some(i - 1) }
    }

    pub fn contains(&self, x: &Q) -> bool {
        let x = frac(x);
        match self.find(&x) {
            Some(i) => x < self.arcs[i].1,
            None => false,
        }
    }

    /// `[l, r) ⊆ self` for `0 <= l < r <= 1`.
    pub fn contains_interval(&self, l: &Q, r: &Q) -> bool {
        if l >= r {
            return true;
        }
        match self.find(l) {
            Some(i) => r <= &self.arcs[i].1,
            None => false,
        }
    }

    /// `(l, r) ⊆ self` for the open interval.
    pub fn contains_open(&self, l: &Q, r: &Q) -> bool {
        if l >= r {
            return true;
        }
        let i = self.arcs.partition_point(|(a, _)| a <= l);
        if i == 0 {
            return false;
        }
        r <= &self.arcs[i - 1].1
    }

    pub fn combine(&self, other: &CircleSet, op: SetOp) -> CircleSet {
        // events: (position, which, +1/-1)
        let mut ev: Vec<(&Q, u8, bool)> = Vec::with_capacity(2 * (self.arcs.len() + other.arcs.len()));
        for (l, r) in &self.arcs {
            ev.push((l, 0, true));
            ev.push((r, 0, false));
        }
        for (l, r) in &other.arcs {
            ev.push((l, 1, true));
            ev.push((r, 1, false));
        }
        ev.sort_by(|a, b| a.0.cmp(b.0));
        let mut ina = false;
        let mut inb = false;
        let mut pieces: Vec<(Q, Q)> = vec![];
        let mut open: Option<Q> = None;
        let mut i = 0;
        while i < ev.len() {
            let pos = ev[i].0;
            while i < ev.len() && ev[i].0 == pos {
                let (_, w, start) = ev[i];
                if w == 0 { ina = start } else { inb = start }
                i += 1;
            }
            let inside = op.apply(ina, inb);
            match (&open, inside) {
                (None, true) => open = Some(pos.clone()),
                (Some(s), false) => {
                    pieces.push((s.clone(), pos.clone()));
                    open = None;
                }
                _ => {}
            }
        }
        CircleSet { arcs: pieces }
    }

    pub fn union(&self, o: &CircleSet) -> CircleSet {
        self.combine(o, SetOp::Union)
    }

    pub fn intersect(&self, o: &CircleSet) -> CircleSet {
        self.combine(o, SetOp::Intersect)
    }

    pub fn difference(&self, o: &CircleSet) -> CircleSet {
        self.combine(o, SetOp::Difference)
    }

    pub fn symdiff(&self, o: &CircleSet) -> CircleSet {
        self.combine(o, SetOp::SymDiff)
    }

    pub fn complement(&self) -> CircleSet {
        CircleSet::full().difference(self)
    }

    pub fn translate(&self, shift: &Q) -> CircleSet {
        let mut pieces = Vec::with_capacity(self.arcs.len() + 1);
        for (l, r) in &self.arcs {
            push_arc(&mut pieces, &(l + shift), &(r - l));
        }
        Self::from_pieces(pieces)
    }

    /// Points where the indicator is discontinuous on the circle.
    pub fn boundary_points(&self) -> Vec<Q> {
        let mut pts: Vec<Q> = vec![];
        for (l, r) in &self.arcs {
            pts.push(l.clone());
            pts.push(if r.is_one() { Q::zero() } else { r.clone() });
        }
        pts.sort();
        let mut out = vec![];
        let mut i = 0;
        while i < pts.len() {
            let mut j = i;
            while j < pts.len() && pts[j] == pts[i] {
                j += 1;
            }
            if (j - i) % 2 == 1 {
                out.push(pts[i].clone());
            }
            i = j;
        }
        out
    }
}

fn push_arc(pieces: &mut Vec<(Q, Q)>, start: &Q, len: &Q) {
    if len <= &Q::zero() {
        return;
    }
    if len >= &Q::one() {
        pieces.push((Q::zero(), Q::one()));
        return;
    }
    let a = frac(start);
    let b = &a + len;
    if b <= Q::one() {
        pieces.push((a, b));
    } else {
        pieces.push((a, Q::one()));
        pieces.push((Q::zero(), b - Q::one()));
    }
}

/// Finite union of half-open arcs on T×Z₂.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TorusIntervalSet {
    levels: [CircleSet; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcJson {
    pub level: u8,
    pub left: String,
    pub right: String,
}

impl TorusIntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full() -> Self {
        TorusIntervalSet { levels: [CircleSet::full(), CircleSet::full()] }
    }

    /// `T × {level}`.
    pub fn level_full(level: u8) -> Self {
        Self::on_level(CircleSet::full(), level)
    }

    pub fn on_level(s: CircleSet, level: u8) -> Self {
        let mut t = Self::empty();
        t.levels[(level & 1) as usize] = s;
        t
    }

    /// `s × Z₂`.
    pub fn both_levels(s: CircleSet) -> Self {
        TorusIntervalSet { levels: [s.clone(), s] }
    }

    pub fn from_levels(l0: CircleSet, l1: CircleSet) -> Self {
        TorusIntervalSet { levels: [l0, l1] }
    }

    pub fn level(&self, j: u8) -> &CircleSet {
        &self.levels[(j & 1) as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.levels[0].is_empty() && self.levels[1].is_empty()
    }

    /// Normalized measure: Σ lengths / 2.
    pub fn measure(&self) -> Q {
        (self.levels[0].measure() + self.levels[1].measure()) / Q::from_integer(2.into())
    }

    pub fn component_count(&self) -> usize {
        self.levels[0].component_count() + self.levels[1].component_count()
    }

    pub fn contains(&self, z: &TorusPoint) -> bool {
        self.level(z.level).contains(&z.x)
    }

    pub fn combine(&self, other: &TorusIntervalSet, op: SetOp) -> TorusIntervalSet {
        TorusIntervalSet {
            levels: [self.levels[0].combine(&other.levels[0], op), self.levels[1].combine(&other.levels[1], op)],
        }
    }

    pub fn union(&self, o: &Self) -> Self {
        self.combine(o, SetOp::Union)
    }

    pub fn intersect(&self, o: &Self) -> Self {
        self.combine(o, SetOp::Intersect)
    }

    pub fn difference(&self, o: &Self) -> Self {
        self.combine(o, SetOp::Difference)
    }

    pub fn symdiff(&self, o: &Self) -> Self {
        self.combine(o, SetOp::SymDiff)
    }

    pub fn complement(&self) -> Self {
        Self::full().difference(self)
    }

    pub fn translate(&self, shift: &Q) -> Self {
        TorusIntervalSet { levels: [self.levels[0].translate(shift), self.levels[1].translate(shift)] }
    }

    /// Swaps the two levels.
    pub fn flip_levels(&self) -> Self {
        TorusIntervalSet { levels: [self.levels[1].clone(), self.levels[0].clone()] }
    }

    pub fn to_json(&self) -> Vec<ArcJson> {
        let mut out = vec![];
        for j in 0..2u8 {
            for (l, r) in self.levels[j as usize].arcs() {
                out.push(ArcJson { level: j, left: fmt_q(l), right: fmt_q(r) });
            }
        }
        out
    }

    pub fn from_json(arcs: &[ArcJson]) -> Result<Self> {
        let mut p: [Vec<(Q, Q)>; 2] = [vec![], vec![]];
        for a in arcs {
            p[(a.level & 1) as usize].push((parse_q(&a.left)?, parse_q(&a.right)?));
        }
        let [p0, p1] = p;
        Ok(TorusIntervalSet { levels: [CircleSet::from_pieces(p0), CircleSet::from_pieces(p1)] })
    }
}
