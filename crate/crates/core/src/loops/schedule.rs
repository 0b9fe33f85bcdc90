//! Expansion of an iterate's schedule into a concrete loop nest.
//!
//! Each scheduled handle becomes one loop whose induction variable is named by
//! its nest position. Bounds are affine in the enclosing positions, and each
//! original loop's value is recovered as an affine expression of positions.

use std::collections::HashMap;

use thiserror::Error;

use super::{AffineExpr, IterateOp, LoopId, LoopModule, LoopOrigin};

/// Affine expression over nest positions (`d0` is the outermost loop).
pub type PosExpr = AffineExpr<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedLoop {
    pub handle: LoopId,
    /// The loop starts at the max of these.
    pub lower: Vec<PosExpr>,
    /// The loop stops before the min of these.
    pub upper: Vec<PosExpr>,
    pub step: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub loops: Vec<ExpandedLoop>,
    /// Value of each original loop, in the iterate's original order.
    pub originals: Vec<(LoopId, PosExpr)>,
}

impl Expansion {
    pub fn original_value(&self, l: LoopId) -> Option<&PosExpr> {
        self.originals.iter().find(|(o, _)| *o == l).map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("loop {0:?} is not defined in this module")]
    UnknownLoop(LoopId),
    #[error("scheduled loop {0:?} does not derive from a loop of this iterate")]
    ForeignLoop(LoopId),
    #[error("loop {0:?} is covered more than once by the schedule")]
    CoveredTwice(LoopId),
    #[error("original loop {0:?} is not covered by the schedule")]
    NotCovered(LoopId),
    #[error("intra-tile loop {inner:?} is scheduled before its tile loop {outer:?}")]
    InnerBeforeOuter { inner: LoopId, outer: LoopId },
    #[error("skew of {handle:?} along {along:?}: {reason}")]
    InvalidSkew {
        handle: LoopId,
        along: LoopId,
        reason: String,
    },
}

struct Range {
    lower: Vec<PosExpr>,
    upper: Vec<PosExpr>,
    step: i64,
}

impl Range {
    fn shifted(&self, by: &PosExpr) -> Range {
        Range {
            lower: self.lower.iter().map(|e| e.plus(by)).collect(),
            upper: self.upper.iter().map(|e| e.plus(by)).collect(),
            step: self.step,
        }
    }

    fn constant_bounds(&self) -> Option<(i64, i64)> {
        match (&self.lower[..], &self.upper[..]) {
            ([l], [u]) => Some((l.as_constant()?, u.as_constant()?)),
            _ => None,
        }
    }
}

struct Expander<'a> {
    module: &'a LoopModule,
    /// Values known so far, for handles at any depth of the derivation tree.
    values: HashMap<LoopId, PosExpr>,
}

impl Expander<'_> {
    fn origin(&self, l: LoopId) -> Result<LoopOrigin, ScheduleError> {
        self.module.handle(l).ok_or(ScheduleError::UnknownLoop(l))
    }

    fn range(&self, l: LoopId) -> Result<Range, ScheduleError> {
        Ok(match self.origin(l)? {
            LoopOrigin::Original { lb, ub } => Range {
                lower: vec![PosExpr::constant(lb)],
                upper: vec![PosExpr::constant(ub)],
                step: 1,
            },
            LoopOrigin::BlockOuter { parent, tile } => {
                let p = self.range(parent)?;
                Range {
                    step: p.step * tile,
                    ..p
                }
            }
            LoopOrigin::BlockInner { parent, tile, outer } => {
                let p = self.range(parent)?;
                let start = self
                    .values
                    .get(&outer)
                    .cloned()
                    .ok_or(ScheduleError::InnerBeforeOuter { inner: l, outer })?;
                let extent = p.step * tile;
                let mut upper = vec![start.offset(extent)];
                // A full last tile makes the parent's bound redundant.
                let exact = matches!(p.constant_bounds(), Some((lb, ub)) if (ub - lb) % extent == 0);
                if !exact {
                    upper.extend(p.upper);
                }
                Range {
                    lower: vec![start],
                    upper,
                    step: p.step,
                }
            }
            LoopOrigin::Skewed { parent, along, factor } => {
                let a = self.along_value(l, along)?;
                self.range(parent)?.shifted(&a.scaled(factor))
            }
        })
    }

    fn along_value(&self, handle: LoopId, along: LoopId) -> Result<PosExpr, ScheduleError> {
        self.values
            .get(&along)
            .cloned()
            .ok_or_else(|| ScheduleError::InvalidSkew {
                handle,
                along,
                reason: "the loop skewed along must be scheduled outside the skewed loop".into(),
            })
    }

    fn assign(&mut self, l: LoopId, value: PosExpr) -> Result<(), ScheduleError> {
        if self.values.insert(l, value.clone()).is_some() {
            let root = self.module.root_of(l).unwrap_or(l);
            return Err(ScheduleError::CoveredTwice(root));
        }
        match self.origin(l)? {
            LoopOrigin::Original { .. } | LoopOrigin::BlockOuter { .. } => Ok(()),
            LoopOrigin::BlockInner { parent, .. } => self.assign(parent, value),
            LoopOrigin::Skewed { parent, along, factor } => {
                let a = self.along_value(l, along)?;
                self.assign(parent, value.minus(&a.scaled(factor)))
            }
        }
    }
}

/// Expands the schedule of `iterate` into a nest of concrete loops.
pub fn expand_iterate(module: &LoopModule, iterate: &IterateOp) -> Result<Expansion, ScheduleError> {
    let mut ex = Expander {
        module,
        values: HashMap::new(),
    };
    let mut loops = Vec::with_capacity(iterate.scheduled.len());
    for (pos, &h) in iterate.scheduled.iter().enumerate() {
        let root = module.root_of(h).ok_or(ScheduleError::UnknownLoop(h))?;
        if !iterate.original.contains(&root) {
            return Err(ScheduleError::ForeignLoop(h));
        }
        if let LoopOrigin::Skewed { along, .. } = ex.origin(h)? {
            if !iterate.original.contains(&along) {
                return Err(ScheduleError::InvalidSkew {
                    handle: h,
                    along,
                    reason: "not a loop of this iterate".into(),
                });
            }
        }
        let r = ex.range(h)?;
        loops.push(ExpandedLoop {
            handle: h,
            lower: r.lower,
            upper: r.upper,
            step: r.step,
        });
        ex.assign(h, PosExpr::var(pos))?;
    }
    let originals = iterate
        .original
        .iter()
        .map(|&o| {
            ex.values
                .get(&o)
                .cloned()
                .map(|v| (o, v))
                .ok_or(ScheduleError::NotCovered(o))
        })
        .collect::<Result<_, _>>()?;
    Ok(Expansion { loops, originals })
}

/// Every index tuple the schedule visits, in execution order, as values of the
/// original loops. Meant for tests and small nests.
pub fn enumerate_originals(expansion: &Expansion) -> Vec<Vec<i64>> {
    fn walk(ex: &Expansion, depth: usize, ivs: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if depth == ex.loops.len() {
            out.push(ex.originals.iter().map(|(_, e)| e.eval(|p| ivs[p])).collect());
            return;
        }
        let l = &ex.loops[depth];
        let lo = l.lower.iter().map(|e| e.eval(|p| ivs[p])).max().unwrap_or(0);
        let hi = l.upper.iter().map(|e| e.eval(|p| ivs[p])).min().unwrap_or(0);
        let mut v = lo;
        while v < hi {
            ivs.push(v);
            walk(ex, depth + 1, ivs, out);
            ivs.pop();
            v += l.step;
        }
    }
    let mut out = Vec::new();
    walk(expansion, 0, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::super::{permute, testutil::add_2d};
    use super::*;

    fn row_major(n: i64, m: i64) -> Vec<Vec<i64>> {
        (0..n).flat_map(|i| (0..m).map(move |j| vec![i, j])).collect()
    }

    fn sorted(mut v: Vec<Vec<i64>>) -> Vec<Vec<i64>> {
        v.sort();
        v
    }

    #[test]
    fn identity_schedule() {
        let (m, it) = add_2d(3, 4);
        let ex = expand_iterate(&m, &m.iterates[it]).unwrap();
        assert_eq!(ex.loops.len(), 2);
        assert_eq!(ex.loops[0].lower, vec![PosExpr::constant(0)]);
        assert_eq!(ex.loops[1].upper, vec![PosExpr::constant(4)]);
        assert_eq!(enumerate_originals(&ex), row_major(3, 4));
    }

    #[test]
    fn block_exact_tile_drops_parent_bound() {
        let (mut m, it) = add_2d(4, 4);
        let i = m.iterates[it].original[0];
        let j = m.iterates[it].original[1];
        let (o, inner) = m.block(i, 2).unwrap();
        m.iterates[it].scheduled = vec![o, inner, j];
        let ex = expand_iterate(&m, &m.iterates[it]).unwrap();
        assert_eq!(ex.loops[0].step, 2);
        assert_eq!(ex.loops[1].lower, vec![PosExpr::var(0)]);
        assert_eq!(ex.loops[1].upper, vec![PosExpr::var(0).offset(2)]);
        assert_eq!(ex.original_value(i), Some(&PosExpr::var(1)));
        assert_eq!(enumerate_originals(&ex), row_major(4, 4));
    }

    #[test]
    fn block_partial_tile_keeps_parent_bound() {
        let (mut m, it) = add_2d(10, 1);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        let (o, inner) = m.block(i, 3).unwrap();
        m.iterates[it].scheduled = vec![o, inner, j];
        let ex = expand_iterate(&m, &m.iterates[it]).unwrap();
        assert_eq!(
            ex.loops[1].upper,
            vec![PosExpr::var(0).offset(3), PosExpr::constant(10)]
        );
        assert_eq!(enumerate_originals(&ex), row_major(10, 1));
    }

    #[test]
    fn nested_blocking_and_interchange() {
        let (mut m, it) = add_2d(10, 10);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        let (io, ii) = m.block(i, 3).unwrap();
        let (jo, ji) = m.block(j, 2).unwrap();
        let (ioo, ioi) = m.block(io, 2).unwrap();
        let s = vec![ioo, jo, ioi, ii, ji];
        m.iterates[it].scheduled = permute(&s, &[1, 0, 2, 4, 3]).unwrap();
        let ex = expand_iterate(&m, &m.iterates[it]).unwrap();
        let visited = enumerate_originals(&ex);
        assert_eq!(visited.len(), 100);
        assert_eq!(sorted(visited), row_major(10, 10));
    }

    #[test]
    fn skew_shifts_and_recovers() {
        let (mut m, it) = add_2d(3, 4);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        let s = m.skew(j, i, 1).unwrap();
        m.iterates[it].scheduled = vec![i, s];
        let ex = expand_iterate(&m, &m.iterates[it]).unwrap();
        assert_eq!(ex.loops[1].lower, vec![PosExpr::var(0)]);
        assert_eq!(ex.loops[1].upper, vec![PosExpr::var(0).offset(4)]);
        assert_eq!(ex.original_value(j), Some(&PosExpr::var(1).minus(&PosExpr::var(0))));
        assert_eq!(enumerate_originals(&ex), row_major(3, 4));
    }

    #[test]
    fn skew_before_along_is_rejected() {
        let (mut m, it) = add_2d(3, 4);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        let s = m.skew(j, i, 1).unwrap();
        m.iterates[it].scheduled = vec![s, i];
        assert!(matches!(
            expand_iterate(&m, &m.iterates[it]),
            Err(ScheduleError::InvalidSkew { .. })
        ));
    }

    #[test]
    fn coverage_errors() {
        let (mut m, it) = add_2d(4, 4);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        let (o, inner) = m.block(i, 2).unwrap();

        m.iterates[it].scheduled = vec![i, inner, o, j];
        assert_eq!(
            expand_iterate(&m, &m.iterates[it]),
            Err(ScheduleError::InnerBeforeOuter { inner, outer: o })
        );
        m.iterates[it].scheduled = vec![o, inner, i, j];
        assert_eq!(expand_iterate(&m, &m.iterates[it]), Err(ScheduleError::CoveredTwice(i)));
        m.iterates[it].scheduled = vec![o, j];
        assert_eq!(expand_iterate(&m, &m.iterates[it]), Err(ScheduleError::NotCovered(i)));
        let other = m.define_loops(&[(0, 2)]).unwrap()[0];
        m.iterates[it].scheduled = vec![i, j, other];
        assert_eq!(
            expand_iterate(&m, &m.iterates[it]),
            Err(ScheduleError::ForeignLoop(other))
        );
    }
}
