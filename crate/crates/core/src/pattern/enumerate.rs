use std::collections::HashMap;

use super::{CachingPattern, ConstraintSet};
use crate::error::{Error, Result};

/// Largest step count the exhaustive enumerator accepts.
pub const MAX_ENUMERABLE_STEPS: usize = 64;

fn guard(cs: &ConstraintSet) -> Result<()> {
    cs.validate()?;
    if cs.steps > MAX_ENUMERABLE_STEPS {
        return Err(Error::Intractable {
            steps: cs.steps,
            max: MAX_ENUMERABLE_STEPS,
        });
    }
    Ok(())
}

/// Visits every valid pattern in depth-first order over the interval
/// composition `(t_1 = 1, v_1, v_2, …)`.
pub fn for_each_pattern(cs: &ConstraintSet, mut visit: impl FnMut(&CachingPattern)) -> Result<()> {
    guard(cs)?;
    let mut walker = Walker {
        cs,
        bits: vec![false; cs.steps],
        visit: &mut visit,
    };
    walker.bits[0] = true;
    walker.descend(1, 1, None);
    Ok(())
}

struct Walker<'a, F: FnMut(&CachingPattern)> {
    cs: &'a ConstraintSet,
    bits: Vec<bool>,
    visit: &'a mut F,
}

impl<F: FnMut(&CachingPattern)> Walker<'_, F> {
    /// `pos` is the 1-based index of the latest activation.
    fn descend(&mut self, pos: usize, count: usize, prev: Option<usize>) {
        let cs = self.cs;
        if !cs.bound_trailing || cs.steps - pos <= cs.v_max {
            let pattern = CachingPattern {
                bits: self.bits.clone(),
            };
            (self.visit)(&pattern);
        }
        if count == cs.budget {
            return;
        }
        let cap = match prev {
            Some(p) if cs.require_monotonic => p.min(cs.v_max),
            _ => cs.v_max,
        };
        for gap in cs.v_min..=cap {
            let next = pos + gap + 1;
            if next > cs.steps {
                break;
            }
            self.bits[next - 1] = true;
            self.descend(next, count + 1, Some(gap));
            self.bits[next - 1] = false;
        }
    }
}

/// Every pattern satisfying `cs`, sorted by bit sequence.
pub fn enumerate_patterns(cs: &ConstraintSet) -> Result<Vec<CachingPattern>> {
    let mut out = Vec::new();
    for_each_pattern(cs, |p| out.push(p.clone()))?;
    out.sort();
    Ok(out)
}

/// Size of the valid space, by dynamic programming over
/// `(last activation, activations used, interval cap)`.
pub fn count_patterns(cs: &ConstraintSet) -> Result<u128> {
    guard(cs)?;
    let mut memo = HashMap::new();
    Ok(count_from(cs, 1, 1, cs.v_max, &mut memo))
}

fn count_from(
    cs: &ConstraintSet,
    pos: usize,
    count: usize,
    cap: usize,
    memo: &mut HashMap<(usize, usize, usize), u128>,
) -> u128 {
    if let Some(&n) = memo.get(&(pos, count, cap)) {
        return n;
    }
    let mut n = u128::from(!cs.bound_trailing || cs.steps - pos <= cs.v_max);
    if count < cs.budget {
        for gap in cs.v_min..=cap {
            let next = pos + gap + 1;
            if next > cs.steps {
                break;
            }
            let next_cap = if cs.require_monotonic { gap } else { cs.v_max };
            n += count_from(cs, next, count + 1, next_cap, memo);
        }
    }
    memo.insert((pos, count, cap), n);
    n
}
