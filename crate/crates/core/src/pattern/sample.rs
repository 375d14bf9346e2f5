use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{activation_profile, is_non_increasing, CachingPattern, ConstraintSet};
use crate::error::Result;
use crate::rng;

/// How candidate sequences are proposed before the constraint checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Random walk over activation positions. From the first step, each
    /// move picks uniformly among the gaps in `[v_min, cap]` that still fit
    /// before step `T`, plus a "stop" move whenever the trailing reuse run
    /// would be admissible. `cap` is `v_max`, or the previous gap when the
    /// monotone filter is on.
    #[default]
    IntervalWalk,
    /// Step 1 is an activation; every later bit is an independent fair coin
    /// (top bit of one 64-bit draw).
    Bitwise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub budget: u64,
    pub bounded: u64,
    pub monotonic: u64,
    pub trailing: u64,
}

impl RejectionCounts {
    pub fn total(&self) -> u64 {
        self.budget + self.bounded + self.monotonic + self.trailing
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    /// Distinct valid patterns in discovery order.
    pub patterns: Vec<CachingPattern>,
    /// Attempt number (1-based) at which each pattern was first drawn.
    pub discovered_at: Vec<u64>,
    pub attempts: u64,
    /// Each rejected draw is charged to the first failed check, in the
    /// order budget, bounded, trailing, monotonic.
    pub rejections: RejectionCounts,
    pub duplicates: u64,
}

impl SampleOutcome {
    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Distinct patterns found within the first `attempts` draws.
    pub fn found_within(&self, attempts: u64) -> usize {
        self.discovered_at.partition_point(|&a| a <= attempts)
    }
}

/// Constrained rejection sampling of distinct caching patterns.
///
/// Draws stop once `quota` distinct patterns are collected or `max_attempts`
/// is exhausted. Budget, interval bounds and the trailing-run bound are always
/// enforced; the monotone check applies when `cs.require_monotonic` is set.
pub fn sample_patterns(
    cs: &ConstraintSet,
    quota: usize,
    max_attempts: u64,
    seed: u64,
    proposal: Proposal,
) -> Result<SampleOutcome> {
    cs.validate()?;
    let mut rng = rng::stream(seed);
    let mut seen = HashSet::new();
    let mut out = SampleOutcome {
        patterns: Vec::new(),
        discovered_at: Vec::new(),
        attempts: 0,
        rejections: RejectionCounts::default(),
        duplicates: 0,
    };
    let mut bits = vec![false; cs.steps];
    while out.patterns.len() < quota && out.attempts < max_attempts {
        match proposal {
            Proposal::IntervalWalk => propose_walk(cs, &mut rng, &mut bits),
            Proposal::Bitwise => propose_bitwise(&mut rng, &mut bits),
        }
        out.attempts += 1;

        let candidate = CachingPattern { bits: bits.clone() };
        let profile = activation_profile(&candidate);
        if profile.count() > cs.budget {
            out.rejections.budget += 1;
            continue;
        }
        if profile
            .intervals
            .iter()
            .any(|&v| v < cs.v_min || v > cs.v_max)
        {
            out.rejections.bounded += 1;
            continue;
        }
        if cs.bound_trailing && candidate.trailing_zeros() > cs.v_max {
            out.rejections.trailing += 1;
            continue;
        }
        if cs.require_monotonic && !is_non_increasing(&profile.intervals) {
            out.rejections.monotonic += 1;
            continue;
        }
        if seen.insert(candidate.clone()) {
            out.patterns.push(candidate);
            out.discovered_at.push(out.attempts);
        } else {
            out.duplicates += 1;
        }
    }
    Ok(out)
}

/// Uniform draw from `0..n` by the widening multiply `(x · n) >> 64`.
fn below(rng: &mut rng::Stream, n: usize) -> usize {
    ((u128::from(rng.next_u64()) * n as u128) >> 64) as usize
}

fn propose_bitwise(rng: &mut rng::Stream, bits: &mut [bool]) {
    bits[0] = true;
    for b in bits.iter_mut().skip(1) {
        *b = rng.next_u64() >> 63 == 1;
    }
}

fn propose_walk(cs: &ConstraintSet, rng: &mut rng::Stream, bits: &mut [bool]) {
    bits.fill(false);
    bits[0] = true;
    let steps = cs.steps;
    let mut pos = 1;
    let mut prev: Option<usize> = None;
    loop {
        let cap = match prev {
            Some(p) if cs.require_monotonic => p.min(cs.v_max),
            _ => cs.v_max,
        };
        // gaps in [v_min, hi] land on or before the last step
        let gaps = match (steps - pos).checked_sub(1) {
            Some(room) if room.min(cap) >= cs.v_min => room.min(cap) - cs.v_min + 1,
            _ => 0,
        };
        let can_stop = !cs.bound_trailing || steps - pos <= cs.v_max;
        let options = gaps + usize::from(can_stop);
        if options == 0 {
            break;
        }
        let pick = below(rng, options);
        if pick >= gaps {
            break;
        }
        let gap = cs.v_min + pick;
        pos += gap + 1;
        bits[pos - 1] = true;
        prev = Some(gap);
    }
}
