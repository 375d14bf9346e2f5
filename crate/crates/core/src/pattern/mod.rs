//! Caching patterns and the constrained space they are searched in.
//!
//! A pattern is a binary sequence over denoising steps: `1` recomputes every
//! block and refreshes the caches, `0` replays cached residual branches.
//! Steps are 1-based throughout the public API.

mod enumerate;
mod sample;
mod select;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use enumerate::{count_patterns, enumerate_patterns, for_each_pattern, MAX_ENUMERABLE_STEPS};
pub use sample::{sample_patterns, Proposal, RejectionCounts, SampleOutcome};
pub use select::{
    best_of, candidate_plan, evaluate_candidates, select_best_pattern, CandidateEvaluation, Evaluator,
};

/// Serialized as a digit string such as `"1001"`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CachingPattern {
    bits: Vec<bool>,
}

impl CachingPattern {
    /// Builds a pattern whose first step is an activation.
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        let pattern = Self::unanchored(bits)?;
        if !pattern.bits[0] {
            return Err(Error::config(
                "the first step must be an activation (no cache exists yet)",
            ));
        }
        Ok(pattern)
    }

    /// Builds a pattern without the first-step activation requirement. Such
    /// patterns can be analysed but not executed.
    pub fn unanchored(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::config("a pattern needs at least one step"));
        }
        Ok(Self { bits })
    }

    pub fn from_digits(digits: &[u8]) -> Result<Self> {
        Self::new(digits_to_bits(digits)?)
    }

    pub fn from_digits_unanchored(digits: &[u8]) -> Result<Self> {
        Self::unanchored(digits_to_bits(digits)?)
    }

    /// Parses `"1001..."`.
    pub fn parse(text: &str) -> Result<Self> {
        let digits = text
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::config(format!("unexpected character {other:?} in pattern"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_digits(&digits)
    }

    pub fn all_ones(steps: usize) -> Result<Self> {
        Self::new(vec![true; steps])
    }

    /// Fixed-interval schedule activating at steps `1, 1 + every, 1 + 2·every, …`.
    pub fn uniform(steps: usize, every: usize) -> Result<Self> {
        if every == 0 {
            return Err(Error::config("uniform interval must be at least 1"));
        }
        Self::new((0..steps).map(|i| i % every == 0).collect())
    }

    /// Fixed-interval schedule with at most `budget` activations:
    /// interval `⌈steps / budget⌉`.
    pub fn uniform_with_budget(steps: usize, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::config("budget must be at least 1"));
        }
        Self::uniform(steps, steps.div_ceil(budget))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn digits(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }

    /// Whether step `t` (1-based) is an activation.
    pub fn is_active(&self, t: usize) -> bool {
        self.bits[t - 1]
    }

    pub fn activations(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Length of the run of reuse steps after the last activation.
    pub fn trailing_zeros(&self) -> usize {
        self.bits.iter().rev().take_while(|&&b| !b).count()
    }

    pub fn is_anchored(&self) -> bool {
        self.bits[0]
    }
}

fn digits_to_bits(digits: &[u8]) -> Result<Vec<bool>> {
    digits
        .iter()
        .map(|&d| match d {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::config(format!("pattern entries must be 0 or 1, got {other}"))),
        })
        .collect()
}

impl TryFrom<String> for CachingPattern {
    type Error = Error;

    fn try_from(text: String) -> Result<Self> {
        Self::parse(&text)
    }
}

impl From<CachingPattern> for String {
    fn from(p: CachingPattern) -> String {
        p.to_string()
    }
}

impl fmt::Display for CachingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for CachingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CachingPattern({self})")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationProfile {
    /// Activated steps in ascending order.
    pub timestamps: Vec<usize>,
    /// `intervals[i] = timestamps[i + 1] - timestamps[i] - 1`.
    pub intervals: Vec<usize>,
}

impl ActivationProfile {
    pub fn count(&self) -> usize {
        self.timestamps.len()
    }

    /// Rebuilds activation timestamps from the first activation and the
    /// reuse intervals.
    pub fn reconstruct(first: usize, intervals: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(intervals.len() + 1);
        out.push(first);
        let mut t = first;
        for &v in intervals {
            t += v + 1;
            out.push(t);
        }
        out
    }
}

pub fn activation_profile(pattern: &CachingPattern) -> ActivationProfile {
    let timestamps: Vec<usize> = pattern
        .bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i + 1)
        .collect();
    let intervals = timestamps.windows(2).map(|w| w[1] - w[0] - 1).collect();
    ActivationProfile {
        timestamps,
        intervals,
    }
}

fn default_true() -> bool {
    true
}

/// Feasible region for caching patterns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub steps: usize,
    /// Maximum number of activations.
    pub budget: usize,
    pub v_min: usize,
    pub v_max: usize,
    #[serde(default)]
    pub require_monotonic: bool,
    /// Bound the reuse run after the last activation by `v_max`.
    #[serde(default = "default_true")]
    pub bound_trailing: bool,
}

impl ConstraintSet {
    pub fn new(
        steps: usize,
        budget: usize,
        v_min: usize,
        v_max: usize,
        require_monotonic: bool,
    ) -> Result<Self> {
        let cs = Self {
            steps,
            budget,
            v_min,
            v_max,
            require_monotonic,
            bound_trailing: true,
        };
        cs.validate()?;
        Ok(cs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.budget == 0 || self.budget > self.steps {
            return Err(Error::config(format!(
                "budget {} must lie in 1..={}",
                self.budget, self.steps
            )));
        }
        if self.v_min > self.v_max {
            return Err(Error::config(format!(
                "v_min {} exceeds v_max {}",
                self.v_min, self.v_max
            )));
        }
        if self.v_max >= self.steps {
            return Err(Error::config(format!(
                "v_max {} must be below the step count {}",
                self.v_max, self.steps
            )));
        }
        Ok(())
    }

    pub fn with_monotonic(mut self, on: bool) -> Self {
        self.require_monotonic = on;
        self
    }

    pub fn with_bound_trailing(mut self, on: bool) -> Self {
        self.bound_trailing = on;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// First step is not an activation.
    Anchor,
    Budget,
    Monotonic,
    /// Some reuse interval lies outside `[v_min, v_max]`.
    Bounded,
    /// The reuse run after the last activation exceeds `v_max`.
    Trailing,
}

impl Violation {
    pub fn name(self) -> &'static str {
        match self {
            Violation::Anchor => "anchor",
            Violation::Budget => "budget",
            Violation::Monotonic => "monotonic",
            Violation::Bounded => "bounded",
            Violation::Trailing => "trailing",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, v: Violation) -> bool {
        self.violations.contains(&v)
    }
}

pub fn check_constraints(pattern: &CachingPattern, cs: &ConstraintSet) -> Result<Verdict> {
    if pattern.len() != cs.steps {
        return Err(Error::config(format!(
            "pattern has {} steps but the constraints expect {}",
            pattern.len(),
            cs.steps
        )));
    }
    let profile = activation_profile(pattern);
    let mut violations = Vec::new();
    if !pattern.is_anchored() {
        violations.push(Violation::Anchor);
    }
    if profile.count() > cs.budget {
        violations.push(Violation::Budget);
    }
    if cs.require_monotonic && !is_non_increasing(&profile.intervals) {
        violations.push(Violation::Monotonic);
    }
    if profile
        .intervals
        .iter()
        .any(|&v| v < cs.v_min || v > cs.v_max)
    {
        violations.push(Violation::Bounded);
    }
    if cs.bound_trailing && pattern.trailing_zeros() > cs.v_max {
        violations.push(Violation::Trailing);
    }
    Ok(Verdict { violations })
}

pub(crate) fn is_non_increasing(intervals: &[usize]) -> bool {
    intervals.windows(2).all(|w| w[1] <= w[0])
}

/// Search-stage parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of distinct candidates to collect.
    pub quota: usize,
    pub max_attempts: u64,
    pub seed: u64,
    /// Input seeds for proxy evaluation.
    pub eval_seeds: Vec<u64>,
    /// Inputs drawn per evaluation seed.
    pub eval_batch: usize,
    #[serde(default)]
    pub proposal: Proposal,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            quota: 5,
            max_attempts: 1_000_000,
            seed: 0,
            eval_seeds: vec![0, 1],
            eval_batch: 2,
            proposal: Proposal::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quota == 0 {
            return Err(Error::config("quota must be at least 1"));
        }
        if self.max_attempts < self.quota as u64 {
            return Err(Error::config(format!(
                "max_attempts {} is below the quota {}",
                self.max_attempts, self.quota
            )));
        }
        if self.eval_seeds.is_empty() || self.eval_batch == 0 {
            return Err(Error::config("evaluation needs at least one seed and one input"));
        }
        Ok(())
    }
}

/// On-disk pattern representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternFile {
    pub steps: usize,
    pub bits: Vec<u8>,
    #[serde(default)]
    pub meta: PatternMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PatternFile {
    pub fn new(pattern: &CachingPattern, cs: Option<&ConstraintSet>, seed: Option<u64>) -> Self {
        Self {
            steps: pattern.len(),
            bits: pattern.digits(),
            meta: PatternMeta {
                budget: cs.map(|c| c.budget),
                v_min: cs.map(|c| c.v_min),
                v_max: cs.map(|c| c.v_max),
                seed,
            },
        }
    }

    pub fn pattern(&self) -> Result<CachingPattern> {
        if self.bits.len() != self.steps {
            return Err(Error::config(format!(
                "pattern file declares {} steps but lists {} bits",
                self.steps,
                self.bits.len()
            )));
        }
        CachingPattern::from_digits(&self.bits)
    }
}
