use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use procache::metrics::{
    block_error_profile, consecutive_output_delta, flops_estimate, step_error_curves,
    write_curves_csv, ErrorCurve, EvalReport, FlopsReport,
};
use procache::pattern::{
    best_of, candidate_plan, check_constraints, count_patterns, for_each_pattern, sample_patterns,
    CachingPattern, CandidateEvaluation, ConstraintSet, Evaluator, PatternFile, RejectionCounts,
};
use procache::schedule::PlanSummary;
use procache::tinydit::Simulator;

use crate::{CliError, ExperimentConfig};

/// Attempt levels tabulated by `enumerate --compare-sampler`.
pub const SAMPLER_LEVELS: [u64; 4] = [1_000, 10_000, 100_000, 1_000_000];

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError {
        kind: crate::ErrorKind::Io,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Option<Result<T, CliError>> {
    let text = fs::read_to_string(path).ok()?;
    Some(serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display()))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerLevel {
    pub attempts: u64,
    pub found: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    pub constraints: ConstraintSet,
    /// Size of the admissible space.
    pub count: u64,
    /// Sampler draws made while trying to reach `count`.
    pub attempts: u64,
    pub found: usize,
    pub saturated: bool,
    pub rejections: RejectionCounts,
    pub duplicates: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampler_levels: Vec<SamplerLevel>,
}

impl EnumerationReport {
    pub fn render(&self) -> String {
        let cs = &self.constraints;
        let mut s = format!(
            "T={} B={} v=[{},{}] monotonic={}: {} patterns\n",
            cs.steps, cs.budget, cs.v_min, cs.v_max, cs.require_monotonic, self.count
        );
        if let Some(e) = &self.explanation {
            let _ = writeln!(s, "{e}");
        }
        let r = &self.rejections;
        let _ = writeln!(
            s,
            "sampler: {} found in {} attempts (saturated: {}); rejected budget {} bounded {} monotonic {} trailing {}; duplicates {}",
            self.found, self.attempts, self.saturated, r.budget, r.bounded, r.monotonic, r.trailing, self.duplicates
        );
        if !self.sampler_levels.is_empty() {
            let _ = writeln!(s, "{:>10}  {:>8}", "attempts", "found");
            for l in &self.sampler_levels {
                let _ = writeln!(s, "{:>10}  {:>8}", l.attempts, l.found);
            }
        }
        s.trim_end().to_string()
    }
}

/// Why a constraint set admits nothing.
fn explain_empty(cs: &ConstraintSet) -> String {
    let tail = if cs.bound_trailing { cs.v_max } else { cs.steps };
    let reach = 1 + (cs.budget - 1) * (cs.v_max + 1) + tail;
    if reach < cs.steps {
        format!(
            "infeasible: {} activations with reuse runs of at most {} steps cover at most {reach} of {} steps",
            cs.budget, cs.v_max, cs.steps
        )
    } else {
        "infeasible: no activation sequence meets the budget, interval bounds and trailing bound together".into()
    }
}

/// `enumerate`: size of the space, sampler saturation, optional listing.
pub fn enumerate(cfg: &ExperimentConfig, list: bool, compare_sampler: bool) -> Result<EnumerationReport, CliError> {
    let cs = &cfg.constraints;
    let count = count_patterns(cs)? as u64;
    let max_attempts = if compare_sampler {
        cfg.search.max_attempts.max(SAMPLER_LEVELS[3])
    } else {
        cfg.search.max_attempts
    };
    let quota = count.clamp(1, max_attempts) as usize;
    let sampled = sample_patterns(cs, quota, max_attempts, cfg.search.seed, cfg.search.proposal)?;
    let sampler_levels = if compare_sampler {
        // a run capped at fewer attempts draws a prefix of the same stream
        SAMPLER_LEVELS
            .iter()
            .map(|&a| SamplerLevel {
                attempts: a,
                found: sampled.found_within(a),
            })
            .collect()
    } else {
        Vec::new()
    };
    let report = EnumerationReport {
        constraints: *cs,
        count,
        attempts: sampled.attempts,
        found: sampled.patterns.len(),
        saturated: count > 0 && sampled.patterns.len() as u64 == count,
        rejections: sampled.rejections,
        duplicates: sampled.duplicates,
        explanation: (count == 0).then(|| explain_empty(cs)),
        sampler_levels,
    };
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_json(dir, "enumeration.json", &report)?;
    if list {
        write_with(dir, "patterns.csv", |w| {
            writeln!(w, "pattern,activations")?;
            let mut res = Ok(());
            for_each_pattern(cs, |p| {
                if res.is_ok() {
                    res = writeln!(w, "{p},{}", p.activations());
                }
            })
            .expect("tractability already checked");
            res
        })?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub seed: u64,
    pub attempts: u64,
    pub rejections: RejectionCounts,
    pub duplicates: u64,
    /// In sampling order.
    pub candidates: Vec<CandidateEvaluation>,
    pub winner: CandidateEvaluation,
}

impl SearchReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} candidates from {} attempts (seed {})\n{:>4}  {:<w$}  {:>5}  {:>12}  {:>10}\n",
            self.candidates.len(),
            self.attempts,
            self.seed,
            "#",
            "pattern",
            "acts",
            "proxy_score",
            "flops",
            w = self.winner.pattern.len()
        );
        for (i, c) in self.candidates.iter().enumerate() {
            let mark = if c.pattern == self.winner.pattern { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:>4}  {}  {:>5}  {:>12.6}  {:>10.4}{mark}",
                i + 1,
                c.pattern,
                c.pattern.activations(),
                c.proxy_score,
                c.flops_ratio
            );
        }
        s.trim_end().to_string()
    }
}

fn write_candidates(dir: &Path, candidates: &[CandidateEvaluation]) -> Result<(), CliError> {
    write_with(dir, "candidates.csv", |w| {
        writeln!(w, "index,pattern,activations,proxy_score,flops_ratio")?;
        for (i, c) in candidates.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                c.pattern,
                c.pattern.activations(),
                c.proxy_score,
                c.flops_ratio
            )?;
        }
        Ok(())
    })
}

fn search_with(cfg: &ExperimentConfig, evaluator: &Evaluator) -> Result<SearchReport, CliError> {
    let sc = &cfg.search;
    let sampled = sample_patterns(&cfg.constraints, sc.quota, sc.max_attempts, sc.seed, sc.proposal)?;
    if sampled.is_empty() {
        let r = sampled.rejections;
        return Err(CliError::infeasible(format!(
            "no admissible pattern in {} attempts (rejected: budget {}, bounded {}, monotonic {}, trailing {}); {}",
            sampled.attempts,
            r.budget,
            r.bounded,
            r.monotonic,
            r.trailing,
            explain_empty(&cfg.constraints)
        )));
    }
    let candidates = evaluator.evaluate_all(&sampled.patterns, None)?;
    let winner = best_of(candidates.clone()).expect("non-empty");
    let report = SearchReport {
        seed: sc.seed,
        attempts: sampled.attempts,
        rejections: sampled.rejections,
        duplicates: sampled.duplicates,
        candidates,
        winner,
    };
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_json(dir, "search.json", &report)?;
    write_candidates(dir, &report.candidates)?;
    write_json(
        dir,
        "best_pattern.json",
        &PatternFile::new(&report.winner.pattern, Some(&cfg.constraints), Some(sc.seed)),
    )?;
    Ok(report)
}

fn simulator(cfg: &ExperimentConfig) -> Result<Simulator, CliError> {
    Ok(Simulator::new(cfg.model.clone(), cfg.engine)?)
}

/// `search`: sample candidates, score each by its deviation from full
/// computation (pure caching), keep the best.
pub fn search(cfg: &ExperimentConfig) -> Result<SearchReport, CliError> {
    let sim = simulator(cfg)?;
    let evaluator = Evaluator::new(&sim, &cfg.search.eval_seeds, cfg.search.eval_batch)?;
    search_with(cfg, &evaluator)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub eval: EvalReport,
    pub plan: PlanSummary,
    /// Constraint violations of the pattern, if any (the run still happens).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl RunReport {
    pub fn render(&self) -> String {
        let e = &self.eval;
        let mut s = format!(
            "pattern {}\nproxy_score {:.6}  flops ratio {:.4}  speedup {:.3}x  selective overhead {:.2}%\n",
            e.pattern,
            e.proxy_score,
            e.flops.ratio,
            e.flops.speedup,
            100.0 * e.flops.selective_overhead
        );
        let p = &self.plan;
        let _ = writeln!(
            s,
            "cells: full {} selective {} cache {}",
            p.full_cells, p.selective_cells, p.cache_cells
        );
        if !self.violations.is_empty() {
            let _ = writeln!(s, "warning: pattern violates {}", self.violations.join(", "));
        }
        s.trim_end().to_string()
    }
}

pub fn load_pattern(path: &Path) -> Result<CachingPattern, CliError> {
    let file: PatternFile = read_json(path)
        .ok_or_else(|| CliError::config(format!("cannot read pattern file {}", path.display())))??;
    Ok(file.pattern()?)
}

/// `run`: execute one pattern (with selective steps unless disabled)
/// against the full-compute baseline.
pub fn run(cfg: &ExperimentConfig, pattern_path: &Path, selective: bool) -> Result<RunReport, CliError> {
    let pattern = load_pattern(pattern_path)?;
    run_pattern(cfg, &pattern, selective)
}

pub fn run_pattern(cfg: &ExperimentConfig, pattern: &CachingPattern, selective: bool) -> Result<RunReport, CliError> {
    let model = &cfg.model;
    if pattern.len() != model.steps {
        return Err(CliError::config(format!(
            "pattern has {} steps but the model runs {}",
            pattern.len(),
            model.steps
        )));
    }
    let sim = simulator(cfg)?;
    let sel = selective.then_some(&cfg.selective);
    let plan = candidate_plan(pattern, model.layers, sel);
    let evaluator = Evaluator::new(&sim, &cfg.search.eval_seeds, cfg.search.eval_batch)?;
    let proxy_score = evaluator.score(&plan)?;
    let flops: FlopsReport = flops_estimate(&plan, model, &cfg.engine);

    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut curves = Vec::new();
    if cfg.capture_snapshots {
        let (x, c) = &evaluator.inputs()[0];
        let base = sim.run_uncached(x, c, true)?.snapshots.expect("captured");
        let cached = sim.run(&plan, x, c, true)?.snapshots.expect("captured");
        let mut emit = |name: &str, set: &[ErrorCurve]| -> Result<(), CliError> {
            write_with(dir, name, |w| write_curves_csv(set, w))?;
            curves.push(name.to_string());
            Ok(())
        };
        emit("curves_step_error.csv", &step_error_curves(&cached, &base)?)?;
        emit("curves_output_delta.csv", &[consecutive_output_delta(&base.outputs)?])?;
        if let Some(t) = (1..=pattern.len()).rev().find(|&t| !pattern.is_active(t)) {
            emit("curves_block_error.csv", &[block_error_profile(&cached, &base, t)?])?;
        }
    }
    let violations = check_constraints(pattern, &cfg.constraints)?
        .violations
        .iter()
        .map(|v| v.name().to_string())
        .collect();
    let report = RunReport {
        eval: EvalReport {
            pattern: pattern.to_string(),
            selective: sel.copied(),
            options: cfg.engine,
            proxy_score,
            flops,
            eval_seeds: cfg.search.eval_seeds.clone(),
            eval_batch: cfg.search.eval_batch,
            curves,
        },
        plan: plan.summary(),
        violations,
    };
    write_json(dir, "report.json", &report)?;
    write_json(dir, "flops.json", &report.eval.flops)?;
    write_json(dir, "plan_summary.json", &report.plan)?;
    write_with(dir, "plan.csv", |w| plan.write_csv(w))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub pattern: String,
    pub activations: usize,
    pub within_constraints: bool,
    pub selective: bool,
    pub flops_ratio: f64,
    pub speedup: f64,
    pub selective_overhead: f64,
    pub proxy_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub search: SearchReport,
}

impl BenchReport {
    pub fn row(&self, variant: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<20}  {:>5}  {:>10}  {:>8}  {:>12}\n",
            "variant", "acts", "flops", "speedup", "proxy_score"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20}  {:>5}  {:>10.4}  {:>7.3}x  {:>12.6}",
                r.variant, r.activations, r.flops_ratio, r.speedup, r.proxy_score
            );
        }
        s.trim_end().to_string()
    }
}

pub const BASELINE: &str = "baseline";
pub const UNIFORM: &str = "uniform";
pub const SEARCHED: &str = "searched";
pub const SEARCHED_SELECTIVE: &str = "searched+selective";

/// `bench`: baseline, uniform every-⌈T/B⌉ caching, the searched pattern,
/// and the searched pattern with selective steps.
pub fn bench(cfg: &ExperimentConfig) -> Result<BenchReport, CliError> {
    let sim = simulator(cfg)?;
    let evaluator = Evaluator::new(&sim, &cfg.search.eval_seeds, cfg.search.eval_batch)?;
    let search = search_with(cfg, &evaluator)?;
    let (steps, layers) = (cfg.model.steps, cfg.model.layers);
    let variants = [
        (BASELINE, CachingPattern::all_ones(steps)?, false),
        (UNIFORM, CachingPattern::uniform_with_budget(steps, cfg.constraints.budget)?, false),
        (SEARCHED, search.winner.pattern.clone(), false),
        (SEARCHED_SELECTIVE, search.winner.pattern.clone(), true),
    ];
    let rows = variants
        .into_iter()
        .map(|(name, pattern, selective)| {
            let sel = selective.then_some(&cfg.selective);
            let plan = candidate_plan(&pattern, layers, sel);
            let flops = flops_estimate(&plan, &cfg.model, &cfg.engine);
            Ok(BenchRow {
                variant: name.to_string(),
                pattern: pattern.to_string(),
                activations: pattern.activations(),
                within_constraints: check_constraints(&pattern, &cfg.constraints)?.is_ok(),
                selective,
                flops_ratio: flops.ratio,
                speedup: flops.speedup,
                selective_overhead: flops.selective_overhead,
                proxy_score: evaluator.score(&plan)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = BenchReport { rows, search };
    let dir = &cfg.output_dir;
    write_json(dir, "bench.json", &report)?;
    write_with(dir, "bench.csv", |w| {
        writeln!(w, "variant,pattern,activations,within_constraints,selective,flops_ratio,speedup,selective_overhead,proxy_score")?;
        for r in &report.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.pattern,
                r.activations,
                r.within_constraints,
                r.selective,
                r.flops_ratio,
                r.speedup,
                r.selective_overhead,
                r.proxy_score
            )?;
        }
        Ok(())
    })?;
    Ok(report)
}

/// `report`: render whatever artifacts the output directory holds.
pub fn report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let dir: &PathBuf = &cfg.output_dir;
    let mut sections = Vec::new();
    if let Some(r) = read_json::<EnumerationReport>(&dir.join("enumeration.json")) {
        sections.push(format!("## enumeration\n{}", r?.render()));
    }
    if let Some(r) = read_json::<BenchReport>(&dir.join("bench.json")) {
        let r = r?;
        sections.push(format!("## search\n{}", r.search.render()));
        sections.push(format!("## bench\n{}", r.render()));
    } else if let Some(r) = read_json::<SearchReport>(&dir.join("search.json")) {
        sections.push(format!("## search\n{}", r?.render()));
    }
    if let Some(r) = read_json::<RunReport>(&dir.join("report.json")) {
        sections.push(format!("## run\n{}", r?.render()));
    }
    if sections.is_empty() {
        return Err(CliError::config(format!("no artifacts in {}", dir.display())));
    }
    Ok(sections.join("\n\n"))
}
