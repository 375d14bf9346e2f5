//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::RngCore;

use procache::metrics::{
    block_error_profile, consecutive_output_delta, flops_estimate, step_error_curves, write_curves_csv,
};
use procache::pattern::{
    enumerate_patterns, sample_patterns, CachingPattern, ConstraintSet, Proposal,
};
use procache::schedule::{build_caching_plan, build_plan, selective_steps, ExecutionPlan, StepAction};
use procache::tinydit::{select_tokens, AttentionPolicy, EngineOptions, ModelConfig, Simulator};
use procache::{relative_l1, rng};
use procache_cli::commands::{BASELINE, SEARCHED, SEARCHED_SELECTIVE, UNIFORM};
use procache_cli::{bench, search, ExperimentConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Size of the (T=50, B=17, v∈[2,5], monotone) space, from exhaustive
/// enumeration and an independent brute-force count.
const TABLE_C_COUNT: usize = 473;

/// Proxy scores of the golden bench, frozen after the first run.
const GOLDEN_UNIFORM: f64 = 0.152_049_788_631_766_32;
const GOLDEN_SEARCHED: f64 = 0.152_049_788_631_766_32;
const GOLDEN_SELECTIVE: f64 = 0.151_701_464_059_239_26;
/// Selective overhead of the searched pattern on the dit-xl2-like preset.
const GOLDEN_OVERHEAD: f64 = 0.029_670_454_568_113_434;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn golden() -> ExperimentConfig {
    ExperimentConfig::load(&workspace().join("configs/golden.json")).unwrap()
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    if took > limit {
        return Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()));
    }
    Ok(())
}

fn identity() -> Outcome {
    let started = Instant::now();
    let sim = Simulator::new(ModelConfig::reference(), EngineOptions::default()).map_err(|e| e.to_string())?;
    let (x, c) = sim.inputs(0, 0);
    let cached = sim.run(&ExecutionPlan::full(20, 8), &x, &c, false).map_err(|e| e.to_string())?;
    let direct = sim.run_uncached(&x, &c, false).map_err(|e| e.to_string())?;
    within(Duration::from_secs(5), started)?;
    if cached.output != direct.output {
        return Err("all-ones run differs from the uncached engine".into());
    }
    Ok(format!("bit-identical final output ({} values)", x.len()))
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut configs = 0;
    let mut sizes = BTreeSet::new();
    for steps in 8..=16 {
        for budget in 2..=6 {
            for (v_min, v_max) in [(1, 3), (2, 4)] {
                for mono in [false, true] {
                    let cs = ConstraintSet::new(steps, budget, v_min, v_max, mono).map_err(|e| e.to_string())?;
                    let all = enumerate_patterns(&cs).map_err(|e| e.to_string())?;
                    let seed = (steps * 1000 + budget * 10 + v_min) as u64;
                    let out = sample_patterns(&cs, all.len().max(1), 1_000_000, seed, Proposal::IntervalWalk)
                        .map_err(|e| e.to_string())?;
                    let found: BTreeSet<_> = out.patterns.into_iter().collect();
                    if found != all.iter().cloned().collect::<BTreeSet<_>>() {
                        return Err(format!("mismatch on {cs:?}: {} sampled vs {} enumerated", found.len(), all.len()));
                    }
                    sizes.insert(all.len());
                    configs += 1;
                }
            }
        }
    }
    within(Duration::from_secs(30), started)?;
    Ok(format!(
        "{configs} constraint sets, space sizes {}..={}",
        sizes.first().unwrap(),
        sizes.last().unwrap()
    ))
}

fn table_c() -> Outcome {
    let started = Instant::now();
    let cs = ConstraintSet::new(50, 17, 2, 5, true).map_err(|e| e.to_string())?;
    let all = enumerate_patterns(&cs).map_err(|e| e.to_string())?;
    if all.len() != TABLE_C_COUNT {
        return Err(format!("enumerated {} patterns, reference {TABLE_C_COUNT}", all.len()));
    }
    let mut found = Vec::new();
    let mut last = BTreeSet::new();
    for attempts in [1_000, 10_000, 100_000, 1_000_000] {
        let out = sample_patterns(&cs, all.len(), attempts, 0, Proposal::IntervalWalk).map_err(|e| e.to_string())?;
        found.push(out.patterns.len());
        last = out.patterns.into_iter().collect();
    }
    within(Duration::from_secs(60), started)?;
    if found.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("found-counts decrease: {found:?}"));
    }
    if last != all.into_iter().collect() {
        return Err(format!("not saturated at 10^6 attempts: {found:?}"));
    }
    Ok(format!("found {found:?} at 10^3..10^6 attempts, reference count {TABLE_C_COUNT}"))
}

fn injection_table() -> Outcome {
    let table: [&str; 6] = ["0", "0a", "0a0", "0a0a", "0a0a0", "0a0a0a"];
    for (len, expected) in (1..=6).zip(table) {
        let pattern = CachingPattern::parse(&format!("1{}", "0".repeat(len))).map_err(|e| e.to_string())?;
        let steps = selective_steps(&pattern);
        let got: String = (2..=len + 1).map(|t| if steps.contains(&t) { 'a' } else { '0' }).collect();
        if got != expected {
            return Err(format!("block of {len}: got {got}, expected {expected}"));
        }
    }
    Ok("zero blocks of length 1..6 map to 0 / 0a / 0a0 / 0a0a / 0a0a0 / 0a0a0a".into())
}

fn flops_fidelity() -> Outcome {
    let config = ModelConfig::reference();
    let mut r = rng::stream(2024);
    let policies = [
        AttentionPolicy::ReuseCachedValues,
        AttentionPolicy::ReuseFreshValues,
        AttentionPolicy::Recompute,
    ];
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let mut actions = vec![StepAction::FullCompute; config.layers];
        for _ in config.layers..config.steps * config.layers {
            actions.push(match r.next_u64() % 3 {
                0 => StepAction::FullCompute,
                1 => StepAction::SelectiveCompute,
                _ => StepAction::CacheOnly,
            });
        }
        let ratio = (1 + r.next_u64() % 16) as f64 / 16.0;
        let plan = ExecutionPlan::from_actions(config.steps, config.layers, actions)
            .and_then(|p| p.with_token_ratio(ratio))
            .map_err(|e| e.to_string())?;
        let options = EngineOptions {
            attention: policies[i % 3],
            remodulate: i % 2 == 1,
        };
        let sim = Simulator::new(config.clone(), options).map_err(|e| e.to_string())?;
        let (x, c) = sim.inputs(i as u64, 0);
        let counted = sim.run(&plan, &x, &c, false).map_err(|e| e.to_string())?.ops.flops() as f64;
        let est = flops_estimate(&plan, &config, &options).total as f64;
        worst = worst.max((est - counted).abs() / counted);
    }
    if worst > 0.02 {
        return Err(format!("estimate off by {:.3}% on some plan", 100.0 * worst));
    }
    let full = flops_estimate(&ExecutionPlan::full(20, 8), &config, &EngineOptions::default());
    if full.speedup != 1.0 {
        return Err(format!("all-ones speedup {}", full.speedup));
    }

    let preset = ExperimentConfig::preset("dit-xl2-like").map_err(|e| e.to_string())?;
    let all = enumerate_patterns(&preset.constraints).map_err(|e| e.to_string())?;
    let overhead = |p: &CachingPattern| flops_estimate(&build_plan(p, &preset.selective), &preset.model, &preset.engine).selective_overhead;
    let max_overhead = all.iter().map(overhead).fold(0.0, f64::max);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut search_cfg = preset.clone();
    search_cfg.output_dir = dir.path().to_path_buf();
    let searched = search(&search_cfg).map_err(|e| e.to_string())?.winner.pattern;
    let o = overhead(&searched);
    if o > 0.05 || (o - GOLDEN_OVERHEAD).abs() > 0.02 || (o - 0.03).abs() > 0.02 {
        return Err(format!("selective overhead {:.2}% for {searched}", 100.0 * o));
    }
    Ok(format!(
        "max deviation {:.4}% over 20 plans; all-ones speedup 1.0; selective overhead {:.2}% for the searched pattern (informational: up to {:.2}% over all {} admissible patterns)",
        100.0 * worst,
        100.0 * o,
        100.0 * max_overhead,
        all.len()
    ))
}

fn ablation() -> Outcome {
    let mut cfg = golden();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().to_path_buf();
    let report = bench(&cfg).map_err(|e| e.to_string())?;
    let score = |v: &str| report.row(v).map(|r| r.proxy_score).ok_or(format!("missing row {v}"));
    let (base, uniform, searched, selective) = (score(BASELINE)?, score(UNIFORM)?, score(SEARCHED)?, score(SEARCHED_SELECTIVE)?);
    if base != 0.0 {
        return Err(format!("baseline score {base}"));
    }
    let frozen = [(uniform, GOLDEN_UNIFORM), (searched, GOLDEN_SEARCHED), (selective, GOLDEN_SELECTIVE)];
    if frozen.iter().any(|(got, want)| (got - want).abs() > 1e-9) {
        return Err(format!("scores moved from the frozen values: {uniform} {searched} {selective}"));
    }
    if !(selective <= searched && searched <= uniform) {
        return Err(format!("ordering broken: selective {selective:.6}, searched {searched:.6}, uniform {uniform:.6}"));
    }

    // per-seed view: does selective computation help on fresh inputs?
    let sim = Simulator::new(cfg.model.clone(), cfg.engine).map_err(|e| e.to_string())?;
    let pattern = &report.search.winner.pattern;
    let caching = build_caching_plan(pattern, cfg.model.layers);
    let sel = build_plan(pattern, &cfg.selective);
    let full = ExecutionPlan::full(cfg.model.steps, cfg.model.layers);
    let mut better = 0;
    for seed in 100..120 {
        let (x, c) = sim.inputs(seed, 0);
        let run = |p: &ExecutionPlan| sim.run(p, &x, &c, false).map(|r| r.output).map_err(|e| e.to_string());
        let (b, a, s) = (run(&full)?, run(&caching)?, run(&sel)?);
        let (ea, es) = (relative_l1(&a, &b).map_err(|e| e.to_string())?, relative_l1(&s, &b).map_err(|e| e.to_string())?);
        if s != a && es < ea {
            better += 1;
        }
    }
    Ok(format!(
        "selective {selective:.6} <= searched {searched:.6} <= uniform {uniform:.6} (searched ties uniform: same pattern); selective beats pure caching on {better}/20 held-out seeds"
    ))
}

fn zero_blocks(p: &CachingPattern) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut t = 1;
    while t <= p.len() {
        if p.is_active(t) {
            t += 1;
            continue;
        }
        let start = t;
        while t <= p.len() && !p.is_active(t) {
            t += 1;
        }
        blocks.push((start, t - 1));
    }
    blocks
}

fn error_growth() -> Outcome {
    let config = ModelConfig::reference();
    let (steps, layers) = (config.steps, config.layers);
    let sim = Simulator::new(config, EngineOptions::default()).map_err(|e| e.to_string())?;
    let mut patterns: Vec<CachingPattern> = ["10000100001000010000", "10001000100010001000", "10000001000000100000"]
        .iter()
        .map(|s| CachingPattern::parse(s).unwrap())
        .collect();
    let cs = ConstraintSet::new(steps, 7, 1, 6, false).map_err(|e| e.to_string())?;
    let sampled = sample_patterns(&cs, 40, 100_000, 7, Proposal::IntervalWalk).map_err(|e| e.to_string())?;
    patterns.extend(
        sampled
            .patterns
            .into_iter()
            .filter(|p| zero_blocks(p).iter().any(|(a, b)| b - a + 1 >= 3))
            .take(5),
    );
    let full = ExecutionPlan::full(steps, layers);
    let baselines = (0..20)
        .map(|seed| {
            let (x, c) = sim.inputs(seed, 0);
            sim.run(&full, &x, &c, true).map(|r| (x, c, r.snapshots.unwrap()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;

    let mut worst = 20;
    for p in &patterns {
        let plan = build_caching_plan(p, layers);
        let last_cached = (1..=steps).rev().find(|&t| !p.is_active(t)).unwrap();
        let mut passing = 0;
        for (x, c, base) in &baselines {
            let snaps = sim.run(&plan, x, c, true).map_err(|e| e.to_string())?.snapshots.unwrap();
            let curves = step_error_curves(&snaps, base).map_err(|e| e.to_string())?;
            let mean = |t: usize| curves.iter().map(|c| c.values[t - 1]).sum::<f64>() / layers as f64;
            if mean(1) != 0.0 {
                return Err(format!("{p}: nonzero error at step 1"));
            }
            let profile = block_error_profile(&snaps, base, last_cached).map_err(|e| e.to_string())?;
            if profile.values.iter().any(|v| *v < 0.0) || profile.len() != layers {
                return Err(format!("{p}: bad block error profile"));
            }
            let grows = zero_blocks(p)
                .into_iter()
                .filter(|(a, b)| b - a + 1 >= 3)
                .all(|(a, b)| (a + 1..=b).all(|t| mean(t) >= mean(t - 1)));
            passing += grows as usize;
        }
        worst = worst.min(passing);
        if passing < 16 {
            return Err(format!("{p}: error grows across zero blocks on only {passing}/20 seeds"));
        }
    }

    let (x, c, base) = &baselines[0];
    let p = &patterns[0];
    let snaps = sim.run(&build_caching_plan(p, layers), x, c, true).map_err(|e| e.to_string())?.snapshots.unwrap();
    let rows = |curve| -> Result<usize, String> {
        let mut buf = Vec::new();
        write_curves_csv(&[curve], &mut buf).map_err(|e| e.to_string())?;
        Ok(String::from_utf8(buf).unwrap().lines().count() - 1)
    };
    let delta_rows = rows(consecutive_output_delta(&base.outputs).map_err(|e| e.to_string())?)?;
    let profile_rows = rows(block_error_profile(&snaps, base, steps).map_err(|e| e.to_string())?)?;
    if delta_rows != steps - 1 || profile_rows != layers {
        return Err(format!("CSV rows: {delta_rows} output deltas, {profile_rows} block errors"));
    }
    Ok(format!(
        "{} patterns, error non-decreasing within zero blocks on >= {worst}/20 seeds each; CSVs have {delta_rows} and {profile_rows} rows",
        patterns.len()
    ))
}

fn top_k() -> Outcome {
    let mut r = rng::stream(99);
    for case in 0..10_000 {
        let n = 1 + (r.next_u64() % 64) as usize;
        let levels = 1 + r.next_u64() % 8;
        let imp: Vec<f64> = (0..n).map(|_| (r.next_u64() % levels) as f64 * 0.5).collect();
        let p = (1 + r.next_u64() % 1000) as f64 / 1000.0;
        let sel = select_tokens(&imp, p).map_err(|e| e.to_string())?;
        let k = ((p * n as f64 + 1e-9).floor() as usize).max(1);
        if sel.selected.len() != k {
            return Err(format!("case {case}: {} selected, expected {k}", sel.selected.len()));
        }
        let chosen: BTreeSet<usize> = sel.selected.iter().copied().collect();
        for &i in &chosen {
            for j in (0..n).filter(|j| !chosen.contains(j)) {
                if imp[i] < imp[j] || (imp[i] == imp[j] && i > j) {
                    return Err(format!("case {case}: token {i} chosen over {j}"));
                }
            }
        }
    }
    Ok("cardinality, dominance and index tie-break hold on 10^4 vectors".into())
}

fn determinism() -> Outcome {
    let started = Instant::now();
    let config = workspace().join("configs/golden.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_procache"))
            .args(["bench", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(d.path())
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
    }
    let elapsed = started.elapsed();
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|_| format!("{name:?} missing in second run"))?;
        if a != b {
            return Err(format!("{name:?} differs between runs"));
        }
    }
    if elapsed > Duration::from_secs(120) {
        return Err(format!("two runs took {:.1}s", elapsed.as_secs_f64()));
    }
    Ok(format!(
        "{} artifacts byte-identical across two runs ({:.1}s per run)",
        names.len(),
        elapsed.as_secs_f64() / 2.0
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("identity correctness", identity),
        ("oracle equivalence", oracle_equivalence),
        ("attempts vs valid patterns", table_c),
        ("injection table", injection_table),
        ("flops model fidelity", flops_fidelity),
        ("ablation direction", ablation),
        ("error growth", error_growth),
        ("top-k token properties", top_k),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
