use ndarray::Array2;
use procache::pattern::CachingPattern;
use procache::schedule::{build_caching_plan, build_plan, ExecutionPlan, SelectiveConfig, StepAction};
use procache::tinydit::{
    init_model, selection_size, token_importance, AttentionPolicy, EngineOptions, ModelConfig,
    Simulator, SubModule,
};
use procache::{relative_l1, Error};

fn reference() -> Simulator {
    Simulator::new(ModelConfig::reference(), EngineOptions::default()).unwrap()
}

fn small(steps: usize) -> ModelConfig {
    ModelConfig {
        layers: 3,
        dim: 16,
        heads: 2,
        tokens: 10,
        context_tokens: 4,
        mlp_ratio: 2.0,
        steps,
        seed: 7,
        ..ModelConfig::reference()
    }
}

#[test]
fn weight_checksum_is_frozen() {
    let w = init_model(&ModelConfig::reference()).unwrap();
    assert_eq!(
        w.checksum(),
        "0b18f817606f074428a86ff50a07bbc108476d828575c0bcdf226644615e492f"
    );
    assert_eq!(w.parameter_count(), 827_904);
}

#[test]
fn weights_depend_on_seed() {
    let mut c = ModelConfig::reference();
    let a = init_model(&c).unwrap().checksum();
    c.seed = 43;
    assert_ne!(a, init_model(&c).unwrap().checksum());
}

#[test]
fn runs_are_deterministic() {
    let sim = reference();
    let (x, c) = sim.inputs(3, 1);
    let p = CachingPattern::parse("10010010010010010010").unwrap();
    let plan = build_plan(&p, &SelectiveConfig::new(0.5, 0.25, 8).unwrap());
    let a = sim.run(&plan, &x, &c, true).unwrap();
    let b = reference().run(&plan, &x, &c, true).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.ops, b.ops);
}

#[test]
fn all_ones_matches_uncached_bit_for_bit() {
    let sim = reference();
    for seed in 0..3 {
        let (x, c) = sim.inputs(seed, 0);
        let plan = ExecutionPlan::full(20, 8);
        let cached = sim.run(&plan, &x, &c, true).unwrap();
        let direct = sim.run_uncached(&x, &c, true).unwrap();
        assert_eq!(cached.output, direct.output);
        assert_eq!(cached.snapshots, direct.snapshots);
        assert_eq!(cached.ops, direct.ops);
    }
}

#[test]
fn alternating_pattern_deviation_is_frozen() {
    let sim = reference();
    let (x, c) = sim.inputs(0, 0);
    let base = sim.run(&ExecutionPlan::full(20, 8), &x, &c, false).unwrap();
    let p = CachingPattern::parse("10101010101010101010").unwrap();
    let run = sim.run(&build_caching_plan(&p, 8), &x, &c, false).unwrap();
    let err = relative_l1(&run.output, &base.output).unwrap();
    assert!((err - 2.961_206_759_089_282_7e-1).abs() < 1e-12, "{err:e}");
}

#[test]
fn cached_step_replays_stored_branches_exactly() {
    let config = small(2);
    let sim = Simulator::new(config.clone(), EngineOptions::default()).unwrap();
    let engine = sim.engine();
    let (x, c) = sim.inputs(0, 0);
    let mut state = engine.start(&c).unwrap();
    let temb = engine.timestep_embedding(1);
    let mut h = x.clone();
    for l in 1..=config.layers {
        h = engine.block_forward(h, l, StepAction::FullCompute, &mut state, 1, &temb, 1.0).unwrap();
    }
    let temb2 = engine.timestep_embedding(2);
    let input = Array2::from_elem((config.tokens, config.dim), 0.25);
    let mut expected = input.clone();
    for sub in SubModule::ALL {
        expected += &state.cache.get(1, sub).unwrap().branch;
    }
    let out = engine.block_forward(input, 1, StepAction::CacheOnly, &mut state, 2, &temb2, 1.0).unwrap();
    assert_eq!(out, expected);
}

#[test]
fn selective_collapses_to_full_when_everything_is_selected() {
    let config = small(6);
    let opts = EngineOptions {
        attention: AttentionPolicy::Recompute,
        remodulate: false,
    };
    let sim = Simulator::new(config.clone(), opts).unwrap();
    let p = CachingPattern::parse("100100").unwrap();
    // every zero block of length 2 gets an α step in its second slot
    let plan = build_plan(&p, &SelectiveConfig::new(1.0, 1.0, config.layers).unwrap());
    assert_eq!(plan.count(StepAction::SelectiveCompute), 2 * config.layers);
    let (x, c) = sim.inputs(1, 0);
    let sel = sim.run(&plan, &x, &c, false).unwrap();
    let replaced: Vec<StepAction> = plan
        .actions()
        .iter()
        .map(|a| match a {
            StepAction::SelectiveCompute => StepAction::FullCompute,
            other => *other,
        })
        .collect();
    let reference = ExecutionPlan::from_actions(6, config.layers, replaced).unwrap();
    let full = sim.run(&reference, &x, &c, false).unwrap();
    let diff = (&sel.output - &full.output).iter().fold(0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-12, "max diff {diff:e}");
}

#[test]
fn selective_only_touches_selected_rows() {
    let config = small(2);
    let sim = Simulator::new(config.clone(), EngineOptions::default()).unwrap();
    let engine = sim.engine();
    let (x, c) = sim.inputs(2, 0);
    let mut state = engine.start(&c).unwrap();
    let temb = engine.timestep_embedding(1);
    let h = engine.block_forward(x.clone(), 1, StepAction::FullCompute, &mut state, 1, &temb, 1.0).unwrap();
    let before = state.cache.clone();
    let norms = state.cache.value_norms(1).unwrap().to_vec();
    let ratio = 0.3;
    let k = selection_size(config.tokens, ratio);

    let temb2 = engine.timestep_embedding(2);
    engine
        .block_forward(h, 1, StepAction::SelectiveCompute, &mut state, 2, &temb2, ratio)
        .unwrap();

    let mut order: Vec<usize> = (0..config.tokens).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let chosen = &order[..k];
    assert_eq!(
        state.cache.get(1, SubModule::SelfAttention),
        before.get(1, SubModule::SelfAttention)
    );
    for sub in [SubModule::CrossAttention, SubModule::Mlp] {
        let old = before.get(1, sub).unwrap();
        let new = state.cache.get(1, sub).unwrap();
        for row in 0..config.tokens {
            if chosen.contains(&row) {
                assert_eq!(new.last_refresh[row], 2);
            } else {
                assert_eq!(new.last_refresh[row], 1);
                assert_eq!(new.branch.row(row), old.branch.row(row));
                assert_eq!(new.raw.row(row), old.raw.row(row));
            }
        }
    }
}

#[test]
fn missing_cache_is_an_error() {
    let config = small(3);
    let sim = Simulator::new(config.clone(), EngineOptions::default()).unwrap();
    let engine = sim.engine();
    let (x, c) = sim.inputs(0, 0);
    let temb = engine.timestep_embedding(1);
    for action in [StepAction::CacheOnly, StepAction::SelectiveCompute] {
        let mut state = engine.start(&c).unwrap();
        let err = engine.block_forward(x.clone(), 2, action, &mut state, 1, &temb, 0.5).unwrap_err();
        assert!(matches!(err, Error::MissingCache { step: 1, layer: 2, .. }), "{err}");
    }
    let mut actions = vec![StepAction::FullCompute; 9];
    actions[0] = StepAction::CacheOnly;
    let plan = ExecutionPlan::from_actions(3, 3, actions).unwrap();
    assert!(matches!(sim.run(&plan, &x, &c, false), Err(Error::MissingCache { step: 1, layer: 1, .. })));
}

#[test]
fn shapes_are_preserved() {
    let sim = reference();
    let (x, c) = sim.inputs(0, 0);
    let p = CachingPattern::parse("10001000100010001000").unwrap();
    let run = sim
        .run(&build_plan(&p, &SelectiveConfig::new(0.75, 0.07, 8).unwrap()), &x, &c, true)
        .unwrap();
    assert_eq!(run.output.dim(), x.dim());
    let snaps = run.snapshots.unwrap();
    assert_eq!(snaps.blocks.len(), 20);
    assert!(snaps.blocks.iter().all(|row| row.len() == 8));
    assert!(snaps.blocks.iter().flatten().all(|m| m.dim() == (16, 64)));
    assert_eq!(snaps.outputs.len(), 20);
}

#[test]
fn mismatched_plan_or_input_is_rejected() {
    let sim = reference();
    let (x, c) = sim.inputs(0, 0);
    assert!(matches!(
        sim.run(&ExecutionPlan::full(19, 8), &x, &c, false),
        Err(Error::Config(_))
    ));
    let narrow = Array2::zeros((16, 32));
    assert!(sim.run(&ExecutionPlan::full(20, 8), &narrow, &c, false).is_err());
    let mut bad = x.clone();
    bad[[0, 0]] = f64::NAN;
    assert!(matches!(
        sim.run(&ExecutionPlan::full(20, 8), &bad, &c, false),
        Err(Error::NumericOverflow { step: 0, .. })
    ));
}

#[test]
fn importance_matches_naive_norms() {
    let sim = reference();
    let (x, _) = sim.inputs(5, 0);
    let imp = token_importance(x.view());
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut s = 0.0;
        for v in row {
            s += v * v;
        }
        assert!((imp[i] - s.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn inputs_are_seeded() {
    let sim = reference();
    assert_eq!(sim.inputs(4, 2), sim.inputs(4, 2));
    assert_ne!(sim.inputs(4, 2).0, sim.inputs(4, 3).0);
    assert_ne!(sim.inputs(4, 2).0, sim.inputs(5, 2).0);
    assert_eq!(sim.input_set(&[1, 2], 3).len(), 6);
}
