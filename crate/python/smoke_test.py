"""Smoke test for the procache Python module.

Build and install first:  pip install ./crates/py
(or: maturin develop -m crates/py/Cargo.toml)
Then run:  python python/smoke_test.py
"""

import numpy as np

import procache as pc


def check_patterns():
    p = pc.CachingPattern("1001000100")
    assert len(p) == 10 and p.activations() == 3
    assert p.profile() == ([1, 4, 8], [2, 3])
    assert p.bits == [1, 0, 0, 1, 0, 0, 0, 1, 0, 0]
    assert p == pc.CachingPattern("1001000100")
    assert len({p, pc.CachingPattern("1001000100")}) == 1
    try:
        pc.CachingPattern("0110")
    except ValueError:
        pass
    else:
        raise AssertionError("unanchored pattern accepted")

    cs = pc.ConstraintSet(10, 3, 2, 3, monotonic=False)
    assert p.violations(cs) == []
    assert "budget" in pc.CachingPattern("1010101010").violations(cs)

    # zero blocks of length 1..6 get selective steps at even offsets
    for n in range(1, 7):
        steps = pc.CachingPattern("1" + "0" * n).selective_steps()
        assert steps == list(range(3, n + 2, 2)), (n, steps)


def check_space():
    cs = pc.ConstraintSet(50, 17, 2, 5, monotonic=True)
    assert pc.count_patterns(cs) == 473
    everything = set(pc.enumerate_patterns(cs))
    out = pc.sample_patterns(cs, 473, 1_000_000, 0)
    assert set(out["patterns"]) == everything
    assert out["rejections"] == 0
    assert out["discovered_at"] == sorted(out["discovered_at"])


def check_tokens():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 40))
        imp = rng.integers(0, 4, size=n).astype(float)
        ratio = float(rng.uniform(0.01, 1.0))
        k = max(1, int(np.floor(ratio * n + 1e-9)))
        # stable sort on -importance: ties keep the lower index first
        oracle = sorted(np.argsort(-imp, kind="stable")[:k].tolist())
        assert pc.select_tokens(imp.tolist(), ratio) == oracle


def check_simulator():
    sim = pc.Simulator()
    assert sim.checksum() == "0b18f817606f074428a86ff50a07bbc108476d828575c0bcdf226644615e492f"
    steps, layers = sim.steps, sim.layers

    full = pc.ExecutionPlan.full(steps, layers)
    ones = pc.ExecutionPlan.caching(pc.CachingPattern.all_ones(steps), layers)
    base, base_flops = sim.run(full, seed=3)
    same, same_flops = sim.run(ones, seed=3)
    assert same == base and same_flops == base_flops
    assert sim.flops(full)["speedup"] == 1.0
    assert sim.flops(full)["total"] == base_flops

    pattern = pc.CachingPattern("10101010101010101010")
    plan = pc.ExecutionPlan.caching(pattern, layers)
    cached, cached_flops = sim.run(plan, seed=0)
    ref, _ = sim.run(full, seed=0)
    a, b = np.array(cached), np.array(ref)
    oracle = np.abs(a - b).sum() / np.abs(b).sum()
    assert abs(pc.relative_l1(cached, ref) - oracle) < 1e-12
    assert abs(oracle - 0.296120675908928266) < 1e-12
    assert sim.score(plan, seeds=[0], batch=1) == pc.relative_l1(cached, ref)
    assert cached_flops == sim.flops(plan)["total"] < base_flops

    sel = pc.SelectiveConfig(0.75, 0.07, layers)
    assert sel.layers() == [3, 4, 5, 6, 7, 8]
    sel_plan = pc.ExecutionPlan.selective(pc.CachingPattern("10001" * 4), sel)
    full_cells, sel_cells, cache_cells = sel_plan.counts()
    assert full_cells + sel_cells + cache_cells == steps * layers
    assert sel_plan.action(3, 8) == "SelectiveCompute"
    assert sel_plan.action(3, 1) == "CacheOnly"
    assert 0.0 < sim.flops(sel_plan)["selective_overhead"] < 0.05

    x, c = sim.inputs(0, 0)
    x[0][0] = float("nan")
    try:
        sim.run(full, x=x, context=c)
    except ArithmeticError:
        pass
    else:
        raise AssertionError("non-finite input accepted")


if __name__ == "__main__":
    check_patterns()
    check_space()
    check_tokens()
    check_simulator()
    print("python smoke test passed")
