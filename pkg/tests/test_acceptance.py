"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Trained models are cached under pytest's cache directory, keyed by their config
and a hash of the package source, together with the wall time their training
took. Runtime limits are checked against those recorded times, so a cached
rerun is held to the cost of the original training. ``pytest --cache-clear``
retrains everything.
"""

import hashlib
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import cdrb
from cdrb.buffer import ReplayBuffer
from cdrb.config import RunConfig
from cdrb.diffusion import SamplerConfig, degrade_batch, project_trajectory, sample_cdrb, sample_gaussian
from cdrb.errors import FormatError
from cdrb.evaluation import make_episodes, plan_feasibility, shared_success_path_lengths
from cdrb.pipeline import baseline_planners, benchmark, dataset_for, load_model, prepare_data, save_model, train_model
from cdrb.planners import goal_states

SEEDS = [0, 1, 2, 3, 4]
TIGHT = RunConfig(maze="maze_tight", steps=12_000, lr=1e-3, episodes=40, seeds=SEEDS)
DEFAULT = RunConfig(maze="maze", steps=6_000, lr=1e-3, episodes=40, seeds=SEEDS)
OVERFIT = RunConfig(maze="empty", n_demos=1, hidden=[256, 256], t=10, lr=3e-3, lr_decay="cosine", batch=64)
OVERFIT_STEPS = {"cdrb": 6_000, "gaussian": 6_000}
OVERFIT_SAMPLES = 50


def _source_hash() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(cdrb.__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


SOURCE_HASH = _source_hash()


def trained(config, cfg: RunConfig):
    """Train ``cfg`` or load it from the cache; returns (model, training seconds)."""
    key = hashlib.sha256((json.dumps(cfg.to_dict(), sort_keys=True) + SOURCE_HASH).encode()).hexdigest()[:20]
    d = config.cache.mkdir("acceptance")
    ckpt, meta = d / f"{key}.ckpt", d / f"{key}.json"
    if ckpt.exists() and meta.exists():
        try:
            info = json.loads(meta.read_text())
            model = load_model(ckpt)
            model.losses = np.asarray(info["losses"])
            return model, float(info["seconds"])
        except (FormatError, KeyError, ValueError):
            pass
    t0 = time.perf_counter()
    model = train_model(cfg)
    seconds = time.perf_counter() - t0
    save_model(model, ckpt)
    meta.write_text(json.dumps({"seconds": seconds, "losses": model.losses.tolist(), "config": cfg.to_dict()}))
    return model, seconds


def pct(x: float) -> str:
    return f"{100 * x:.2f}"


# --- shared fixtures ------------------------------------------------------------


@pytest.fixture(scope="module")
def tight(request):
    """Both methods on the tight maze plus the projection baseline, 5 seeds x 40 episodes."""
    cdrb_model, t_cdrb = trained(request.config, TIGHT.replace(method="cdrb"))
    gauss_model, t_gauss = trained(request.config, TIGHT.replace(method="gaussian"))
    planners = [cdrb_model.planner(), gauss_model.planner()]
    planners += baseline_planners(["projection"], TIGHT, cdrb_model, cdrb_model.maze)
    t0 = time.perf_counter()
    reps = benchmark(TIGHT, planners, cdrb_model.maze)
    eval_seconds = time.perf_counter() - t0
    return dict(
        cdrb=cdrb_model,
        gaussian=gauss_model,
        reports=dict(zip(["cdrb", "gaussian", "projection"], reps)),
        seconds=dict(cdrb=t_cdrb, gaussian=t_gauss, eval=eval_seconds),
    )


@pytest.fixture(scope="module")
def default_full(request):
    model, seconds = trained(request.config, DEFAULT)
    t0 = time.perf_counter()
    rep = benchmark(DEFAULT, [model.planner()], model.maze, with_reference=False)[0]
    return dict(model=model, report=rep, seconds=seconds, eval=time.perf_counter() - t0)


# --- criteria -------------------------------------------------------------------


def test_criterion_1_buffer_membership(default_full, report):
    model = default_full["model"]
    planner = model.planner()
    n_plans, chunk = 1000, 200
    stats = dict(entries=0, bad=0, iterates=0)

    def check(k, X, idx):
        if k < 1:
            return
        inner, inner_idx = X[:, 1:-1], idx[:, 1:-1]
        ok = (inner_idx >= 0) & np.all(inner == model.buf.points[np.maximum(inner_idx, 0)], axis=-1)
        stats["entries"] += ok.size
        stats["bad"] += int(ok.size - ok.sum())
        stats["iterates"] += 1

    t0 = time.perf_counter()
    for seed in range(n_plans // chunk):
        eps = make_episodes(model.maze, 100 + seed, chunk)
        starts = np.stack([s for s, _ in eps])
        goals = np.stack([g for _, g in eps])
        planner.plan_batch(starts, goals, np.random.default_rng(seed), callback=check)
    seconds = time.perf_counter() - t0
    passed = stats["bad"] == 0 and stats["iterates"] == model.schedule.t * (n_plans // chunk) and seconds < 120
    detail = (
        f"{n_plans} plans, {stats['entries']} interior entries over k = {model.schedule.t}..1, "
        f"{stats['bad']} not exact buffer members; {seconds:.1f} s sampling (limit 120 s)"
    )
    assert report(1, passed, detail)


def test_criterion_2_pinning(tight, report):
    t0 = time.perf_counter()
    eps = make_episodes(tight["cdrb"].maze, 7, 100)
    starts = np.stack([s for s, _ in eps])
    goals = np.stack([g for _, g in eps])
    lines, ok = [], True
    for name in ("cdrb", "gaussian"):
        model = tight[name]
        s0 = model.norm.normalize(starts)
        sT = model.norm.normalize(goal_states(goals))
        seen = dict(n=0, bad=0)

        def check(k, X, idx=None):
            seen["n"] += 1
            seen["bad"] += int(np.sum(np.any(X[:, 0] != s0, axis=1)) + np.sum(np.any(X[:, -1] != sT, axis=1)))

        plans = model.planner().plan_batch(starts, goals, np.random.default_rng(0), callback=check)
        world_bad = int(np.sum(np.any(plans[:, 0] != starts, axis=1)) + np.sum(np.any(plans[:, -1] != goal_states(goals), axis=1)))
        ok &= seen["bad"] == 0 and world_bad == 0 and seen["n"] == (model.schedule or model.noise).t + 1
        lines.append(f"{name}: {seen['n']} iterates, {seen['bad'] + world_bad} endpoint mismatches")
    seconds = time.perf_counter() - t0
    ok &= seconds < 60
    assert report(2, ok, "; ".join(lines) + f" over 100 plans; {seconds:.1f} s (limit 60 s)")


def test_criterion_3_feasibility_gap(tight, report):
    c, g = tight["reports"]["cdrb"], tight["reports"]["gaussian"]
    total = sum(tight["seconds"].values())
    gap = c.plan_segment_feasibility - g.plan_segment_feasibility
    # feasibility of the k = 0 projection of the final CDRB plans, for reference
    model = tight["cdrb"]
    eps = make_episodes(model.maze, 0, 40)
    starts = np.stack([s for s, _ in eps])
    goals = np.stack([g for _, g in eps])
    plans = model.planner().plan_batch(starts, goals, np.random.default_rng([0, 0]))
    snapped = model.norm.denormalize(project_trajectory(model.norm.normalize(plans), model.buf))
    snapped[:, 0], snapped[:, -1] = plans[:, 0], plans[:, -1]
    snap_pf = np.mean([plan_feasibility(p, model.maze)[0] for p in snapped])
    whole = lambda rep: np.mean([r.segment_feasibility == 1.0 for r in rep.records])  # noqa: E731
    passed = gap >= 0.10 and c.plan_point_feasibility >= 0.95 and total <= 1800
    detail = (
        f"segment feasibility CDRB {pct(c.plan_segment_feasibility)}% vs Gaussian {pct(g.plan_segment_feasibility)}% "
        f"(gap {pct(gap)} points, need >= 10); CDRB point feasibility {pct(c.plan_point_feasibility)}% (need >= 95); "
        f"plans with every segment feasible CDRB {pct(whole(c))}% vs Gaussian {pct(whole(g))}% (not gated); "
        f"k=0 projected plans {pct(snap_pf)}% point-feasible; "
        f"{len(c.records)} episodes; runtime {total / 60:.1f} min "
        f"(train CDRB {tight['seconds']['cdrb']:.0f} s, Gaussian {tight['seconds']['gaussian']:.0f} s, "
        f"eval {tight['seconds']['eval']:.0f} s; limit 30 min)"
    )
    assert report(3, passed, detail)


def test_criterion_4_success_rate(tight, report):
    c, g = tight["reports"]["cdrb"], tight["reports"]["gaussian"]
    passed = c.success_rate >= 0.85 and c.success_rate >= g.success_rate - 0.02
    detail = (
        f"maze_tight over {len(c.seeds)} seeds: CDRB {pct(c.success_rate)} ± {pct(c.success_std)}, "
        f"Gaussian {pct(g.success_rate)} ± {pct(g.success_std)} (need CDRB >= 85 and >= Gaussian - 2)"
    )
    assert report(4, passed, detail)


def test_criterion_5_projection_strawman(tight, report):
    c, p = tight["reports"]["cdrb"], tight["reports"]["projection"]
    passed = c.plan_segment_feasibility > p.plan_segment_feasibility
    detail = (
        f"segment feasibility CDRB {pct(c.plan_segment_feasibility)}% vs projected straight lines "
        f"{pct(p.plan_segment_feasibility)}% on the same {len(c.records)} episodes (point feasibility "
        f"{pct(p.plan_point_feasibility)}%, success {pct(p.success_rate)}%)"
    )
    assert report(5, passed, detail)


def _degrade_seconds(buf, sched, X, ks, repeats) -> float:
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for _ in range(repeats):
        for k in ks:
            degrade_batch(X, k, buf, sched, rng)
    return (time.perf_counter() - t0) / (repeats * len(ks))


def test_criterion_6_kmeans_compression(request, default_full, report):
    full = default_full["model"]
    k = len(full.buf) // 10
    cfg = DEFAULT.replace(kmeans_k=k)
    small, seconds = trained(request.config, cfg)
    t0 = time.perf_counter()
    rep = benchmark(cfg, [small.planner(name="kmeans")], small.maze, with_reference=False)[0]
    eval_seconds = time.perf_counter() - t0
    base = default_full["report"]
    change = abs(rep.success_rate - base.success_rate)

    _, data = prepare_data(dataset_for(DEFAULT), False)
    X = data[np.random.default_rng(0).integers(len(data), size=64)]
    sched = full.schedule
    ks = range(1, sched.t + 1)
    t_full = _degrade_seconds(full.buf, sched, X, ks, 2)
    t_small = _degrade_seconds(small.buf, sched, X, ks, 2)
    # the same two buffers behind a linear scan, on a lighter batch
    brute = lambda b: ReplayBuffer(b.points, state_dim=b.state_dim, d_max=b.d_max, backend="brute")  # noqa: E731
    few = [1, sched.t // 2, sched.t]
    b_full = _degrade_seconds(brute(full.buf), sched, X[:8], few, 1)
    b_small = _degrade_seconds(brute(small.buf), sched, X[:8], few, 1)

    total = default_full["seconds"] + default_full["eval"] + seconds + eval_seconds
    speedup = t_full / t_small
    passed = change <= 0.05 and speedup >= 2.0 and total <= 1200
    detail = (
        f"buffer {len(full.buf)} -> {len(small.buf)}: success {pct(base.success_rate)}% -> {pct(rep.success_rate)}% "
        f"(change {pct(change)} points, need <= 5); per-step degrade time with the default {full.buf.backend} index "
        f"{1e3 * t_full:.1f} -> {1e3 * t_small:.1f} ms ({speedup:.2f}x, need >= 2); "
        f"linear-scan index {1e3 * b_full:.0f} -> {1e3 * b_small:.0f} ms ({b_full / b_small:.2f}x); "
        f"runtime {total / 60:.1f} min (limit 20 min)"
    )
    assert report(6, passed, detail)


def test_criterion_7_path_length(tight, report):
    c, g = tight["reports"]["cdrb"], tight["reports"]["gaussian"]
    a, b, n = shared_success_path_lengths(c, g)
    passed = n > 0 and a <= b
    detail = (
        f"mean normalized path length on {n} shared successful episodes: CDRB {a:.3f} vs Gaussian {b:.3f} "
        f"(all successes: CDRB {c.normalized_path_length:.3f}, Gaussian {g.normalized_path_length:.3f})"
    )
    assert report(7, passed, detail)


def steps_to_half_reduction(losses, window: int = 100) -> int:
    """First step at which the moving average has covered half of its total drop."""
    avg = np.convolve(np.asarray(losses, dtype=float), np.ones(window) / window, mode="valid")
    target = avg[0] - 0.5 * (avg[0] - avg[-1])
    return int(np.argmax(avg <= target)) + window


def test_steps_to_half_reduction_oracle():
    losses = np.concatenate([np.full(10, 3.0), np.full(30, 1.0)])
    # the 4-step average first reaches 2.0 on the window over steps 9..12
    assert steps_to_half_reduction(losses, window=4) == 12
    assert steps_to_half_reduction(np.linspace(1.0, 0.0, 1001), window=1) == 501


def test_criterion_8_schedule_ablation(request, default_full, report):
    log_model, _ = trained(request.config, DEFAULT.replace(schedule="log"))
    lin_model = default_full["model"]
    n_lin = steps_to_half_reduction(lin_model.losses)
    n_log = steps_to_half_reduction(log_model.losses)
    seeds = SEEDS[:3]
    lin_rep = benchmark(DEFAULT.replace(seeds=seeds), [lin_model.planner(name="linear")], lin_model.maze, False)[0]
    log_rep = benchmark(DEFAULT.replace(seeds=seeds), [log_model.planner(name="log")], log_model.maze, False)[0]
    passed = n_log < n_lin
    detail = (
        f"steps to 50% of final loss reduction: log {n_log} vs linear {n_lin} of {DEFAULT.steps}; "
        f"success over seeds {seeds} (not gated): linear {pct(lin_rep.success_rate)} ± {pct(lin_rep.success_std)}, "
        f"log {pct(log_rep.success_rate)} ± {pct(log_rep.success_std)}"
    )
    assert report(8, passed, detail)


def test_criterion_9_selftest(report):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "cdrb.cli", "selftest"], capture_output=True, text=True)
    seconds = time.perf_counter() - t0
    passed = proc.returncode == 0 and "FAIL" not in proc.stdout and seconds < 60
    checks = proc.stdout.count("PASS")
    assert report(9, passed, f"selftest exit {proc.returncode}, {checks} checks passed, {seconds:.1f} s (limit 60 s)")


@pytest.mark.parametrize("method", ["cdrb", "gaussian"])
def test_criterion_10_overfit_round_trip(request, method, report):
    cfg = OVERFIT.replace(method=method, steps=OVERFIT_STEPS[method])
    model, seconds = trained(request.config, cfg)
    _, data = prepare_data(dataset_for(cfg), False)
    demo = data[0]
    s0 = np.repeat(demo[:1], OVERFIT_SAMPLES, 0)
    sT = np.repeat(demo[-1:], OVERFIT_SAMPLES, 0)
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    if method == "cdrb":
        X = sample_cdrb(model.net, model.buf, SamplerConfig(model.schedule), s0, sT, rng)
    else:
        X = sample_gaussian(model.net, model.noise, s0, sT, rng)
    sampling = time.perf_counter() - t0
    err = np.linalg.norm(X - demo, axis=-1)
    passed = err.max() < 0.05 and seconds + sampling < 300
    detail = (
        f"{method} single-demo round trip over {OVERFIT_SAMPLES} samples: max per-state error {err.max():.4f}, "
        f"mean {err.mean():.4f} normalized (need max < 0.05); trained {cfg.steps} steps in {seconds:.0f} s, sampled in {sampling:.1f} s (limit 300 s)"
    )
    assert report(10, passed, detail)
