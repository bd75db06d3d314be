"""Fast numerical self-checks: gradients, spatial index, k-means and schedules."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .buffer import ReplayBuffer, kmeans_compress
from .model import RestorationNet, TemporalConvNet
from .schedule import DistanceSchedule

FD_STEP = 1e-5
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def gradient_error(net, rng: np.random.Generator, n_coords: int = 20, batch: int = 3) -> float:
    """Max relative error between analytic and central-difference gradients on random coordinates."""
    x = rng.standard_normal((batch, net.input_size))
    y = rng.standard_normal((batch, net.input_size))
    k = rng.integers(0, net.t + 1, size=batch)
    _, grad = net.loss_and_grad(x, y, k)
    # sample among coordinates that the batch actually touches (embedding rows of other steps have zero gradient)
    live = np.flatnonzero(grad != 0.0)
    coords = rng.choice(live, size=min(n_coords, len(live)), replace=False)
    worst = 0.0
    for c in coords:
        old = net.params[c]
        net.params[c] = old + FD_STEP
        up, _ = net.loss_and_grad(x, y, k)
        net.params[c] = old - FD_STEP
        down, _ = net.loss_and_grad(x, y, k)
        net.params[c] = old
        fd = (up - down) / (2 * FD_STEP)
        worst = max(worst, abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), 1e-7))
    return worst


def check_gradients(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    nets = {
        "mlp": RestorationNet(6, 3, 5, hidden=(16, 16), emb_dim=4, rng=rng, zero_head=False),
        "mlp-plain": RestorationNet(6, 3, 5, hidden=(16, 16), emb_dim=4, residual=False, rng=rng, zero_head=False),
        "conv": TemporalConvNet(6, 3, 5, channels=6, layers=2, kernel=3, emb_dim=3, rng=rng, zero_head=False),
    }
    errs = {name: gradient_error(net, rng) for name, net in nets.items()}
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
    return CheckResult("gradient vs finite differences", bool(worst < GRAD_TOL), f"max rel err {detail}")


def check_index(n_cases: int = 1000, seed: int = 1) -> CheckResult:
    """k-d tree radius and nearest queries against the linear scan on random buffers."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for case in range(n_cases):
        n = int(rng.integers(1, 200))
        d = int(rng.integers(1, 6))
        P = rng.standard_normal((n, d))
        if case % 4 == 0:
            # exact duplicates and grid coordinates exercise tie handling
            P = np.round(P * 2) / 2
            P[rng.integers(n, size=n // 3)] = P[0]
        fast = ReplayBuffer(P, backend="kdtree")
        slow = ReplayBuffer(P, backend="brute")
        Q = rng.standard_normal((5, d))
        if case % 4 == 0:
            Q = np.round(Q * 2) / 2
        if not np.array_equal(fast.nearest_index(Q), slow.nearest_index(Q)):
            mismatches += 1
            continue
        eps = float(rng.uniform(0.0, 2.0))
        if case % 4 == 0:
            eps = 0.5 * int(rng.integers(0, 5))
        for q in Q:
            if not np.array_equal(fast.ball_indices(q, eps), slow.ball_indices(q, eps)):
                mismatches += 1
                break
    return CheckResult("index vs linear scan", mismatches == 0, f"{mismatches} mismatches over {n_cases} cases")


def check_kmeans(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(20):
        n = int(rng.integers(5, 400))
        P = rng.standard_normal((n, 4))
        buf = ReplayBuffer(P)
        k = int(rng.integers(1, n + 1))
        small = kmeans_compress(buf, k, 10, rng)
        rows = {tuple(r) for r in P}
        if not all(tuple(r) in rows for r in small.points) or len(small) > k:
            bad += 1
    return CheckResult("k-means output inside buffer", bad == 0, f"{bad} violations over 20 runs")


def check_schedules() -> CheckResult:
    problems = []
    for kind in ("linear", "log"):
        for t in (1, 2, 10, 50, 200):
            for d_max in (0.5, 1.0, 2.0, 3.7):
                s = DistanceSchedule(kind, d_max, t)
                tab = s.table()
                if tab[0] != 0.0 or tab[-1] != d_max:
                    problems.append(f"{kind} t={t} endpoints {tab[0]}, {tab[-1]}")
                if np.any(np.diff(tab) <= 0):
                    problems.append(f"{kind} t={t} not strictly increasing")
    return CheckResult("schedule endpoints and monotonicity", not problems, "; ".join(problems) or "exact")


def run_all() -> list[CheckResult]:
    results = []
    for fn in (check_gradients, check_index, check_kmeans, check_schedules):
        t0 = time.perf_counter()
        r = fn()
        r.seconds = time.perf_counter() - t0
        results.append(r)
    return results
