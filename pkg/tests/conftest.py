"""Shared expensive runs. Each is computed once per session."""

import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from orbitlink.conic import ConeKind, ConicProgram, free, kkt_residuals, nonneg, soc, solve
from orbitlink.problem import MahalanobisBound, linearize, run_scp, validate
from orbitlink.scenario import load
from orbitlink.uncertainty import sigma_points

SCEN = Path(__file__).resolve().parents[1] / "scenarios"
RECONSTRUCT = ("geo_impulse", "geo_lowthrust", "geo_window", "ballistic", "gto_raise_cc",
               "gto_raise_coe", "gto_raise_mee", "zero_covariance")
DETECT = ("detect_nomaneuver", "detect_maneuver")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split()[1].zfill(4)):
            terminalreporter.write_line(line)


# ---------------------------------------------------------------- random SOCPs

def interior_point(rng, blocks, dual):
    out = []
    for blk in blocks:
        if blk.kind is ConeKind.FREE:
            out.append(np.zeros(blk.dim) if dual else rng.normal(size=blk.dim))
        elif blk.kind is ConeKind.NONNEG:
            out.append(rng.uniform(0.1, 2.0, blk.dim))
        else:
            t = rng.normal(size=blk.dim)
            t[0] = np.linalg.norm(t[1:]) + rng.uniform(0.1, 2.0)
            out.append(t)
    return np.concatenate(out)


def random_program(rng, n_target, band=12):
    """Feasible by construction: b = A x* with x* interior, c = A'y* + z* with
    z* interior to the dual cone. Rows couple nearby variables (banded)."""
    blocks, n = [], 0
    while n < n_target:
        kind = rng.choice(3, p=[0.2, 0.3, 0.5])
        dim = int(rng.integers(1, 6)) if kind < 2 else int(rng.integers(2, 8))
        blocks.append((free, nonneg, soc)[kind](dim))
        n += dim
    m = max(1, int(n * rng.uniform(0.3, 0.6)))
    centers = np.sort(rng.choice(n, m, replace=False))
    rows, cols = [], []
    for i, c in enumerate(centers):
        js = np.union1d(np.clip(c + rng.integers(-band, band + 1, size=4), 0, n - 1), [c])
        rows += [i] * len(js)
        cols += list(js)
    A = sp.csr_matrix((rng.normal(size=len(rows)), (rows, cols)), shape=(m, n))
    xs = interior_point(rng, blocks, dual=False)
    zs = interior_point(rng, blocks, dual=True)
    return ConicProgram(A.T @ rng.normal(size=m) + zs, A, A @ xs, blocks)


RANDOM_SIZES = ([int(n) for n in np.geomspace(6, 400, 80)]
                + [int(n) for n in np.geomspace(500, 3000, 14)]
                + [5000, 7000, 10000, 10000, 4000, 8000])


@pytest.fixture(scope="session")
def random_socp_batch():
    """Worst KKT residuals over 100 random programs (sizes up to 10,000)."""
    rng = np.random.default_rng(2024)
    worst, statuses, sizes = {}, [], []
    for n in RANDOM_SIZES:
        p = random_program(rng, n)
        sol = solve(p)
        statuses.append(sol.status)
        sizes.append(p.n)
        for k, v in kkt_residuals(p, sol).items():
            worst[k] = max(worst.get(k, 0.0), v)
    return {"worst": worst, "statuses": statuses, "sizes": sizes}


# ---------------------------------------------------------------- scenario runs

@pytest.fixture(scope="session")
def reconstructions():
    out = {}
    for name in RECONSTRUCT:
        scen = load(SCEN / f"{name}.json")
        t = time.perf_counter()
        sol = run_scp(scen.spec)
        elapsed = time.perf_counter() - t
        out[name] = {"spec": scen.spec, "sol": sol, "check": validate(scen.spec, sol),
                     "runtime": elapsed}
    return out


@pytest.fixture(scope="session")
def detections():
    """Confidence sweeps keeping every solution for validation."""
    out = {}
    for name in DETECT:
        scen = load(SCEN / f"{name}.json")
        shared = linearize(scen.spec)
        runs = []
        for c in scen.detection.confidences:
            sol = run_scp(scen.spec, shared, MahalanobisBound(c))
            runs.append({"confidence": c, "sol": sol,
                         "check": validate(scen.spec, sol) if sol.optimal else None})
        out[name] = {"scenario": scen, "runs": runs}
    return out


@pytest.fixture(scope="session")
def ewsk_unscented():
    from orbitlink.uncertainty import estimate
    scen = load(SCEN / "ewsk_unscented.json")
    t = time.perf_counter()
    stats = estimate(scen.spec, sigma_points(scen.estimation.scheme, 12))
    return {"scenario": scen, "stats": stats, "runtime": time.perf_counter() - t}
