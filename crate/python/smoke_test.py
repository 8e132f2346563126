#!/usr/bin/env python3
"""Smoke test for the fedsim_py extension module.

Builds nothing itself: expects `cargo build -p fedsim-py` (or --release) to
have produced target/{debug,release}/libfedsim_py.so. Copies the library
next to a temp dir under the importable name and drives the main surface.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path


def import_extension():
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "release" / "libfedsim_py.so",
        root / "target" / "debug" / "libfedsim_py.so",
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit(
            "libfedsim_py.so not found; run `cargo build -p fedsim-py --release` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="fedsim_py_"))
    shutil.copy2(lib, stage / "fedsim_py.so")
    sys.path.insert(0, str(stage))
    import fedsim_py

    return fedsim_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol * max(1.0, abs(a), abs(b)), f"{a} != {b} (tol {tol})"


def main():
    fs = import_extension()
    print(f"fedsim_py {fs.__version__}")

    # Problem construction and closed-form constants.
    problem = fs.Problem.synthetic("quadratic", p=2, d=2, knob=0.0, seed=7)
    approx(problem.smoothness, 1.0)
    approx(problem.pl_constant, 1.0)
    grad = problem.local_gradient(0, [0.0, 0.0])
    assert all(abs(g) < 1e-12 for g in grad), grad

    # Gradient diversity: identical shards give exactly 1.
    approx(problem.gradient_diversity([1.0, 2.0]), 1.0, tol=1e-12)

    # Heterogeneous instance with sampling, conditions and a run.
    het = fs.Problem.synthetic("least_squares", p=4, d=3, knob=1.0, seed=11, noise=0.4)
    report = fs.check_lfgd(eta=0.01, e=4, l=het.smoothness, mu=het.pl_constant, lam=2.0)
    assert report["satisfied"], report
    assert report["max_eta"] > 0.01

    traj = fs.run_lfsgd(het, e=4, k=2, t=300, b=1, eta=0.05, seed=3)
    assert not traj.diverged
    assert len(traj) == 301
    assert traj.subopt[-1] < traj.subopt[0], (traj.subopt[0], traj.subopt[-1])
    # Broadcast restart: consensus vanishes right after every aggregation.
    assert all(traj.consensus[t] == 0.0 for t in range(0, 301, 4))

    # Determinism: same seed, same trajectory.
    again = fs.run_lfsgd(het, e=4, k=2, t=300, b=1, eta=0.05, seed=3)
    assert traj.to_csv() == again.to_csv()

    # Synchronous reduction: E = 1, K = p matches the oracle closely.
    base = fs.run_lfgd(het, e=1, k=4, t=50, eta=0.1, w0=[1.0, -1.0, 0.5])
    oracle = fs.oracle_sync_gd(het, eta=0.1, t=50, w0=[1.0, -1.0, 0.5])
    for a, b in zip(base.f_bar, oracle.f_bar):
        approx(a, b, tol=1e-12)

    # Networked run over a ring; the weighted average keeps descending.
    ring = fs.Topology.ring(p=4, self_weight=0.5)
    assert 0.0 < ring.zeta < 1.0
    net = fs.run_nfsgd(het, ring, e=2, t=200, b=1, eta=0.05, seed=5)
    assert not net.diverged
    assert net.f_bar[-1] < net.f_bar[0]

    # Spectral gap of the 4-ring with self-weight 1/2 is exactly 1/2.
    approx(ring.zeta, 0.5, tol=1e-10)
    complete = fs.Topology.complete(5)
    assert complete.zeta == 0.0

    # Sampling with replacement: degenerate weights always pick device 0.
    members = fs.sample_devices([1.0, 0.0, 0.0], k=5, seed=1, round=0)
    assert members == [0, 0, 0, 0, 0]

    # Controlled averaging: centering corrections collapse the directions.
    dirs = [[4.0, 0.0], [0.0, 4.0], [8.0, -4.0], [-4.0, 8.0]]
    mean = [sum(v[i] for v in dirs) / 4 for i in range(2)]
    corr = [[v[i] - mean[i] for i in range(2)] for v in dirs]
    out = fs.apply_controlled_averaging(dirs, corr)
    assert all(out[j] == out[0] for j in range(4))
    approx(fs.weighted_diversity(out, [0.25] * 4), 1.0, tol=0.0)

    # Rate fitting on a clean contraction.
    clean = fs.run_lfgd(problem, e=1, k=2, t=200, eta=0.1, w0=[2.0, 0.0])
    rate, r2 = clean.fit_rate("exp_decay")
    approx(rate, 2 * math.log(0.9), tol=1e-6)
    assert r2 > 0.9999

    print("smoke test: all assertions passed")


if __name__ == "__main__":
    main()
