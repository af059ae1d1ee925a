"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one JSON line per (kernel, size) with the median time of each
backend and the speedup.  Both backends must agree on every input.
"""
import argparse
import json
import time

import numpy as np

from ki2hoi._kernels import _fallback

try:
    from ki2hoi._kernels import _core
except ImportError:  # extension not built
    _core = None


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _boxes(rng, n):
    xy = rng.uniform(0, 0.8, (n, 2))
    wh = rng.uniform(0.05, 0.2, (n, 2))
    return np.concatenate([xy, xy + wh], 1)


def bench_assignment(rng, shape, repeat):
    cost = rng.random(shape)
    py = _fallback.solve_assignment(cost)
    cy = _core.solve_assignment(cost)
    assert all(np.array_equal(a, b) for a, b in zip(py, cy))
    return (_median_time(lambda: _fallback.solve_assignment(cost), repeat),
            _median_time(lambda: _core.solve_assignment(cost), repeat))


def bench_matching(rng, n_det, n_gt, repeat):
    n_img = max(1, n_gt // 4)
    args = (
        rng.integers(0, n_img, n_det).astype(np.int64), _boxes(rng, n_det), _boxes(rng, n_det),
        rng.integers(0, n_img, n_gt).astype(np.int64), _boxes(rng, n_gt), _boxes(rng, n_gt), 0.5,
    )
    # overlap some detections with ground truth so the match path is exercised
    k = min(n_det, n_gt)
    args[0][:k], args[1][:k], args[2][:k] = args[3][:k], args[4][:k], args[5][:k]
    assert np.array_equal(_fallback.greedy_pair_match(*args), _core.greedy_pair_match(*args))
    return (_median_time(lambda: _fallback.greedy_pair_match(*args), repeat),
            _median_time(lambda: _core.greedy_pair_match(*args), repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _core is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(args.seed)
    rows = []
    for shape in [(64, 2), (64, 8), (100, 100), (300, 300)]:
        py, cy = bench_assignment(rng, shape, args.repeat if shape[0] < 300 else 3)
        rows.append({"kernel": "solve_assignment", "size": list(shape), "python_s": py, "cython_s": cy})
    for n_det, n_gt in [(100, 20), (2000, 200), (20000, 2000)]:
        py, cy = bench_matching(rng, n_det, n_gt, args.repeat if n_det < 20000 else 3)
        rows.append({"kernel": "greedy_pair_match", "size": [n_det, n_gt], "python_s": py, "cython_s": cy})
    for r in rows:
        r["speedup"] = r["python_s"] / r["cython_s"]
        print(json.dumps(r))
    return rows


if __name__ == "__main__":
    main()
