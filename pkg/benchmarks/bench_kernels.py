"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both backends are imported side by side; results must agree before timing.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from advstyle import _pykernels

try:
    from advstyle._ext import _kernels as _compiled
except ImportError:
    _compiled = None


def _cases(rng):
    T, C, L = 300, 28, 40
    logits = rng.normal(size=(T, C))
    logp = logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)
    labels = rng.integers(1, C, L).astype(np.int64)
    a = rng.integers(0, 30, 400).astype(np.int64)
    b = rng.integers(0, 30, 400).astype(np.int64)
    k = 40
    coef = (rng.normal(size=(3, k)) + 1j * rng.normal(size=(3, k))).astype(np.complex128)
    theta = np.ascontiguousarray(np.linspace(0, 2 * np.pi * 150 * 0.12, 1920))
    return {
        "ctc_forward_backward (T=300, L=40)": ("ctc_forward_backward", (np.ascontiguousarray(logp), labels, 0)),
        "levenshtein_ids (400 x 400)": ("levenshtein_ids", (a, b)),
        "harmonic_series (3 x 40 harmonics, 1920 samples)": ("harmonic_series", (coef, theta)),
    }


def _same(x, y) -> bool:
    if isinstance(x, tuple):
        return all(_same(u, v) for u, v in zip(x, y))
    return bool(np.allclose(x, y, rtol=1e-10, atol=1e-12))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<50} {'python ms':>10} {'cython ms':>10} {'speed-up':>9}")
    for name, (fn, call_args) in _cases(rng).items():
        py, cy = getattr(_pykernels, fn), getattr(_compiled, fn)
        if not _same(py(*call_args), cy(*call_args)):
            raise SystemExit(f"{name}: backends disagree")
        times = {}
        for label, f in (("python", py), ("cython", cy)):
            n = max(1, int(0.2 / max(timeit.timeit(lambda: f(*call_args), number=1), 1e-6)))
            times[label] = min(timeit.repeat(lambda: f(*call_args), number=n, repeat=args.repeat)) / n * 1e3
        rows.append({"kernel": name, "python_ms": times["python"], "cython_ms": times["cython"],
                     "speedup": times["python"] / times["cython"]})
        print(f"{name:<50} {times['python']:>10.3f} {times['cython']:>10.3f} {rows[-1]['speedup']:>8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
