"""Kernel dispatch: compiled extension when importable, else pure Python.

Set ``ADVSTYLE_PURE_PYTHON=1`` before import to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("ADVSTYLE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._ext import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def ctc_forward_backward(logp: np.ndarray, labels, blank: int = 0):
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _impl.ctc_forward_backward(logp, labels, blank)


def levenshtein_ids(a, b) -> int:
    return int(
        _impl.levenshtein_ids(
            np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64)
        )
    )


def harmonic_series(coef, theta) -> np.ndarray:
    coef = np.ascontiguousarray(np.atleast_2d(coef), dtype=np.complex128)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    return _impl.harmonic_series(coef, theta)
