"""Pure-Python/numpy versions of the compiled kernels.

Semantics are identical to ``advstyle._ext._kernels``; these run when the
extension is unavailable or when ``ADVSTYLE_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np


def _extend(labels: np.ndarray, blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def ctc_forward_backward(logp: np.ndarray, labels: np.ndarray, blank: int = 0):
    """Return (negative log-likelihood, d nll / d logp)."""
    T, K = logp.shape
    ext = _extend(np.asarray(labels, dtype=np.int64), blank)
    S = len(ext)
    # the s-2 skip is allowed onto non-blank symbols that differ from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    skip_back = np.zeros(S, dtype=bool)
    skip_back[:-2] = skip[2:]
    emit = logp[:, ext]  # (T, S)

    alpha = np.full((T, S), -np.inf)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, T):
        prev = alpha[t - 1]
        a1 = np.full(S, -np.inf)
        a1[1:] = prev[:-1]
        a2 = np.full(S, -np.inf)
        a2[2:] = prev[:-2]
        a2[~skip] = -np.inf
        alpha[t] = np.logaddexp(np.logaddexp(prev, a1), a2) + emit[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, -2:] = emit[T - 1, -2:]
    if S == 1:
        beta[T - 1, 0] = emit[T - 1, 0]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b1 = np.full(S, -np.inf)
        b1[:-1] = nxt[1:]
        b2 = np.full(S, -np.inf)
        b2[:-2] = nxt[2:]
        b2[~skip_back] = -np.inf
        beta[t] = np.logaddexp(np.logaddexp(nxt, b1), b2) + emit[t]

    ll = np.logaddexp(alpha[T - 1, -1], alpha[T - 1, -2]) if S > 1 else alpha[T - 1, 0]
    grad = np.zeros((T, K))
    if not np.isfinite(ll):
        return np.inf, grad
    with np.errstate(invalid="ignore"):
        post = alpha + beta - emit  # log occupancy of s at t
    for k in np.unique(ext):
        cols = post[:, ext == k]
        m = cols.max(axis=1)
        ok = np.isfinite(m)
        lse = np.full(T, -np.inf)
        lse[ok] = m[ok] + np.log(np.exp(cols[ok] - m[ok, None]).sum(axis=1))
        grad[:, k] = -np.exp(lse - ll)
    return float(-ll), grad


def levenshtein_ids(a, b) -> int:
    a = list(a)
    b = list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def harmonic_series(coef: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """out[m, n] = sum_k coef[m, k] * exp(1j * (k + 1) * theta[n]), by Horner's rule."""
    M, K = coef.shape
    z = np.exp(1j * theta)
    out = np.zeros((M, len(theta)), dtype=np.complex128)
    if K == 0:
        return out
    out += coef[:, -1:]
    for k in range(K - 2, -1, -1):
        out *= z
        out += coef[:, k : k + 1]
    return out * z
