# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled CTC forward-backward, Levenshtein and harmonic-series kernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, cos, sin, INFINITY

cnp.import_array()


cdef inline double _lse2(double a, double b) nogil:
    cdef double m
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    m = a if a > b else b
    return m + log(exp(a - m) + exp(b - m))


cdef inline double _lse3(double a, double b, double c) nogil:
    return _lse2(_lse2(a, b), c)


def ctc_forward_backward(cnp.ndarray[cnp.float64_t, ndim=2] logp,
                         cnp.ndarray[cnp.int64_t, ndim=1] labels,
                         long blank=0):
    """Return (negative log-likelihood, d nll / d logp)."""
    cdef Py_ssize_t T = logp.shape[0], K = logp.shape[1]
    cdef Py_ssize_t L = labels.shape[0], S = 2 * L + 1
    cdef Py_ssize_t t, s, k
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ext = np.full(S, blank, dtype=np.int64)
    for s in range(L):
        ext[2 * s + 1] = labels[s]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] alpha = np.full((T, S), -INFINITY)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] beta = np.full((T, S), -INFINITY)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros((T, K))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] occ = np.full((T, K), -INFINITY)
    cdef double v, ll

    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            v = alpha[t - 1, s]
            if s >= 1:
                v = _lse2(v, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                v = _lse2(v, alpha[t - 1, s - 2])
            if v != -INFINITY:
                alpha[t, s] = v + logp[t, ext[s]]

    beta[T - 1, S - 1] = logp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = logp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            v = beta[t + 1, s]
            if s + 1 < S:
                v = _lse2(v, beta[t + 1, s + 1])
            if s + 2 < S and ext[s] != blank and ext[s] != ext[s + 2]:
                v = _lse2(v, beta[t + 1, s + 2])
            if v != -INFINITY:
                beta[t, s] = v + logp[t, ext[s]]

    if S > 1:
        ll = _lse2(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        ll = alpha[T - 1, 0]
    if ll == -INFINITY:
        return INFINITY, grad

    for t in range(T):
        for s in range(S):
            v = alpha[t, s] + beta[t, s]
            if v != -INFINITY:
                k = ext[s]
                occ[t, k] = _lse2(occ[t, k], v - logp[t, k])
        for k in range(K):
            if occ[t, k] != -INFINITY:
                grad[t, k] = -exp(occ[t, k] - ll)
    return -ll, grad


def levenshtein_ids(cnp.ndarray[cnp.int64_t, ndim=1] a,
                    cnp.ndarray[cnp.int64_t, ndim=1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] prev = np.arange(m + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur = np.empty(m + 1, dtype=np.int64)
    cdef long best, c
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j] + 1
            c = cur[j - 1] + 1
            if c < best:
                best = c
            c = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            if c < best:
                best = c
            cur[j] = best
        prev, cur = cur, prev
    return int(prev[m])


def harmonic_series(coef, theta):
    """out[m, n] = sum_k coef[m, k] * exp(1j * (k + 1) * theta[n])."""
    cdef double[:, ::1] cr = np.ascontiguousarray(coef.real, dtype=np.float64)
    cdef double[:, ::1] ci = np.ascontiguousarray(coef.imag, dtype=np.float64)
    cdef double[::1] th = theta
    cdef Py_ssize_t M = cr.shape[0], K = cr.shape[1], N = th.shape[0]
    cdef Py_ssize_t m, k, n
    re_np = np.zeros((M, N), dtype=np.float64)
    im_np = np.zeros((M, N), dtype=np.float64)
    cdef double[:, ::1] ore = re_np
    cdef double[:, ::1] oim = im_np
    cdef double[::1] zr = np.cos(theta)
    cdef double[::1] zi = np.sin(theta)
    cdef double tr, br, bi
    if K == 0:
        return re_np + 1j * im_np
    with nogil:
        # Horner's rule with the sample loop innermost: independent lanes pipeline well
        for m in range(M):
            br = cr[m, K - 1]
            bi = ci[m, K - 1]
            for n in range(N):
                ore[m, n] = br
                oim[m, n] = bi
            for k in range(K - 2, -1, -1):
                br = cr[m, k]
                bi = ci[m, k]
                for n in range(N):
                    tr = ore[m, n] * zr[n] - oim[m, n] * zi[n] + br
                    oim[m, n] = ore[m, n] * zi[n] + oim[m, n] * zr[n] + bi
                    ore[m, n] = tr
            for n in range(N):
                tr = ore[m, n] * zr[n] - oim[m, n] * zi[n]
                oim[m, n] = ore[m, n] * zi[n] + oim[m, n] * zr[n]
                ore[m, n] = tr
    return re_np + 1j * im_np
