# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""

from libc.stdlib cimport malloc, free, calloc


def variance_split(values, double rel_tol=1e-12):
    cdef Py_ssize_t n = len(values)
    if n < 2:
        return 0, 0.0
    cdef double *v = <double *> malloc(n * sizeof(double))
    cdef double *c = <double *> malloc(n * sizeof(double))
    cdef Py_ssize_t i, k, m, best_k = 0
    cdef double mean = 0.0, total_sq = 0.0, tol, s_low = 0.0, q_low = 0.0
    cdef double s_high, q_high, var_low, var_high, cost, best = 0.0
    try:
        for i in range(n):
            v[i] = values[i]
        for i in range(n):
            mean += v[i]
        mean /= n
        for i in range(n):
            c[i] = v[i] - mean
            total_sq += c[i] * c[i]
        tol = rel_tol * max(total_sq / n, 1e-300)
        for k in range(1, n):
            s_low += c[k - 1]
            q_low += c[k - 1] * c[k - 1]
            if v[k - 1] == v[k]:
                continue
            m = n - k
            s_high = -s_low
            q_high = total_sq - q_low
            var_low = max(q_low / k - (s_low / k) * (s_low / k), 0.0)
            var_high = max(q_high / m - (s_high / m) * (s_high / m), 0.0)
            cost = var_low + var_high
            if best_k == 0 or cost < best - tol:
                best_k = k
                best = cost
            elif cost <= best + tol:
                best_k = k
                best = min(best, cost)
    finally:
        free(v)
        free(c)
    return best_k, best


def lcs_length(a, b):
    if len(a) < len(b):
        a, b = b, a
    cdef Py_ssize_t n = len(a), m = len(b), i, j
    cdef long *bb = <long *> malloc((m + 1) * sizeof(long))
    cdef long *prev = <long *> calloc(m + 1, sizeof(long))
    cdef long *cur = <long *> calloc(m + 1, sizeof(long))
    cdef long *tmp
    cdef long x, result
    try:
        for j in range(m):
            bb[j] = b[j]
        for i in range(n):
            x = a[i]
            cur[0] = 0
            for j in range(1, m + 1):
                if x == bb[j - 1]:
                    cur[j] = prev[j - 1] + 1
                elif cur[j - 1] > prev[j]:
                    cur[j] = cur[j - 1]
                else:
                    cur[j] = prev[j]
            tmp = prev
            prev = cur
            cur = tmp
        result = prev[m]
    finally:
        free(bb)
        free(prev)
        free(cur)
    return result
