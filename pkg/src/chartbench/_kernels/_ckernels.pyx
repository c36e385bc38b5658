# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.math cimport INFINITY

cnp.import_array()


cdef Py_ssize_t _lev(Py_UCS4[:] a, Py_ssize_t la, Py_UCS4[:] b, Py_ssize_t lb,
                     Py_ssize_t* prev, Py_ssize_t* cur) nogil:
    cdef Py_ssize_t i, j, best, x
    cdef Py_ssize_t* tmp
    for j in range(lb + 1):
        prev[j] = j
    for i in range(1, la + 1):
        cur[0] = i
        for j in range(1, lb + 1):
            best = prev[j] + 1
            x = cur[j - 1] + 1
            if x < best:
                best = x
            x = prev[j - 1] + (a[i - 1] != b[j - 1])
            if x < best:
                best = x
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[lb]


cdef inline Py_UCS4[:] _codepoints(str s):
    cdef Py_ssize_t n = len(s)
    cdef Py_UCS4[:] out = np.empty(max(n, 1), dtype=np.uint32)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = s[i]
    return out


cdef Py_ssize_t _lev_str(str a, str b) except -1:
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    cdef Py_ssize_t la = len(a), lb = len(b)
    if lb == 0:
        return la
    cdef Py_ssize_t* prev = <Py_ssize_t*> malloc((lb + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* cur = <Py_ssize_t*> malloc((lb + 1) * sizeof(Py_ssize_t))
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    cdef Py_UCS4[:] ca = _codepoints(a)
    cdef Py_UCS4[:] cb = _codepoints(b)
    cdef Py_ssize_t d
    try:
        d = _lev(ca, la, cb, lb, prev, cur)
    finally:
        free(prev)
        free(cur)
    return d


def levenshtein(str a, str b):
    return _lev_str(a, b)


def normalized_levenshtein(str a, str b, double tau):
    cdef Py_ssize_t longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    cdef double nl = <double> _lev_str(a, b) / <double> longest
    return nl if nl <= tau else 1.0


def nl_matrix(keys_p, keys_t, double tau):
    cdef Py_ssize_t n = len(keys_p), m = len(keys_t), i, j, longest
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef double nl
    cdef str p, t
    for i in range(n):
        p = keys_p[i]
        for j in range(m):
            t = keys_t[j]
            longest = max(len(p), len(t))
            if longest == 0:
                out[i, j] = 0.0
                continue
            nl = <double> _lev_str(p, t) / <double> longest
            out[i, j] = nl if nl <= tau else 1.0
    return out


def solve_lsa(cost):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    if c.shape[1] != n:
        raise ValueError("solve_lsa expects a square matrix")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef Py_ssize_t[::1] owner = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(n + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef double[:, ::1] cv = c
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    with nogil:
        for i in range(1, n + 1):
            owner[0] = i
            j0 = 0
            for j in range(n + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = owner[j0]
                ui0 = u[i0]
                delta = INFINITY
                j1 = 0
                for j in range(1, n + 1):
                    if not used[j]:
                        cur = cv[i0 - 1, j - 1] - ui0 - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(n + 1):
                    if used[j]:
                        u[owner[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if owner[j0] == 0:
                    break
            while True:
                j1 = way[j0]
                owner[j0] = owner[j1]
                j0 = j1
                if j0 == 0:
                    break
    col_of_row = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        col_of_row[owner[j] - 1] = j - 1
    return col_of_row, np.asarray(u[1:]).copy(), np.asarray(v[1:]).copy()
