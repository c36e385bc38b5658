"""Pure-Python kernels. Reference implementation for the compiled backend."""
from __future__ import annotations

import numpy as np


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(
                min(
                    prev[j] + 1,
                    cur[j - 1] + 1,
                    prev[j - 1] + (ca != cb),
                )
            )
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: str, b: str, tau: float) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    nl = levenshtein(a, b) / longest
    return nl if nl <= tau else 1.0


def nl_matrix(keys_p, keys_t, tau: float) -> np.ndarray:
    out = np.empty((len(keys_p), len(keys_t)), dtype=np.float64)
    for i, p in enumerate(keys_p):
        for j, t in enumerate(keys_t):
            out[i, j] = normalized_levenshtein(p, t, tau)
    return out


def solve_lsa(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method on a square cost matrix.

    Returns ``(col_of_row, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``cost[i, j] - u[i] - v[j] >= 0`` everywhere, with equality
    on the returned assignment.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("solve_lsa expects a square matrix")
    rows = c.tolist()
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    owner = [0] * (n + 1)  # owner[j]: 1-based row assigned to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    return col_of_row, np.array(u[1:]), np.array(v[1:])
