import math

import numpy as np
import pytest


def brute_preceding(coords, m):
    """Exhaustive preceding-neighbor oracle using math.dist and (d, index) order."""
    out = []
    for i in range(len(coords)):
        cand = sorted(range(i), key=lambda j: (math.dist(coords[i], coords[j]), j))
        out.append(cand[: min(i, m)])
    return out


def brute_nearest(s, ref, m):
    cand = sorted(range(len(ref)), key=lambda j: (math.dist(s, ref[j]), j))
    return cand[: min(len(ref), m)]


def dense_vecchia(G):
    """Full-conditioning (A, F) by solving against leading principal blocks."""
    n = len(G)
    A = np.zeros((n, n))
    f = np.zeros(n)
    f[0] = G[0, 0]
    for i in range(1, n):
        A[i, :i] = np.linalg.solve(G[:i, :i], G[:i, i])
        f[i] = G[i, i] - G[i, :i] @ A[i, :i]
    return A, f


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
