"""Brute-force reference implementations, independent of the package code."""
import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np


def cross_moments(Y):
    n, t = Y.shape
    G = np.zeros((n, n))
    for i in range(n):
        for k in range(n):
            G[i, k] = math.fsum(Y[i, s] * Y[k, s] for s in range(t)) / t
    return G


def discrepancy(Y, i, j):
    n, t = Y.shape
    best = 0.0
    for k in range(n):
        if k in (i, j):
            continue
        v = abs(math.fsum((Y[i, s] - Y[j, s]) * Y[k, s] for s in range(t)) / t)
        best = max(best, v)
    return best


def causal_discrepancy(Y, W, i, j, s_min):
    """Direct loop over pairs {k, l}; returns (value, skipped, pairs)."""
    n, t = Y.shape
    others = [u for u in range(n) if u not in (i, j)]
    best, skipped, pairs = -math.inf, 0, 0
    for k, l in itertools.combinations(others, 2):
        pairs += 1
        S = [s for s in range(t) if not (W[i, s] or W[j, s] or W[k, s] or W[l, s])]
        if len(S) < s_min or not S:
            skipped += 1
            continue
        a = math.fsum((Y[i, s] - Y[j, s]) * Y[k, s] for s in S) / len(S)
        b = math.fsum((Y[i, s] - Y[j, s]) * Y[l, s] for s in S) / len(S)
        best = max(best, abs(a) + abs(b))
    return (math.inf if best == -math.inf else best), skipped, pairs


def ks(a, b):
    """sup_y |F_a(y) - F_b(y)| with right-continuous empirical CDFs."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    best = 0.0
    for y in np.concatenate([a, b]):
        best = max(best, abs(np.mean(a <= y) - np.mean(b <= y)))
    return best


def twfe(Y, W):
    """OLS coefficient on W with full unit and time dummies."""
    n, t = Y.shape
    rows = []
    for i in range(n):
        for s in range(t):
            x = np.zeros(n + t + 1)
            x[i] = 1.0
            if s > 0:
                x[n + s] = 1.0
            x[-1] = W[i, s]
            rows.append(x)
    X = np.array(rows)
    beta, *_ = np.linalg.lstsq(X, Y.ravel(), rcond=None)
    return beta[-1]


def rates(xi, delta, mu_bar, mu_prime_bar, c_y, dps=60):
    """N from mpmath logs; T in exact rational arithmetic on the decimal inputs."""
    with mpmath.workdps(dps):
        x, d = mpmath.mpf(repr(xi)), mpmath.mpf(repr(delta))
        s = 16 * mpmath.mpf(repr(mu_prime_bar)) * mpmath.mpf(repr(mu_bar))
        n = int(mpmath.ceil(mpmath.log(d * x / s) / mpmath.log(1 - x / s)))
    n = max(n, 1)
    x, d, c = (Fraction(repr(v)) for v in (xi, delta, c_y))
    t = math.ceil(256 * n * n * c * c / (d * d * x * x))
    return n, t


MU = {
    "twfe": lambda a, b: a + b,
    "linear_factor": lambda a, b: a * b,
    "sign_flip": lambda a, b: a * (b - 0.5),
    "scale_noise": lambda a, b: a * b,
    "symmetric_square": lambda a, b: (a - 0.5) ** 2 * (b - 0.5),
}


def l2_uniform_beta(mu, a, a2, n=4001):
    """E_beta[(mu(a, beta) - mu(a2, beta))^2] for beta ~ U[0, 1], midpoint rule."""
    b = (np.arange(n) + 0.5) / n
    return float(np.mean((mu(a, b) - mu(a2, b)) ** 2))
