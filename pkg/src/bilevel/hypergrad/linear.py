from __future__ import annotations

import math

import numpy as np

from ..problems.oracle import Counter, check_finite


class CGBreakdown(RuntimeError):
    def __init__(self, iteration, curvature):
        super().__init__(f"CG breakdown at iteration {iteration}: direction curvature {curvature:.3e}")
        self.iteration = iteration


def solve_linear_cg(hvp_at, rhs, v0, N, counter: Counter = None, callback=None):
    """Conjugate gradient for H v = rhs, at most min(N, q) iterations.

    The initial residual costs one HVP unless v0 is zero. Stops early once
    the residual vanishes to rounding.
    """
    counter = Counter() if counter is None else counter
    rhs = np.asarray(rhs, dtype=float)
    v = np.array(v0, dtype=float)
    if np.any(v):
        r = rhs - hvp_at(v)
        counter.hvps += 1
    else:
        r = rhs.copy()
    d = r.copy()
    rr = r @ r
    stop = 1e-30 * max(rhs @ rhs, np.finfo(float).tiny)
    for it in range(min(int(N), len(rhs))):
        if rr <= stop:
            break
        Hd = hvp_at(d)
        counter.hvps += 1
        curv = d @ Hd
        if curv < 1e-14 * (d @ d):
            raise CGBreakdown(it, curv)
        a = rr / curv
        v = v + a * d
        r = r - a * Hd
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        if callback is not None:
            callback(v)
    return v


def heavy_ball_stepsizes(mu_y, L_y):
    """Stepsize and momentum of the heavy-ball linear solver."""
    lam = 4.0 / (math.sqrt(L_y) + math.sqrt(mu_y)) ** 2
    theta = max((1 - math.sqrt(lam * mu_y)) ** 2, (1 - math.sqrt(lam * L_y)) ** 2)
    return lam, theta


def solve_linear_heavy_ball(hvp_at, rhs, M, lam, theta, counter: Counter = None):
    """v^M of the heavy-ball recursion on Q(v) = v'Hv/2 - v'rhs, with v^0 = v^1 = 0."""
    if M < 1:
        raise ValueError("heavy ball needs M >= 1")
    if lam < 0 or theta < 0:
        raise ValueError("heavy-ball stepsize and momentum must be nonnegative")
    counter = Counter() if counter is None else counter
    rhs = np.asarray(rhs, dtype=float)
    v_prev = np.zeros_like(rhs)
    v = np.zeros_like(rhs)
    for t in range(1, M):
        grad = hvp_at(v) - rhs
        counter.hvps += 1
        v, v_prev = v - lam * grad + theta * (v - v_prev), v
        check_finite(v, "heavy ball", t)
    return v
