from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..problems.oracle import Counter, UnsupportedInstance, check_finite
from .inner import InnerLoopConfig, inner_solve
from .linear import solve_linear_cg, solve_linear_heavy_ball


@dataclass
class HypergradResult:
    estimate: np.ndarray
    inner_y: np.ndarray
    linear_solution: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def chain_length(self):
        """Sequential oracle depth of this estimate (inner steps, HVPs, the
        JVP and the outer gradient), used for information-budget tallies."""
        d = self.diagnostics
        return d["inner_iters"] + d["hvp_count"] + (1 if d["jvp_count"] else 0) + 1


def _diag(inner_iters=0, linsys_iters=0, residual=None, counter: Counter = None):
    c = counter or Counter()
    return {"inner_iters": inner_iters, "linsys_iters": linsys_iters,
            "linsys_residual_norm": residual, "hvp_count": c.hvps, "jvp_count": c.jvps,
            "grad_count": c.grads, "sample_count": c.samples}


def linsys_residual(oracle, x, y, v):
    return float(np.linalg.norm(oracle.hvp_yy_g(x, y, v) - oracle.grad_y_f(x, y)))


def analytic_hypergradient(oracle, x):
    spec = getattr(oracle, "quadratic", None)
    if spec is None:
        raise UnsupportedInstance("analytic hypergradient needs a quadratic instance")
    return spec.phi_grad(np.asarray(x, dtype=float))


def aid_hypergradient(oracle, x, y_used, v, counter: Counter = None, base: dict = None):
    """grad_x f(x, y) - (d_x d_y g)(x, y) v."""
    c = Counter() if counter is None else counter
    est = oracle.grad_x_f(x, y_used) - oracle.jvp_xy_g(x, y_used, v)
    c.grads += 1
    c.jvps += 1
    diag = dict(base or _diag())
    diag.update(hvp_count=c.hvps, jvp_count=c.jvps, grad_count=c.grads,
                linsys_residual_norm=linsys_residual(oracle, x, y_used, v))
    return HypergradResult(est, np.asarray(y_used), np.asarray(v), diag)


def aid_solve(oracle, x, y0, inner: InnerLoopConfig, N, v0=None, solver="cg",
              hb=None, rng=None):
    """Inner solve, then the linear system by CG (N steps, from v0) or heavy
    ball (hb = (lam, theta), N steps), then assembly."""
    c = Counter()
    y = inner_solve(oracle, x, y0, inner, rng=rng, counter=c)
    rhs = oracle.grad_y_f(x, y)
    c.grads += 1
    hvp_at = lambda u: oracle.hvp_yy_g(x, y, u)
    before = c.hvps
    if solver == "cg":
        v0 = np.zeros_like(rhs) if v0 is None else v0
        v = solve_linear_cg(hvp_at, rhs, v0, N, counter=c)
    elif solver == "heavy_ball":
        v = solve_linear_heavy_ball(hvp_at, rhs, N, hb[0], hb[1], counter=c)
    else:
        raise ValueError(f"unknown linear solver {solver!r}")
    base = _diag(inner.D, c.hvps - before, None, c)
    return aid_hypergradient(oracle, x, y, v, counter=c, base=base)


def itd_hypergradient(oracle, x, y0, alpha, D):
    """Unrolled D-step GD hypergradient by reverse accumulation.

    The last iterate's Hessian never enters the product, so D JVPs and D - 1
    HVPs are spent (none for D = 0).
    """
    if D < 0:
        raise ValueError("D must be nonnegative")
    c = Counter()
    traj = []
    y = inner_solve(oracle, x, y0, InnerLoopConfig(alpha=alpha, D=D, allow_large_step=True),
                    counter=c, trajectory=traj)
    est = oracle.grad_x_f(x, y)
    v = oracle.grad_y_f(x, y)
    c.grads += 2
    for t in range(D - 1, -1, -1):
        est = est - alpha * oracle.jvp_xy_g(x, traj[t], v)
        c.jvps += 1
        if t > 0:
            v = v - alpha * oracle.hvp_yy_g(x, traj[t], v)
            c.hvps += 1
            check_finite(v, "itd backward pass", t)
    return HypergradResult(est, y, None, _diag(D, 0, None, c))


def geometric_batch_schedule(B, Q, eta, mu):
    """Hessian batch sizes ceil(B Q (1 - eta mu)^(j-1)), j = 1..Q (nonincreasing).

    neumann_v consumes the list in order, so the largest batch serves the
    first recursion step (the factor shared by every series term).
    """
    if Q < 1:
        return []
    rate = 1 - eta * mu
    if not 0 < rate < 1:
        raise ValueError(f"need 0 < eta*mu < 1, got eta*mu = {eta * mu}")
    if B * Q * rate ** (Q - 1) < 1:
        min_b = 1.0 / (Q * rate ** (Q - 1))
        raise ValueError(f"base batch B = {B} too small: need B >= {min_b:.6g}")
    return [max(1, math.ceil(B * Q * rate ** (j - 1) - 1e-9)) for j in range(1, Q + 1)]


def neumann_v(stoch_hvp, v0, eta, Q, batch_schedule, rng, counter: Counter = None):
    """Truncated Neumann series eta * sum_{i=0}^{Q} r_i with r_Q = v0 and
    r_{i-1} = r_i - eta * stoch_hvp(size, r_i, rng), sizes taken from
    batch_schedule in order."""
    if len(batch_schedule) != Q:
        raise ValueError(f"batch schedule has {len(batch_schedule)} entries, expected Q = {Q}")
    if any(int(s) < 1 for s in batch_schedule):
        raise ValueError("empty batch in schedule")
    c = Counter() if counter is None else counter
    r = np.array(v0, dtype=float)
    total = r.copy()
    for i, size in enumerate(batch_schedule):
        r = r - eta * stoch_hvp(int(size), r, rng)
        c.hvps += 1
        check_finite(r, "neumann recursion", i + 1)
        total += r
    return eta * total


def stoc_hypergradient(oracle, x, y_used, eta, Q, batches, rng, counter: Counter = None,
                       base: dict = None):
    """Neumann-series hypergradient from sampled oracles.

    batches: dict with D_f, D_g (sizes) and schedule (list of Q sizes).
    """
    c = Counter() if counter is None else counter
    if batches["D_f"] < 1 or batches["D_g"] < 1:
        raise ValueError("D_f and D_g must be at least 1")
    bf = oracle.sample_f(batches["D_f"], rng)
    v0 = oracle.grad_y_f(x, y_used, batch=bf)

    def stoch_hvp(size, v, rng_):
        bh = oracle.sample_g(size, rng_)
        c.samples += oracle.n_samples_g if bh is None else len(bh)
        return oracle.hvp_yy_g(x, y_used, v, batch=bh)

    before = c.hvps
    v = neumann_v(stoch_hvp, v0, eta, Q, batches["schedule"], rng, counter=c)
    gx = oracle.grad_x_f(x, y_used, batch=bf)
    bg = oracle.sample_g(batches["D_g"], rng)
    est = gx - oracle.jvp_xy_g(x, y_used, v, batch=bg)
    c.grads += 2
    c.jvps += 1
    c.samples += (oracle.n_samples_f if bf is None else len(bf)) + \
        (oracle.n_samples_g if bg is None else len(bg))
    diag = dict(base or _diag())
    diag.update(linsys_iters=c.hvps - before if base is None else base.get("linsys_iters", Q),
                hvp_count=c.hvps, jvp_count=c.jvps, grad_count=c.grads, sample_count=c.samples,
                linsys_residual_norm=linsys_residual(oracle, x, y_used, v))
    return HypergradResult(est, np.asarray(y_used), v, diag)
