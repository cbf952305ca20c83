from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..hypergrad import (InnerLoopConfig, aid_solve, analytic_hypergradient, itd_hypergradient,
                         neumann_v, solve_linear_cg)
from ..hypergrad.estimators import aid_hypergradient
from ..problems.hard import HardInstanceSpec, make_hard_instance
from ..problems.oracle import UnsupportedInstance


@dataclass(frozen=True)
class CheckReport:
    """One verification outcome. ``passed`` is recomputed from the fields.

    kind "bound": measured <= reference + tolerance.
    kind "equality": |measured - reference| <= tolerance * (1 + |reference|).
    """
    name: str
    measured: float
    reference: float
    tolerance: float
    kind: str = "bound"
    detail: str = ""

    @property
    def passed(self):
        m, r, t = self.measured, self.reference, self.tolerance
        if not (np.isfinite(m) and np.isfinite(t)) or math.isnan(r):
            return False
        if self.kind == "bound":
            return m <= r + t
        if self.kind == "equality":
            return abs(m - r) <= t * (1 + abs(r))
        raise ValueError(f"unknown comparison kind {self.kind!r}")

    def to_line(self):
        f = lambda v: format(float(v), ".17g")
        return "\t".join([self.name, "pass" if self.passed else "fail", f(self.measured),
                          f(self.reference), f(self.tolerance)])


def finite_diff_gradient(scalar_map, point, h=1e-5):
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(point, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out.flat[i] = (scalar_map(x + e) - scalar_map(x - e)) / (2 * h)
    return out


def exact_inner_solution(oracle, x, y0=None, newton_steps=50, tol=1e-13):
    """y*(x) by Newton steps with CG linear solves (exact for quadratics)."""
    if oracle.quadratic is not None:
        return oracle.quadratic.y_star(x)
    y = np.zeros(oracle.dim_y) if y0 is None else np.array(y0, dtype=float)
    for _ in range(newton_steps):
        g = oracle.grad_y_g(x, y)
        if np.linalg.norm(g) <= tol:
            break
        y = y - solve_linear_cg(lambda u: oracle.hvp_yy_g(x, y, u), g, np.zeros_like(g), 4 * oracle.dim_y)
    return y


def reference_hypergradient(oracle, x, h=1e-5):
    """Analytic hypergradient when available, else central differences of
    Phi(x) = f(x, y*(x)) with an exact inner solve."""
    try:
        return analytic_hypergradient(oracle, x), "analytic"
    except UnsupportedInstance:
        pass
    phi = lambda z: oracle.value_f(z, exact_inner_solution(oracle, z))
    return finite_diff_gradient(phi, x, h), "finite-difference"


def hypergradient_estimate(oracle, estimator, params, x):
    p = dict(params)
    y0 = np.asarray(p.get("y0", np.zeros(oracle.dim_y)), dtype=float)
    if estimator == "analytic":
        return analytic_hypergradient(oracle, x)
    if estimator == "itd":
        return itd_hypergradient(oracle, x, y0, p["alpha"], p["D"]).estimate
    if estimator in ("aid_cg", "aid_hb"):
        inner = InnerLoopConfig(alpha=p["alpha"], D=p["D"], allow_large_step=True)
        if estimator == "aid_cg":
            return aid_solve(oracle, x, y0, inner, p["N"]).estimate
        return aid_solve(oracle, x, y0, inner, p["M"], solver="heavy_ball",
                         hb=(p["hb_lambda"], p["hb_theta"])).estimate
    if estimator == "aid_exact":
        y = exact_inner_solution(oracle, x)
        v = solve_linear_cg(lambda u: oracle.hvp_yy_g(x, y, u), oracle.grad_y_f(x, y),
                            np.zeros(oracle.dim_y), p.get("N", oracle.dim_y))
        return aid_hypergradient(oracle, x, y, v).estimate
    if estimator == "neumann":
        inner = InnerLoopConfig(alpha=p["alpha"], D=p["D"], allow_large_step=True)
        from ..hypergrad.inner import inner_solve
        y = inner_solve(oracle, x, y0, inner)
        v = neumann_v(lambda s, u, r: oracle.hvp_yy_g(x, y, u), oracle.grad_y_f(x, y),
                      p["eta"], p["Q"], [1] * p["Q"], None)
        return aid_hypergradient(oracle, x, y, v).estimate
    raise ValueError(f"unknown estimator {estimator!r}")


def check_hypergradient(oracle, estimator, params, x, tol, name=None):
    """Relative error of an estimator against the reference hypergradient."""
    x = np.asarray(x, dtype=float)
    ref, source = reference_hypergradient(oracle, x)
    est = hypergradient_estimate(oracle, estimator, params, x)
    scale = np.linalg.norm(ref)
    err = float(np.linalg.norm(est - ref) / (scale if scale > 0 else 1.0))
    return CheckReport(name or f"hypergradient_{estimator}", err, 0.0, tol, "bound",
                       f"relative error vs {source} reference; params={params}")


def empirical_bias_variance(stoch_hvp, v_star, v0, eta, Q, schedule, trials, rng,
                            mu=None, L=None, B=None, name="neumann"):
    """Monte-Carlo bias and variance of the Neumann estimator.

    variance is the mean squared deviation from the empirical mean. The bias
    report compares against mu^-1 (1 - eta mu)^(Q+1) ||v0|| plus 3 standard
    errors. The variance report compares the mean squared error with the
    bound shape 4 eta^2 L^2 M^2/(mu^2 B) + 4 (1 - eta mu)^(2Q+2) M^2 / mu^2.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    v_star = np.asarray(v_star, dtype=float)
    samples = np.array([neumann_v(stoch_hvp, v0, eta, Q, schedule, rng) for _ in range(trials)])
    mean = samples.mean(axis=0)
    dev = samples - mean
    sq = np.sum(dev * dev, axis=1)
    variance = float(sq.mean())
    bias = float(np.linalg.norm(mean - v_star))
    reports = []
    M = float(np.linalg.norm(v0))
    if mu is not None:
        contraction = (1 - eta * mu) ** (Q + 1)
        bound = contraction * M / mu
        se = math.sqrt(variance / trials)
        reports.append(CheckReport(f"{name}_bias", bias, bound, 3 * se + 1e-12, "bound",
                                   f"trials={trials}; margin = 3 standard errors"))
        if L is not None and B is not None:
            err = np.sum((samples - v_star) ** 2, axis=1)
            vb = 4 * eta ** 2 * L ** 2 * M ** 2 / (mu ** 2 * B) + 4 * contraction ** 2 * M ** 2 / mu ** 2
            reports.append(CheckReport(f"{name}_variance", float(err.mean()), vb,
                                       3 * float(err.std()) / math.sqrt(trials) + 1e-12, "bound",
                                       f"trials={trials}; mean squared error vs bound shape"))
    return bias, variance, reports


def subspace_support_check(iterate_history, budget, tol=1e-13, name="subspace_support"):
    """Every x_k must vanish (to tol) on coordinates t > M(k), 1-based."""
    if budget is None:
        raise UnsupportedInstance("information budget unavailable (missing counters)")
    worst, where = 0.0, ""
    for k, x in enumerate(iterate_history):
        Mk = budget[k] if isinstance(budget, (list, tuple, np.ndarray)) else budget
        tail = np.abs(np.asarray(x)[int(Mk):])
        if tail.size and tail.max() > worst:
            worst = float(tail.max())
            where = f"k={k}, M(k)={Mk}, coordinate {int(Mk) + 1 + int(tail.argmax())}"
    return CheckReport(name, worst, 0.0, tol, "bound",
                       f"{len(iterate_history)} iterates; worst {where or 'none'}")


@lru_cache(maxsize=8)
def _hard(spec: HardInstanceSpec):
    return make_hard_instance(spec)


def min_dimension(spec: HardInstanceSpec, M):
    """Smallest d allowed for budget M by the dimension conditions."""
    _, meta = _hard(spec)
    r, lam, tau = meta["r"], meta["quartic_lambda"], meta["quartic_tau"]
    need = max(2 * M, M + 1 + math.log(tau / (4 * (7 + lam))) / math.log(r))
    return math.floor(need) + 1


def lower_bound_curve(spec: HardInstanceSpec, M, x0=None):
    """(mu_x / 2) (||x* - x0|| / (3 sqrt 2))^2 r^(2M) on the SCSC hard instance."""
    if spec.geometry.upper() != "SCSC":
        raise ValueError("lower bound curve is defined for the SCSC geometry")
    need = min_dimension(spec, M)
    if spec.d < need:
        raise ValueError(f"d = {spec.d} too small for budget M = {M}: need d >= {need}")
    _, meta = _hard(spec)
    x0 = np.zeros(spec.d) if x0 is None else np.asarray(x0)
    dist = np.linalg.norm(meta["x_star"] - x0)
    return 0.5 * spec.mu_x * (dist / (3 * math.sqrt(2))) ** 2 * meta["r"] ** (2 * M)


def lower_bound_check(trace, spec: HardInstanceSpec, name="lower_bound"):
    """Consistency check: Phi(x_k) - Phi* >= curve(M(k)) along a zero-start run."""
    budgets = trace.information_budget()
    worst = -np.inf
    for rec, Mk in zip(trace.records, budgets):
        gap = rec["subopt"]
        ratio = lower_bound_curve(spec, Mk) / gap if gap > 0 else np.inf
        worst = max(worst, ratio)
    return CheckReport(name, float(worst), 1.0, 0.0, "bound",
                       "consistency: max over k of curve(M(k)) / (Phi(x_k) - Phi*)")


def tracking_error_profile(trace, oracle):
    spec = oracle.quadratic
    if spec is None:
        raise UnsupportedInstance("tracking errors need y*(x) in closed form")
    return [float(np.linalg.norm(y - spec.y_star(x))) for x, y in zip(trace.xs, trace.ys)]
