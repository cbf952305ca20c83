from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np

from ..hypergrad.estimators import (HypergradResult, aid_hypergradient, aid_solve,
                                    geometric_batch_schedule, itd_hypergradient, neumann_v,
                                    stoc_hypergradient, _diag)
from ..hypergrad.inner import inner_solve
from ..hypergrad.linear import heavy_ball_stepsizes, solve_linear_heavy_ball
from ..problems.oracle import Counter, DivergenceError, UnsupportedInstance, check_finite
from .config import LinsysConfig, RunConfig
from .smoothness import smoothness_constant
from .trace import Trace


class _Truth:
    """Exact reference quantities on quadratic instances (absent otherwise)."""

    def __init__(self, oracle):
        self.spec = oracle.quadratic
        if self.spec is not None:
            self.Hphi = self.spec.phi_hessian()
            eig = np.linalg.eigvalsh(self.Hphi)
            self.convex = eig[0] > 0
            self.x_star = self.spec.x_star() if self.convex else None

    def grad_norm(self, x):
        return None if self.spec is None else float(np.linalg.norm(self.spec.phi_grad(x)))

    def subopt(self, x):
        if self.spec is None or self.x_star is None:
            return None
        e = x - self.x_star
        return float(0.5 * e @ self.Hphi @ e)

    def tracking(self, x, y):
        return None if self.spec is None else float(np.linalg.norm(y - self.spec.y_star(x)))


def resolve_L_phi(oracle, value="auto"):
    if value != "auto":
        return float(value)
    if oracle.quadratic is not None:
        return float(np.linalg.eigvalsh(oracle.quadratic.phi_hessian())[-1])
    c = oracle.constants
    try:
        return smoothness_constant(*c.require("mu", "L", "tau_lip", "rho_lip", "M_lip"))
    except UnsupportedInstance as exc:
        raise ValueError(f"auto stepsize needs L_phi: {exc}; give beta explicitly") from None


def resolve_mu_x(oracle, value="auto"):
    if value != "auto":
        return float(value)
    if "mu_x" in oracle.meta:
        return float(oracle.meta["mu_x"])
    if oracle.quadratic is not None:
        return float(np.linalg.eigvalsh(oracle.quadratic.phi_hessian())[0])
    raise ValueError("mu_x unknown for this instance; set it in the acceleration block")


def inner_spectrum(oracle):
    """(mu_y, Ltilde_y) of the inner Hessian."""
    if oracle.quadratic is not None:
        eig = np.linalg.eigvalsh(oracle.quadratic.H)
        return float(eig[0]), float(eig[-1])
    c = oracle.constants
    if c.mu is None or c.inner_smoothness is None:
        raise ValueError("inner strong convexity / smoothness unknown; set kappa_y and stepsizes")
    return float(c.mu), float(c.inner_smoothness)


def _start(oracle, cfg):
    x0 = np.zeros(oracle.dim_x) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    y0 = np.zeros(oracle.dim_y) if cfg.y0 is None else np.array(cfg.y0, dtype=float)
    return x0, y0


def _header(oracle, cfg, **extra):
    h = {"algorithm": cfg.algorithm, "seed": cfg.seed, "instance": oracle.descriptor,
         "K": cfg.K}
    h.update(extra)
    return h


class _Recorder:
    def __init__(self, oracle, trace, extra=()):
        self.truth = _Truth(oracle)
        self.trace = trace
        self.cum = Counter()
        self.t0 = time.perf_counter_ns()
        trace.extra_columns = list(extra)

    def __call__(self, k, x, res: HypergradResult, sub_x=None, **extra):
        d = res.diagnostics
        self.cum.grads += d.get("grad_count", 0)
        self.cum.hvps += d["hvp_count"]
        self.cum.jvps += d["jvp_count"]
        self.cum.samples += d.get("sample_count", 0)
        px = x if sub_x is None else sub_x
        rec = {"k": k, "grad_norm_est": float(np.linalg.norm(res.estimate)),
               "grad_norm_true": self.truth.grad_norm(px), "subopt": self.truth.subopt(px),
               "tracking_err": self.truth.tracking(x, res.inner_y),
               "grads_cum": self.cum.grads, "hvps_cum": self.cum.hvps, "jvps_cum": self.cum.jvps,
               "wall_ns": time.perf_counter_ns() - self.t0}
        if self.truth.spec is not None:
            # estimator error at the evaluation point (kept out of the CSV schema)
            rec["est_err"] = float(np.linalg.norm(res.estimate - self.truth.spec.phi_grad(x)))
        if "samples_cum" in self.trace.extra_columns:
            rec["samples_cum"] = self.cum.samples
        rec.update(extra)
        self.trace.records.append(rec)
        self.trace.xs.append(np.array(x))
        if sub_x is not None:
            self.trace.zs.append(np.array(sub_x))
        self.trace.ys.append(np.array(res.inner_y))
        self.trace.chains.append(res.chain_length)


def _guarded(fn):
    def run(oracle, cfg, *args, **kw):
        trace = Trace()
        try:
            fn(oracle, cfg, trace, *args, **kw)
        except DivergenceError as exc:
            trace.status = "diverged"
            trace.message = str(exc)
        return trace
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _gd_outer(oracle, cfg, trace, estimate, default_beta, extra=()):
    cfg.validate()
    x, y = _start(oracle, cfg)
    beta = (1.0 / (default_beta * resolve_L_phi(oracle))) if cfg.beta == "auto" else float(cfg.beta)
    trace.header = _header(oracle, cfg, beta=repr(beta))
    rec = _Recorder(oracle, trace, extra)
    y_init, v_prev = y.copy(), None
    for k in range(cfg.K + 1):
        y_start = y if cfg.warm_start else y_init
        res = estimate(x, y_start, v_prev if cfg.warm_start else None)
        rec(k, x, res)
        y, v_prev = res.inner_y, res.linear_solution
        if k < cfg.K:
            x = check_finite(x - beta * res.estimate, "outer iterate", k + 1)


@_guarded
def run_aid_bio(oracle, cfg: RunConfig, trace):
    """AID-BiO: inner GD, then CG / heavy ball / Neumann for v, then an outer GD step.
    Warm start reuses the last y (and v for CG)."""
    ls = cfg.linsys
    hb = None
    if ls is not None and ls.solver == "heavy_ball":
        hb = _hb_params(oracle, ls)

    def estimate(x, y0, v0):
        if ls.solver == "neumann":
            c = Counter()
            y = inner_solve(oracle, x, y0, cfg.inner, counter=c)
            rhs = oracle.grad_y_f(x, y)
            c.grads += 1
            hvp = lambda size, v, rng: oracle.hvp_yy_g(x, y, v)
            v = neumann_v(hvp, rhs, ls.eta, ls.Q, [1] * ls.Q, None, counter=c)
            return aid_hypergradient(oracle, x, y, v, counter=c,
                                     base=_diag(cfg.inner.D, ls.Q, None, c))
        return aid_solve(oracle, x, y0, cfg.inner, ls.N, v0=v0, solver=ls.solver, hb=hb)

    _gd_outer(oracle, cfg, trace, estimate, 8)


@_guarded
def run_itd_bio(oracle, cfg: RunConfig, trace):
    """ITD-BiO: unrolled-differentiation hypergradient, outer GD step."""
    def estimate(x, y0, v0):
        return itd_hypergradient(oracle, x, y0, cfg.inner.alpha, cfg.inner.D)

    _gd_outer(oracle, cfg, trace, estimate, 4)


@_guarded
def run_stocbio(oracle, cfg: RunConfig, trace, rng=None):
    """stocBiO: SGD inner loop, sampled Neumann hypergradient, outer SGD step."""
    cfg.validate()
    st = cfg.stochastic
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    schedule = geometric_batch_schedule(st.B, st.Q, st.eta, oracle.constants.mu)
    inner = replace(cfg.inner, method="SGD", batch=st.S)
    batches = {"D_f": st.D_f, "D_g": st.D_g, "schedule": schedule}

    def estimate(x, y0, v0):
        c = Counter()
        y = inner_solve(oracle, x, y0, inner, rng=rng, counter=c)
        return stoc_hypergradient(oracle, x, y, st.eta, st.Q, batches, rng, counter=c,
                                  base=_diag(inner.D, st.Q, None, c))

    _gd_outer(oracle, cfg, trace, estimate, 4, extra=("samples_cum",))
    trace.header["schedule"] = " ".join(map(str, schedule))
    trace.header["rng"] = "numpy.PCG64"


def _hb_params(oracle, ls):
    if ls.hb_lambda != "auto" and ls.hb_theta != "auto":
        return float(ls.hb_lambda), float(ls.hb_theta)
    lam, theta = heavy_ball_stepsizes(*inner_spectrum(oracle))
    return (lam if ls.hb_lambda == "auto" else float(ls.hb_lambda),
            theta if ls.hb_theta == "auto" else float(ls.hb_theta))


def _accel_parts(oracle, cfg):
    mu_y, L_y = inner_spectrum(oracle)
    inner = cfg.inner
    alpha = 1.0 / L_y if inner.alpha == "auto" else inner.alpha
    kappa_y = (L_y / mu_y) if inner.kappa_y is None else inner.kappa_y
    inner = replace(inner, method="AGD", alpha=alpha, kappa_y=kappa_y)
    ls = cfg.linsys or _default_linsys(inner.D)
    lam, theta = _hb_params(oracle, ls)
    acc = cfg.accel
    mu_x = resolve_mu_x(oracle, "auto" if acc is None else acc.mu_x)
    L_phi = resolve_L_phi(oracle, "auto" if acc is None else acc.L_phi)
    return inner, ls.N, lam, theta, mu_x, L_phi


def _default_linsys(N):
    return LinsysConfig(solver="heavy_ball", N=N)


def _accel_estimate(oracle, x, y0, inner, M, lam, theta):
    c = Counter()
    y = inner_solve(oracle, x, y0, inner, counter=c)
    rhs = oracle.grad_y_f(x, y)
    c.grads += 1
    v = solve_linear_heavy_ball(lambda u: oracle.hvp_yy_g(x, y, u), rhs, M, lam, theta, counter=c)
    return aid_hypergradient(oracle, x, y, v, counter=c, base=_diag(inner.D, M - 1, None, c))


@_guarded
def run_accbio(oracle, cfg: RunConfig, trace):
    """AccBiO: cold-start AGD inner loop, heavy-ball linear solve, Nesterov outer steps.
    Records Phi(z_k) - Phi*."""
    cfg.validate()
    inner, M, lam, theta, mu_x, L_phi = _accel_parts(oracle, cfg)
    kappa_x = L_phi / mu_x
    if kappa_x < 1:
        raise ValueError(f"kappa_x = {kappa_x} < 1")
    m = (math.sqrt(kappa_x) - 1) / (math.sqrt(kappa_x) + 1)
    x, y0 = _start(oracle, cfg)
    z = x.copy()
    trace.header = _header(oracle, cfg, L_phi=repr(L_phi), mu_x=repr(mu_x), hb_lambda=repr(lam),
                           hb_theta=repr(theta), momentum=repr(m))
    rec = _Recorder(oracle, trace)
    for k in range(cfg.K + 1):
        res = _accel_estimate(oracle, x, np.zeros(oracle.dim_y), inner, M, lam, theta)
        rec(k, x, res, sub_x=z)
        if k < cfg.K:
            z_new = x - res.estimate / L_phi
            x = check_finite((1 + m) * z_new - m * z, "outer iterate", k + 1)
            z = z_new


@_guarded
def run_accbio_bg(oracle, cfg: RunConfig, trace):
    """AccBiO-BG: accelerated scheme with warm-started AGD inner loop. Records Phi(z_k) - Phi*."""
    cfg.validate()
    inner, M, lam, theta, mu_x, L_phi = _accel_parts(oracle, cfg)
    acc = cfg.accel
    a = 1.0 / (2 * L_phi) if acc is None or acc.alpha == "auto" else float(acc.alpha)
    eta, tau, beta = accbio_bg_coefficients(a, mu_x)
    x, y0 = _start(oracle, cfg)
    z, y = x.copy(), y0.copy()
    trace.header = _header(oracle, cfg, L_phi=repr(L_phi), mu_x=repr(mu_x), alpha=repr(a),
                           eta=repr(eta), tau=repr(tau), beta=repr(beta))
    rec = _Recorder(oracle, trace)
    for k in range(cfg.K + 1):
        xt = eta * x + (1 - eta) * z
        res = _accel_estimate(oracle, xt, y if cfg.warm_start else y0, inner, M, lam, theta)
        rec(k, xt, res, sub_x=z)
        y = res.inner_y
        if k < cfg.K:
            x = check_finite(tau * xt + (1 - tau) * x - beta * res.estimate, "outer iterate", k + 1)
            z = check_finite(xt - a * res.estimate, "outer iterate", k + 1)


def accbio_bg_coefficients(alpha, mu_x):
    s = math.sqrt(alpha * mu_x)
    return s / (s + 2), s / 2, math.sqrt(alpha / mu_x)


RUNNERS = {"aid_bio": run_aid_bio, "itd_bio": run_itd_bio, "stocbio": run_stocbio,
           "accbio": run_accbio, "accbio_bg": run_accbio_bg}
