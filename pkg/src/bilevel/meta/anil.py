from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..optimizers.trace import Trace
from ..problems.oracle import Counter, DivergenceError, check_finite


@dataclass(frozen=True)
class AnilConfig:
    alpha: float
    beta_w: float
    beta_phi: float
    N: int = 1
    B: int = 4
    K: int = 10
    seed: int = 0
    init_seed: int = 0
    w0: Optional[np.ndarray] = None
    phi0: Optional[np.ndarray] = None


def anil_partial_gradients(task, w, phi, alpha, N, counter: Counter = None):
    """(g_w, g_phi): partial meta-gradients after N inner GD steps on the head w.

    One backward sweep; each step spends one w-Hessian product and one mixed
    product (both read off a single forward-mode directional derivative).
    """
    if N < 1:
        raise ValueError("ANIL needs N >= 1")
    c = Counter() if counter is None else counter
    path = [np.array(w, dtype=float)]
    for m in range(N):
        gw, _ = task.grad(path[-1], phi, "S")
        path.append(path[-1] - alpha * gw)
        c.grads += 1
        check_finite(path[-1], "anil inner loop", m + 1)
    u, g_phi = task.grad(path[N], phi, "D")
    c.grads += 1
    zero = np.zeros_like(phi)
    for m in range(N - 1, -1, -1):
        hw, hphi = task.hvp(path[m], phi, u, zero, "S")
        c.hvps += 1
        c.jvps += 1
        g_phi = g_phi - alpha * hphi
        u = u - alpha * hw
    return u, g_phi


def anil_objective(task, w, phi, alpha, N):
    """L_D(w_N(w, phi), phi): the unrolled meta objective of one task."""
    for _ in range(N):
        w = w - alpha * task.grad(w, phi, "S")[0]
    return task.loss(w, phi, "D")


def _init(taskset, cfg):
    n_w, n_phi = taskset.meta["n_w"], taskset.meta["n_phi"]
    r = np.random.default_rng(cfg.init_seed)
    w = 0.1 * r.standard_normal(n_w) if cfg.w0 is None else np.array(cfg.w0, dtype=float)
    phi = r.standard_normal(n_phi) / np.sqrt(n_phi) if cfg.phi0 is None else np.array(cfg.phi0, dtype=float)
    return w, phi


def full_partials(taskset, w, phi, alpha, N, counter=None):
    gs = [anil_partial_gradients(t, w, phi, alpha, N, counter) for t in taskset.tasks]
    return np.mean([g[0] for g in gs], axis=0), np.mean([g[1] for g in gs], axis=0)


def run_anil(taskset, cfg: AnilConfig, rng=None):
    """Mini-batch ANIL. grad_norm_est is the batch estimate; grad_norm_w,
    grad_norm_phi and grad_norm_true use the full task set."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    w, phi = _init(taskset, cfg)
    trace = Trace(header={"algorithm": "anil", "seed": cfg.seed, "init_seed": cfg.init_seed,
                          "instance": taskset.descriptor, "K": cfg.K, "N": cfg.N,
                          "alpha": repr(cfg.alpha), "beta_w": repr(cfg.beta_w),
                          "beta_phi": repr(cfg.beta_phi), "rng": "numpy.PCG64"},
                  extra_columns=["grad_norm_w", "grad_norm_phi"])
    cum = Counter()
    t0 = time.perf_counter_ns()
    try:
        for k in range(cfg.K + 1):
            idx = taskset.sample_tasks(cfg.B, rng)
            c = Counter()
            parts = [anil_partial_gradients(taskset.tasks[i], w, phi, cfg.alpha, cfg.N, c) for i in idx]
            gw = np.mean([p[0] for p in parts], axis=0)
            gphi = np.mean([p[1] for p in parts], axis=0)
            cum.add(c)
            fw, fphi = full_partials(taskset, w, phi, cfg.alpha, cfg.N)
            trace.records.append({
                "k": k, "grad_norm_est": float(np.hypot(np.linalg.norm(gw), np.linalg.norm(gphi))),
                "grad_norm_true": float(np.hypot(np.linalg.norm(fw), np.linalg.norm(fphi))),
                "grads_cum": cum.grads, "hvps_cum": cum.hvps, "jvps_cum": cum.jvps,
                "wall_ns": time.perf_counter_ns() - t0,
                "grad_norm_w": float(np.linalg.norm(fw)), "grad_norm_phi": float(np.linalg.norm(fphi))})
            trace.xs.append(np.concatenate([w, phi]))
            if k < cfg.K:
                w = check_finite(w - cfg.beta_w * gw, "anil head", k + 1)
                phi = check_finite(phi - cfg.beta_phi * gphi, "anil body", k + 1)
    except DivergenceError as exc:
        trace.status, trace.message = "diverged", str(exc)
    return trace
