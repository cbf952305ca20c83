from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..optimizers.trace import Trace
from ..problems.oracle import Counter, DivergenceError, check_finite, sample_indices


@dataclass(frozen=True)
class MamlConfig:
    N: int = 2
    alpha: float = 0.01
    C_beta: Optional[float] = None  # default 100 (resampling) / 80 (finite-sum)
    B: int = 4
    S: int = 10
    D: int = 10
    T: int = 10
    B_prime: int = 4
    D_L: int = 10
    mode: str = "resampling"
    K: int = 10
    seed: int = 0
    b: float = 0.0  # declared bound on ||grad l_S - grad l_T|| (finite-sum)
    w0: Optional[np.ndarray] = None

    @property
    def c_beta(self):
        if self.C_beta is not None:
            return self.C_beta
        return 100.0 if self.mode == "resampling" else 80.0

    def validate(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.N < 0:
            raise ValueError("N must be nonnegative")
        if self.mode not in ("resampling", "finite_sum"):
            raise ValueError(f"unknown MAML mode {self.mode!r}")
        if self.mode == "resampling" and min(self.S, self.D, self.T, self.D_L) < 1:
            raise ValueError("batch sizes S, D, T, D_L must be at least 1")
        if min(self.B, self.B_prime) < 1:
            raise ValueError("empty task batch")
        return self


def stepsize_guard(alpha, L, N):
    """alpha * L < 2^(1/(2N)) - 1, evaluated literally."""
    return alpha * L < 2.0 ** (1.0 / (2 * N)) - 1.0


def maml_constants(alpha, L, rho, N, mode="resampling"):
    """(C_L, C_b) of the adaptive meta stepsize."""
    g = 1 + alpha * L
    if mode == "resampling":
        C_L = (g ** (N - 1) * alpha * rho + (rho / L) * g ** N * (g ** (N - 1) - 1)) * g ** N
        return C_L, None
    C = (alpha * rho + (rho / L) * g ** (N - 1)) * g ** (2 * N)
    return C, C


def _splits(task, mode):
    """Index sets for (inner path and Hessians, outer gradient)."""
    if mode == "finite_sum":
        return task.support, task.query
    return None, None


def task_meta_gradient(task, w, alpha, N, inner_idx=None, hess_idx=None, outer_idx=None,
                       counter: Counter = None):
    """prod_j (I - alpha H(w_j)) grad(w_N) for one task by reverse accumulation.

    inner_idx / hess_idx: per-step index arrays (or one array / None used
    for every step); outer_idx: index array or None.
    """
    c = Counter() if counter is None else counter
    per_step = lambda idx, j: idx[j] if isinstance(idx, list) else idx
    path = [np.array(w, dtype=float)]
    for j in range(N):
        path.append(path[-1] - alpha * task.grad(path[-1], per_step(inner_idx, j)))
        c.grads += 1
        check_finite(path[-1], "maml inner loop", j + 1)
    v = task.grad(path[N], outer_idx)
    c.grads += 1
    for j in range(N - 1, -1, -1):
        v = v - alpha * task.hvp(path[j], v, per_step(hess_idx, j))
        c.hvps += 1
    return v


def maml_meta_gradient_exact(taskset, w, alpha, N, counter: Counter = None):
    """(per-task meta-gradients, their average over the uniform task distribution)."""
    per = []
    for task in taskset.tasks:
        s, t = _splits(task, taskset.mode)
        per.append(task_meta_gradient(task, w, alpha, N, s, s, t, counter=counter))
    return per, np.mean(per, axis=0)


def _substreams(rng):
    tasks, s, d, t, l_hat = rng.spawn(5)
    return tasks, s, d, t, l_hat


def maml_meta_gradient_estimate(taskset, w, cfg: MamlConfig, rng, counter: Counter = None,
                                streams=None):
    """Average of sampled per-task meta-gradients over a task batch.

    Task indices, inner-path batches (S), Hessian batches (D) and outer
    batches (T) come from disjoint substreams of ``rng``.
    """
    cfg.validate()
    r_tasks, r_s, r_d, r_t, _ = _substreams(rng) if streams is None else streams
    idx = taskset.sample_tasks(cfg.B, r_tasks)
    out = []
    for i in idx:
        task = taskset.tasks[i]
        if taskset.mode == "finite_sum":
            s, t = _splits(task, "finite_sum")
            out.append(task_meta_gradient(task, w, cfg.alpha, cfg.N, s, s, t, counter=counter))
            continue
        inner = [sample_indices(task.n, cfg.S, r_s) for _ in range(cfg.N)]
        hess = [sample_indices(task.n, cfg.D, r_d) for _ in range(cfg.N)]
        outer = sample_indices(task.n, cfg.T, r_t)
        out.append(task_meta_gradient(task, w, cfg.alpha, cfg.N, inner, hess, outer, counter=counter))
    return np.mean(out, axis=0)


def maml_smoothness_estimate(taskset, w, cfg: MamlConfig, rng, stream=None):
    """Local smoothness estimate L_hat used by the adaptive meta stepsize."""
    if taskset.L is None or taskset.rho is None:
        raise ValueError("taskset must declare L and rho")
    L, rho, N, a = taskset.L, taskset.rho, cfg.N, cfg.alpha
    r = _substreams(rng)[4] if stream is None else stream
    idx = taskset.sample_tasks(cfg.B_prime, r)
    base = (1 + a * L) ** (2 * N) * L
    C_L, C_b = maml_constants(a, L, rho, N, taskset.mode)
    norms = []
    for i in idx:
        task = taskset.tasks[i]
        if taskset.mode == "finite_sum":
            norms.append(np.linalg.norm(task.grad(w, task.query)))
        else:
            norms.append(np.linalg.norm(task.grad(w, sample_indices(task.n, cfg.D_L, r))))
    L_hat = base + C_L * float(np.mean(norms))
    if taskset.mode == "finite_sum":
        L_hat += C_b * cfg.b
    return L_hat


def run_maml(taskset, cfg: MamlConfig, rng=None):
    """Multi-step MAML with meta stepsize 1/(C_beta * L_hat)."""
    cfg.validate()
    if taskset.mode != cfg.mode:
        raise ValueError(f"taskset mode {taskset.mode!r} does not match config mode {cfg.mode!r}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dim = taskset.tasks[0].A.shape[1]
    w = np.zeros(dim) if cfg.w0 is None else np.array(cfg.w0, dtype=float)
    guard = stepsize_guard(cfg.alpha, taskset.L, cfg.N) if taskset.L is not None else None
    trace = Trace(header={"algorithm": "maml", "mode": cfg.mode, "seed": cfg.seed,
                          "instance": taskset.descriptor, "K": cfg.K, "N": cfg.N,
                          "alpha": repr(cfg.alpha), "C_beta": repr(cfg.c_beta),
                          "stepsize_guard": {None: "unknown", True: "ok", False: "violated"}[guard],
                          "rng": "numpy.PCG64"},
                  extra_columns=["beta", "L_hat"])
    cum = Counter()
    t0 = time.perf_counter_ns()
    try:
        for k in range(cfg.K + 1):
            streams = _substreams(rng)
            c = Counter()
            est = maml_meta_gradient_estimate(taskset, w, cfg, None, counter=c, streams=streams)
            L_hat = maml_smoothness_estimate(taskset, w, cfg, None, stream=streams[4])
            beta = 1.0 / (cfg.c_beta * L_hat)
            _, exact = maml_meta_gradient_exact(taskset, w, cfg.alpha, cfg.N)
            cum.add(c)
            trace.records.append({"k": k, "grad_norm_est": float(np.linalg.norm(est)),
                                  "grad_norm_true": float(np.linalg.norm(exact)),
                                  "grads_cum": cum.grads, "hvps_cum": cum.hvps, "jvps_cum": 0,
                                  "wall_ns": time.perf_counter_ns() - t0,
                                  "beta": beta, "L_hat": L_hat})
            trace.xs.append(w.copy())
            if k < cfg.K:
                w = check_finite(w - beta * est, "meta iterate", k + 1)
    except DivergenceError as exc:
        trace.status, trace.message = "diverged", str(exc)
    return trace
