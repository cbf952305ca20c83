"""Per-task loss oracles for MAML (parameter w) and ANIL (head w, body phi).

Every task holds a finite sample pool (A, t). ``idx=None`` means the whole
pool and goes through the same code path as an explicit index array.
Finite-sum tasks also carry fixed support/query index splits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .oracle import sample_indices


def _rows(idx, n):
    return np.arange(n) if idx is None else np.asarray(idx)


@dataclass(frozen=True, eq=False)
class MamlTask:
    kind: str  # "quadratic" | "logistic"
    A: np.ndarray
    t: np.ndarray
    reg: float = 0.0
    support: Optional[np.ndarray] = None
    query: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.A.shape[0]

    def loss(self, w, idx=None):
        i = _rows(idx, self.n)
        z = self.A[i] @ w
        per = 0.5 * (z - self.t[i]) ** 2 if self.kind == "quadratic" else np.logaddexp(0.0, -self.t[i] * z)
        return float(np.mean(per) + 0.5 * self.reg * w @ w)

    def grad(self, w, idx=None):
        i = _rows(idx, self.n)
        A = self.A[i]
        z = A @ w
        if self.kind == "quadratic":
            c = z - self.t[i]
        else:
            c = -self.t[i] * expit(-self.t[i] * z)
        return A.T @ c / len(i) + self.reg * w

    def hvp(self, w, v, idx=None):
        i = _rows(idx, self.n)
        A = self.A[i]
        Av = A @ v
        if self.kind == "logistic":
            z = A @ w
            Av = expit(z) * expit(-z) * Av
        return A.T @ Av / len(i) + self.reg * v


@dataclass(frozen=True, eq=False)
class TaskSet:
    """Uniform distribution over a finite list of tasks."""
    tasks: list
    L: Optional[float] = None
    rho: Optional[float] = None
    mode: str = "resampling"
    descriptor: str = "taskset"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tasks)

    def sample_tasks(self, size, rng):
        """Task indices drawn i.i.d. uniformly; all tasks in order once size >= len."""
        idx = sample_indices(len(self.tasks), size, rng)
        return np.arange(len(self.tasks)) if idx is None else idx


def _maml_constants(kind, A_all, reg):
    sq = float(np.max(np.sum(A_all ** 2, axis=1)))
    if kind == "quadratic":
        return sq + reg, 0.0
    # |sigmoid''| <= 1/(6 sqrt 3)
    return 0.25 * sq + reg, sq ** 1.5 / (6 * np.sqrt(3))


def make_maml_taskset(n_tasks, dim, rng, kind="quadratic", n_samples=40, reg=0.1,
                      mode="resampling", support_frac=0.5, noise=0.5):
    """Synthetic regression (quadratic) or classification (logistic) tasks
    with random per-task curvature."""
    if kind not in ("quadratic", "logistic"):
        raise ValueError(f"unknown task kind {kind!r}")
    if mode not in ("resampling", "finite_sum"):
        raise ValueError(f"unknown mode {mode!r}")
    tasks, pools = [], []
    center = rng.standard_normal(dim)
    n_sup = max(1, int(round(support_frac * n_samples)))
    for _ in range(n_tasks):
        scales = np.exp(0.5 * rng.standard_normal(dim))
        A = rng.standard_normal((n_samples, dim)) * scales
        w_task = center + 0.5 * rng.standard_normal(dim)
        z = A @ w_task
        if kind == "quadratic":
            t = z + noise * rng.standard_normal(n_samples)
        else:
            t = np.where(z + noise * rng.standard_normal(n_samples) >= 0, 1.0, -1.0)
        sup = qry = None
        if mode == "finite_sum":
            perm = rng.permutation(n_samples)
            sup, qry = np.sort(perm[:n_sup]), np.sort(perm[n_sup:])
        tasks.append(MamlTask(kind, A, t, reg, sup, qry))
        pools.append(A)
    L, rho = _maml_constants(kind, np.vstack(pools), reg)
    return TaskSet(tasks, L=L, rho=rho, mode=mode,
                   descriptor=f"maml_{kind}_{mode}_m{n_tasks}_d{dim}")


# ANIL models: loss over (w, phi) with gradient and a forward-mode
# directional derivative of the gradient (Hessian-vector product in both blocks).

@dataclass(frozen=True)
class LinearHead:
    """pred = w' E a with E = phi reshaped (k x n_in); L2 reg on w."""
    k: int
    n_in: int
    reg: float = 0.0

    @property
    def n_w(self):
        return self.k

    @property
    def n_phi(self):
        return self.k * self.n_in

    def _fwd(self, w, phi, A, t):
        E = phi.reshape(self.k, self.n_in)
        U = A @ E.T
        return E, U, U @ w - t

    def loss(self, w, phi, A, t):
        _, _, r = self._fwd(w, phi, A, t)
        return float(0.5 * np.mean(r * r) + 0.5 * self.reg * w @ w)

    def grad(self, w, phi, A, t):
        _, U, r = self._fwd(w, phi, A, t)
        n = len(r)
        return U.T @ r / n + self.reg * w, np.outer(w, A.T @ r).ravel() / n

    def hvp(self, w, phi, dw, dphi, A, t):
        E, U, r = self._fwd(w, phi, A, t)
        n = len(r)
        dU = A @ dphi.reshape(self.k, self.n_in).T
        dr = U @ dw + dU @ w
        hw = (U.T @ dr + dU.T @ r) / n + self.reg * dw
        hphi = (np.outer(w, A.T @ dr) + np.outer(dw, A.T @ r)) / n
        return hw, hphi.ravel()


@dataclass(frozen=True)
class TanhHead:
    """pred = w2' tanh(W1 E a): two-layer head (W1: h x k, w2: h) on a linear body E."""
    k: int
    n_in: int
    h: int
    reg: float = 0.0

    @property
    def n_w(self):
        return self.h * self.k + self.h

    @property
    def n_phi(self):
        return self.k * self.n_in

    def _split(self, w):
        return w[: self.h * self.k].reshape(self.h, self.k), w[self.h * self.k:]

    def _fwd(self, w, phi, A, t):
        W1, w2 = self._split(w)
        E = phi.reshape(self.k, self.n_in)
        U = A @ E.T             # n x k
        S = np.tanh(U @ W1.T)   # n x h
        return W1, w2, E, U, S, S @ w2 - t

    def loss(self, w, phi, A, t):
        r = self._fwd(w, phi, A, t)[-1]
        return float(0.5 * np.mean(r * r) + 0.5 * self.reg * w @ w)

    def grad(self, w, phi, A, t):
        W1, w2, E, U, S, r = self._fwd(w, phi, A, t)
        n = len(r)
        G = r[:, None] * (1 - S * S) * w2      # dL/dz per sample, n x h
        gW1 = G.T @ U / n
        gw2 = S.T @ r / n
        gE = (G @ W1).T @ A / n
        gw = np.concatenate([gW1.ravel(), gw2]) + self.reg * w
        return gw, gE.ravel()

    def hvp(self, w, phi, dw, dphi, A, t):
        W1, w2, E, U, S, r = self._fwd(w, phi, A, t)
        dW1, dw2 = self._split(dw)
        n = len(r)
        dU = A @ dphi.reshape(self.k, self.n_in).T
        Sp = 1 - S * S
        dZ = U @ dW1.T + dU @ W1.T
        dS = Sp * dZ
        dr = dS @ w2 + S @ dw2
        dSp = -2 * S * dS
        G = r[:, None] * Sp * w2
        dG = dr[:, None] * Sp * w2 + r[:, None] * (dSp * w2 + Sp * dw2)
        hW1 = (dG.T @ U + G.T @ dU) / n
        hw2 = (dS.T @ r + S.T @ dr) / n
        hE = (dG @ W1 + G @ dW1).T @ A / n
        hw = np.concatenate([hW1.ravel(), hw2]) + self.reg * dw
        return hw, hE.ravel()


@dataclass(frozen=True, eq=False)
class AnilTask:
    model: object
    A: np.ndarray
    t: np.ndarray
    support: np.ndarray
    query: np.ndarray

    def _data(self, split):
        idx = self.support if split == "S" else self.query
        return self.A[idx], self.t[idx]

    def loss(self, w, phi, split):
        return self.model.loss(w, phi, *self._data(split))

    def grad(self, w, phi, split):
        return self.model.grad(w, phi, *self._data(split))

    def hvp(self, w, phi, dw, dphi, split):
        return self.model.hvp(w, phi, dw, dphi, *self._data(split))


def make_anil_taskset(n_tasks, rng, kind="linear", k=4, n_in=5, h=8, n_samples=20,
                      reg=0.5, noise=0.1):
    """kind="linear": strongly convex head (reg > 0) on Gaussian regression.
    kind="tanh": two-layer tanh head on sinusoid regression, inputs (a, 1)."""
    tasks = []
    if kind == "linear":
        model = LinearHead(k, n_in, reg)
        E_true = rng.standard_normal((k, n_in)) / np.sqrt(n_in)
        for _ in range(n_tasks):
            A = rng.standard_normal((2 * n_samples, n_in))
            t = A @ E_true.T @ rng.standard_normal(k) + noise * rng.standard_normal(2 * n_samples)
            tasks.append(AnilTask(model, A, t, np.arange(n_samples), np.arange(n_samples, 2 * n_samples)))
    elif kind == "tanh":
        model = TanhHead(k, 2, h, reg)
        for _ in range(n_tasks):
            amp, phase = rng.uniform(0.1, 5.0), rng.uniform(0, np.pi)
            a = rng.uniform(-5, 5, 2 * n_samples)
            A = np.column_stack([a, np.ones_like(a)])
            tasks.append(AnilTask(model, A, amp * np.sin(a + phase),
                                  np.arange(n_samples), np.arange(n_samples, 2 * n_samples)))
    else:
        raise ValueError(f"unknown ANIL task kind {kind!r}")
    return TaskSet(tasks, mode="finite_sum", descriptor=f"anil_{kind}_m{n_tasks}",
                   meta={"n_w": model.n_w, "n_phi": model.n_phi, "kind": kind})
