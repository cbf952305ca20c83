from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import Constants, OracleBundle


@dataclass(frozen=True)
class RegressionSplit:
    A: np.ndarray
    t: np.ndarray


def make_multitask_embedding(m, task_dim, reg_mu, rng, n_in=6, n_support=12, n_query=12, noise=0.1):
    """m linear-regression tasks sharing a linear embedding.

    x = E (task_dim x n_in, flattened), y = (w_1, ..., w_m). Task i predicts
    w_i' E a. Inner: sum_i support loss + reg_mu/2 ||w_i||^2. Outer: mean query loss.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    E_true = rng.standard_normal((task_dim, n_in)) / np.sqrt(n_in)
    support, query = [], []
    for _ in range(m):
        w_true = rng.standard_normal(task_dim)
        for store, n in ((support, n_support), (query, n_query)):
            A = rng.standard_normal((n, n_in))
            store.append(RegressionSplit(A, A @ E_true.T @ w_true + noise * rng.standard_normal(n)))
    return multitask_from_data(support, query, task_dim, reg_mu)


def multitask_from_data(support, query, task_dim, reg_mu):
    """Batches index tasks (with repetition); sampled maps reweight task terms
    so their expectation over batches equals the full objective."""
    if reg_mu <= 0:
        raise ValueError(f"reg_mu must be positive, got {reg_mu}")
    m = len(support)
    if len(query) != m or m < 1:
        raise ValueError("support and query must list the same, nonzero number of tasks")
    k = task_dim
    n_in = support[0].A.shape[1]
    p, q = k * n_in, m * k

    def weights(batch):
        if batch is None:
            return np.ones(m)
        return np.bincount(np.asarray(batch), minlength=m) * (m / len(batch))

    def unpack(x, y):
        return x.reshape(k, n_in), y.reshape(m, k)

    def parts(split, E, w):
        U = split.A @ E.T
        return U, U @ w - split.t

    def value_g(x, y, batch=None):
        E, W = unpack(x, y)
        tot = 0.0
        for i, c in enumerate(weights(batch)):
            if c:
                _, r = parts(support[i], E, W[i])
                tot += c * 0.5 * np.mean(r * r)
        return float(tot + 0.5 * reg_mu * np.sum(W * W))

    def grad_y_g(x, y, batch=None):
        E, W = unpack(x, y)
        G = reg_mu * W
        for i, c in enumerate(weights(batch)):
            if c:
                U, r = parts(support[i], E, W[i])
                G[i] += c * U.T @ r / len(r)
        return G.ravel()

    def hvp_yy_g(x, y, v, batch=None):
        E, _ = unpack(x, y)
        V = v.reshape(m, k)
        out = reg_mu * V
        for i, c in enumerate(weights(batch)):
            if c:
                U = support[i].A @ E.T
                out[i] += c * U.T @ (U @ V[i]) / U.shape[0]
        return out.ravel()

    def jvp_xy_g(x, y, v, batch=None):
        E, W = unpack(x, y)
        V = v.reshape(m, k)
        out = np.zeros((k, n_in))
        for i, c in enumerate(weights(batch)):
            if c:
                s = support[i]
                U, r = parts(s, E, W[i])
                n = len(r)
                out += c * (np.outer(W[i], s.A.T @ (U @ V[i])) + np.outer(V[i], s.A.T @ r)) / n
        return out.ravel()

    def value_f(x, y, batch=None):
        E, W = unpack(x, y)
        tot = 0.0
        for i, c in enumerate(weights(batch)):
            if c:
                _, r = parts(query[i], E, W[i])
                tot += c * 0.5 * np.mean(r * r)
        return float(tot / m)

    def grad_x_f(x, y, batch=None):
        E, W = unpack(x, y)
        out = np.zeros((k, n_in))
        for i, c in enumerate(weights(batch)):
            if c:
                s = query[i]
                _, r = parts(s, E, W[i])
                out += c * np.outer(W[i], s.A.T @ r) / len(r)
        return out.ravel() / m

    def grad_y_f(x, y, batch=None):
        E, W = unpack(x, y)
        G = np.zeros((m, k))
        for i, c in enumerate(weights(batch)):
            if c:
                U, r = parts(query[i], E, W[i])
                G[i] = c * U.T @ r / len(r)
        return G.ravel() / m

    return OracleBundle(dim_x=p, dim_y=q, grad_x_f=grad_x_f, grad_y_f=grad_y_f,
                        grad_y_g=grad_y_g, hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
                        value_f=value_f, value_g=value_g, constants=Constants(mu=reg_mu),
                        n_samples_f=m, n_samples_g=m,
                        descriptor=f"multitask_m{m}_k{k}_in{n_in}",
                        meta={"m": m, "task_dim": k, "n_in": n_in})
