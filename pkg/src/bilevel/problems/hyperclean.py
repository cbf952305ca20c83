from __future__ import annotations

import numpy as np
from scipy.special import expit

from .oracle import Constants, OracleBundle


def _logloss(m):
    return np.logaddexp(0.0, -m)


def make_hyperclean(n_train, n_val, n_feat, corruption_p, C_r, rng, noise=0.5):
    """Synthetic data hyper-cleaning.

    x = per-sample weights lambda (R^n_train), y = classifier w (R^n_feat).
    g = mean_i sigmoid(lambda_i) * logloss(y_i a_i'w) + C_r ||w||^2 on the
    (partly corrupted) training rows; f = validation logistic loss.
    Batches index training rows for g and validation rows for f.
    """
    if not 0 <= corruption_p < 1:
        raise ValueError(f"corruption_p must lie in [0, 1), got {corruption_p}")
    if C_r <= 0:
        raise ValueError(f"C_r must be positive, got {C_r}")
    teacher = rng.standard_normal(n_feat)
    A_tr = rng.standard_normal((n_train, n_feat))
    A_val = rng.standard_normal((n_val, n_feat))
    y_tr = np.sign(A_tr @ teacher + noise * rng.standard_normal(n_train))
    y_val = np.sign(A_val @ teacher + noise * rng.standard_normal(n_val))
    y_tr[y_tr == 0] = 1.0
    y_val[y_val == 0] = 1.0
    flipped = rng.random(n_train) < corruption_p
    y_tr = np.where(flipped, -y_tr, y_tr)
    return hyperclean_from_data(A_tr, y_tr, A_val, y_val, C_r,
                                meta={"flipped": flipped, "teacher": teacher,
                                      "corruption_p": corruption_p})


def hyperclean_from_data(A_tr, y_tr, A_val, y_val, C_r, meta=None):
    A_tr, y_tr = np.atleast_2d(np.asarray(A_tr, float)), np.asarray(y_tr, float).ravel()
    A_val, y_val = np.atleast_2d(np.asarray(A_val, float)), np.asarray(y_val, float).ravel()
    n_train, n_feat = A_tr.shape
    n_val = A_val.shape[0]

    def rows(batch, n):
        return np.arange(n) if batch is None else np.asarray(batch)

    def margins(w, idx):
        return y_tr[idx] * (A_tr[idx] @ w)

    def value_g(lam, w, batch=None):
        idx = rows(batch, n_train)
        return float(np.mean(expit(lam[idx]) * _logloss(margins(w, idx))) + C_r * w @ w)

    def grad_y_g(lam, w, batch=None):
        idx = rows(batch, n_train)
        coef = expit(lam[idx]) * -expit(-margins(w, idx)) * y_tr[idx]
        return A_tr[idx].T @ coef / len(idx) + 2 * C_r * w

    def hvp_yy_g(lam, w, v, batch=None):
        idx = rows(batch, n_train)
        m = margins(w, idx)
        coef = expit(lam[idx]) * expit(m) * expit(-m)
        A = A_tr[idx]
        return A.T @ (coef * (A @ v)) / len(idx) + 2 * C_r * v

    def jvp_xy_g(lam, w, v, batch=None):
        idx = rows(batch, n_train)
        s = expit(lam[idx])
        vals = s * (1 - s) * -expit(-margins(w, idx)) * y_tr[idx] * (A_tr[idx] @ v) / len(idx)
        out = np.zeros(n_train)
        np.add.at(out, idx, vals)
        return out

    def value_f(lam, w, batch=None):
        idx = rows(batch, n_val)
        return float(np.mean(_logloss(y_val[idx] * (A_val[idx] @ w))))

    def grad_x_f(lam, w, batch=None):
        return np.zeros(n_train)

    def grad_y_f(lam, w, batch=None):
        idx = rows(batch, n_val)
        coef = -expit(-y_val[idx] * (A_val[idx] @ w)) * y_val[idx]
        return A_val[idx].T @ coef / len(idx)

    # the y-Hessian is bounded by max||a||^2/4 + 2C_r (sigmoid weights <= 1)
    L_y = 0.25 * float(np.max(np.sum(A_tr ** 2, axis=1))) + 2 * C_r
    consts = Constants(mu=2 * C_r, L_inner=L_y)
    return OracleBundle(dim_x=n_train, dim_y=n_feat, grad_x_f=grad_x_f, grad_y_f=grad_y_f,
                        grad_y_g=grad_y_g, hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
                        value_f=value_f, value_g=value_g, constants=consts,
                        n_samples_f=n_val, n_samples_g=n_train,
                        descriptor=f"hyperclean_n{n_train}_v{n_val}_f{n_feat}",
                        meta=dict(meta or {}))
