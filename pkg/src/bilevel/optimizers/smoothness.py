from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..problems.quadratic import QuadraticSpec


def smoothness_constant(mu, L, tau_lip, rho_lip, M_lip):
    """Lipschitz constant of the hypergradient under the standard assumptions."""
    if mu is None or mu <= 0:
        raise ValueError("smoothness constant needs mu > 0")
    if min(L, tau_lip, rho_lip, M_lip) < 0:
        raise ValueError("L, tau, rho and M must be nonnegative")
    t, r, M = tau_lip, rho_lip, M_lip
    return (L + (2 * L ** 2 + t * M ** 2) / mu + (r * L * M + L ** 3 + t * M * L) / mu ** 2
            + r * L ** 2 * M / mu ** 3)


def add_quadratic_regularizer(oracle, eps, R):
    """f + eps/(2R) ||x||^2; the regularized hyperobjective is eps/R strongly convex."""
    if eps <= 0 or R <= 0:
        raise ValueError("eps and R must be positive")
    c = eps / R
    gx, vf = oracle.grad_x_f, oracle.value_f

    def grad_x_f(x, y, batch=None):
        return gx(x, y, batch=batch) + c * x

    def value_f(x, y, batch=None):
        return vf(x, y, batch=batch) + 0.5 * c * float(x @ x)

    quad = oracle.quadratic
    if quad is not None:
        quad = QuadraticSpec(H=quad.H, J=quad.J, b=quad.b, A_x=quad.A_x + c * np.eye(quad.p),
                             A_y=quad.A_y, C=quad.C, c_x=quad.c_x, c_y=quad.c_y, mu=quad.mu)
    meta = dict(oracle.meta)
    meta.update(mu_x=c, regularizer_eps=eps, regularizer_R=R)
    meta.pop("x_star", None)
    meta.pop("x_star_exact", None)
    return replace(oracle, grad_x_f=grad_x_f, value_f=value_f, quadratic=quad, meta=meta,
                   descriptor=oracle.descriptor + f"+reg(eps={eps!r},R={R!r})")
