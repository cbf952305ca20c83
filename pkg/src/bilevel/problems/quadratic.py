from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .oracle import Constants, OracleBundle


def _vec(a, n):
    return np.zeros(n) if a is None else np.asarray(a, dtype=float).reshape(n)


@dataclass(frozen=True, eq=False)
class QuadraticSpec:
    """g = 1/2 y'Hy + x'Jy + b'y,  f = 1/2 x'A_x x + x'Cy + 1/2 y'A_y y + c_x'x + c_y'y."""
    H: np.ndarray
    J: np.ndarray
    b: Optional[np.ndarray] = None
    A_x: Optional[np.ndarray] = None
    A_y: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    c_x: Optional[np.ndarray] = None
    c_y: Optional[np.ndarray] = None
    mu: Optional[float] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        q = H.shape[0]
        J = np.asarray(self.J, dtype=float).reshape(-1, q)
        p = J.shape[0]
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("H", H)
        set_("J", J)
        set_("b", _vec(self.b, q))
        set_("A_x", np.zeros((p, p)) if self.A_x is None else np.asarray(self.A_x, float).reshape(p, p))
        set_("A_y", np.zeros((q, q)) if self.A_y is None else np.asarray(self.A_y, float).reshape(q, q))
        set_("C", np.zeros((p, q)) if self.C is None else np.asarray(self.C, float).reshape(p, q))
        set_("c_x", _vec(self.c_x, p))
        set_("c_y", _vec(self.c_y, q))

    @property
    def p(self):
        return self.J.shape[0]

    @property
    def q(self):
        return self.H.shape[0]

    def y_star(self, x):
        return -np.linalg.solve(self.H, self.J.T @ x + self.b)

    def dy_dx(self):
        """Jacobian of y*(x), shape (q, p)."""
        return -np.linalg.solve(self.H, self.J.T)

    def value_f(self, x, y):
        return float(0.5 * x @ self.A_x @ x + x @ self.C @ y + 0.5 * y @ self.A_y @ y
                     + self.c_x @ x + self.c_y @ y)

    def phi(self, x):
        return self.value_f(x, self.y_star(x))

    def phi_grad(self, x):
        y = self.y_star(x)
        gx = self.A_x @ x + self.C @ y + self.c_x
        gy = self.C.T @ x + self.A_y @ y + self.c_y
        return gx - self.J @ np.linalg.solve(self.H, gy)

    def phi_hessian(self):
        Y = self.dy_dx()
        CY = self.C @ Y
        Hp = self.A_x + CY + CY.T + Y.T @ self.A_y @ Y
        return 0.5 * (Hp + Hp.T)

    def x_star(self):
        # Phi is quadratic: grad(x) = Hphi x + grad(0)
        return -np.linalg.solve(self.phi_hessian(), self.phi_grad(np.zeros(self.p)))

    def phi_gap(self, x, x_star=None):
        """Phi(x) - Phi* as an exact quadratic form (no cancellation)."""
        xs = self.x_star() if x_star is None else x_star
        e = np.asarray(x) - xs
        return float(0.5 * e @ self.phi_hessian() @ e)


def _spectral(M):
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def _assemble(spec: QuadraticSpec, samples=None, descriptor="quadratic", meta=None):
    """Bundle for ``spec``; ``samples`` optionally holds per-sample
    (H, J, b, c_y) stacks whose batch means define the stochastic maps."""
    H, J, b = spec.H, spec.J, spec.b
    A_x, A_y, C, c_x, c_y = spec.A_x, spec.A_y, spec.C, spec.c_x, spec.c_y
    n = 1 if samples is None else samples["H"].shape[0]

    def g_parts(batch):
        if batch is None:
            return H, J, b
        return (samples["H"][batch].mean(axis=0), samples["J"][batch].mean(axis=0),
                samples["b"][batch].mean(axis=0))

    def cy(batch):
        return c_y if batch is None else samples["c_y"][batch].mean(axis=0)

    def grad_x_f(x, y, batch=None):
        return A_x @ x + C @ y + c_x

    def grad_y_f(x, y, batch=None):
        return C.T @ x + A_y @ y + cy(batch)

    def value_f(x, y, batch=None):
        return float(0.5 * x @ A_x @ x + x @ C @ y + 0.5 * y @ A_y @ y + c_x @ x + cy(batch) @ y)

    def grad_y_g(x, y, batch=None):
        Hb, Jb, bb = g_parts(batch)
        return Hb @ y + Jb.T @ x + bb

    def hvp_yy_g(x, y, v, batch=None):
        return g_parts(batch)[0] @ v

    def jvp_xy_g(x, y, v, batch=None):
        return g_parts(batch)[1] @ v

    def value_g(x, y, batch=None):
        Hb, Jb, bb = g_parts(batch)
        return float(0.5 * y @ Hb @ y + x @ Jb @ y + bb @ y)

    eig = np.linalg.eigvalsh(H)
    p, q = spec.p, spec.q
    hess_g = np.block([[np.zeros((p, p)), J], [J.T, H]])
    hess_f = np.block([[A_x, C], [C.T, A_y]])
    consts = Constants(mu=float(eig[0]) if spec.mu is None else spec.mu,
                       L=max(_spectral(hess_g), _spectral(hess_f)),
                       tau_lip=0.0, rho_lip=0.0, M_lip=None,
                       L_inner=float(eig[-1]))
    return OracleBundle(dim_x=p, dim_y=q, grad_x_f=grad_x_f, grad_y_f=grad_y_f,
                        grad_y_g=grad_y_g, hvp_yy_g=hvp_yy_g, jvp_xy_g=jvp_xy_g,
                        value_f=value_f, value_g=value_g, constants=consts,
                        n_samples_f=n, n_samples_g=n, quadratic=spec,
                        descriptor=descriptor, meta=dict(meta or {}))


def validate_inner_hessian(H, mu=None):
    H = np.asarray(H, dtype=float)
    asym = np.max(np.abs(H - H.T)) if H.size else 0.0
    if asym > 1e-12 * max(1.0, np.max(np.abs(H))):
        raise ValueError(f"H is not symmetric (max |H - H'| = {asym:.3e})")
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= 0:
        raise ValueError(f"H is not positive definite: eigenvalue {eig[0]:.6e} <= 0")
    if mu is not None and eig[0] < mu * (1 - 1e-12):
        raise ValueError(f"min eigenvalue {eig[0]:.6e} of H is below declared mu = {mu}")
    return eig


def make_quadratic(spec: QuadraticSpec, descriptor="quadratic", meta=None) -> OracleBundle:
    validate_inner_hessian(spec.H, spec.mu)
    return _assemble(spec, descriptor=descriptor, meta=meta)


def make_stochastic_quadratic(spec: QuadraticSpec, n_samples, noise, rng,
                              hessian_noise=None, descriptor="stochastic_quadratic"):
    """Finite-population stochastic version of ``spec``.

    Each sample perturbs H, J, b and c_y by centered noise, so population
    means reproduce ``spec``. Hessian samples stay symmetric positive definite
    when ``hessian_noise`` is below the smallest eigenvalue of H.
    """
    validate_inner_hessian(spec.H, spec.mu)
    p, q = spec.p, spec.q
    hn = noise if hessian_noise is None else hessian_noise

    def centered(shape, scale):
        z = rng.standard_normal((n_samples,) + shape) * scale
        return z - z.mean(axis=0)

    dH = centered((q, q), hn / (2 * np.sqrt(q)))
    dH = 0.5 * (dH + np.swapaxes(dH, 1, 2))
    samples = {
        "H": spec.H + dH,
        "J": spec.J + centered((p, q), noise),
        "b": spec.b + centered((q,), noise),
        "c_y": spec.c_y + centered((q,), noise),
    }
    return _assemble(spec, samples, descriptor=descriptor,
                     meta={"n_samples": n_samples, "noise": noise})


def _orthogonal(n, rng):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def spd_with_spectrum(eigs, rng):
    eigs = np.asarray(eigs, dtype=float)
    U = _orthogonal(len(eigs), rng)
    M = (U * eigs) @ U.T
    return 0.5 * (M + M.T)


def random_quadratic_spec(p, q, rng, mu_y=1.0, L_y=4.0, mu_x=1.0, L_phi=10.0,
                          coupling=1.0, linear=True, homogeneous=False) -> QuadraticSpec:
    """Random SC-SC quadratic whose inner Hessian has spectrum [mu_y, L_y] and
    whose hyperobjective Hessian has spectrum exactly [mu_x, L_phi]."""
    H = spd_with_spectrum(np.linspace(mu_y, L_y, q), rng)
    J = coupling * rng.standard_normal((p, q)) / np.sqrt(q)
    C = 0.5 * rng.standard_normal((p, q)) / np.sqrt(q)
    G = rng.standard_normal((q, q)) / np.sqrt(q)
    A_y = G @ G.T
    Y = -np.linalg.solve(H, J.T)
    CY = C @ Y
    rest = CY + CY.T + Y.T @ A_y @ Y
    target = spd_with_spectrum(np.linspace(mu_x, L_phi, p), rng)
    A_x = target - 0.5 * (rest + rest.T)
    if homogeneous or not linear:
        b = c_x = c_y = None
    else:
        b, c_x, c_y = rng.standard_normal(q), rng.standard_normal(p), rng.standard_normal(q)
    return QuadraticSpec(H=H, J=J, b=b, A_x=A_x, A_y=A_y, C=C, c_x=c_x, c_y=c_y)
