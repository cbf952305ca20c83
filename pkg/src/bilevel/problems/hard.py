from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .quadratic import QuadraticSpec, make_quadratic


def zero_chain_matrices(d, geometry):
    """Zero-chain coupling matrix and its even powers.

    SCSC: (Z, Z^2, Z^4); CSC: (Z, Z^2, Z^4, Z^6). Integer arithmetic throughout.
    """
    if d < 3:
        raise ValueError(f"dimension d = {d} must be at least 3")
    geometry = geometry.upper()
    if geometry not in ("SCSC", "CSC"):
        raise ValueError(f"unknown geometry {geometry!r}")
    s = d + 1 if geometry == "SCSC" else d
    i = np.arange(1, d + 1)
    tot = i[:, None] + i[None, :]
    Z = np.where(tot == s, 1, 0) - np.where(tot == s + 1, 1, 0)
    Z = Z.astype(np.int64)
    Z2 = Z @ Z
    Z4 = Z2 @ Z2
    if geometry == "SCSC":
        return Z, Z2, Z4
    return Z, Z2, Z4, Z4 @ Z2


def zero_chain_inverse(d, geometry):
    """Explicit triangular inverse of the zero-chain matrix."""
    i = np.arange(1, d + 1)
    tot = i[:, None] + i[None, :]
    if geometry.upper() == "SCSC":
        return (tot <= d + 1).astype(np.int64)
    return -(tot >= d + 1).astype(np.int64)


@dataclass(frozen=True)
class HardInstanceSpec:
    geometry: str = "SCSC"
    d: int = 64
    mu_x: float = 1.0
    mu_y: float = 1.0
    L_x: float = 5.0
    L_y: float = 1.0
    Ltilde_y: float = 5.0
    Ltilde_xy: float = 1.0
    Lbar_xy: float = 0.0
    B: float = 1.0

    @property
    def alpha_c(self):
        return (self.L_x - self.mu_x) / 4

    @property
    def beta_c(self):
        return (self.Ltilde_y - self.mu_y) / 4


def quartic_coefficients(spec: HardInstanceSpec):
    """(lambda, tau) of the palindromic quartic defining the root r."""
    a, b = spec.alpha_c, spec.beta_c
    mx, my, Lt, Lb, Ly = spec.mu_x, spec.mu_y, spec.Ltilde_xy, spec.Lbar_xy, spec.L_y
    den = b * b * mx + a * b * my + b * Lb * Lt / 2
    lam = (2 * b * mx * my + a * my * my + my * Lb * Lt / 2 + Ly * Lt * Lt / 4) / den
    tau = mx * my * my / den
    return lam, tau, den


def quartic(r, lam, tau):
    return 1 - (4 + lam) * r + (6 + 2 * lam + tau) * r ** 2 - (4 + lam) * r ** 3 + r ** 4


def quartic_bracket(lam, tau):
    xi = lam / (2 * tau)
    return 1 - 1 / (0.5 + math.sqrt(xi + 0.25)), 1.0


def quartic_root(lam, tau, tol=1e-14):
    lo, hi = quartic_bracket(lam, tau)
    flo, fhi = quartic(lo, lam, tau), quartic(hi, lam, tau)
    if not (flo > 0 > fhi or flo < 0 < fhi):
        raise ValueError(f"quartic root search failed: no sign change on bracket ({lo!r}, {hi!r}), "
                         f"values ({flo:.3e}, {fhi:.3e})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = quartic(mid, lam, tau)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_ordering(spec):
    if spec.d < 8:
        raise ValueError(f"hard instances need d >= 8, got {spec.d}")
    for name in ("mu_y", "L_x", "L_y", "Ltilde_y", "Ltilde_xy"):
        if getattr(spec, name) <= 0:
            raise ValueError(f"{name} must be positive")
    if spec.Lbar_xy < 0:
        raise ValueError("Lbar_xy must be nonnegative")
    if not spec.mu_y < spec.Ltilde_y:
        raise ValueError(f"need mu_y < Ltilde_y, got {spec.mu_y} >= {spec.Ltilde_y}")
    if spec.geometry.upper() == "SCSC":
        if not 0 < spec.mu_x < spec.L_x:
            raise ValueError(f"need 0 < mu_x < L_x, got mu_x = {spec.mu_x}, L_x = {spec.L_x}")
    elif spec.B <= 0:
        raise ValueError("B must be positive")


def make_hard_instance(spec: HardInstanceSpec):
    """Worst-case zero-chain bilevel instance and its metadata."""
    _check_ordering(spec)
    geo = spec.geometry.upper()
    d = spec.d
    mats = zero_chain_matrices(d, geo)
    Z, Z2 = mats[0].astype(float), mats[1].astype(float)
    Zinv = zero_chain_inverse(d, geo).astype(float)
    beta, Lt, Ly = spec.beta_c, spec.Ltilde_xy, spec.L_y
    I = np.eye(d)
    H = beta * Z2 + spec.mu_y * I
    J = -(Lt / 2) * Z
    meta = {"geometry": geo, "Z": mats[0], "Z2": mats[1], "Z4": mats[2]}
    if geo == "SCSC":
        alpha = spec.alpha_c
        lam, tau, den = quartic_coefficients(spec)
        r = quartic_root(lam, tau)
        bt = np.zeros(d)
        bt[0] = (2 + lam + tau) * r - (3 + lam) * r ** 2 + r ** 3
        bt[1] = r - 1
        b = Zinv @ (2 * den * bt / (Ly * Lt))
        A_x = alpha * Z2 + spec.mu_x * I
        C = -(alpha * beta / Lt) * (Z2 @ Z) + (spec.Lbar_xy / 2) * Z
        c_y = (spec.Lbar_xy / Lt) * b - (2 * alpha * beta / Lt ** 2) * (Z2 @ b)
        qspec = QuadraticSpec(H=H, J=J, b=b, A_x=A_x, A_y=Ly * I, C=C, c_y=c_y, mu=spec.mu_y)
        x_hat = r ** np.arange(1, d + 1)
        meta.update(quartic_lambda=lam, quartic_tau=tau, r=r, bracket=quartic_bracket(lam, tau),
                    x_hat=x_hat, x_hat_error_bound=(7 + lam) * r ** d / tau)
    else:
        Lx, my = spec.L_x, spec.mu_y
        meta["Z6"] = mats[3]
        s = spec.B / math.sqrt(d)
        bt = np.zeros(d)
        bt[0] = s * (1.25 * Lx * beta ** 2 + Lx * beta * my + Lt ** 2 * Ly / 4 + Lx * my ** 2 / 4)
        bt[1] = s * (-Lx * beta ** 2 - Lx * beta * my / 2)
        bt[2] = s * Lx * beta ** 2 / 4
        b = Zinv @ (2 * bt / (Ly * Lt))
        qspec = QuadraticSpec(H=H, J=J, b=b, A_x=(Lx / 4) * Z2, A_y=Ly * I, mu=spec.mu_y)
        meta["x_star_exact"] = np.full(d, s)
    meta["b_tilde"] = bt
    meta["b"] = b
    x_star = meta.get("x_star_exact")
    meta["x_star"] = qspec.x_star() if x_star is None else x_star
    oracle = make_quadratic(qspec, descriptor=f"hard_{geo.lower()}_d{d}", meta=meta)
    return oracle, meta


def export_metadata(meta, directory):
    """Write array-valued metadata as CSV files; scalars go to scalars.csv."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    scalars = []
    for key, val in meta.items():
        if isinstance(val, np.ndarray):
            fmt = "%d" if val.dtype.kind == "i" else "%.17g"
            np.savetxt(out / f"{key}.csv", np.atleast_2d(val) if val.ndim == 1 else val,
                       delimiter=",", fmt=fmt)
        elif isinstance(val, (int, float, str)):
            scalars.append(f"{key},{val!r}" if isinstance(val, float) else f"{key},{val}")
    (out / "scalars.csv").write_text("\n".join(scalars) + "\n")
    return out
