from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np


class UnsupportedInstance(Exception):
    """Raised when an operation needs structure the oracle does not carry."""


class DivergenceError(RuntimeError):
    def __init__(self, message, where=None, iteration=None):
        super().__init__(message)
        self.where = where
        self.iteration = iteration


DIVERGENCE_LIMIT = 1e12


def check_finite(vec, where, iteration=None):
    n = float(np.linalg.norm(vec))
    if not np.isfinite(n) or n > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"{where}: norm {n:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at iteration {iteration}",
            where=where, iteration=iteration)
    return vec


@dataclass(frozen=True)
class Constants:
    """Problem constants; None means unknown."""
    mu: Optional[float] = None
    L: Optional[float] = None
    tau_lip: Optional[float] = None
    rho_lip: Optional[float] = None
    M_lip: Optional[float] = None
    L_inner: Optional[float] = None  # Lipschitz constant of grad_y g in y alone

    @property
    def inner_smoothness(self):
        return self.L if self.L_inner is None else self.L_inner

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise UnsupportedInstance("unknown constants: " + ", ".join(missing))
        return tuple(getattr(self, n) for n in names)


@dataclass
class Counter:
    """Oracle call tallies. Passed explicitly, never global."""
    grads: int = 0
    hvps: int = 0
    jvps: int = 0
    samples: int = 0

    def add(self, other: "Counter"):
        self.grads += other.grads
        self.hvps += other.hvps
        self.jvps += other.jvps
        self.samples += other.samples


def _full(batch):
    return batch is None


@dataclass(frozen=True)
class OracleBundle:
    """First and second order access to f(x, y) and g(x, y).

    Every map accepts an optional ``batch`` keyword: an index array into the
    instance's sample pool, or None for the full (deterministic) objective.
    ``sample_f``/``sample_g`` draw such index arrays from an explicit RNG.
    """
    dim_x: int
    dim_y: int
    grad_x_f: Callable[..., np.ndarray]
    grad_y_f: Callable[..., np.ndarray]
    grad_y_g: Callable[..., np.ndarray]
    hvp_yy_g: Callable[..., np.ndarray]
    jvp_xy_g: Callable[..., np.ndarray]
    value_f: Callable[..., float]
    value_g: Callable[..., float]
    constants: Constants = field(default_factory=Constants)
    n_samples_f: int = 1
    n_samples_g: int = 1
    quadratic: Any = None
    descriptor: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def stochastic(self):
        return self.n_samples_f > 1 or self.n_samples_g > 1

    def sample_f(self, size, rng):
        return sample_indices(self.n_samples_f, size, rng)

    def sample_g(self, size, rng):
        return sample_indices(self.n_samples_g, size, rng)

    def with_constants(self, **kw):
        return replace(self, constants=replace(self.constants, **kw))


def sample_indices(n, size, rng):
    """Indices drawn with replacement; None (the full pool) once size >= n."""
    size = int(size)
    if size < 1:
        raise ValueError("batch size must be at least 1")
    if size >= n:
        return None
    return rng.integers(0, n, size=size)


def batch_size(n, batch):
    return n if batch is None else len(batch)
