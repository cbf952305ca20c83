from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..problems.oracle import Counter, check_finite


@dataclass(frozen=True)
class InnerLoopConfig:
    alpha: float
    D: int
    method: str = "GD"  # GD | SGD | AGD
    batch: Optional[int] = None
    kappa_y: Optional[float] = None
    allow_large_step: bool = False

    def validate(self, L=None):
        method = self.method.upper()
        if method not in ("GD", "SGD", "AGD"):
            raise ValueError(f"unknown inner method {self.method!r}")
        if self.alpha <= 0:
            raise ValueError("inner stepsize alpha must be positive")
        if self.D < 0:
            raise ValueError("inner step count D must be nonnegative")
        if method == "SGD" and (self.batch is None or self.batch < 1):
            raise ValueError("SGD inner loop needs batch >= 1")
        if method == "AGD" and (self.kappa_y is None or self.kappa_y < 1):
            raise ValueError("AGD inner loop needs kappa_y >= 1")
        if L and self.alpha > 1.0 / L * (1 + 1e-12) and not self.allow_large_step:
            raise ValueError(f"inner stepsize {self.alpha} exceeds 1/L = {1.0 / L}; "
                             "set allow_large_step to override")
        return method


def inner_solve(oracle, x, y0, cfg: InnerLoopConfig, rng=None, counter: Counter = None,
                trajectory: list = None):
    """Run exactly cfg.D inner steps from y0 and return the last iterate.

    ``trajectory`` (if given) receives y^0..y^D.
    """
    method = cfg.validate(oracle.constants.inner_smoothness)
    if method == "SGD" and rng is None:
        raise ValueError("SGD inner loop requires an rng")
    counter = Counter() if counter is None else counter
    y = np.array(y0, dtype=float)
    if trajectory is not None:
        trajectory.append(y.copy())
    if method == "AGD":
        sk = np.sqrt(cfg.kappa_y)
        mom = (sk - 1) / (sk + 1)
        s, y_prev = y.copy(), y.copy()
    for t in range(cfg.D):
        if method == "GD":
            y = y - cfg.alpha * oracle.grad_y_g(x, y)
        elif method == "SGD":
            batch = oracle.sample_g(cfg.batch, rng)
            counter.samples += oracle.n_samples_g if batch is None else len(batch)
            y = y - cfg.alpha * oracle.grad_y_g(x, y, batch=batch)
        else:
            y = s - cfg.alpha * oracle.grad_y_g(x, s)
            s = y + mom * (y - y_prev)
            y_prev = y
        counter.grads += 1
        check_finite(y, "inner loop", t + 1)
        if trajectory is not None:
            trajectory.append(y.copy())
    return y
