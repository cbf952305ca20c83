from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..hypergrad.inner import InnerLoopConfig

Auto = Union[float, str]

ALGORITHMS = ("aid_bio", "itd_bio", "stocbio", "accbio", "accbio_bg")


@dataclass(frozen=True)
class LinsysConfig:
    solver: str = "cg"  # cg | heavy_ball | neumann
    N: int = 10
    hb_lambda: Auto = "auto"
    hb_theta: Auto = "auto"
    eta: Optional[float] = None
    Q: Optional[int] = None


@dataclass(frozen=True)
class StochasticConfig:
    Q: int
    eta: float
    B: float
    S: int
    D_f: int
    D_g: int


@dataclass(frozen=True)
class AccelConfig:
    mu_x: Auto = "auto"
    L_phi: Auto = "auto"
    alpha: Auto = "auto"


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    K: int = 10
    beta: Auto = "auto"
    inner: Optional[InnerLoopConfig] = None
    linsys: Optional[LinsysConfig] = None
    stochastic: Optional[StochasticConfig] = None
    accel: Optional[AccelConfig] = None
    warm_start: bool = True
    seed: int = 0
    x0: Optional[np.ndarray] = field(default=None, compare=False)
    y0: Optional[np.ndarray] = field(default=None, compare=False)

    def validate(self):
        need = {
            "aid_bio": ("inner", "linsys"),
            "itd_bio": ("inner",),
            "stocbio": ("inner", "stochastic"),
            "accbio": ("inner",),
            "accbio_bg": ("inner",),
        }
        if self.algorithm not in need:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        missing = [n for n in need[self.algorithm] if getattr(self, n) is None]
        if missing:
            raise ValueError(f"{self.algorithm} needs config blocks: {', '.join(missing)}")
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.algorithm == "aid_bio" and self.linsys.solver == "neumann":
            if self.linsys.eta is None or self.linsys.Q is None:
                raise ValueError("neumann linear solver needs eta and Q")
        return self
