from .inner import InnerLoopConfig, inner_solve
from .linear import CGBreakdown, heavy_ball_stepsizes, solve_linear_cg, solve_linear_heavy_ball
from .estimators import (HypergradResult, aid_hypergradient, aid_solve, analytic_hypergradient,
                         geometric_batch_schedule, itd_hypergradient, linsys_residual, neumann_v,
                         stoc_hypergradient)
