from .config import ALGORITHMS, AccelConfig, LinsysConfig, RunConfig, StochasticConfig
from .loops import (RUNNERS, accbio_bg_coefficients, inner_spectrum, resolve_L_phi, resolve_mu_x,
                    run_accbio, run_accbio_bg, run_aid_bio, run_itd_bio, run_stocbio)
from .smoothness import add_quadratic_regularizer, smoothness_constant
from .trace import BASE_COLUMNS, Trace, read_trace_csv
