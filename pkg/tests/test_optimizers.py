import math

import numpy as np
import pytest

from bilevel.hypergrad import InnerLoopConfig
from bilevel.optimizers import (AccelConfig, LinsysConfig, RunConfig, StochasticConfig,
                                accbio_bg_coefficients, add_quadratic_regularizer, read_trace_csv,
                                run_accbio, run_accbio_bg, run_aid_bio, run_itd_bio, run_stocbio,
                                smoothness_constant)
from bilevel.optimizers.trace import BASE_COLUMNS
from bilevel.problems import (QuadraticSpec, make_hyperclean, make_quadratic, random_quadratic_spec)


def quad(seed=0, p=4, q=4, **kw):
    return make_quadratic(random_quadratic_spec(p, q, np.random.default_rng(seed), **kw))


def aid_cfg(**kw):
    base = dict(K=10, inner=InnerLoopConfig(alpha=0.25, D=5), linsys=LinsysConfig("cg", N=4))
    base.update(kw)
    return RunConfig("aid_bio", **base)


def test_smoothness_constant():
    assert smoothness_constant(0.5, 1.0, 0.0, 0.0, 1.0) == pytest.approx(9.0, rel=1e-15)
    L, mu = 3.0, 0.7
    assert smoothness_constant(mu, L, 0, 0, 0) == pytest.approx(L + 2 * L ** 2 / mu + L ** 3 / mu ** 2)
    for mu in np.linspace(0.1, 2, 10):
        assert smoothness_constant(2 * mu, 1.5, 0, 0, 0.7) < smoothness_constant(mu, 1.5, 0, 0, 0.7)
    with pytest.raises(ValueError):
        smoothness_constant(0.0, 1.0, 0, 0, 0)


def test_k_zero_initial_record_only():
    tr = run_aid_bio(quad(), aid_cfg(K=0))
    assert len(tr.records) == 1 and tr.records[0]["k"] == 0


def test_exact_gd_recursion():
    o = make_quadratic(QuadraticSpec(H=np.eye(3), J=np.zeros((3, 3)), A_x=np.eye(3)))
    x0 = np.array([1.0, -2.0, 0.5])
    tr = run_aid_bio(o, aid_cfg(K=8, beta=0.3, x0=x0, inner=InnerLoopConfig(alpha=1.0, D=1),
                                linsys=LinsysConfig("cg", N=3)))
    for k, x in enumerate(tr.xs):
        assert np.allclose(x, 0.7 ** k * x0, atol=1e-14)


def test_warm_start_k5():
    o = quad(0, mu_y=1, L_y=4)
    base = dict(K=20, inner=InnerLoopConfig(alpha=0.25, D=2), linsys=LinsysConfig("cg", N=2))
    warm = run_aid_bio(o, RunConfig("aid_bio", warm_start=True, **base))
    cold = run_aid_bio(o, RunConfig("aid_bio", warm_start=False, **base))
    assert warm.records[5]["tracking_err"] <= cold.records[5]["tracking_err"]


def test_itd_counts_per_iteration():
    tr = run_itd_bio(quad(), RunConfig("itd_bio", K=4, inner=InnerLoopConfig(alpha=0.25, D=6)))
    assert [r["jvps_cum"] for r in tr.records] == [6 * (k + 1) for k in range(5)]
    assert [r["hvps_cum"] for r in tr.records] == [5 * (k + 1) for k in range(5)]


def test_counters_monotone():
    tr = run_aid_bio(quad(), aid_cfg())
    for col in ("grads_cum", "hvps_cum", "jvps_cum"):
        vals = tr.column(col)
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_information_budget():
    tr = run_aid_bio(quad(), aid_cfg(K=3, warm_start=False))
    # chain = D inner steps + N HVPs + 1 JVP + 1 outer gradient
    assert tr.chains == [5 + 4 + 1 + 1] * 4
    assert tr.information_budget() == [2, 14, 26, 38]
    # a warm-started CG spends one more HVP on its initial residual
    assert run_aid_bio(quad(), aid_cfg(K=3)).chains == [11, 12, 12, 12]


def test_auto_beta_needs_constants():
    o = make_hyperclean(20, 10, 3, 0.1, 0.1, np.random.default_rng(0))
    with pytest.raises(ValueError, match="beta"):
        run_itd_bio(o, RunConfig("itd_bio", K=2, inner=InnerLoopConfig(alpha=0.1, D=2)))


def test_divergence_returns_partial_trace():
    tr = run_aid_bio(quad(), aid_cfg(K=50, beta=100.0))
    assert tr.status == "diverged" and tr.diverged
    assert 0 < len(tr.records) < 51
    assert "outer iterate" in tr.message


def test_stocbio_full_batch_matches_neumann_aid():
    o = make_hyperclean(40, 20, 4, 0.2, 0.05, np.random.default_rng(2))
    inner = InnerLoopConfig(alpha=0.2, D=4)
    a = run_stocbio(o, RunConfig("stocbio", K=10, beta=1.0, inner=inner,
                                 stochastic=StochasticConfig(Q=8, eta=0.1, B=500, S=500, D_f=500, D_g=500)))
    b = run_aid_bio(o, RunConfig("aid_bio", K=10, beta=1.0, inner=inner,
                                 linsys=LinsysConfig("neumann", eta=0.1, Q=8)))
    assert max(np.abs(u - v).max() for u, v in zip(a.xs, b.xs)) <= 1e-6


def test_stocbio_seed_repeatable():
    o = make_hyperclean(40, 20, 4, 0.2, 0.05, np.random.default_rng(2))
    cfg = RunConfig("stocbio", K=10, beta=1.0, seed=5, inner=InnerLoopConfig(alpha=0.2, D=3),
                    stochastic=StochasticConfig(Q=4, eta=0.1, B=2, S=4, D_f=4, D_g=4))
    assert run_stocbio(o, cfg).to_csv() == run_stocbio(o, cfg).to_csv()
    other = RunConfig("stocbio", K=10, beta=1.0, seed=6, inner=cfg.inner, stochastic=cfg.stochastic)
    assert run_stocbio(o, other).to_csv() != run_stocbio(o, cfg).to_csv()


def test_accbio_momentum_zero_at_unit_condition():
    o = make_quadratic(QuadraticSpec(H=np.eye(2), J=np.zeros((2, 2)), A_x=np.eye(2)))
    tr = run_accbio(o, RunConfig("accbio", K=3, inner=InnerLoopConfig(alpha="auto", D=2),
                                 linsys=LinsysConfig("heavy_ball", N=3), x0=np.ones(2)))
    assert float(tr.header["momentum"]) == 0.0
    # plain hypergradient descent with stepsize 1/L_phi = 1 lands on x* = 0
    assert np.allclose(tr.zs[1], 0.0, atol=1e-15)


def test_accbio_rate_kappa25():
    rng = np.random.default_rng(25)
    o = make_quadratic(random_quadratic_spec(6, 6, rng, mu_x=1, L_phi=25, homogeneous=True))
    tr = run_accbio(o, RunConfig("accbio", K=60, inner=InnerLoopConfig(alpha="auto", D=300),
                                 linsys=LinsysConfig("heavy_ball", N=300), x0=rng.standard_normal(6)))
    gaps = np.log(np.array(tr.column("subopt"), dtype=float)[10:61])
    assert np.polyfit(np.arange(10, 61), gaps, 1)[0] <= math.log(1 - 1 / (2 * 5))


def test_accbio_long_run_fast():
    import time
    o = quad(3, mu_x=1, L_phi=20)
    t = time.perf_counter()
    tr = run_accbio(o, RunConfig("accbio", K=200, inner=InnerLoopConfig(alpha="auto", D=20),
                                 linsys=LinsysConfig("heavy_ball", N=20)))
    assert tr.status == "ok" and time.perf_counter() - t < 5


def test_accbio_bg_coefficients():
    eta, tau, beta = accbio_bg_coefficients(0.25, 1.0)
    assert (eta, tau, beta) == pytest.approx((0.2, 0.25, 0.5), abs=1e-15)


def test_accbio_bg_degenerate_finite():
    o = make_quadratic(QuadraticSpec(H=np.eye(1), J=np.zeros((1, 1)), A_x=np.eye(1)))
    cfg = RunConfig("accbio_bg", K=100, inner=InnerLoopConfig(alpha="auto", D=2),
                    linsys=LinsysConfig("heavy_ball", N=2),
                    accel=AccelConfig(mu_x=1.0, L_phi=1.0, alpha=0.5), x0=np.array([3.0]))
    tr = run_accbio_bg(o, cfg)
    assert tr.status == "ok" and all(np.isfinite(z).all() for z in tr.zs)


def test_accbio_bg_warm_start_tracking():
    o = quad(1, mu_y=1, L_y=4, mu_x=1, L_phi=10)
    inner = InnerLoopConfig(alpha="auto", D=2)
    ls = LinsysConfig("heavy_ball", N=5)
    warm = run_accbio_bg(o, RunConfig("accbio_bg", K=5, inner=inner, linsys=ls, warm_start=True))
    cold = run_accbio(o, RunConfig("accbio", K=5, inner=inner, linsys=ls))
    assert warm.records[3]["tracking_err"] <= cold.records[3]["tracking_err"]


def test_regularizer_wrapper():
    o = quad()
    w = add_quadratic_regularizer(o, 0.5, 1.0)
    x, y = np.array([2.0, 0, 0, 0]), np.ones(4)
    assert np.allclose(w.grad_x_f(x, y) - o.grad_x_f(x, y), [1.0, 0, 0, 0])
    assert w.value_f(x, y) - o.value_f(x, y) == pytest.approx(0.25 * (x @ x), rel=1e-14)
    tiny = add_quadratic_regularizer(o, 1e-12, 1.0)
    assert np.allclose(tiny.grad_x_f(x, y), o.grad_x_f(x, y), atol=1e-10)
    assert w.meta["mu_x"] == 0.5
    with pytest.raises(ValueError):
        add_quadratic_regularizer(o, 0.0, 1.0)


def test_trace_csv_roundtrip(tmp_path):
    tr = run_aid_bio(quad(), aid_cfg(K=10))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    header, cols, rows = read_trace_csv(path)
    assert cols == BASE_COLUMNS
    assert len(rows) == 11
    assert header["algorithm"] == "aid_bio"
    for rec, row in zip(tr.records, rows):
        assert row[cols.index("grad_norm_est")] == rec["grad_norm_est"]
        assert row[cols.index("hvps_cum")] == rec["hvps_cum"]
        assert row[cols.index("wall_ns")] is None
    assert "wall_ns" in cols
    with_clock = tr.to_csv(wall_clock=True).splitlines()[-1].split(",")
    assert with_clock[cols.index("wall_ns")] != ""
