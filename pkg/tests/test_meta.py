import numpy as np
import pytest

from bilevel.meta import (AnilConfig, MamlConfig, anil_objective, anil_partial_gradients, maml_constants,
                          maml_meta_gradient_estimate, maml_meta_gradient_exact,
                          maml_smoothness_estimate, run_anil, run_maml, task_meta_gradient)
from bilevel.meta.maml import stepsize_guard
from bilevel.problems import MamlTask, TaskSet, make_anil_taskset, make_maml_taskset
from bilevel.problems.oracle import Counter
from bilevel.verify import finite_diff_gradient


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_meta_gradient_n0_and_scalar():
    ts = make_maml_taskset(2, 3, np.random.default_rng(0))
    w = np.ones(3)
    t = ts.tasks[0]
    assert np.array_equal(task_meta_gradient(t, w, 0.1, 0), t.grad(w))
    scalar = MamlTask("quadratic", np.array([[1.0]]), np.array([0.0]))
    g = task_meta_gradient(scalar, np.array([1.0]), 0.1, 2)
    assert g[0] == pytest.approx(0.6561, abs=1e-12)


@pytest.mark.parametrize("kind", ["quadratic", "logistic"])
@pytest.mark.parametrize("N", [1, 2, 5, 10])
def test_meta_gradient_finite_difference(kind, N):
    ts = make_maml_taskset(3, 3, np.random.default_rng(N), kind=kind)
    w = np.random.default_rng(10 + N).standard_normal(3)
    t = ts.tasks[1]
    a = 0.05

    def unrolled(v):
        for _ in range(N):
            v = v - a * t.grad(v)
        return t.loss(v)
    assert _rel(task_meta_gradient(t, w, a, N), finite_diff_gradient(unrolled, w)) <= 1e-5


@pytest.mark.parametrize("N", [1, 3, 10])
def test_meta_gradient_symbolic_quadratic(N):
    ts = make_maml_taskset(1, 4, np.random.default_rng(2))
    t = ts.tasks[0]
    a = 0.02
    Hm = t.A.T @ t.A / t.n + t.reg * np.eye(4)
    w = np.random.default_rng(3).standard_normal(4)
    wN = w.copy()
    for _ in range(N):
        wN = wN - a * t.grad(wN)
    expected = np.linalg.matrix_power(np.eye(4) - a * Hm, N) @ t.grad(wN)
    assert _rel(task_meta_gradient(t, w, a, N), expected) <= 1e-10


def test_counts():
    ts = make_maml_taskset(2, 3, np.random.default_rng(0))
    c = Counter()
    task_meta_gradient(ts.tasks[0], np.zeros(3), 0.05, 4, counter=c)
    assert (c.grads, c.hvps) == (5, 4)


@pytest.mark.parametrize("mode", ["resampling", "finite_sum"])
def test_full_batch_estimate_is_exact(mode):
    ts = make_maml_taskset(4, 3, np.random.default_rng(1), n_samples=20, mode=mode)
    cfg = MamlConfig(N=3, alpha=0.05, B=4, S=20, D=20, T=20, mode=mode)
    w = np.ones(3)
    est = maml_meta_gradient_estimate(ts, w, cfg, np.random.default_rng(9))
    assert np.array_equal(est, maml_meta_gradient_exact(ts, w, 0.05, 3)[1])


def test_estimate_seed_repeatable():
    ts = make_maml_taskset(6, 3, np.random.default_rng(1))
    cfg = MamlConfig(N=2, alpha=0.05, B=3, S=5, D=5, T=5)
    w = np.ones(3)
    a = maml_meta_gradient_estimate(ts, w, cfg, np.random.default_rng(4))
    b = maml_meta_gradient_estimate(ts, w, cfg, np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_sampling_bias_shrinks_with_batch():
    ts = make_maml_taskset(1, 1, np.random.default_rng(6), n_samples=400, noise=1.0)
    w = np.array([0.3])
    exact = maml_meta_gradient_exact(ts, w, 0.1, 2)[1][0]
    dev = {}
    for S in (2, 32):
        cfg = MamlConfig(N=2, alpha=0.1, B=1, S=S, D=S, T=S)
        rng = np.random.default_rng(S)
        draws = [maml_meta_gradient_estimate(ts, w, cfg, rng)[0] for _ in range(20000)]
        dev[S] = abs(np.mean(draws) - exact)
    assert np.isfinite(dev[2]) and dev[32] < dev[2]


def test_smoothness_estimate_zero_gradients():
    t = MamlTask("quadratic", np.eye(2), np.zeros(2), reg=0.1)
    for mode, b in (("resampling", 0.0), ("finite_sum", 0.7)):
        tk = MamlTask("quadratic", np.eye(2), np.zeros(2), 0.1, np.array([0]), np.array([1])) \
            if mode == "finite_sum" else t
        ts = TaskSet([tk, tk], L=1.1, rho=0.0, mode=mode)
        cfg = MamlConfig(N=3, alpha=0.05, mode=mode, b=b, B_prime=2)
        L_hat = maml_smoothness_estimate(ts, np.zeros(2), cfg, np.random.default_rng(0))
        expected = (1 + 0.05 * 1.1) ** 6 * 1.1
        if mode == "finite_sum":
            expected += maml_constants(0.05, 1.1, 0.0, 3, mode)[1] * b
        assert L_hat == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        maml_smoothness_estimate(TaskSet([t]), np.zeros(2), MamlConfig(), np.random.default_rng(0))


def test_stepsize_constants():
    L = 2.0
    for N in range(1, 65):
        a = 1 / (8 * N * L)
        assert (1 + a * L) ** N < 1.25 and (1 + a * L) ** (2 * N) < 1.5
        assert stepsize_guard(a, L, N)
    C_L, _ = maml_constants(1 / 32, 1.0, 1.0, 4)
    assert 1 / 16 < C_L < 3 / 5


def test_run_maml_k0_and_guard_marker():
    ts = make_maml_taskset(3, 3, np.random.default_rng(0))
    tr = run_maml(ts, MamlConfig(N=2, alpha=1 / (16 * ts.L), K=0))
    assert len(tr.records) == 1 and tr.header["stepsize_guard"] == "ok"
    tr = run_maml(ts, MamlConfig(N=10, alpha=1 / ts.L, K=1))
    assert tr.header["stepsize_guard"] == "violated"


def test_run_maml_finite_sum_monotone():
    A = np.array([[1.0, 0.2], [0.1, 0.8], [0.5, -0.3], [0.3, 0.6]])
    t = np.array([1.0, -0.5, 0.3, 0.8])
    task = MamlTask("quadratic", A, t, 0.0, np.arange(4), np.arange(4))
    ts = TaskSet([task], L=2.0, rho=0.0, mode="finite_sum")
    tr = run_maml(ts, MamlConfig(N=2, alpha=0.05, B=1, B_prime=1, mode="finite_sum", K=50))
    norms = tr.column("grad_norm_true")
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_run_maml_mode_mismatch():
    ts = make_maml_taskset(2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError, match="mode"):
        run_maml(ts, MamlConfig(mode="finite_sum"))


# ANIL

class _LinearInner:
    # L_S = c.w + |phi|^2/2 (no w curvature, no coupling); L_D = |w - phi|^2/2 + |phi|^2/2
    c = np.array([0.5, -1.0])

    def grad(self, w, phi, split):
        if split == "S":
            return self.c.copy(), phi.copy()
        return w - phi, 2 * phi - w

    def hvp(self, w, phi, dw, dphi, split):
        if split == "S":
            return np.zeros_like(dw), dphi.copy()
        return dw - dphi, 2 * dphi - dw


def test_anil_linear_inner():
    task = _LinearInner()
    w, phi = np.array([1.0, 2.0]), np.array([-0.5, 0.3])
    a, N = 0.1, 4
    gw, gphi = anil_partial_gradients(task, w, phi, a, N)
    shifted = w - N * a * task.c
    ew, ephi = task.grad(shifted, phi, "D")
    assert np.allclose(gw, ew, atol=1e-15) and np.allclose(gphi, ephi, atol=1e-15)


class _Scalar:
    def grad(self, w, phi, split):
        return (w + phi, w) if split == "S" else (w, phi)

    def hvp(self, w, phi, dw, dphi, split):
        return (dw + dphi, dw) if split == "S" else (dw, dphi)

    def loss(self, w, phi, split):
        return float(0.5 * w @ w + w @ phi) if split == "S" else float(0.5 * w @ w + 0.5 * phi @ phi)


def test_anil_scalar():
    gw, gphi = anil_partial_gradients(_Scalar(), np.array([1.0]), np.array([1.0]), 0.1, 1)
    assert gw[0] == pytest.approx(0.72, abs=1e-12)
    assert gphi[0] == pytest.approx(0.92, abs=1e-12)
    # cross-check: L_D(0.9 w - 0.1 phi, phi)
    obj = lambda v: anil_objective(_Scalar(), v[:1], v[1:], 0.1, 1)
    fd = finite_diff_gradient(obj, np.array([1.0, 1.0]))
    assert np.allclose(fd, [0.72, 0.92], atol=1e-9)


@pytest.mark.parametrize("kind", ["linear", "tanh"])
@pytest.mark.parametrize("N", [1, 2, 5])
def test_anil_finite_difference(kind, N):
    ts = make_anil_taskset(2, np.random.default_rng(N), kind=kind)
    r = np.random.default_rng(20 + N)
    w = 0.5 * r.standard_normal(ts.meta["n_w"])
    phi = 0.5 * r.standard_normal(ts.meta["n_phi"])
    t = ts.tasks[0]
    gw, gphi = anil_partial_gradients(t, w, phi, 0.05, N)
    fw = finite_diff_gradient(lambda v: anil_objective(t, v, phi, 0.05, N), w)
    fp = finite_diff_gradient(lambda v: anil_objective(t, w, v, 0.05, N), phi)
    assert _rel(gw, fw) <= 1e-5 and _rel(gphi, fp) <= 1e-5


def test_anil_full_batch_seed_independent():
    ts = make_anil_taskset(4, np.random.default_rng(0))
    cfg = dict(alpha=0.1, beta_w=0.05, beta_phi=0.05, N=2, B=4, K=5)
    a = run_anil(ts, AnilConfig(seed=1, **cfg))
    b = run_anil(ts, AnilConfig(seed=2, **cfg))
    for col in ("grad_norm_est", "grad_norm_true", "hvps_cum"):
        assert a.column(col) == b.column(col)


def test_anil_counts_linear_in_n():
    ts = make_anil_taskset(4, np.random.default_rng(0), kind="tanh")
    for N in (1, 3, 6):
        tr = run_anil(ts, AnilConfig(alpha=0.05, beta_w=0.01, beta_phi=0.01, N=N, B=3, K=4))
        last = tr.records[-1]
        assert last["hvps_cum"] == N * 3 * 5 and last["jvps_cum"] == N * 3 * 5


def test_anil_n_sweep_nonincreasing():
    ts = make_anil_taskset(8, np.random.default_rng(5), kind="linear", reg=1.0)
    finals = [run_anil(ts, AnilConfig(alpha=0.1, beta_w=0.05, beta_phi=0.05, N=N, B=8, K=100))
              .records[-1]["grad_norm_w"] for N in (1, 3, 5, 7, 9)]
    assert all(b <= a for a, b in zip(finals, finals[1:]))
