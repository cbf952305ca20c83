"""Acceptance checks. Each check takes a base seed and returns CheckReports.

Seeds are offsets: the frozen expectations below hold for base seed 0.
"""
from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np

from ..hypergrad import InnerLoopConfig, itd_hypergradient, neumann_v
from ..meta import (AnilConfig, anil_objective, anil_partial_gradients, maml_meta_gradient_exact,
                    run_anil, stepsize_guard, task_meta_gradient)
from ..optimizers import (LinsysConfig, RunConfig, StochasticConfig, run_accbio, run_aid_bio,
                          run_itd_bio, run_stocbio)
from ..problems import (HardInstanceSpec, MamlTask, QuadraticSpec, TaskSet, make_anil_taskset,
                        make_hard_instance, make_hyperclean, make_maml_taskset, make_quadratic,
                        make_stochastic_quadratic, random_quadratic_spec, spd_with_spectrum)
from .core import (CheckReport, check_hypergradient, finite_diff_gradient, lower_bound_check,
                   subspace_support_check)


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / max(np.linalg.norm(b), 1e-300))


def check_oracle_equivalence(seed=0):
    rng = np.random.default_rng(seed + 11)
    worst_aid = worst_itd = 0.0
    for _ in range(20):
        p, q = rng.integers(1, 9, size=2)
        oracle = make_quadratic(random_quadratic_spec(int(p), int(q), rng))
        x = rng.standard_normal(int(p))
        alpha = 1.0 / oracle.constants.L_inner
        worst_aid = max(worst_aid, check_hypergradient(oracle, "aid_exact", {"N": int(q)}, x, 1e-6).measured)
        worst_itd = max(worst_itd, check_hypergradient(oracle, "itd", {"alpha": alpha, "D": 200}, x,
                                                       1e-6).measured)
    return [CheckReport("oracle_equivalence_aid", worst_aid, 0.0, 1e-6, detail="20 random quadratics"),
            CheckReport("oracle_equivalence_itd", worst_itd, 0.0, 1e-6, detail="20 random quadratics")]


def check_itd_decay(seed=0):
    rng = np.random.default_rng(seed + 12)
    worst = -np.inf
    ref = 0.0
    for _ in range(5):
        spec = random_quadratic_spec(4, 5, rng, mu_y=1.0, L_y=3.0)
        oracle = make_quadratic(spec)
        x = rng.standard_normal(4)
        alpha = 1.0 / oracle.constants.L_inner
        ref = math.sqrt(1 - alpha * oracle.constants.mu)
        truth = spec.phi_grad(x)
        y0 = np.zeros(5)
        errs = [np.linalg.norm(itd_hypergradient(oracle, x, y0, alpha, D).estimate - truth)
                for D in range(5, 42)]
        ratios = np.array(errs[1:]) / np.array(errs[:-1])
        worst = max(worst, float(ratios.max() - ref))
    return [CheckReport("itd_decay", worst, 0.0, 0.05,
                        detail="max over D in 5..40 of e(D+1)/e(D) - sqrt(1 - alpha mu)")]


def check_neumann_bias(seed=0):
    H = np.array([[1.0]])
    v = neumann_v(lambda s, u, r: H @ u, np.array([1.0]), 0.5, 3, [1] * 3, None)
    out = [CheckReport("neumann_bias_scalar", abs(1.0 - v[0]), 0.0625, 1e-12, "equality")]
    rng = np.random.default_rng(seed + 13)
    slack = np.inf
    for _ in range(20):
        q = int(rng.integers(1, 9))
        mu, L = 0.5, 4.0
        H = spd_with_spectrum(np.linspace(mu, L, q), rng)
        v0 = rng.standard_normal(q)
        eta = float(rng.uniform(0.1, 1.0)) / L
        Q = int(rng.integers(1, 30))
        v = neumann_v(lambda s, u, r: H @ u, v0, eta, Q, [1] * Q, None)
        bias = np.linalg.norm(v - np.linalg.solve(H, v0))
        bound = (1 - eta * mu) ** (Q + 1) * np.linalg.norm(v0) / mu
        slack = min(slack, float(bound - bias))
    out.append(CheckReport("neumann_bias_bound_slack", -slack, 0.0, 0.0,
                           detail="min over 20 instances of bound - bias (reported negated)"))
    return out


def _neumann_variance(B, seed, trials=10000, eta=0.2, Q=5):
    spec = QuadraticSpec(H=np.array([[2.0]]), J=np.array([[1.0]]))
    oracle = make_stochastic_quadratic(spec, 1000, 0.1, np.random.default_rng(seed + 14),
                                       hessian_noise=1.0)
    x, y = np.zeros(1), np.zeros(1)
    hvp = lambda size, u, r: oracle.hvp_yy_g(x, y, u, batch=oracle.sample_g(size, r))
    rng = np.random.default_rng(seed + 15)
    samples = np.array([neumann_v(hvp, np.array([1.0]), eta, Q, [B] * Q, rng)[0] for _ in range(trials)])
    return float(samples.var())


def check_neumann_variance(seed=0):
    ratio = _neumann_variance(10, seed) / _neumann_variance(20, seed)
    return [CheckReport("neumann_variance_ratio", abs(ratio - 2.0), 0.0, 0.4,
                        detail=f"var(B=10)/var(B=20) = {ratio:.6g}; must lie in [1.6, 2.4]")]


def check_accbio_rate(seed=0):
    out = []
    for kx in (4, 25, 100):
        rng = np.random.default_rng(seed + kx)
        oracle = make_quadratic(random_quadratic_spec(6, 6, rng, mu_y=1, L_y=4, mu_x=1, L_phi=kx,
                                                      homogeneous=True))
        cfg = RunConfig("accbio", K=60, inner=InnerLoopConfig(alpha="auto", D=300),
                        linsys=LinsysConfig("heavy_ball", N=300), x0=rng.standard_normal(6))
        tr = run_accbio(oracle, cfg)
        gaps = np.array(tr.column("subopt"), dtype=float)
        ks = np.arange(10, 61)
        slope = float(np.polyfit(ks, np.log(gaps[10:61]), 1)[0]) if tr.status == "ok" else np.inf
        out.append(CheckReport(f"accbio_rate_kappa{kx}", slope, math.log(1 - 1 / (2 * math.sqrt(kx))), 0.0,
                               detail="least-squares slope of log gap over k = 10..60"))
    return out


def check_warm_start(seed=0):
    oracle = make_quadratic(random_quadratic_spec(4, 4, np.random.default_rng(seed), mu_y=1, L_y=4))
    base = dict(K=20, inner=InnerLoopConfig(alpha=0.25, D=2), linsys=LinsysConfig("cg", N=2))
    warm = run_aid_bio(oracle, RunConfig("aid_bio", warm_start=True, **base))
    cold = run_aid_bio(oracle, RunConfig("aid_bio", warm_start=False, **base))
    diff = np.array(warm.column("tracking_err")[2:]) - np.array(cold.column("tracking_err")[2:])
    return [CheckReport("warm_start_tracking", float(diff.max()), 0.0, 0.0,
                        detail="max over k >= 2 of warm - cold tracking error")]


def check_stocbio(seed=0, seeds=10):
    oracle = make_hyperclean(60, 30, 5, 0.2, 0.05, np.random.default_rng(seed + 1))
    full = StochasticConfig(Q=10, eta=0.1, B=1000, S=1000, D_f=1000, D_g=1000)
    inner = InnerLoopConfig(alpha=0.2, D=5)
    a = run_stocbio(oracle, RunConfig("stocbio", K=20, beta=1.0, inner=inner, stochastic=full))
    b = run_aid_bio(oracle, RunConfig("aid_bio", K=20, beta=1.0, inner=inner,
                                      linsys=LinsysConfig("neumann", eta=0.1, Q=10)))
    gap = max(float(np.abs(u - v).max()) for u, v in zip(a.xs, b.xs))
    out = [CheckReport("stocbio_full_batch", gap, 0.0, 1e-10, detail="max per-iterate deviation")]
    plateau = {}
    for B in (4, 64):
        vals = []
        for s in range(seeds):
            o = make_hyperclean(200, 100, 10, 0.3, 0.05, np.random.default_rng(1000 + seed + s))
            st = StochasticConfig(Q=10, eta=0.1, B=B, S=B, D_f=B, D_g=B)
            tr = run_stocbio(o, RunConfig("stocbio", K=200, beta=50.0, seed=seed + s,
                                          inner=InnerLoopConfig(alpha=0.1, D=5), stochastic=st))
            vals.append(np.mean(tr.column("grad_norm_est")[-10:]) if tr.status == "ok" else np.inf)
        plateau[B] = float(np.mean(vals))
    # strict: B = 64 plateau must sit below B = 4 (tolerance 0, ties fail)
    out.append(CheckReport("stocbio_batch_plateau", plateau[64] - plateau[4], -1e-300, 0.0,
                           detail=f"plateau B=4 {plateau[4]:.6g}, B=64 {plateau[64]:.6g}"))
    return out


def check_maml(seed=0):
    task = MamlTask("quadratic", np.array([[1.0]]), np.array([0.0]))
    g = maml_meta_gradient_exact(TaskSet([task], L=1.0, rho=0.0), np.array([1.0]), 0.1, 2)[1]
    out = [CheckReport("maml_scalar", float(g[0]), 0.6561, 1e-12, "equality")]
    worst = 0.0
    for kind in ("quadratic", "logistic"):
        ts = make_maml_taskset(3, 3, np.random.default_rng(seed + 1), kind=kind)
        w = np.random.default_rng(seed + 2).standard_normal(3)
        t = ts.tasks[0]
        for N in (1, 2, 5, 10):
            a = 0.05

            def unrolled(v):
                for _ in range(N):
                    v = v - a * t.grad(v)
                return t.loss(v)
            worst = max(worst, _rel(task_meta_gradient(t, w, a, N), finite_diff_gradient(unrolled, w)))
    out.append(CheckReport("maml_finite_difference", worst, 0.0, 1e-5))
    L = 1.0
    margin = max(1 / (8 * N * L) * L / (2.0 ** (1 / (2 * N)) - 1) for N in range(1, 65))
    ok = all(stepsize_guard(1 / (8 * N * L), L, N) for N in range(1, 65))
    out.append(CheckReport("maml_stepsize_guard", margin if ok else np.inf, 1.0, 0.0,
                           detail="max over N of alpha L / (2^(1/(2N)) - 1); must be < 1"))
    return out


class _ScalarAnil:
    # L_S = w^2/2 + w phi, L_D = w^2/2 + phi^2/2
    def grad(self, w, phi, split):
        return (w + phi, w) if split == "S" else (w, phi)

    def hvp(self, w, phi, dw, dphi, split):
        return (dw + dphi, dw) if split == "S" else (dw, dphi)


def check_anil(seed=0):
    gw, gphi = anil_partial_gradients(_ScalarAnil(), np.array([1.0]), np.array([1.0]), 0.1, 1)
    out = [CheckReport("anil_scalar_w", float(gw[0]), 0.72, 1e-12, "equality"),
           CheckReport("anil_scalar_phi", float(gphi[0]), 0.92, 1e-12, "equality")]
    worst = 0.0
    for kind in ("linear", "tanh"):
        ts = make_anil_taskset(3, np.random.default_rng(seed + 3), kind=kind)
        r = np.random.default_rng(seed + 4)
        w = 0.5 * r.standard_normal(ts.meta["n_w"])
        phi = 0.5 * r.standard_normal(ts.meta["n_phi"])
        t = ts.tasks[0]
        for N in (1, 3, 5):
            a, b = anil_partial_gradients(t, w, phi, 0.05, N)
            fw = finite_diff_gradient(lambda v: anil_objective(t, v, phi, 0.05, N), w)
            fp = finite_diff_gradient(lambda v: anil_objective(t, w, v, 0.05, N), phi)
            worst = max(worst, _rel(a, fw), _rel(b, fp))
    out.append(CheckReport("anil_finite_difference", worst, 0.0, 1e-5))
    ts = make_anil_taskset(8, np.random.default_rng(seed + 5), kind="linear", reg=1.0)
    finals = []
    for N in (1, 3, 5, 7):
        tr = run_anil(ts, AnilConfig(alpha=0.1, beta_w=0.05, beta_phi=0.05, N=N, B=8, K=100))
        finals.append(tr.records[-1]["grad_norm_w"] if tr.status == "ok" else np.inf)
    rise = float(np.max(np.diff(finals)))
    out.append(CheckReport("anil_n_sweep", rise, 0.0, 0.0,
                           detail="max increase of final ||g_w|| along N = 1, 3, 5, 7: "
                           + ", ".join(f"{v:.4g}" for v in finals)))
    return out


def _hard_runs(spec):
    oracle, meta = make_hard_instance(spec)
    a = 1.0 / oracle.constants.L_inner
    runs = {
        "aid_bio": run_aid_bio(oracle, RunConfig("aid_bio", K=5, inner=InnerLoopConfig(alpha=a, D=3),
                                                 linsys=LinsysConfig("cg", N=2))),
        "itd_bio": run_itd_bio(oracle, RunConfig("itd_bio", K=5, inner=InnerLoopConfig(alpha=a, D=3))),
        "accbio": run_accbio(oracle, RunConfig("accbio", K=5, inner=InnerLoopConfig(alpha="auto", D=3),
                                               linsys=LinsysConfig("heavy_ball", N=3))),
    }
    return oracle, meta, runs


def check_zero_chain(seed=0):
    spec = HardInstanceSpec(d=128)
    _, _, runs = _hard_runs(spec)
    out = []
    for name, tr in runs.items():
        budget = tr.information_budget()
        out.append(subspace_support_check(tr.xs, budget, name=f"zero_chain_{name}"))
        if tr.zs:
            out.append(subspace_support_check(tr.zs, budget, name=f"zero_chain_{name}_output"))
        out.append(lower_bound_check(tr, spec, name=f"lower_bound_{name}"))
    csc = HardInstanceSpec(geometry="CSC", d=128)
    oracle, meta = make_hard_instance(csc)
    g = np.linalg.norm(oracle.quadratic.phi_grad(meta["x_star"]))
    out.append(CheckReport("csc_stationarity", float(g), 0.0, 1e-8))
    return out


def check_negative_control(seed=0):
    """A corrupted iterate must be caught: the report is expected to fail."""
    _, _, runs = _hard_runs(HardInstanceSpec(d=128))
    tr = runs["aid_bio"]
    xs = [x.copy() for x in tr.xs]
    xs[-1][62] = 1.0
    return [subspace_support_check(xs, tr.information_budget(), name="negative_control_x63")]


DETERMINISM_CONFIGS = {
    "stocbio": "[instance]\nkind = hyperclean\nn_train = 60\nn_val = 30\nn_feat = 5\nseed = 3\n"
               "[algorithm]\nname = stocbio\nK = 15\nbeta = 1.0\nalpha = 0.2\nD = 3\nQ = 5\n"
               "eta = 0.1\nB = 2\nS = 8\nD_f = 8\nD_g = 8\nseed = 42\n",
    "maml": "[instance]\nkind = maml_tasks\nn_tasks = 6\n[algorithm]\nname = maml\nK = 15\nN = 3\n"
            "alpha = 0.02\nB = 3\nS = 5\nD = 5\nT = 5\nseed = 7\n",
    "anil": "[instance]\nkind = anil_tasks\ntask_kind = tanh\n[algorithm]\nname = anil\nK = 15\nN = 2\n"
            "B = 3\nseed = 9\n",
    "accbio": "[instance]\nkind = hard_scsc\nd = 32\n[algorithm]\nname = accbio\nK = 10\nD = 3\nN = 3\n",
}


def check_determinism(seed=0):
    from ..cli import run_experiment
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, text in DETERMINISM_CONFIGS.items():
            cfg = Path(tmp) / f"{name}.ini"
            cfg.write_text(text)
            blobs = []
            for rep in range(2):
                d = Path(tmp) / f"{name}_{rep}"
                code = run_experiment(cfg, d, seed if seed else None)
                blobs.append((d / "trace.csv").read_bytes() if code == 0 else None)
            same = blobs[0] is not None and blobs[0] == blobs[1]
            out.append(CheckReport(f"determinism_{name}", 0.0 if same else 1.0, 0.0, 0.0,
                                   detail="byte comparison of two trace.csv files"))
    return out


CHECKS = {
    "oracle_equivalence": check_oracle_equivalence,
    "itd_decay": check_itd_decay,
    "neumann_bias": check_neumann_bias,
    "neumann_variance": check_neumann_variance,
    "accbio_rate": check_accbio_rate,
    "warm_start": check_warm_start,
    "stocbio": check_stocbio,
    "maml": check_maml,
    "anil": check_anil,
    "zero_chain": check_zero_chain,
    "determinism": check_determinism,
    "negative_control": check_negative_control,
}

# the acceptance criteria, in order; negative_control is excluded (it must fail)
DEFAULT_SUITE = tuple(k for k in CHECKS if k != "negative_control")
