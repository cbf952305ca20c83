"""Experiment driver: ``bilevel run|verify|sweep --config PATH [--out DIR] [--seed U64]``.

Config files are INI with sections [instance], [algorithm], [verify],
[output] and optionally [sweep]. Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .hypergrad import InnerLoopConfig
from .meta import AnilConfig, MamlConfig, run_anil, run_maml
from .optimizers import (RUNNERS, AccelConfig, LinsysConfig, RunConfig, StochasticConfig)
from .optimizers.trace import fmt
from .problems import (HardInstanceSpec, make_anil_taskset, make_hard_instance, make_hyperclean,
                       make_maml_taskset, make_multitask_embedding, make_quadratic,
                       make_stochastic_quadratic, random_quadratic_spec)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _auto(s):
    s = str(s).strip()
    return "auto" if s.lower() == "auto" else float(s)


def _u64(s):
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _vector(s):
    s = str(s).strip()
    return "" if s == "" else ",".join(repr(float(t)) for t in s.split(","))


# key -> (parser, default); defaults are part of the resolved config and its hash
INSTANCE_KEYS = {
    "quadratic": {"p": (int, 4), "q": (int, 4), "mu_y": (float, 1.0), "L_y": (float, 4.0),
                  "mu_x": (float, 1.0), "L_phi": (float, 10.0), "coupling": (float, 1.0),
                  "homogeneous": (_bool, False)},
    "hard_scsc": {"d": (int, 64), "mu_x": (float, 1.0), "mu_y": (float, 1.0), "L_x": (float, 5.0),
                  "L_y": (float, 1.0), "Ltilde_y": (float, 5.0), "Ltilde_xy": (float, 1.0),
                  "Lbar_xy": (float, 0.0)},
    "hyperclean": {"n_train": (int, 200), "n_val": (int, 100), "n_feat": (int, 10),
                   "corruption_p": (float, 0.3), "C_r": (float, 0.05)},
    "multitask": {"m": (int, 4), "task_dim": (int, 3), "reg_mu": (float, 1.0), "n_in": (int, 6)},
    "maml_tasks": {"task_kind": (str, "quadratic"), "n_tasks": (int, 8), "dim": (int, 3),
                   "n_samples": (int, 40), "reg": (float, 0.1), "mode": (str, "resampling")},
    "anil_tasks": {"task_kind": (str, "linear"), "n_tasks": (int, 8), "k": (int, 4), "n_in": (int, 5),
                   "h": (int, 8), "n_samples": (int, 20), "reg": (float, 0.5)},
}
INSTANCE_KEYS["stochastic_quadratic"] = dict(INSTANCE_KEYS["quadratic"], n_samples=(int, 1000),
                                             noise=(float, 0.3))
INSTANCE_KEYS["hard_csc"] = dict(INSTANCE_KEYS["hard_scsc"], B=(float, 1.0))
del INSTANCE_KEYS["hard_csc"]["mu_x"]

_OUTER = {"K": (int, 10), "beta": (_auto, "auto"), "x0": (_vector, ""), "seed": (_u64, 0)}
_INNER = {"alpha": (_auto, "auto"), "D": (int, 10)}
ALGORITHM_KEYS = {
    "aid_bio": dict(_OUTER, **_INNER, inner_method=(str, "GD"), solver=(str, "cg"), N=(int, 10),
                    hb_lambda=(_auto, "auto"), hb_theta=(_auto, "auto"), eta=(_auto, "auto"),
                    Q=(int, 10), warm_start=(_bool, True)),
    "itd_bio": dict(_OUTER, **_INNER, warm_start=(_bool, True)),
    "stocbio": dict(_OUTER, **_INNER, Q=(int, 10), eta=(_auto, "auto"), B=(float, 4.0), S=(int, 16),
                    D_f=(int, 16), D_g=(int, 16), warm_start=(_bool, True)),
    "accbio": dict(_OUTER, **_INNER, N=(int, 10), hb_lambda=(_auto, "auto"), hb_theta=(_auto, "auto"),
                   mu_x=(_auto, "auto"), L_phi=(_auto, "auto")),
    "accbio_bg": dict(_OUTER, **_INNER, N=(int, 10), hb_lambda=(_auto, "auto"),
                      hb_theta=(_auto, "auto"), mu_x=(_auto, "auto"), L_phi=(_auto, "auto"),
                      accel_alpha=(_auto, "auto"), warm_start=(_bool, True)),
    "maml": {"K": (int, 10), "seed": (_u64, 0), "N": (int, 2), "alpha": (float, 0.01),
             "C_beta": (_auto, "auto"), "B": (int, 4), "S": (int, 10), "D": (int, 10), "T": (int, 10),
             "B_prime": (int, 4), "D_L": (int, 10), "b": (float, 0.0)},
    "anil": {"K": (int, 10), "seed": (_u64, 0), "N": (int, 1), "alpha": (float, 0.1),
             "beta_w": (float, 0.05), "beta_phi": (float, 0.05), "B": (int, 4), "init_seed": (int, 0)},
}
VERIFY_KEYS = {"checks": (str, ""), "seed": (_u64, 0)}
OUTPUT_KEYS = {"dir": (str, "out"), "wall_clock": (_bool, False)}
SWEEP_KEYS = {"key": (str, ""), "values": (str, "")}


def _resolve_section(raw, schema, section):
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    out = {}
    for key, (parse, default) in schema.items():
        try:
            out[key] = parse(raw[key]) if key in raw else default
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    return out


def load_config(path, seed=None, overrides=None):
    """Parse and resolve a config file into {section: {key: value}}."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        raw.setdefault(sec, {})[key] = value
    unknown = sorted(set(raw) - {"instance", "algorithm", "verify", "output", "sweep"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    cfg = {}
    inst = dict(raw.get("instance", {}))
    kind = inst.pop("kind", "quadratic")
    if kind not in INSTANCE_KEYS:
        raise ConfigError(f"unknown instance kind {kind!r}")
    cfg["instance"] = {"kind": kind, "seed": _u64(inst.pop("seed", 0)),
                       **_resolve_section(inst, INSTANCE_KEYS[kind], "instance")}
    alg = dict(raw.get("algorithm", {}))
    name = alg.pop("name", "aid_bio")
    if name not in ALGORITHM_KEYS:
        raise ConfigError(f"unknown algorithm {name!r}")
    cfg["algorithm"] = {"name": name, **_resolve_section(alg, ALGORITHM_KEYS[name], "algorithm")}
    cfg["verify"] = _resolve_section(raw.get("verify", {}), VERIFY_KEYS, "verify")
    cfg["output"] = _resolve_section(raw.get("output", {}), OUTPUT_KEYS, "output")
    if "sweep" in raw:
        cfg["sweep"] = _resolve_section(raw["sweep"], SWEEP_KEYS, "sweep")
    if seed is not None:
        cfg["algorithm"]["seed"] = _u64(seed)
        cfg["verify"]["seed"] = _u64(seed)
    return cfg


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_instance(icfg):
    kind = icfg["kind"]
    rng = np.random.default_rng(icfg["seed"])
    p = {k: v for k, v in icfg.items() if k not in ("kind", "seed")}
    if kind in ("quadratic", "stochastic_quadratic"):
        spec = random_quadratic_spec(p["p"], p["q"], rng, mu_y=p["mu_y"], L_y=p["L_y"], mu_x=p["mu_x"],
                                     L_phi=p["L_phi"], coupling=p["coupling"],
                                     homogeneous=p["homogeneous"])
        if kind == "quadratic":
            return make_quadratic(spec, descriptor=f"quadratic_p{p['p']}_q{p['q']}")
        return make_stochastic_quadratic(spec, p["n_samples"], p["noise"], rng,
                                         hessian_noise=0.5 * p["mu_y"])
    if kind in ("hard_scsc", "hard_csc"):
        geo = "SCSC" if kind == "hard_scsc" else "CSC"
        return make_hard_instance(HardInstanceSpec(geometry=geo, **p))[0]
    if kind == "hyperclean":
        return make_hyperclean(p["n_train"], p["n_val"], p["n_feat"], p["corruption_p"], p["C_r"], rng)
    if kind == "multitask":
        return make_multitask_embedding(p["m"], p["task_dim"], p["reg_mu"], rng, n_in=p["n_in"])
    if kind == "maml_tasks":
        return make_maml_taskset(p["n_tasks"], p["dim"], rng, kind=p["task_kind"],
                                 n_samples=p["n_samples"], reg=p["reg"], mode=p["mode"])
    return make_anil_taskset(p["n_tasks"], rng, kind=p["task_kind"], k=p["k"], n_in=p["n_in"],
                             h=p["h"], n_samples=p["n_samples"], reg=p["reg"])


def _inner_alpha(oracle, a):
    if a != "auto":
        return a
    L = oracle.constants.inner_smoothness
    if L is None:
        raise ConfigError("alpha = auto needs a known inner smoothness constant")
    return 1.0 / L


def build_run_config(a, oracle):
    name = a["name"]
    x0 = None if a["x0"] == "" else np.array([float(t) for t in a["x0"].split(",")])
    if x0 is not None and len(x0) == 1:
        x0 = np.full(oracle.dim_x, x0[0])
    common = dict(algorithm=name, K=a["K"], beta=a["beta"], seed=a["seed"], x0=x0,
                  warm_start=a.get("warm_start", True))
    if name in ("accbio", "accbio_bg"):
        inner = InnerLoopConfig(alpha=a["alpha"], D=a["D"], method="AGD")
        ls = LinsysConfig("heavy_ball", N=a["N"], hb_lambda=a["hb_lambda"], hb_theta=a["hb_theta"])
        acc = AccelConfig(mu_x=a["mu_x"], L_phi=a["L_phi"], alpha=a.get("accel_alpha", "auto"))
        return RunConfig(inner=inner, linsys=ls, accel=acc, **common)
    alpha = _inner_alpha(oracle, a["alpha"])
    if name == "itd_bio":
        return RunConfig(inner=InnerLoopConfig(alpha=alpha, D=a["D"]), **common)
    if name == "aid_bio":
        eta = alpha if a["eta"] == "auto" else a["eta"]
        ls = LinsysConfig(a["solver"], N=a["N"], hb_lambda=a["hb_lambda"], hb_theta=a["hb_theta"],
                          eta=eta, Q=a["Q"])
        return RunConfig(inner=InnerLoopConfig(alpha=alpha, D=a["D"], method=a["inner_method"]),
                         linsys=ls, **common)
    eta = alpha if a["eta"] == "auto" else a["eta"]
    st = StochasticConfig(Q=a["Q"], eta=eta, B=a["B"], S=a["S"], D_f=a["D_f"], D_g=a["D_g"])
    return RunConfig(inner=InnerLoopConfig(alpha=alpha, D=a["D"], method="SGD", batch=a["S"]),
                     stochastic=st, **common)


def execute(cfg):
    """Build the instance and run the configured algorithm; returns the trace."""
    a = cfg["algorithm"]
    inst = build_instance(cfg["instance"])
    name = a["name"]
    if name == "maml":
        if cfg["instance"]["kind"] != "maml_tasks":
            raise ConfigError("maml needs instance kind maml_tasks")
        mc = MamlConfig(N=a["N"], alpha=a["alpha"], C_beta=None if a["C_beta"] == "auto" else a["C_beta"],
                        B=a["B"], S=a["S"], D=a["D"], T=a["T"], B_prime=a["B_prime"], D_L=a["D_L"],
                        mode=inst.mode, K=a["K"], seed=a["seed"], b=a["b"])
        return run_maml(inst, mc)
    if name == "anil":
        if cfg["instance"]["kind"] != "anil_tasks":
            raise ConfigError("anil needs instance kind anil_tasks")
        ac = AnilConfig(alpha=a["alpha"], beta_w=a["beta_w"], beta_phi=a["beta_phi"], N=a["N"],
                        B=a["B"], K=a["K"], seed=a["seed"], init_seed=a["init_seed"])
        return run_anil(inst, ac)
    if cfg["instance"]["kind"] in ("maml_tasks", "anil_tasks"):
        raise ConfigError(f"{name} needs a bilevel oracle instance, not a task set")
    rc = build_run_config(a, inst)
    if name == "stocbio":
        return RUNNERS[name](inst, rc, np.random.default_rng(a["seed"]))
    return RUNNERS[name](inst, rc)


def _out_dir(cfg, out):
    d = Path(out if out is not None else cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_trace(trace, cfg, path):
    trace.header = {"config_hash": config_hash(cfg), "seed": cfg["algorithm"]["seed"],
                    "instance": f"{cfg['instance']['kind']}:{trace.header.get('instance', '')}",
                    **{k: v for k, v in trace.header.items() if k not in ("seed", "instance")}}
    trace.to_csv(path, wall_clock=cfg["output"]["wall_clock"])


def run_experiment(config, out=None, seed=None, err=None):
    try:
        cfg = load_config(config, seed)
        d = _out_dir(cfg, out)
        trace = execute(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=err or sys.stderr)
        return EXIT_CONFIG
    _write_trace(trace, cfg, d / "trace.csv")
    if trace.diverged:
        print(f"diverged: {trace.message}", file=err or sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def run_verify(config, out=None, seed=None, err=None):
    from .verify.suite import CHECKS
    try:
        cfg = load_config(config, seed)
        names = [c.strip() for c in cfg["verify"]["checks"].split(",") if c.strip()]
        if names == ["default"]:
            from .verify.suite import DEFAULT_SUITE
            names = list(DEFAULT_SUITE)
        bad = [n for n in names if n not in CHECKS]
        if bad:
            raise ConfigError(f"unknown check(s): {', '.join(bad)}")
        d = _out_dir(cfg, out)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=err or sys.stderr)
        return EXIT_CONFIG
    reports = []
    for n in names:
        reports.extend(CHECKS[n](cfg["verify"]["seed"]))
    lines = [f"# config_hash={config_hash(cfg)}", f"# seed={cfg['verify']['seed']}"]
    lines += [r.to_line() for r in reports]
    (d / "report.tsv").write_text("\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


SWEEP_COLUMNS = ["value", "final_grad_norm", "final_subopt", "total_hvps", "final_est_err",
                 "final_grad_norm_w"]


def _summary(trace):
    last = trace.records[-1] if trace.records else {}
    g = last.get("grad_norm_true")
    return [g if g is not None else last.get("grad_norm_est"), last.get("subopt"),
            last.get("hvps_cum"), last.get("est_err"), last.get("grad_norm_w")]


def run_sweep(config, out=None, seed=None, err=None):
    try:
        cfg = load_config(config, seed)
        sw = cfg.get("sweep")
        if not sw or not sw["key"]:
            raise ConfigError("sweep needs [sweep] key and values")
        keys = [k.strip() for k in sw["key"].split(",") if k.strip()]
        if len(keys) != 1:
            raise ConfigError(f"exactly one sweep key allowed, got {keys}")
        values = [v.strip() for v in sw["values"].split(";" if ";" in sw["values"] else ",") if v.strip()]
        if not values:
            raise ConfigError("sweep values list is empty")
        key = keys[0]
        if key.partition(".")[0] not in ("instance", "algorithm") or "." not in key:
            raise ConfigError(f"sweep key must look like algorithm.NAME or instance.NAME, got {key!r}")
        cfgs = [load_config(config, seed, {key: v}) for v in values]
        d = _out_dir(cfg, out)
        traces = [execute(c) for c in cfgs]
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=err or sys.stderr)
        return EXIT_CONFIG
    lines = [f"# config_hash={config_hash(cfg)}", f"# sweep_key={key}", ",".join(SWEEP_COLUMNS)]
    for v, tr in zip(values, traces):
        lines.append(",".join([v] + [fmt(x) for x in _summary(tr)]))
    (d / "sweep.csv").write_text("\n".join(lines) + "\n")
    return EXIT_DIVERGED if any(t.diverged for t in traces) else EXIT_OK


def main(argv=None):
    ap = argparse.ArgumentParser(prog="bilevel", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["run", "verify", "sweep"])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", default=None)
    args = ap.parse_args(argv)
    fn = {"run": run_experiment, "verify": run_verify, "sweep": run_sweep}[args.command]
    if args.seed is not None:
        try:
            _u64(args.seed)
        except ValueError as exc:
            print(f"config error: --seed: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    return fn(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
