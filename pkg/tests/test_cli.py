import pathlib
import subprocess
import sys

import pytest

from bilevel.cli import config_hash, load_config, main
from bilevel.optimizers import read_trace_csv
from bilevel.optimizers.trace import BASE_COLUMNS

MINIMAL = """[instance]
kind = quadratic
p = 2
q = 2
[algorithm]
name = aid_bio
K = 10
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_run(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    header, cols, rows = read_trace_csv(tmp_path / "o" / "trace.csv")
    assert cols == BASE_COLUMNS
    assert len(rows) == 11
    assert {"config_hash", "seed", "instance"} <= set(header)
    assert header["config_hash"] == config_hash(load_config(cfg))


def test_run_byte_identical(tmp_path):
    cfg = write(tmp_path, MINIMAL.replace("quadratic\n", "stochastic_quadratic\n").replace(
        "name = aid_bio", "name = stocbio\nbeta = 0.05\nB = 2\nS = 4\nD_f = 4\nD_g = 4\nQ = 4\neta = 0.1"))
    for d in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / d), "--seed", "17"]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    main(["run", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "18"])
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()


def test_seed_enters_hash(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    assert config_hash(load_config(cfg, seed=1)) != config_hash(load_config(cfg, seed=2))


@pytest.mark.parametrize("text", [
    MINIMAL + "bogus = 1\n",
    MINIMAL.replace("aid_bio", "nope"),
    MINIMAL.replace("quadratic", "triangle"),
    MINIMAL + "[extra]\na = 1\n",
    MINIMAL.replace("K = 10", "K = ten"),
])
def test_config_errors_exit_1(tmp_path, text, capsys):
    assert main(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_missing_file_and_bad_seed(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.ini")]) == 1
    assert main(["run", "--config", write(tmp_path, MINIMAL), "--seed", "-3"]) == 1


def test_divergence_exit_2(tmp_path):
    cfg = write(tmp_path, MINIMAL.replace("K = 10", "K = 60\nbeta = 100"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    header, _, rows = read_trace_csv(tmp_path / "o" / "trace.csv")
    assert header["status"] == "diverged" and rows


@pytest.mark.parametrize("kind,algo", [
    ("hard_scsc", "itd_bio"), ("hard_csc", "aid_bio"), ("quadratic", "accbio"),
    ("quadratic", "accbio_bg"), ("multitask", "aid_bio"),
])
def test_instance_algorithm_pairs(tmp_path, kind, algo):
    text = f"[instance]\nkind = {kind}\n" + ("d = 16\n" if kind.startswith("hard") else "")
    text += f"[algorithm]\nname = {algo}\nK = 3\nD = 3\n"
    if kind == "multitask":
        text += "beta = 0.05\nalpha = 0.1\n"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0


def test_meta_runs(tmp_path):
    m = "[instance]\nkind = maml_tasks\ntask_kind = logistic\n[algorithm]\nname = maml\nK = 3\n"
    assert main(["run", "--config", write(tmp_path, m), "--out", str(tmp_path / "m")]) == 0
    _, cols, _ = read_trace_csv(tmp_path / "m" / "trace.csv")
    assert cols == BASE_COLUMNS + ["beta", "L_hat"]
    a = "[instance]\nkind = anil_tasks\n[algorithm]\nname = anil\nK = 3\n"
    assert main(["run", "--config", write(tmp_path, a, "a.ini"), "--out", str(tmp_path / "a")]) == 0
    bad = "[instance]\nkind = quadratic\n[algorithm]\nname = maml\n"
    assert main(["run", "--config", write(tmp_path, bad, "b.ini"), "--out", str(tmp_path / "b")]) == 1


def test_verify_exit_codes(tmp_path):
    empty = write(tmp_path, "[verify]\nchecks =\n", "e.ini")
    assert main(["verify", "--config", empty, "--out", str(tmp_path / "e")]) == 0
    lines = (tmp_path / "e" / "report.tsv").read_text().splitlines()
    assert all(l.startswith("#") for l in lines)
    neg = write(tmp_path, "[verify]\nchecks = negative_control\n", "n.ini")
    assert main(["verify", "--config", neg, "--out", str(tmp_path / "n")]) == 3
    ok = write(tmp_path, "[verify]\nchecks = neumann_bias, maml\n", "ok.ini")
    assert main(["verify", "--config", ok, "--out", str(tmp_path / "ok")]) == 0
    rows = [l.split("\t") for l in (tmp_path / "ok" / "report.tsv").read_text().splitlines()
            if not l.startswith("#")]
    assert rows and all(r[1] == "pass" and len(r) == 5 for r in rows)
    unknown = write(tmp_path, "[verify]\nchecks = nope\n", "u.ini")
    assert main(["verify", "--config", unknown, "--out", str(tmp_path / "u")]) == 1


def _sweep_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    cols = lines[0].split(",")
    return cols, [dict(zip(cols, l.split(","))) for l in lines[1:]]


def test_sweep_itd_depth(tmp_path):
    cfg = write(tmp_path, "[instance]\nkind = quadratic\nseed = 2\n[algorithm]\nname = itd_bio\nK = 3\n"
                          "[sweep]\nkey = algorithm.D\nvalues = 1, 2, 4, 8, 16\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    _, rows = _sweep_rows(tmp_path / "s" / "sweep.csv")
    errs = [float(r["final_est_err"]) for r in rows]
    assert len(rows) == 5 and all(b < a for a, b in zip(errs, errs[1:]))


def test_sweep_single_value_matches_run(tmp_path):
    cfg = write(tmp_path, MINIMAL + "[sweep]\nkey = algorithm.N\nvalues = 3\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    _, rows = _sweep_rows(tmp_path / "s" / "sweep.csv")
    run_cfg = write(tmp_path, MINIMAL.replace("K = 10", "K = 10\nN = 3"), "r.ini")
    main(["run", "--config", run_cfg, "--out", str(tmp_path / "r")])
    _, cols, trace = read_trace_csv(tmp_path / "r" / "trace.csv")
    assert len(rows) == 1
    assert float(rows[0]["final_grad_norm"]) == trace[-1][cols.index("grad_norm_true")]
    assert float(rows[0]["total_hvps"]) == trace[-1][cols.index("hvps_cum")]


def test_sweep_anil_n(tmp_path):
    cfg = write(tmp_path, "[instance]\nkind = anil_tasks\nseed = 5\nreg = 1.0\nn_tasks = 8\n"
                          "[algorithm]\nname = anil\nK = 100\nB = 8\nalpha = 0.1\n"
                          "[sweep]\nkey = algorithm.N\nvalues = 1, 3, 5, 7, 9\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    _, rows = _sweep_rows(tmp_path / "s" / "sweep.csv")
    g = [float(r["final_grad_norm_w"]) for r in rows]
    assert all(b <= a for a, b in zip(g, g[1:]))


def test_sweep_rejects_two_keys(tmp_path):
    cfg = write(tmp_path, MINIMAL + "[sweep]\nkey = algorithm.N, algorithm.D\nvalues = 1, 2\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 1


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    proc = subprocess.run([sys.executable, "-m", "bilevel", "run", "--config", cfg, "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "trace.csv").exists()


CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name,command,code", [
    ("quadratic_aid.ini", "run", 0),
    ("hyperclean_stocbio.ini", "run", 0),
    ("hard_accbio.ini", "run", 0),
    ("itd_depth_sweep.ini", "sweep", 0),
    ("negative_control.ini", "verify", 3),
])
def test_shipped_configs(tmp_path, name, command, code):
    assert main([command, "--config", str(CONFIGS / name), "--out", str(tmp_path)]) == code
