from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

BASE_COLUMNS = ["k", "grad_norm_est", "grad_norm_true", "subopt", "tracking_err",
                "grads_cum", "hvps_cum", "jvps_cum", "wall_ns"]


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass
class Trace:
    """Per-iteration records of a run plus its header and iterate history."""
    header: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    extra_columns: list = field(default_factory=list)
    xs: list = field(default_factory=list)  # points where estimates were evaluated
    zs: list = field(default_factory=list)  # reported output sequence, when it differs
    ys: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def diverged(self):
        return self.status == "diverged"

    def column(self, name):
        return [r.get(name) for r in self.records]

    def information_budget(self):
        """M(k) = k + (sequential oracle depth of estimates 0..k-1) + 2."""
        out, acc = [], 0
        for k in range(len(self.records)):
            out.append(k + acc + 2)
            if k < len(self.chains):
                acc += self.chains[k]
        return out

    def to_csv(self, path=None, wall_clock=False):
        buf = io.StringIO()
        for key, val in self.header.items():
            buf.write(f"# {key}={val}\n")
        if self.diverged:
            buf.write(f"# status=diverged\n# failure={self.message}\n")
        cols = BASE_COLUMNS + self.extra_columns
        buf.write(",".join(cols) + "\n")
        for rec in self.records:
            row = []
            for c in cols:
                v = rec.get(c)
                if c == "wall_ns" and not wall_clock:
                    v = None
                row.append(fmt(v))
            buf.write(",".join(row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def read_trace_csv(path):
    """Parse a trace CSV back into (header dict, column names, rows of floats/None)."""
    header, rows, cols = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                header[k] = v
            elif cols is None:
                cols = line.split(",")
            else:
                rows.append([None if s == "" else float(s) for s in line.split(",")])
    return header, cols, rows
