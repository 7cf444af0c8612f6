"""Per-sample R_wp rows with per-kind medians, written as TSV."""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .io import read_pdf
from .metrics import rwp


@dataclass
class EvalRow:
    name: str
    kind: str
    rwp: float
    n_atoms: int = -1
    seconds: float = 0.0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    seconds: float = 0.0

    def medians(self):
        """{kind: median R_wp}, plus 'ALL'."""
        out = {}
        for kind in sorted({r.kind for r in self.rows}):
            out[kind] = float(np.median([r.rwp for r in self.rows if r.kind == kind]))
        if self.rows:
            out["ALL"] = float(np.median([r.rwp for r in self.rows]))
        return out

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["name", "kind", "rwp", "n_atoms", "seconds"])
            for r in self.rows:
                w.writerow([r.name, r.kind, f"{r.rwp:.6g}", r.n_atoms, f"{r.seconds:.3f}"])
            w.writerow([])
            w.writerow(["kind", "median_rwp", "count"])
            for kind, med in self.medians().items():
                count = len(self.rows) if kind == "ALL" else sum(r.kind == kind for r in self.rows)
                w.writerow([kind, f"{med:.6g}", count])
            w.writerow(["total_seconds", f"{self.seconds:.3f}"])


def read_report(path) -> EvalReport:
    """Per-sample rows of a written report (summary lines are recomputed, not read)."""
    rep = EvalReport()
    with open(path) as fh:
        lines = fh.read().split("\n\n")[0].splitlines()
    for line in lines[1:]:
        name, kind, value, n, sec = line.split("\t")
        rep.rows.append(EvalRow(name, kind, float(value), int(n), float(sec)))
    return rep


def _pdf_files(d):
    sub = os.path.join(d, "pdf")
    d = sub if os.path.isdir(sub) else d
    return d, sorted(f for f in os.listdir(d) if f.endswith(".gr"))


def evaluate_dirs(pred_dir, truth_dir) -> EvalReport:
    """R_wp of every prediction against the truth curve of the same file name."""
    t0 = time.time()
    truth_dir, names = _pdf_files(truth_dir)
    if not names:
        raise FileNotFoundError(f"{truth_dir}: no .gr files")
    pred_dir, _ = _pdf_files(pred_dir)
    rep = EvalReport()
    for name in names:
        path = os.path.join(pred_dir, name)
        r, obs, head = read_pdf(os.path.join(truth_dir, name))
        stem = os.path.splitext(name)[0]
        if not os.path.exists(path):
            # a curve whose candidates were all dropped counts as a miss
            rep.rows.append(EvalRow(stem, head.get("kind", "UNK"), float("inf"), -1, 0.0))
            continue
        _, calc, phead = read_pdf(path, r)
        rep.rows.append(EvalRow(stem, head.get("kind", "UNK"), rwp(obs, calc),
                                int(phead.get("natoms", head.get("natoms", -1))),
                                float(phead.get("seconds", 0.0))))
    rep.seconds = time.time() - t0
    return rep
