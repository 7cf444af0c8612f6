"""Plain-text file formats: XYZ structures, two-column PDFs, TSV manifests."""
from __future__ import annotations

import os

import numpy as np

from ..structgen import AtomCloud

MANIFEST_FIELDS = ("path", "kind", "natoms", "split")


def write_xyz(path, cloud: AtomCloud, comment=None):
    lines = [str(cloud.n_atoms), comment or f"kind={cloud.kind} a={cloud.lattice_constant:.6f}"]
    for x, y, z in cloud.coords:
        lines.append(f"{cloud.element} {x:.6f} {y:.6f} {z:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_xyz(path) -> AtomCloud:
    with open(path) as fh:
        lines = fh.read().splitlines()
    n = int(lines[0].split()[0])
    meta = dict(tok.split("=", 1) for tok in lines[1].split() if "=" in tok)
    rows = [ln.split() for ln in lines[2:2 + n]]
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} atoms, found {len(rows)}")
    coords = np.array([[float(v) for v in r[1:4]] for r in rows])
    element = rows[0][0] if rows else "Au"
    return AtomCloud(coords, meta.get("kind", "UNK").upper(), float(meta.get("a", "nan")), element)


def write_pdf(path, r, g, header=None):
    """Two whitespace-separated columns ``r G(r)`` after ``#`` comment lines.

    ``header`` is a mapping written as ``# key=value`` lines.
    """
    with open(path, "w") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        for ri, gi in zip(r, g):
            fh.write(f"{ri:.6f} {gi:.10e}\n")


def read_pdf(path, r_grid=None):
    """Read a two-column PDF; returns (r, g, header).

    If ``r_grid`` is given the curve is linearly resampled onto it; the input
    grid may be any monotone sequence (increasing or decreasing).
    """
    header, rows = {}, []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                body = s.lstrip("#").strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            parts = s.split()
            rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    r, g = data[:, 0], data[:, 1]
    dr = np.diff(r)
    if np.all(dr < 0):
        r, g = r[::-1], g[::-1]
    elif not np.all(dr > 0):
        raise ValueError(f"{path}: r column is not strictly monotone")
    if r_grid is not None:
        # the file stores r to 1e-6, so snap grid ends that overshoot by rounding
        rq = np.asarray(r_grid, dtype=float)
        rq = np.where(np.abs(rq - r[0]) < 1e-5, r[0], np.where(np.abs(rq - r[-1]) < 1e-5, r[-1], rq))
        g = np.interp(rq, r, g, left=0.0, right=0.0)
        r = np.asarray(r_grid, dtype=float)
    return r, g, header


def write_manifest(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write("\t".join(str(rec[k]) for k in MANIFEST_FIELDS) + "\n")


def read_manifest(path):
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            path_, kind, natoms, split = line.rstrip("\n").split("\t")
            records.append({"path": path_, "kind": kind, "natoms": int(natoms), "split": split})
    return records


def resolve(base, rel):
    return rel if os.path.isabs(rel) else os.path.join(base, rel)
