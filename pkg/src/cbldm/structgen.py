"""Mono-metallic cluster generation and labelled dataset assembly."""
from __future__ import annotations

import configparser
import hashlib
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .nn.rng import RngStream

KINDS = ("FCC", "BCC", "SC", "HCP", "ICO", "DEC", "OCT")
LATTICE_KINDS = ("FCC", "BCC", "SC", "HCP")

_BASIS = {
    "FCC": np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]]),
    "BCC": np.array([[0, 0, 0], [0.5, 0.5, 0.5]]),
    "SC": np.array([[0, 0, 0]]),
}

# Offsets (fractional, conventional cell) that give distinct high-symmetry cuts.
LATTICE_OFFSETS = {
    "FCC": [(0, 0, 0), (0.5, 0, 0), (0.25, 0.25, 0.25)],
    "BCC": [(0, 0, 0), (0.5, 0, 0), (0.5, 0.25, 0)],
    "SC": [(0, 0, 0), (0.5, 0.5, 0.5), (0.5, 0, 0)],
    "HCP": [(0, 0, 0), (1 / 3, 1 / 3, 0.25), (2 / 3, 2 / 3, 0.25)],
}


class ClusterSizeError(ValueError):
    """Cluster violates the configured atom-count bounds."""


@dataclass
class AtomCloud:
    coords: np.ndarray
    kind: str
    lattice_constant: float
    element: str = "Au"

    @property
    def n_atoms(self):
        return len(self.coords)

    def distances(self):
        """Sorted unique-pair distances."""
        i, j = np.triu_indices(self.n_atoms, k=1)
        return np.sort(np.linalg.norm(self.coords[i] - self.coords[j], axis=1))


def nn_to_lattice_constant(kind, d_nn):
    """Conventional lattice constant for a target nearest-neighbour distance."""
    if kind in ("FCC", "ICO", "DEC", "OCT"):
        return d_nn * np.sqrt(2.0)
    if kind == "BCC":
        return 2.0 * d_nn / np.sqrt(3.0)
    return d_nn  # SC, HCP (hexagonal a)


def canonical_order(coords):
    """Center on the centroid and order atoms by radius, then z, y, x."""
    coords = np.asarray(coords, dtype=np.float64)
    coords = coords - coords.mean(axis=0)
    r = np.round(np.linalg.norm(coords, axis=1), 6)
    keys = np.round(coords, 6)
    order = np.lexsort((keys[:, 0], keys[:, 1], keys[:, 2], r))
    return coords[order]


def _unique_points(points, decimals=6):
    _, idx = np.unique(np.round(points, decimals), axis=0, return_index=True)
    return points[np.sort(idx)]


def _lattice_points(kind, a, radius, offset):
    if kind == "HCP":
        c = a * np.sqrt(8.0 / 3.0)
        cell = np.array([[a, 0, 0], [a / 2, a * np.sqrt(3) / 2, 0], [0, 0, c]])
        basis = np.array([[0, 0, 0], [1 / 3, 1 / 3, 0.5]])
    else:
        cell = a * np.eye(3)
        basis = _BASIS[kind]
    center = np.asarray(offset, dtype=float) @ cell
    reach = int(np.ceil(radius / min(a, np.linalg.norm(cell[2])))) + 2
    rng = np.arange(-reach, reach + 1)
    grid = np.array(list(itertools.product(rng, rng, rng)), dtype=float)
    pts = (grid[:, None, :] + basis[None, :, :]).reshape(-1, 3) @ cell
    keep = np.linalg.norm(pts - center, axis=1) <= radius + 1e-9
    return pts[keep]


def _icosahedron_vertices():
    phi = (1 + np.sqrt(5)) / 2
    v = []
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            v += [(0, s1, s2 * phi), (s1, s2 * phi, 0), (s2 * phi, 0, s1)]
    v = np.array(v, dtype=float)
    return v / np.linalg.norm(v[0])


def _icosahedron_faces(v):
    d = np.linalg.norm(v[:, None] - v[None], axis=2)
    edge = np.min(d[d > 1e-9])
    faces = []
    for i, j, k in itertools.combinations(range(len(v)), 3):
        if all(abs(x - edge) < 1e-9 for x in (d[i, j], d[j, k], d[i, k])):
            faces.append((i, j, k))
    return faces


def mackay_icosahedron(shells, d_nn):
    """Mackay icosahedron with ``shells`` closed shells around a central atom."""
    v = _icosahedron_vertices()
    faces = _icosahedron_faces(v)
    pts = [np.zeros(3)]
    for k in range(1, shells + 1):
        for a, b, c in faces:
            A, B, C = v[a] * k, v[b] * k, v[c] * k
            for i in range(k + 1):
                for j in range(k + 1 - i):
                    pts.append(A + (B - A) * i / k + (C - A) * j / k)
    return _unique_points(np.array(pts)) * d_nn


def decahedron(p, q, r, d_nn):
    """Pentagonal (Marks) decahedron.

    ``p`` atoms on the (100) facets normal to the 5-fold axis, ``q`` atoms
    along the axis direction of those facets, ``r`` the Marks re-entrance depth.
    """
    b = d_nn
    ring = b * np.sqrt(3.0) / 2.0
    ang = np.pi / 2 + 2 * np.pi * np.arange(5) / 5
    verts = ring * np.stack([np.cos(ang), np.sin(ang), np.zeros(5)], axis=1)
    h = p + q + 2 * r - 1
    g = h - q + 1
    pts = [np.array([0.0, 0.0, j * b - (h - 1) * b / 2]) for j in range(h)]
    for n in range(1, min(h, g)):
        for m in range(5):
            v1, v2 = verts[m - 1], verts[m]
            for i in range(n):
                if n - i < g - r and i < g - r:
                    for j in range(h - n):
                        pts.append((n - i) * v1 + i * v2 + np.array([0, 0, j * b - (h - n - 1) * b / 2]))
    return np.array(pts)


def octahedron(m, d_nn):
    """Regular fcc octahedron with ``m`` atoms along each edge."""
    K = m - 1
    rng = np.arange(-K, K + 1)
    grid = np.array(list(itertools.product(rng, rng, rng)))
    keep = (np.abs(grid).sum(axis=1) <= K) & ((grid.sum(axis=1) - K) % 2 == 0)
    return grid[keep] * (d_nn / np.sqrt(2.0))


def generate_cluster(kind, size_params, lattice_constant=4.0, min_atoms=5, max_atoms=256,
                     element="Au") -> AtomCloud:
    """Build one cluster of ``kind``.

    ``size_params`` per kind: lattice kinds take ``radius`` (Å) and optional
    fractional ``offset`` of the carving centre; ICO ``shells``; DEC ``p``,
    ``q``, ``r``; OCT ``m``. For ICO/DEC/OCT the lattice constant is the fcc
    cubic constant, so the nearest-neighbour distance is a/sqrt(2).
    """
    kind = kind.upper()
    a = float(lattice_constant)
    if kind in LATTICE_KINDS:
        radius = float(size_params["radius"])
        if radius <= 0:
            raise ValueError("cutoff radius must be positive")
        pts = _lattice_points(kind, a, radius, size_params.get("offset", (0, 0, 0)))
    elif kind == "ICO":
        shells = int(size_params["shells"])
        if shells < 1:
            raise ValueError("ICO needs at least one shell")
        pts = mackay_icosahedron(shells, a / np.sqrt(2))
    elif kind == "DEC":
        p, q, r = (int(size_params[k]) for k in ("p", "q", "r"))
        if p < 1 or q < 1 or r < 0:
            raise ValueError("DEC needs p >= 1, q >= 1, r >= 0")
        pts = decahedron(p, q, r, a / np.sqrt(2))
    elif kind == "OCT":
        m = int(size_params["m"])
        if m < 1:
            raise ValueError("OCT needs m >= 1")
        pts = octahedron(m, a / np.sqrt(2))
    else:
        raise ValueError(f"unknown structure kind {kind!r}")

    pts = _unique_points(np.asarray(pts, dtype=float), decimals=8)
    n = len(pts)
    if not min_atoms <= n <= max_atoms:
        raise ClusterSizeError(f"{kind} cluster has {n} atoms, outside [{min_atoms}, {max_atoms}]")
    cloud = AtomCloud(canonical_order(pts), kind, a, element)
    if n > 1 and cloud.distances()[0] <= 0.5:
        raise ValueError(f"{kind} cluster has interatomic distance <= 0.5 Å")
    return cloud


# ------------------------------------------------------------------ datasets

def _parse_range(text, cast=float):
    parts = [cast(x) for x in str(text).replace(",", " ").split()]
    return (parts[0], parts[-1])


@dataclass
class DatasetSpec:
    counts: dict = field(default_factory=lambda: {k: 60 for k in KINDS})
    min_atoms: int = 5
    max_atoms: int = 64
    seed: int = 42
    split: float = 0.95
    nn_distance: tuple = (2.5, 3.0)
    radius_factor: tuple = (0.9, 4.0)  # lattice cut radius in units of the nn distance
    ico_shells: tuple = (1, 3)
    dec_p: tuple = (1, 4)
    dec_q: tuple = (1, 4)
    dec_r: tuple = (0, 2)
    oct_m: tuple = (2, 7)
    element: str = "Au"
    max_tries: int = 200  # per requested structure

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split fraction must lie in (0, 1)")
        if sum(self.counts.values()) <= 0:
            raise ValueError("dataset must request at least one structure")
        unknown = set(self.counts) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown kinds {sorted(unknown)}")

    @classmethod
    def from_file(cls, path):
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        sec = cp["dataset"]
        kw = {}
        if "counts" in sec:
            kw["counts"] = {k.strip().upper(): int(v) for k, v in
                            (item.split(":") for item in sec["counts"].split(",") if item.strip())}
        for key in ("min_atoms", "max_atoms", "seed", "max_tries"):
            if key in sec:
                kw[key] = int(sec[key])
        if "split" in sec:
            kw["split"] = float(sec["split"])
        if "element" in sec:
            kw["element"] = sec["element"].strip()
        for key in ("nn_distance", "radius_factor"):
            if key in sec:
                kw[key] = _parse_range(sec[key])
        for key in ("ico_shells", "dec_p", "dec_q", "dec_r", "oct_m"):
            if key in sec:
                kw[key] = _parse_range(sec[key], int)
        return cls(**kw)


def _draw_params(kind, spec: DatasetSpec, gen: np.random.Generator, d_nn):
    if kind in LATTICE_KINDS:
        offsets = LATTICE_OFFSETS[kind]
        return {"radius": d_nn * gen.uniform(*spec.radius_factor),
                "offset": offsets[gen.integers(len(offsets))]}
    if kind == "ICO":
        return {"shells": int(gen.integers(spec.ico_shells[0], spec.ico_shells[1] + 1))}
    if kind == "DEC":
        return {k: int(gen.integers(lo, hi + 1))
                for k, (lo, hi) in (("p", spec.dec_p), ("q", spec.dec_q), ("r", spec.dec_r))}
    return {"m": int(gen.integers(spec.oct_m[0], spec.oct_m[1] + 1))}


def dedup_key(cloud: AtomCloud):
    d = np.round(cloud.distances() / 1e-4).astype(np.int64)
    return cloud.kind, hashlib.sha1(d.tobytes()).hexdigest()


def generate_structures(spec: DatasetSpec):
    """Deterministic list of unique clusters following ``spec``."""
    root = RngStream(spec.seed)
    clouds, seen = [], set()
    for kind in KINDS:
        want = spec.counts.get(kind, 0)
        if want <= 0:
            continue
        stream = root.child(kind)
        got, tries = 0, 0
        while got < want:
            tries += 1
            if tries > spec.max_tries * want:
                raise RuntimeError(
                    f"could not generate {want} unique {kind} clusters within "
                    f"[{spec.min_atoms}, {spec.max_atoms}] atoms ({got} found)")
            gen = stream.generator()
            d_nn = gen.uniform(*spec.nn_distance)
            params = _draw_params(kind, spec, gen, d_nn)
            try:
                cloud = generate_cluster(kind, params, nn_to_lattice_constant(kind, d_nn),
                                         spec.min_atoms, spec.max_atoms, spec.element)
            except ClusterSizeError:
                continue
            key = dedup_key(cloud)
            if key in seen:
                continue
            seen.add(key)
            clouds.append(cloud)
            got += 1
    return clouds


def split_assignment(n, fraction, seed=42):
    """'train'/'val' labels from a seeded shuffle; round(fraction*n) go to train."""
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_train = int(round(fraction * n))
    labels = np.empty(n, dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train:]] = "val"
    return list(labels)


def generate_dataset(spec: DatasetSpec, out_dir):
    """Write XYZ files plus ``manifest.tsv``; returns the manifest records."""
    from .pipeline.io import write_manifest, write_xyz

    clouds = generate_structures(spec)
    splits = split_assignment(len(clouds), spec.split, spec.seed)
    os.makedirs(os.path.join(out_dir, "structures"), exist_ok=True)
    records = []
    for i, (cloud, split) in enumerate(zip(clouds, splits)):
        rel = os.path.join("structures", f"{i:05d}_{cloud.kind}.xyz")
        write_xyz(os.path.join(out_dir, rel), cloud)
        records.append({"path": rel, "kind": cloud.kind, "natoms": cloud.n_atoms, "split": split})
    write_manifest(os.path.join(out_dir, "manifest.tsv"), records)
    return records
