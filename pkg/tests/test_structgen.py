import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbldm.pipeline.io import read_manifest, read_xyz
from cbldm.structgen import (KINDS, ClusterSizeError, DatasetSpec, generate_cluster, generate_dataset,
                             generate_structures, split_assignment)


def rotation(axis, angle):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def brute_sc(a, cutoff):
    pts = np.array(list(itertools.product(range(-3, 4), repeat=3)), float) * a
    return int(np.sum(np.linalg.norm(pts, axis=1) <= cutoff))


@pytest.mark.parametrize("shells,n", [(1, 13), (2, 55), (3, 147)])
def test_mackay_magic_numbers(shells, n):
    assert generate_cluster("ICO", {"shells": shells}, max_atoms=400).n_atoms == n


def test_sc_first_shell_matches_enumeration():
    a = 4.0
    cloud = generate_cluster("SC", {"radius": 1.01 * a}, a)
    assert cloud.n_atoms == 7 == brute_sc(a, 1.01 * a)


@pytest.mark.parametrize("kind", KINDS)
def test_centroid_at_origin(kind):
    params = {"ICO": {"shells": 2}, "DEC": {"p": 2, "q": 2, "r": 1}, "OCT": {"m": 4}}.get(
        kind, {"radius": 7.0, "offset": (0.5, 0, 0)})
    cloud = generate_cluster(kind, params)
    assert np.max(np.abs(cloud.coords.mean(axis=0))) < 1e-10


def test_size_bounds_rejected():
    with pytest.raises(ClusterSizeError):
        generate_cluster("ICO", {"shells": 3}, max_atoms=64)


@pytest.mark.parametrize("kind,quantum", [("SC", 1), ("BCC", 4), ("FCC", 2)])
def test_cubic_distances_on_lattice(kind, quantum):
    a = 3.7
    cloud = generate_cluster(kind, {"radius": 8.0}, a)
    k = cloud.distances() ** 2 / (a * a / quantum)
    assert np.allclose(k, np.round(k), atol=1e-8)


def test_hcp_first_shell_is_twelve_equal_neighbours():
    a = 2.9
    cloud = generate_cluster("HCP", {"radius": 1.01 * a}, a)
    assert cloud.n_atoms == 13
    r = np.linalg.norm(cloud.coords - cloud.coords[0], axis=1)[1:]
    assert np.allclose(r, a, atol=1e-8)


def _multiset_invariant(coords, R):
    """Rotation maps the point set onto itself (checked via nearest images)."""
    rot = coords @ R.T
    d = np.linalg.norm(rot[:, None] - coords[None], axis=2)
    return np.all(d.min(axis=1) < 1e-6)


def test_icosahedron_fivefold_symmetry():
    c = generate_cluster("ICO", {"shells": 2}).coords
    vertex = c[np.argmax(np.linalg.norm(c, axis=1))]
    assert _multiset_invariant(c, rotation(vertex, 2 * np.pi / 5))


def test_decahedron_fivefold_symmetry():
    c = generate_cluster("DEC", {"p": 2, "q": 2, "r": 1}).coords
    assert _multiset_invariant(c, rotation([0, 0, 1], 2 * np.pi / 5))


def test_octahedron_fourfold_symmetry():
    c = generate_cluster("OCT", {"m": 4}).coords
    assert _multiset_invariant(c, rotation([0, 0, 1], np.pi / 2))


@pytest.mark.parametrize("m,n", [(2, 6), (3, 19), (4, 44)])
def test_octahedron_counts(m, n):
    assert generate_cluster("OCT", {"m": m}, min_atoms=1).n_atoms == n


def test_split_arithmetic():
    labels = split_assignment(200, 0.95, seed=42)
    assert labels.count("train") == 190 and labels.count("val") == 10


@given(st.integers(1, 500), st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_split_counts_property(n, frac):
    labels = split_assignment(n, frac)
    assert labels.count("train") == int(round(frac * n))


def test_dataset_deterministic_and_bounded(tmp_path):
    spec = DatasetSpec(counts={k: 4 for k in KINDS}, max_atoms=40, seed=7)
    recs_a = generate_dataset(spec, tmp_path / "a")
    generate_dataset(spec, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (tmp_path / "b" / "manifest.tsv").read_bytes()
    assert len(recs_a) == 28
    for rec in read_manifest(tmp_path / "a" / "manifest.tsv"):
        cloud = read_xyz(tmp_path / "a" / rec["path"])
        assert 5 <= cloud.n_atoms <= 40
        assert cloud.kind == rec["kind"] and cloud.n_atoms == int(rec["natoms"])


def test_dataset_unique_distance_multisets():
    clouds = generate_structures(DatasetSpec(counts={"ICO": 3, "OCT": 5}, max_atoms=150))
    keys = {(c.kind, tuple(np.round(c.distances(), 4))) for c in clouds}
    assert len(keys) == len(clouds)


def test_unsatisfiable_spec_raises():
    spec = DatasetSpec(counts={"ICO": 5}, max_atoms=12, max_tries=3)
    with pytest.raises(RuntimeError, match="ICO"):
        generate_structures(spec)
