import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlschwarz.decomposition import (
    DecompositionError,
    build_interface,
    decompose,
    overlap_swallows_domain,
    prolong,
    prolong_restricted,
    restrict,
    write_classification_csv,
)
from nlschwarz.fem import build_cavity_mesh, build_problem


@pytest.fixture(scope="module")
def dec8():
    return decompose(build_cavity_mesh(8), 2, 1)


def element_quads(mesh, elements):
    return {tuple(c) for c in mesh.element_cell[elements]}


def test_n8_two_by_two(dec8):
    mesh = dec8.mesh
    assert dec8.N == 4 and dec8.H == 4
    for sub, non in zip(dec8, dec8.nonoverlapping_elements):
        assert len(element_quads(mesh, non)) == 16 and non.size == 32
        assert len(element_quads(mesh, sub.elements)) == 25 and sub.elements.size == 50
        x0, x1, y0, y1 = sub.box
        assert (x1 - x0, y1 - y0) == (5, 5)
    # corner subdomain 0 extends inward (right and up) only
    assert dec8[0].box == (0, 5, 0, 5)
    assert dec8[3].box == (3, 8, 3, 8)


def test_nonoverlapping_partition_and_containment(dec8):
    allel = np.concatenate(dec8.nonoverlapping_elements)
    assert np.array_equal(np.sort(allel), np.arange(dec8.mesh.n_elements))
    for sub, non in zip(dec8, dec8.nonoverlapping_elements):
        assert np.isin(non, sub.elements).all()


@pytest.mark.parametrize("m", [1, 2])
def test_restricted_partition_of_unity_exact(m):
    dec = decompose(build_cavity_mesh(8), 2, m)
    rng = np.random.default_rng(m)
    for _ in range(20):
        v = rng.standard_normal(dec.mesh.n_dofs)
        out = np.zeros_like(v)
        for i in range(dec.N):
            prolong_restricted(dec, i, restrict(dec, i, v), out)
        assert np.array_equal(out, v)


@settings(max_examples=20, deadline=None)
@given(S=st.integers(1, 4), H=st.integers(2, 5), m=st.integers(1, 3))
def test_partition_of_unity_property(S, H, m):
    n = S * H
    if n < 2 or overlap_swallows_domain(n, S, m):
        return
    dec = decompose(build_cavity_mesh(n), S, m)
    counts = np.zeros(dec.mesh.n_dofs, dtype=int)
    for sub in dec:
        counts[sub.dofs[sub.owned]] += 1
    assert np.all(counts == 1)


def test_overlap_multiplicity(dec8):
    v = np.random.default_rng(0).random(dec8.mesh.n_dofs)
    out = np.zeros_like(v)
    for i in range(dec8.N):
        prolong(dec8, i, restrict(dec8, i, v), out)
    assert np.all(out >= v - 1e-15)
    assert np.any(out > v)


def test_restrict_prolong_inverse_on_interior(dec8):
    sub = dec8[0]
    g = sub.dofs[sub.size // 3]
    e = np.zeros(dec8.mesh.n_dofs)
    e[g] = 1.0
    np.testing.assert_array_equal(prolong(dec8, 0, restrict(dec8, 0, e)), e)


def test_dimension_errors(dec8):
    with pytest.raises(ValueError):
        restrict(dec8, 0, np.zeros(3))
    with pytest.raises(ValueError):
        prolong(dec8, 0, np.zeros(3))
    with pytest.raises(ValueError):
        prolong_restricted(dec8, 0, np.zeros(3))


def test_monolithic_ownership(dec8):
    owner = dec8.owner_dof()
    mesh = dec8.mesh
    nv = mesh.n_velocity_nodes
    np.testing.assert_array_equal(owner[:nv], owner[nv:2 * nv])
    np.testing.assert_array_equal(owner[2 * nv:], owner[:nv][mesh.p_nodes])
    for sub in dec8:
        assert np.all(owner[sub.dofs[sub.owned]] == sub.index)


def test_owned_dofs_lie_in_closed_block(dec8):
    lat = dec8.mesh.lattice
    H2 = 2 * dec8.H
    nv = dec8.mesh.n_velocity_nodes
    for sub in dec8:
        sx, sy = sub.block
        d = sub.dofs[sub.owned]
        nodes = np.where(d < 2 * nv, d % nv, dec8.mesh.p_nodes[np.maximum(d - 2 * nv, 0)])
        I, J = lat[nodes, 0], lat[nodes, 1]
        assert np.all((I >= sx * H2) & (I <= (sx + 1) * H2) & (J >= sy * H2) & (J <= (sy + 1) * H2))


def test_local_velocity_excludes_artificial_boundary(dec8):
    sub = dec8[0]
    x0, x1, y0, y1 = sub.box
    lat = dec8.mesh.lattice
    nv = dec8.mesh.n_velocity_nodes
    vel = sub.dofs[sub.dofs < nv]
    assert not np.any(lat[vel, 0] == 2 * x1) and not np.any(lat[vel, 1] == 2 * y1)
    pnodes = dec8.mesh.p_nodes[sub.dofs[sub.pressure_local] - 2 * nv]
    assert np.any(lat[pnodes, 0] == 2 * x1)


def test_touched_contains_local_dofs(dec8):
    for sub in dec8:
        np.testing.assert_array_equal(sub.touched[sub.local_in_touched], sub.dofs)


@pytest.mark.parametrize("n, S, m", [(10, 4, 1), (8, 8, 1), (8, 2, 0), (8, 2, 4), (12, 3, 4)])
def test_invalid_decompositions(n, S, m):
    with pytest.raises(DecompositionError):
        decompose(build_cavity_mesh(n), S, m)


def test_full_scale_counts():
    dec = decompose(build_cavity_mesh(128), 16, 3)
    assert dec.N == 256 and dec.H == 8


def test_interface_two_by_two(dec8):
    iface = build_interface(dec8)
    assert iface.n_v == 1 and iface.n_e == 4
    np.testing.assert_allclose(dec8.mesh.coords[iface.vertices[0]], [0.5, 0.5])


def test_interface_four_by_four():
    iface = build_interface(decompose(build_cavity_mesh(16), 4, 1))
    assert iface.n_v == 9 and iface.n_e == 24
    assert sorted(len(v) for v in iface.edge_vertices).count(1) == 12


def test_interface_is_partition_and_avoids_dirichlet():
    pb = build_problem(16, 1.0)
    dec = decompose(pb.mesh, 4, 2)
    iface = build_interface(dec, pb)
    parts = np.concatenate([iface.vertices, *iface.edges])
    assert parts.size == np.unique(parts).size
    assert not pb.constrained[parts].any()
    for f in range(3):
        assert not pb.constrained[iface.dofs(f)].any()
    # interface = nodes on block boundaries, minus the outer boundary
    lat = pb.mesh.lattice
    on_lines = ((lat % (2 * dec.H)) == 0).any(axis=1)
    outer = ((lat == 0) | (lat == 32)).any(axis=1)
    np.testing.assert_array_equal(np.sort(parts), np.flatnonzero(on_lines & ~outer))


def test_classification_csv(tmp_path, dec8):
    iface = build_interface(dec8)
    path = tmp_path / "cls.csv"
    write_classification_csv(path, dec8, iface)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == dec8.mesh.n_dofs
    assert set(rows[0]) == {"dof", "x", "y", "field", "owner", "class"}
    classes = {r["class"] for r in rows}
    assert "interior" in classes and "vertex 0" in classes and "edge 3" in classes
