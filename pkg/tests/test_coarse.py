from collections import deque

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg

from nlschwarz.coarse import (
    CoarseSpace,
    coarse_policy,
    energy_extension,
    interface_values,
    interface_values_gdsw,
    interface_values_rgdsw_a,
    interface_values_rgdsw_b,
    monolithic_basis,
    monolithic_gamma,
    scalar_basis,
)
from nlschwarz.decomposition import build_interface, decompose
from nlschwarz.fem import build_cavity_mesh, build_problem, scalar_laplacian
from nlschwarz.sparse_core import SingularMatrixError

KINDS = ("gdsw", "rgdsw-a", "rgdsw-b")


def setup(n, S, m=1):
    mesh = build_cavity_mesh(n)
    dec = decompose(mesh, S, m)
    return mesh, dec, build_interface(dec)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n, S", [(8, 2), (16, 4), (24, 3)])
def test_interface_partition_of_unity(kind, n, S):
    _, _, iface = setup(n, S)
    vals = interface_values(kind, iface)
    total = vals.total()
    assert np.abs(total[iface.nodes] - 1.0).max() <= 1e-14
    outside = np.setdiff1d(np.arange(total.size), iface.nodes)
    assert not total[outside].any()
    w = vals.weights.data
    assert w.min() >= 0.0 and w.max() <= 1.0


def test_patch_counts():
    _, _, iface = setup(8, 2)
    assert interface_values_gdsw(iface).n_c == 5
    assert interface_values_rgdsw_a(iface).n_c == 1
    assert interface_values_rgdsw_b(iface).n_c == 1
    _, _, iface4 = setup(16, 4)
    assert interface_values_rgdsw_b(iface4).n_c == 9
    assert interface_values_gdsw(iface4).n_c == 9 + 24


def test_unknown_kind():
    _, _, iface = setup(8, 2)
    with pytest.raises(ValueError):
        interface_values("bogus", iface)


def test_gdsw_patches_connected():
    mesh, _, iface = setup(16, 4)
    W = interface_values_gdsw(iface).weights.tocsr()
    lat = mesh.lattice
    for j in range(W.shape[0]):
        nodes = set(W.indices[W.indptr[j]:W.indptr[j + 1]].tolist())
        start = next(iter(nodes))
        seen, queue = {start}, deque([start])
        while queue:
            a = queue.popleft()
            for b in nodes - seen:
                if np.abs(lat[a] - lat[b]).sum() == 1:
                    seen.add(b)
                    queue.append(b)
        assert seen == nodes


def test_rgdsw_a_linear_decay_on_interior_edge():
    mesh, dec, iface = setup(32, 4)  # H = 8h
    vals = interface_values_rgdsw_a(iface)
    k = next(i for i, v in enumerate(iface.edge_vertices) if len(v) == 2)
    a, b = iface.edge_vertices[k]
    edge = iface.edges[k]
    W = vals.weights.tocsr()
    xy = mesh.coords
    dist = np.linalg.norm(xy[edge] - xy[iface.vertices[a]], axis=1) * 32  # in units of h
    wa = W[a].toarray().ravel()[edge]
    wb = W[b].toarray().ravel()[edge]
    np.testing.assert_allclose(wa, 1 - dist / 8, atol=1e-15)
    np.testing.assert_allclose(wa + wb, 1.0, atol=1e-15)
    # the 7 interior P1 nodes carry 7/8, ..., 1/8 seen from vertex a
    at_p1 = np.isin(edge, mesh.p_nodes)
    np.testing.assert_allclose(np.sort(wa[at_p1])[::-1], np.arange(7, 0, -1) / 8, atol=1e-15)


def test_rgdsw_b_weights():
    _, _, iface = setup(16, 4)
    W = interface_values_rgdsw_b(iface).weights.tocsr()
    for e, verts in zip(iface.edges, iface.edge_vertices):
        for j in verts:
            np.testing.assert_array_equal(W[j].toarray().ravel()[e], 1.0 if len(verts) == 1 else 0.5)
    for j, v in enumerate(iface.vertices):
        assert W[j, v] == 1.0


# ---------------------------------------------------------------------------
# scalar extension

@pytest.fixture(scope="module")
def scalar8():
    mesh, dec, iface = setup(8, 2)
    K = scalar_laplacian(mesh)
    return mesh, K, iface


def test_extension_interface_rows_and_harmonicity(scalar8):
    mesh, K, iface = scalar8
    for kind in KINDS:
        vals = interface_values(kind, iface)
        basis = scalar_basis(K, vals, iface.nodes)
        Phi = basis.phi.toarray()
        np.testing.assert_array_equal(Phi[iface.nodes], vals.weights[:, iface.nodes].T.toarray())
        interior = np.setdiff1d(np.arange(K.shape[0]), iface.nodes)
        res = K[interior] @ Phi
        assert np.abs(res).max() <= 1e-10
        assert basis.n_cols == vals.n_c


def test_extension_minimizes_energy(scalar8):
    mesh, K, iface = scalar8
    vals = interface_values_gdsw(iface)
    Phi = scalar_basis(K, vals, iface.nodes).phi.toarray()
    Z = np.zeros_like(Phi)
    Z[iface.nodes] = Phi[iface.nodes]
    rng = np.random.default_rng(0)
    for j in range(vals.n_c):
        e_opt = Phi[:, j] @ (K @ Phi[:, j])
        assert e_opt <= Z[:, j] @ (K @ Z[:, j]) + 1e-14
        # any other interior values cost more energy
        pert = Phi[:, j].copy()
        interior = np.setdiff1d(np.arange(K.shape[0]), iface.nodes)
        pert[interior] += 1e-3 * rng.standard_normal(interior.size)
        assert e_opt <= pert @ (K @ pert)


def test_scalar_partition_of_unity_away_from_dirichlet_boundary():
    mesh, dec, iface = setup(16, 4)
    K = scalar_laplacian(mesh)
    total = np.asarray(scalar_basis(K, interface_values_gdsw(iface), iface.nodes).phi.sum(axis=1)).ravel()
    assert np.abs(total[iface.nodes] - 1).max() <= 1e-14
    lat = mesh.lattice
    H2 = 2 * dec.H
    for sx, sy in [(1, 1), (1, 2), (2, 1), (2, 2)]:  # blocks not touching the outer boundary
        inside = ((lat[:, 0] > sx * H2) & (lat[:, 0] < (sx + 1) * H2)
                  & (lat[:, 1] > sy * H2) & (lat[:, 1] < (sy + 1) * H2))
        assert np.abs(total[inside] - 1).max() <= 1e-10
    # blocks touching the Dirichlet boundary lose the constant: zero on the boundary
    bnd = ((lat == 0) | (lat == 32)).any(axis=1)
    assert not total[bnd].any()


def test_singular_interior_block_hint():
    K = sp.identity(5, format="lil")
    K[2, 2] = 0.0
    with pytest.raises(SingularMatrixError, match="pressure"):
        energy_extension(K.tocsr(), np.array([4]), sp.csc_matrix(np.ones((1, 1))))


# ---------------------------------------------------------------------------
# monolithic basis

@pytest.fixture(scope="module")
def mono():
    pb = build_problem(16, 100.0)
    dec = decompose(pb.mesh, 4, 1)
    iface = build_interface(dec, pb)
    K = pb.jacobian(pb.initial_guess())
    return pb, iface, K


@pytest.mark.parametrize("kind", KINDS)
def test_monolithic_structure(mono, kind):
    pb, iface, K = mono
    vals = interface_values(kind, iface)
    basis = monolithic_basis(K, vals, pb, iface)
    assert basis.n_cols == 3 * vals.n_c
    nv2 = 2 * pb.nv
    Pt = basis.phi_tilde.tocsr()
    pcol = basis.column_field == 2
    assert not Pt[:nv2][:, pcol].toarray().any()
    assert not Pt[nv2:][:, ~pcol].toarray().any()
    # the full extension does couple the fields
    assert np.abs(basis.phi.tocsr()[nv2:][:, ~pcol].toarray()).max() > 0
    gamma, phi_gamma = monolithic_gamma(pb, iface, vals)
    np.testing.assert_array_equal(basis.phi.tocsr()[gamma].toarray(), phi_gamma.toarray())
    np.testing.assert_array_equal(Pt[gamma].toarray(), phi_gamma.toarray())
    # all three fields together sum to one on every interface dof
    np.testing.assert_allclose(np.asarray(Pt[gamma].sum(axis=1)).ravel(), 1.0, atol=1e-14)
    assert not basis.phi.tocsr()[np.flatnonzero(pb.constrained)].toarray().any()
    np.testing.assert_array_equal(basis.R0.toarray(), basis.P0.T.toarray())


def test_recycling_policy(mono):
    pb, iface, _ = mono
    u0 = pb.initial_guess()
    u1 = u0.copy()
    u1[pb.free] += 0.1 * np.random.default_rng(0).standard_normal(pb.free.sum())
    space = CoarseSpace(pb, iface, "rgdsw-b", recycle=True)
    b0 = coarse_policy(space, u0)
    assert coarse_policy(space, u1) is b0 and space.builds == 1
    fresh = CoarseSpace(pb, iface, "rgdsw-b", recycle=False)
    c0 = fresh.basis(u0)
    c1 = fresh.basis(u1)
    assert fresh.builds == 2
    assert sp.linalg.norm(c0.phi - c1.phi) > 1e-6
