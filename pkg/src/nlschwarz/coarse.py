"""GDSW-type coarse spaces.

Interface values live on P2 nodes (a sparse ``n_c x n_nodes`` matrix); the
coarse basis is obtained from them by the discrete energy-minimizing
extension into the interior, either for a scalar operator or monolithically
for the full Navier-Stokes Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .decomposition import InterfaceStructure
from .fem import CavityProblem
from .sparse_core import SingularMatrixError, lu_factorize

COARSE_TYPES = ("gdsw", "rgdsw-a", "rgdsw-b")
FIELD_NAMES = ("velocity-x", "velocity-y", "pressure")


@dataclass(eq=False)
class InterfaceValues:
    kind: str
    weights: sp.csr_matrix  # (n_c, n_nodes); row j is the patch function of patch j

    @property
    def n_c(self) -> int:
        return self.weights.shape[0]

    def total(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=0)).ravel()


def _values(kind, entries, n_c, n_nodes) -> InterfaceValues:
    rows = np.concatenate([np.full(len(nodes), j) for j, nodes, _ in entries]) if entries else []
    cols = np.concatenate([nodes for _, nodes, _ in entries]) if entries else []
    vals = np.concatenate([w for _, _, w in entries]) if entries else []
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n_c, n_nodes))
    W.sum_duplicates()
    return InterfaceValues(kind, W)


def interface_values_gdsw(iface: InterfaceStructure) -> InterfaceValues:
    """Indicator functions of every vertex and every edge (n_c = n_v + n_e)."""
    nn = iface.mesh.n_velocity_nodes
    entries = [(j, np.array([v]), np.ones(1)) for j, v in enumerate(iface.vertices)]
    entries += [(iface.n_v + k, e, np.ones(e.size)) for k, e in enumerate(iface.edges)]
    return _values("gdsw", entries, iface.n_v + iface.n_e, nn)


def interface_values_rgdsw_a(iface: InterfaceStructure, mesh=None) -> InterfaceValues:
    """One patch per interior vertex, decaying linearly along adjacent edges.

    An edge ending on the outer boundary has only one interior endpoint and
    gets the constant weight 1 from it, so the weights still sum to one.
    """
    mesh = mesh if mesh is not None else iface.mesh
    xy = mesh.coords
    entries = [(j, np.array([v]), np.ones(1)) for j, v in enumerate(iface.vertices)]
    for e, verts in zip(iface.edges, iface.edge_vertices):
        if len(verts) == 1:
            entries.append((verts[0], e, np.ones(e.size)))
            continue
        length = np.linalg.norm(xy[iface.vertices[verts[0]]] - xy[iface.vertices[verts[1]]])
        for j in verts:
            dist = np.linalg.norm(xy[e] - xy[iface.vertices[j]], axis=1)
            entries.append((j, e, 1.0 - dist / length))
    return _values("rgdsw-a", entries, iface.n_v, mesh.n_velocity_nodes)


def interface_values_rgdsw_b(iface: InterfaceStructure) -> InterfaceValues:
    """One patch per interior vertex: 1 at the vertex, 0.5 on edges shared
    with another interior vertex, 1 on edges that end on the boundary."""
    entries = [(j, np.array([v]), np.ones(1)) for j, v in enumerate(iface.vertices)]
    for e, verts in zip(iface.edges, iface.edge_vertices):
        w = 1.0 / len(verts)
        entries += [(j, e, np.full(e.size, w)) for j in verts]
    return _values("rgdsw-b", entries, iface.n_v, iface.mesh.n_velocity_nodes)


def interface_values(kind: str, iface: InterfaceStructure) -> InterfaceValues:
    if kind == "gdsw":
        return interface_values_gdsw(iface)
    if kind == "rgdsw-a":
        return interface_values_rgdsw_a(iface)
    if kind == "rgdsw-b":
        return interface_values_rgdsw_b(iface)
    raise ValueError(f"unknown coarse space type {kind!r}; expected one of {COARSE_TYPES}")


# ---------------------------------------------------------------------------
# extension

def energy_extension(K: sp.spmatrix, gamma: np.ndarray, phi_gamma: sp.spmatrix,
                     chunk: int = 64) -> sp.csc_matrix:
    """Extend interface values into the interior: Phi_I = -K_II^{-1} K_IG Phi_G.

    Parameters
    ----------
    K : sparse (n, n)
    gamma : interface dof indices
    phi_gamma : sparse (len(gamma), n_cols) interface values

    Returns the full (n, n_cols) basis; rows on ``gamma`` equal ``phi_gamma``.
    """
    K = sp.csr_matrix(K)
    n = K.shape[0]
    is_gamma = np.zeros(n, dtype=bool)
    is_gamma[gamma] = True
    interior = np.flatnonzero(~is_gamma)
    try:
        lu = lu_factorize(K[interior][:, interior])
    except SingularMatrixError as exc:
        row = None if exc.row is None else int(interior[exc.row])
        raise SingularMatrixError(
            f"interior block of the extension is singular (global row {row}); "
            "check that the pinned pressure dof is constrained", row=row) from exc
    rhs_all = sp.csc_matrix(-(K[interior][:, gamma] @ sp.csc_matrix(phi_gamma)))
    ncol = phi_gamma.shape[1]
    blocks = []
    for start in range(0, ncol, chunk):
        dense = rhs_all[:, start:start + chunk].toarray()
        sol = lu.solve(dense) if dense.size else dense
        blocks.append(sp.csc_matrix(sol))
    phi_I = sp.hstack(blocks, format="csc") if blocks else sp.csc_matrix((interior.size, 0))
    perm_rows = np.concatenate([interior, gamma])
    stacked = sp.vstack([phi_I, sp.csc_matrix(phi_gamma)], format="coo")
    out = sp.csc_matrix((stacked.data, (perm_rows[stacked.row], stacked.col)), shape=(n, ncol))
    out.sort_indices()
    return out


@dataclass(eq=False)
class CoarseBasis:
    """Coarse basis on the global dof space.

    ``phi`` is the extension with the full matrix, ``phi_tilde`` the version
    used as prolongation (velocity-pressure coupling blocks removed for the
    monolithic basis; equal to ``phi`` for a scalar basis).
    """

    kind: str
    phi: sp.csc_matrix
    phi_tilde: sp.csc_matrix
    column_field: np.ndarray  # 0/1/2 per column, or -1 for scalar columns
    values: InterfaceValues

    @property
    def P0(self) -> sp.csc_matrix:
        return self.phi_tilde

    @property
    def R0(self) -> sp.csr_matrix:
        return self.phi_tilde.T.tocsr()

    @property
    def n_cols(self) -> int:
        return self.phi_tilde.shape[1]


def scalar_basis(K: sp.spmatrix, values: InterfaceValues, gamma_nodes: np.ndarray) -> CoarseBasis:
    """Coarse basis for a scalar operator with one dof per P2 node."""
    phi_gamma = values.weights[:, gamma_nodes].T
    phi = energy_extension(K, gamma_nodes, phi_gamma)
    return CoarseBasis(values.kind, phi, phi, np.full(values.n_c, -1), values)


def monolithic_gamma(problem: CavityProblem, iface: InterfaceStructure, values: InterfaceValues):
    """Interface dofs of all three fields and the block-diagonal interface values."""
    nv = problem.nv
    nodes = iface.nodes
    p_of_node = np.full(nv, -1)
    p_of_node[problem.mesh.p_nodes] = np.arange(problem.n_pressure)
    pn = nodes[p_of_node[nodes] >= 0]
    gamma = np.concatenate([nodes, nodes + nv, p_of_node[pn] + 2 * nv])
    Wt = values.weights.T.tocsr()
    phi_gamma = sp.block_diag([Wt[nodes], Wt[nodes], Wt[pn]], format="csc")
    return gamma, phi_gamma


def monolithic_basis(K: sp.spmatrix, values: InterfaceValues, problem: CavityProblem,
                     iface: InterfaceStructure) -> CoarseBasis:
    """Three coarse functions per patch (v_x, v_y, p), extended with the full
    saddle-point Jacobian; the velocity-pressure coupling blocks are then
    dropped.  Columns are ordered field by field."""
    gamma, phi_gamma = monolithic_gamma(problem, iface, values)
    phi = energy_extension(K, gamma, phi_gamma)
    column_field = np.repeat([0, 1, 2], values.n_c)
    is_pressure_row = (np.arange(problem.n_dofs) >= 2 * problem.nv).astype(float)
    coo = phi.tocoo()
    row_p = is_pressure_row[coo.row] > 0
    col_p = column_field[coo.col] == 2
    mask = row_p == col_p
    phi_tilde = sp.csc_matrix((coo.data[mask], (coo.row[mask], coo.col[mask])), shape=phi.shape)
    return CoarseBasis(values.kind, phi, phi_tilde, column_field, values)


class CoarseSpace:
    """Builds and optionally recycles the monolithic coarse basis.

    With ``recycle`` the basis computed at the first linearization point is
    returned for every later request; otherwise it is rebuilt from the
    Jacobian at each new point.
    """

    def __init__(self, problem: CavityProblem, iface: InterfaceStructure, kind: str,
                 recycle: bool = True):
        self.problem = problem
        self.iface = iface
        self.values = interface_values(kind, iface)
        self.recycle = recycle
        self._cached: CoarseBasis | None = None
        self.builds = 0

    def basis(self, u: np.ndarray, K: sp.spmatrix | None = None) -> CoarseBasis:
        if self.recycle and self._cached is not None:
            return self._cached
        if K is None:
            K = self.problem.jacobian(u)
        self._cached = monolithic_basis(K, self.values, self.problem, self.iface)
        self.builds += 1
        return self._cached


def coarse_policy(space: CoarseSpace, u: np.ndarray) -> CoarseBasis:
    return space.basis(u)
