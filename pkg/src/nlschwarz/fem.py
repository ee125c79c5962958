"""P2-P1 Taylor-Hood discretization of the stationary Navier-Stokes equations
on the unit square, with lid-driven cavity boundary data.

Dof layout: all x-velocities (one per P2 node), then all y-velocities, then
all pressures (one per P1 node).  Constrained dofs (every boundary velocity
and the pressure at the origin) keep one global index space: their residual
rows are zero and their Jacobian rows/columns are unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .sparse_core import finalize


class NonFiniteStateError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# reference element

def collapsed_gauss(k: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Conical product rule on the unit triangle, exact to degree 2k-2."""
    x, w = np.polynomial.legendre.leggauss(k)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    xi = s.ravel()
    eta = ((1.0 - s) * t).ravel()
    weights = (ws * wt * (1.0 - s)).ravel()
    return np.column_stack([xi, eta]), weights


def p2_basis(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (Q,6) and reference gradients (Q,6,2) of the P2 basis.

    Local node order: vertices 0,1,2 then midpoints of edges 01, 12, 20.
    """
    xi, eta = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    d0, d1, d2 = np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    N = np.column_stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ])
    dN = np.stack([
        (4 * l0 - 1)[:, None] * d0,
        (4 * l1 - 1)[:, None] * d1,
        (4 * l2 - 1)[:, None] * d2,
        4 * (l1[:, None] * d0 + l0[:, None] * d1),
        4 * (l2[:, None] * d1 + l1[:, None] * d2),
        4 * (l0[:, None] * d2 + l2[:, None] * d0),
    ], axis=1)
    return N, dN


def p1_basis(pts: np.ndarray) -> np.ndarray:
    xi, eta = pts[:, 0], pts[:, 1]
    return np.column_stack([1.0 - xi - eta, xi, eta])


# ---------------------------------------------------------------------------
# mesh

@dataclass(frozen=True, eq=False)
class TaylorHoodMesh:
    """Uniform n x n quad grid, each cell split into two triangles.

    ``coords`` holds the P2 nodes, which form a (2n+1)^2 lattice numbered
    row by row from the origin: node(I, J) = J*(2n+1) + I.  Pressure node
    (i, j) sits on P2 node (2i, 2j).
    """

    n: int
    diagonal: str
    coords: np.ndarray  # (nv, 2)
    lattice: np.ndarray  # (nv, 2) integer lattice index of each P2 node
    p_nodes: np.ndarray  # (np,) P2 node under each pressure node
    cells: np.ndarray  # (ne, 6) P2 nodes per triangle
    p_cells: np.ndarray  # (ne, 3) pressure nodes per triangle
    element_cell: np.ndarray  # (ne, 2) quad (cx, cy) each triangle came from

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_velocity_nodes(self) -> int:
        return (2 * self.n + 1) ** 2

    @property
    def n_pressure_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_velocity_nodes + self.n_pressure_nodes

    @property
    def n_elements(self) -> int:
        return self.cells.shape[0]


def dof_count(n: int) -> int:
    return 2 * (2 * n + 1) ** 2 + (n + 1) ** 2


def build_cavity_mesh(n: int, diagonal: str = "same") -> TaylorHoodMesh:
    """Structured Taylor-Hood mesh of the unit square.

    ``diagonal="same"`` cuts every cell from its lower-left to upper-right
    corner.  ``"mirrored"`` flips the cut in the right half so the mesh is
    symmetric about x = 0.5 (needs even n).
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if diagonal not in ("same", "mirrored"):
        raise ValueError(f"unknown diagonal convention {diagonal!r}")
    if diagonal == "mirrored" and n % 2:
        raise ValueError("mirrored diagonals need an even n")
    m = 2 * n + 1
    J, I = np.divmod(np.arange(m * m), m)
    lattice = np.column_stack([I, J])
    coords = lattice / (2.0 * n)
    pj, pi = np.divmod(np.arange((n + 1) ** 2), n + 1)
    p_nodes = (2 * pj) * m + 2 * pi

    cy, cx = np.divmod(np.arange(n * n), n)
    c00 = np.column_stack([2 * cx, 2 * cy])
    off = {k: np.array(v) for k, v in
           {"00": (0, 0), "10": (2, 0), "11": (2, 2), "01": (0, 2)}.items()}
    flip = np.zeros(n * n, dtype=bool) if diagonal == "same" else (cx >= n // 2)
    tri_a = np.where(flip[:, None, None],
                     np.stack([off["00"], off["10"], off["01"]])[None],
                     np.stack([off["00"], off["10"], off["11"]])[None])
    tri_b = np.where(flip[:, None, None],
                     np.stack([off["10"], off["11"], off["01"]])[None],
                     np.stack([off["00"], off["11"], off["01"]])[None])
    verts = np.concatenate([c00[:, None, :] + tri_a, c00[:, None, :] + tri_b])  # (ne,3,2)
    mids = np.stack([
        (verts[:, 0] + verts[:, 1]) // 2,
        (verts[:, 1] + verts[:, 2]) // 2,
        (verts[:, 2] + verts[:, 0]) // 2,
    ], axis=1)
    lat = np.concatenate([verts, mids], axis=1)
    cells = lat[..., 1] * m + lat[..., 0]
    p_cells = (verts[..., 1] // 2) * (n + 1) + verts[..., 0] // 2
    element_cell = np.concatenate([np.column_stack([cx, cy])] * 2)
    return TaylorHoodMesh(n, diagonal, coords, lattice, p_nodes,
                          cells.astype(np.int64), p_cells.astype(np.int64), element_cell)


# ---------------------------------------------------------------------------
# problem

class CavityProblem:
    """Lid-driven cavity on a Taylor-Hood mesh.

    Parameters
    ----------
    mesh : TaylorHoodMesh
    Re : float
        Reynolds number; the viscous term is scaled by 1/Re.
    leaky : bool
        Whether the two top corners carry the lid velocity (1, 0).
    convection : bool
        Switch the convective term off to get the Stokes operator.
    """

    def __init__(self, mesh: TaylorHoodMesh, Re: float, leaky: bool = True,
                 convection: bool = True, quad_points: int = 4):
        if not Re > 0:
            raise ValueError(f"Reynolds number must be positive, got {Re}")
        self.mesh = mesh
        self.Re = float(Re)
        self.leaky = leaky
        self.convection = convection
        self.nv = mesh.n_velocity_nodes
        self.n_pressure = mesh.n_pressure_nodes
        self.n_dofs = mesh.n_dofs
        self.quad = collapsed_gauss(quad_points)

        nv = self.nv
        self.edofs = np.concatenate(
            [mesh.cells, mesh.cells + nv, mesh.p_cells + 2 * nv], axis=1)

        on_bnd = (mesh.lattice == 0).any(axis=1) | (mesh.lattice == 2 * mesh.n).any(axis=1)
        self.boundary_nodes = np.flatnonzero(on_bnd)
        self.pin_dof = 2 * nv + int(np.flatnonzero(mesh.p_nodes == 0)[0])
        constrained = np.zeros(self.n_dofs, dtype=bool)
        constrained[self.boundary_nodes] = True
        constrained[self.boundary_nodes + nv] = True
        constrained[self.pin_dof] = True
        self.constrained = constrained
        self.free = ~constrained

        lid = mesh.lattice[:, 1] == 2 * mesh.n
        if not leaky:
            lid &= (mesh.lattice[:, 0] > 0) & (mesh.lattice[:, 0] < 2 * mesh.n)
        self.boundary_values = np.zeros(self.n_dofs)
        self.boundary_values[np.flatnonzero(lid)] = 1.0

    # dof helpers ----------------------------------------------------------
    def velocity_x(self, u):
        return u[: self.nv]

    def velocity_y(self, u):
        return u[self.nv: 2 * self.nv]

    def pressure(self, u):
        return u[2 * self.nv:]

    @cached_property
    def dof_node(self) -> np.ndarray:
        """P2 node carrying each dof."""
        return np.concatenate([np.arange(self.nv), np.arange(self.nv), self.mesh.p_nodes])

    @cached_property
    def dof_field(self) -> np.ndarray:
        """0 = x-velocity, 1 = y-velocity, 2 = pressure."""
        return np.repeat([0, 1, 2], [self.nv, self.nv, self.n_pressure])

    # geometry cache -------------------------------------------------------
    @cached_property
    def _geometry(self):
        pts, wts = self.quad
        N, dN = p2_basis(pts)
        L = p1_basis(pts)
        X = self.mesh.coords[self.mesh.cells[:, :3]]  # (ne,3,2)
        Jm = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)  # Jm[e,d,r]
        det = Jm[:, 0, 0] * Jm[:, 1, 1] - Jm[:, 0, 1] * Jm[:, 1, 0]
        Jinv = np.linalg.inv(Jm)  # Jinv[e,r,d]
        G = np.einsum("qar,erd->eqad", dN, Jinv)
        W = np.abs(det)[:, None] * wts[None, :]
        return N, L, G, W

    @cached_property
    def _linear_element_matrices(self) -> np.ndarray:
        """Viscous and pressure-coupling element matrices, (ne, 15, 15)."""
        N, L, G, W = self._geometry
        ne = G.shape[0]
        lap = np.einsum("eq,eqad,eqbd->eab", W, G, G) / self.Re
        # -(p, div phi) and -(q, div v)
        bt = -np.einsum("eq,eqac,qb->ecab", W, G, L)  # (ne,2,6,3)
        K = np.zeros((ne, 15, 15))
        K[:, 0:6, 0:6] = lap
        K[:, 6:12, 6:12] = lap
        K[:, 0:6, 12:15] = bt[:, 0]
        K[:, 6:12, 12:15] = bt[:, 1]
        K[:, 12:15, 0:6] = bt[:, 0].transpose(0, 2, 1)
        K[:, 12:15, 6:12] = bt[:, 1].transpose(0, 2, 1)
        return K

    def _elements(self, elements):
        if elements is None:
            return np.arange(self.mesh.n_elements)
        return np.asarray(elements)

    def _element_fields(self, u, E):
        N, L, G, W = self._geometry
        ue = u[self.edofs[E]]
        U = ue[:, :12].reshape(-1, 2, 6)  # (e, c, a)
        vel = np.einsum("qa,eca->eqc", N, U)
        grad = np.einsum("eca,eqad->eqcd", U, G[E])
        return ue, vel, grad

    def _check(self, arr):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteStateError("non-finite values in assembly")

    # residual / Jacobian --------------------------------------------------
    def residual(self, u: np.ndarray, elements=None) -> np.ndarray:
        """Galerkin residual; rows of constrained dofs are zero.

        With ``elements`` only those triangles contribute, which is exact for
        every row whose support lies inside the subset.
        """
        u = np.asarray(u, dtype=float)
        self._check(u)
        E = self._elements(elements)
        ue, vel, grad = self._element_fields(u, E)
        re = np.einsum("eij,ej->ei", self._linear_element_matrices[E], ue)
        if self.convection:
            N, L, G, W = self._geometry
            conv = np.einsum("eqd,eqcd->eqc", vel, grad)
            re[:, :12] += np.einsum("eq,qa,eqc->eca", W[E], N, conv).reshape(-1, 12)
        self._check(re)
        r = np.bincount(self.edofs[E].ravel(), re.ravel(), minlength=self.n_dofs)
        r[self.constrained] = 0.0
        return r

    def element_jacobians(self, u: np.ndarray, elements=None):
        """Element Jacobians (ne,15,15) for the selected triangles."""
        u = np.asarray(u, dtype=float)
        self._check(u)
        E = self._elements(elements)
        K = self._linear_element_matrices[E].copy()
        if self.convection:
            N, L, G, W = self._geometry
            ue, vel, grad = self._element_fields(u, E)
            WE = W[E]
            adv = np.einsum("eq,qa,eqd,eqbd->eab", WE, N, vel, G[E])
            react = np.einsum("eq,eqcd,qa,qb->ecdab", WE, grad, N, N)
            for c in range(2):
                K[:, 6 * c:6 * c + 6, 6 * c:6 * c + 6] += adv
                for d in range(2):
                    K[:, 6 * c:6 * c + 6, 6 * d:6 * d + 6] += react[:, c, d]
        self._check(K)
        return E, K

    def jacobian_triplets(self, u: np.ndarray, elements=None):
        """COO triplets of the constrained Jacobian over the selected triangles.

        Constrained rows/columns are dropped and a unit diagonal is added for
        every constrained dof the subset touches.
        """
        E, K = self.element_jacobians(u, elements)
        ed = self.edofs[E]
        rows = np.broadcast_to(ed[:, :, None], K.shape).ravel()
        cols = np.broadcast_to(ed[:, None, :], K.shape).ravel()
        vals = K.ravel()
        keep = self.free[rows] & self.free[cols]
        touched = np.unique(ed)
        diag = touched[self.constrained[touched]]
        rows = np.concatenate([rows[keep], diag])
        cols = np.concatenate([cols[keep], diag])
        vals = np.concatenate([vals[keep], np.ones(diag.size)])
        return rows, cols, vals

    def jacobian(self, u: np.ndarray, elements=None) -> sp.csr_matrix:
        rows, cols, vals = self.jacobian_triplets(u, elements)
        return finalize(rows, cols, vals, (self.n_dofs, self.n_dofs))

    def initial_guess(self) -> np.ndarray:
        """Lid velocity on the boundary, zero velocity inside, zero pressure."""
        return self.boundary_values.copy()


def build_problem(n: int, Re: float, **kwargs) -> CavityProblem:
    diagonal = kwargs.pop("diagonal", "same")
    return CavityProblem(build_cavity_mesh(n, diagonal), Re, **kwargs)


def assemble_residual(problem: CavityProblem, u: np.ndarray) -> np.ndarray:
    return problem.residual(u)


def assemble_jacobian(problem: CavityProblem, u: np.ndarray) -> sp.csr_matrix:
    return problem.jacobian(u)


def initial_guess(problem: CavityProblem) -> np.ndarray:
    return problem.initial_guess()


def scalar_laplacian(mesh: TaylorHoodMesh) -> sp.csr_matrix:
    """P2 stiffness matrix with unit rows/columns on the boundary nodes."""
    prob = CavityProblem(mesh, 1.0, convection=False)
    K = prob._linear_element_matrices[:, :6, :6]
    cells = mesh.cells
    rows = np.broadcast_to(cells[:, :, None], K.shape).ravel()
    cols = np.broadcast_to(cells[:, None, :], K.shape).ravel()
    fixed = np.zeros(mesh.n_velocity_nodes, dtype=bool)
    fixed[prob.boundary_nodes] = True
    keep = ~fixed[rows] & ~fixed[cols]
    b = prob.boundary_nodes
    return finalize(np.concatenate([rows[keep], b]), np.concatenate([cols[keep], b]),
                    np.concatenate([K.ravel()[keep], np.ones(b.size)]),
                    (mesh.n_velocity_nodes,) * 2)


# ---------------------------------------------------------------------------
# output

def write_vtk(path, problem: CavityProblem, u: np.ndarray, title: str = "state") -> None:
    """Legacy ASCII VTK unstructured grid on the P2 nodes.

    Each Taylor-Hood triangle is written as four linear sub-triangles and the
    pressure is interpolated linearly onto the edge midpoints.
    """
    mesh = problem.mesh
    vx, vy = problem.velocity_x(u), problem.velocity_y(u)
    p2 = np.full(problem.nv, np.nan)
    p2[mesh.p_nodes] = problem.pressure(u)
    c = mesh.cells
    for mid, (a, b) in zip((3, 4, 5), ((0, 1), (1, 2), (2, 0))):
        p2[c[:, mid]] = 0.5 * (p2[c[:, a]] + p2[c[:, b]])
    sub = np.concatenate([c[:, [0, 3, 5]], c[:, [3, 1, 4]], c[:, [5, 4, 2]], c[:, [3, 4, 5]]])
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {problem.nv} double"]
    lines += [f"{x:.16g} {y:.16g} 0" for x, y in mesh.coords]
    lines.append(f"CELLS {sub.shape[0]} {4 * sub.shape[0]}")
    lines += [f"3 {a} {b} {d}" for a, b, d in sub]
    lines.append(f"CELL_TYPES {sub.shape[0]}")
    lines += ["5"] * sub.shape[0]
    lines.append(f"POINT_DATA {problem.nv}")
    lines.append("VECTORS velocity double")
    lines += [f"{a:.16g} {b:.16g} 0" for a, b in zip(vx, vy)]
    lines += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.16g}" for v in p2]
    lines += ["SCALARS velocity_magnitude double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.16g}" for v in np.hypot(vx, vy)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
