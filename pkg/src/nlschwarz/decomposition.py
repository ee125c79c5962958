"""Square subdomain decompositions of the structured cavity mesh.

Subdomain k = sy*S + sx covers the block of H x H quads at (sx, sy), with
S = sqrt(N) blocks per side and H = n/S.  The overlapping subdomain adds m
layers of quads around the block.  Local spaces hold every velocity dof
strictly inside the overlapping square (homogeneous Dirichlet data on the
artificial boundary) and every pressure dof of its closure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fem import TaylorHoodMesh


class DecompositionError(ValueError):
    pass


@dataclass(eq=False)
class Subdomain:
    index: int
    block: tuple[int, int]
    box: tuple[int, int, int, int]  # overlapping square (x0, x1, y0, y1) in quad units
    elements: np.ndarray  # triangles of the overlapping square
    dofs: np.ndarray  # sorted global dofs, defines R_i
    owned: np.ndarray  # bool per local dof, defines the restricted prolongation
    assembly_elements: np.ndarray  # triangles touching any local dof
    touched: np.ndarray  # sorted global dofs of assembly_elements
    local_in_touched: np.ndarray  # position of each local dof inside `touched`
    pressure_local: np.ndarray  # local indices of pressure dofs

    @property
    def size(self) -> int:
        return self.dofs.size


@dataclass(eq=False)
class Decomposition:
    mesh: TaylorHoodMesh
    sqrt_N: int
    overlap: int
    subdomains: list[Subdomain]
    owner_node: np.ndarray  # owning subdomain per P2 node
    nonoverlapping_elements: list[np.ndarray]

    @property
    def N(self) -> int:
        return self.sqrt_N ** 2

    @property
    def H(self) -> int:
        """Subdomain width in quads (H/h)."""
        return self.mesh.n // self.sqrt_N

    def owner_dof(self) -> np.ndarray:
        o = self.owner_node
        return np.concatenate([o, o, o[self.mesh.p_nodes]])

    def __len__(self) -> int:
        return len(self.subdomains)

    def __iter__(self):
        return iter(self.subdomains)

    def __getitem__(self, i) -> Subdomain:
        return self.subdomains[i]


def _owner_block(idx: np.ndarray, width: int, nblocks: int) -> np.ndarray:
    # lowest block whose closed interval contains idx
    b = -(-idx // width) - 1
    return np.clip(b, 0, nblocks - 1)


def overlap_swallows_domain(n: int, sqrt_N: int, overlap_m: int) -> bool:
    """True if some overlapping subdomain would cover the whole square."""
    H = n // sqrt_N
    return sqrt_N > 1 and any(s * H <= overlap_m and (sqrt_N - 1 - s) * H <= overlap_m
                              for s in range(sqrt_N))


def decompose(mesh: TaylorHoodMesh, sqrt_N: int, overlap_m: int) -> Decomposition:
    n = mesh.n
    if sqrt_N < 1:
        raise DecompositionError("need at least one subdomain per side")
    if n % sqrt_N:
        raise DecompositionError(f"n={n} is not divisible by sqrt_N={sqrt_N}")
    H = n // sqrt_N
    if sqrt_N > 1 and H < 2:
        raise DecompositionError(f"H/h = {H} is below 2")
    if sqrt_N > 1 and overlap_m < 1:
        raise DecompositionError("overlap must be at least one layer of elements")
    if overlap_swallows_domain(n, sqrt_N, overlap_m):
        raise DecompositionError(
            f"overlap {overlap_m} lets a subdomain cover the whole domain (n={n}, H={H})")

    nv = mesh.n_velocity_nodes
    I, J = mesh.lattice[:, 0], mesh.lattice[:, 1]
    owner = _owner_block(J, 2 * H, sqrt_N) * sqrt_N + _owner_block(I, 2 * H, sqrt_N)
    cx, cy = mesh.element_cell[:, 0], mesh.element_cell[:, 1]
    p_I, p_J = I[mesh.p_nodes], J[mesh.p_nodes]
    edofs = np.concatenate([mesh.cells, mesh.cells + nv, mesh.p_cells + 2 * nv], axis=1)
    n_dofs = mesh.n_dofs
    node_owner = np.concatenate([owner, owner, owner[mesh.p_nodes]])

    subs, nonover = [], []
    for sy in range(sqrt_N):
        for sx in range(sqrt_N):
            k = sy * sqrt_N + sx
            nonover.append(np.flatnonzero((cx // H == sx) & (cy // H == sy)))
            x0, x1 = max(0, sx * H - overlap_m), min(n, (sx + 1) * H + overlap_m)
            y0, y1 = max(0, sy * H - overlap_m), min(n, (sy + 1) * H + overlap_m)
            elements = np.flatnonzero((cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1))

            inside = (I >= 2 * x0) & (I <= 2 * x1) & (J >= 2 * y0) & (J <= 2 * y1)
            artificial = (((I == 2 * x0) & (x0 > 0)) | ((I == 2 * x1) & (x1 < n))
                          | ((J == 2 * y0) & (y0 > 0)) | ((J == 2 * y1) & (y1 < n)))
            vnodes = np.flatnonzero(inside & ~artificial)
            pnodes = np.flatnonzero((p_I >= 2 * x0) & (p_I <= 2 * x1)
                                    & (p_J >= 2 * y0) & (p_J <= 2 * y1))
            dofs = np.concatenate([vnodes, vnodes + nv, pnodes + 2 * nv])

            owned = node_owner[dofs] == k

            mask = np.zeros(n_dofs, dtype=bool)
            mask[dofs] = True
            asm = np.flatnonzero(mask[edofs].any(axis=1))
            touched = np.unique(edofs[asm])
            subs.append(Subdomain(
                index=k, block=(sx, sy), box=(x0, x1, y0, y1), elements=elements,
                dofs=dofs, owned=owned, assembly_elements=asm, touched=touched,
                local_in_touched=np.searchsorted(touched, dofs),
                pressure_local=np.flatnonzero(dofs >= 2 * nv)))
    return Decomposition(mesh, sqrt_N, overlap_m, subs, owner, nonover)


# ---------------------------------------------------------------------------
# restriction / prolongation

def restrict(dec: Decomposition, i: int, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[0] != dec.mesh.n_dofs:
        raise ValueError(f"global vector has length {v.shape[0]}, expected {dec.mesh.n_dofs}")
    return v[dec[i].dofs]


def prolong(dec: Decomposition, i: int, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    sub = dec[i]
    if x.shape[0] != sub.size:
        raise ValueError(f"local vector has length {x.shape[0]}, expected {sub.size}")
    if out is None:
        out = np.zeros(dec.mesh.n_dofs)
    out[sub.dofs] += x
    return out


def prolong_restricted(dec: Decomposition, i: int, x: np.ndarray,
                       out: np.ndarray | None = None) -> np.ndarray:
    sub = dec[i]
    if x.shape[0] != sub.size:
        raise ValueError(f"local vector has length {x.shape[0]}, expected {sub.size}")
    if out is None:
        out = np.zeros(dec.mesh.n_dofs)
    out[sub.dofs[sub.owned]] += x[sub.owned]
    return out


# ---------------------------------------------------------------------------
# interface

@dataclass(eq=False)
class InterfaceStructure:
    """Classification of the interface nodes into vertices and edges.

    Only nodes shared by two or more closed nonoverlapping subdomains and not
    lying on the outer boundary belong to the interface.  Node sets are P2
    node ids; the pressure dofs of the interface are those on P1 nodes.
    """

    mesh: TaylorHoodMesh
    vertices: np.ndarray  # node id per interior cross point
    edges: list[np.ndarray]  # node ids per open edge
    edge_vertices: list[list[int]]  # indices into `vertices` of each edge's interior endpoints
    edge_ends: list[tuple[np.ndarray, np.ndarray]]  # endpoint coordinates of each edge
    edge_keys: list[tuple] = field(default_factory=list)

    @property
    def n_v(self) -> int:
        return self.vertices.size

    @property
    def n_e(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.vertices, *self.edges])) if self.n_e else self.vertices

    def node_labels(self) -> dict[int, str]:
        labels = {int(v): f"vertex {k}" for k, v in enumerate(self.vertices)}
        for k, e in enumerate(self.edges):
            labels.update({int(v): f"edge {k}" for v in e})
        return labels

    def dofs(self, field: int) -> np.ndarray:
        """Global interface dofs of one field (0: v_x, 1: v_y, 2: p)."""
        nv = self.mesh.n_velocity_nodes
        nodes = self.nodes
        if field < 2:
            return nodes + field * nv
        p_of_node = np.full(nv, -1)
        p_of_node[self.mesh.p_nodes] = np.arange(self.mesh.p_nodes.size)
        p = p_of_node[nodes]
        return p[p >= 0] + 2 * nv


def build_interface(dec: Decomposition, problem=None) -> InterfaceStructure:
    """Vertices (interior cross points) and edges between neighbouring blocks.

    ``problem`` is accepted for symmetry with the rest of the API; all
    Dirichlet nodes lie on the outer boundary, which is excluded anyway.
    """
    mesh, S, H = dec.mesh, dec.sqrt_N, dec.H
    n, m = mesh.n, 2 * mesh.n + 1
    w = 2 * H  # block width in P2 lattice units

    def node(I, J):
        return J * m + I

    vkeys = [(a, b) for b in range(1, S) for a in range(1, S)]
    vindex = {key: k for k, key in enumerate(vkeys)}
    vertices = np.array([node(a * w, b * w) for a, b in vkeys], dtype=np.int64)

    edges, edge_vertices, ends, keys = [], [], [], []
    inner = np.arange(1, w)
    for k in range(1, S):  # vertical lines x = k*H
        for b in range(S):
            edges.append(node(k * w, b * w + inner))
            edge_vertices.append([vindex[(k, c)] for c in (b, b + 1) if 0 < c < S])
            ends.append((np.array([k * w, b * w]) / (2 * n), np.array([k * w, (b + 1) * w]) / (2 * n)))
            keys.append(("x", k, b))
    for k in range(1, S):  # horizontal lines y = k*H
        for a in range(S):
            edges.append(node(a * w + inner, k * w))
            edge_vertices.append([vindex[(c, k)] for c in (a, a + 1) if 0 < c < S])
            ends.append((np.array([a * w, k * w]) / (2 * n), np.array([(a + 1) * w, k * w]) / (2 * n)))
            keys.append(("y", k, a))
    return InterfaceStructure(mesh, vertices, [e.astype(np.int64) for e in edges],
                              edge_vertices, ends, keys)


def write_classification_csv(path, dec: Decomposition, iface: InterfaceStructure) -> None:
    """One row per dof: id, coordinates, field, owner, interface class."""
    mesh = dec.mesh
    nv = mesh.n_velocity_nodes
    labels = iface.node_labels()
    owner = dec.owner_dof()
    fields = ("vx", "vy", "p")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dof", "x", "y", "field", "owner", "class"])
        nodes = np.concatenate([np.arange(nv), np.arange(nv), mesh.p_nodes])
        for dof, nd in enumerate(nodes):
            f = 0 if dof < nv else (1 if dof < 2 * nv else 2)
            x, y = mesh.coords[nd]
            wr.writerow([dof, f"{x:.12g}", f"{y:.12g}", fields[f], owner[dof],
                         labels.get(int(nd), "interior")])
