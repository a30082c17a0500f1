"""Matched fine/coarse structured grids on the unit box.

The domain is D = (0,1)^d, d in {2,3}, meshed twice: a fine grid of n_f
cells per side (Q1 multilinear elements) and a coarse grid of n_c blocks
per side, with n_f divisible by n_c so every fine cell belongs to exactly
one coarse block.

Index conventions, fixed for reproducibility:
  * multi-indices are ordered (i_0, ..., i_{d-1}) = (x, y[, z]) and
    flattened in C order (last axis fastest),
  * fine node ids run over the (n_f+1)^d lattice, fine cell ids over the
    n_f^d lattice, coarse blocks over n_c^d, coarse vertices over
    (n_c+1)^d,
  * degrees of freedom are node-major with d interleaved displacement
    components: dof = node * d + component.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GridHierarchy:
    """Fine grid, coarse blocks and the maps between them."""

    d: int
    n_f: int
    n_c: int
    ratio: int          # fine cells per coarse block side
    h: float
    H: float
    node_shape: tuple
    cell_shape: tuple
    block_shape: tuple
    vertex_shape: tuple
    n_nodes: int
    n_cells: int
    n_dofs: int
    n_blocks: int
    n_vertices: int
    coords: np.ndarray          # (n_nodes, d) node coordinates
    boundary_node: np.ndarray   # bool mask over nodes, True on the box boundary
    free_dofs: np.ndarray       # dof ids not clamped by the boundary condition

    # -- index helpers -------------------------------------------------

    def node_id(self, multi):
        return np.ravel_multi_index(multi, self.node_shape, order="C")

    def cell_id(self, multi):
        return np.ravel_multi_index(multi, self.cell_shape, order="C")

    def block_id(self, multi):
        return np.ravel_multi_index(multi, self.block_shape, order="C")

    def block_multi(self, i):
        return np.array(np.unravel_index(i, self.block_shape, order="C"))

    def vertex_id(self, multi):
        return np.ravel_multi_index(multi, self.vertex_shape, order="C")

    def vertex_multi(self, i):
        return np.array(np.unravel_index(i, self.vertex_shape, order="C"))

    def node_dofs(self, nodes):
        """All d dofs of the given nodes, node-major."""
        nodes = np.atleast_1d(np.asarray(nodes))
        return (nodes[:, None] * self.d + np.arange(self.d)).ravel()

    def cells_in_box(self, lo, hi):
        """Fine cell ids inside the inclusive multi-index box [lo, hi]."""
        return _box_ids(lo, hi, self.cell_shape)

    def nodes_in_box(self, lo, hi):
        return _box_ids(lo, hi, self.node_shape)

    def cell_corner_nodes(self, cells):
        """(len(cells), 2^d) node ids of each cell's corners, C-ordered."""
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return np.empty((0, 2 ** self.d), dtype=np.int64)
        base = np.asarray(np.unravel_index(cells, self.cell_shape, order="C"))
        strides = _strides(self.node_shape)
        node0 = (base * strides[:, None]).sum(axis=0)
        return node0[:, None] + self._corner_offsets()

    def cell_dofs(self, cells):
        """(len(cells), 2^d * d) dof ids with local ordering (corner, component)."""
        nodes = self.cell_corner_nodes(cells)
        dofs = nodes[:, :, None] * self.d + np.arange(self.d)
        return dofs.reshape(len(nodes), 2 ** self.d * self.d)

    def _corner_offsets(self):
        strides = _strides(self.node_shape)
        deltas = np.array(list(np.ndindex(*(2,) * self.d)))
        return deltas @ strides

    def block_cells(self, i):
        """Fine cell ids owned by coarse block i."""
        m = self.block_multi(i)
        return self.cells_in_box(m * self.ratio, (m + 1) * self.ratio - 1)

    @property
    def cell_centers(self):
        multi = np.asarray(np.unravel_index(np.arange(self.n_cells), self.cell_shape, order="C"))
        return (multi.T + 0.5) * self.h

    @property
    def vertex_coords(self):
        multi = np.asarray(np.unravel_index(np.arange(self.n_vertices), self.vertex_shape, order="C"))
        return multi.T * self.H


@dataclass(frozen=True)
class SubdomainIndexSet:
    """Dof bookkeeping for a box-shaped union of coarse blocks.

    Subdomain boundaries carry homogeneous Dirichlet data in every local
    problem here (the global boundary is clamped as well), so the member
    dofs split into a constrained boundary part and a free interior part.
    """

    kind: str                 # "block" or "vertex"
    owner: int
    layers: int
    block_lo: np.ndarray      # inclusive coarse-block box
    block_hi: np.ndarray
    blocks: np.ndarray        # coarse block ids covered
    cells: np.ndarray         # member fine cells
    dofs: np.ndarray          # all member dofs
    interior_dofs: np.ndarray
    boundary_dofs: np.ndarray

    @property
    def n_interior(self):
        return len(self.interior_dofs)

    def covers_domain(self, g: GridHierarchy) -> bool:
        return bool(np.all(self.block_lo == 0) and np.all(self.block_hi == g.n_c - 1))


@dataclass(frozen=True)
class PartitionOfUnity:
    """Multilinear coarse hat functions sampled at fine nodes.

    ``chi`` is a CSR matrix of shape (n_vertices, n_nodes); row i holds the
    nodal values of the hat centered at coarse vertex i, supported on the
    blocks sharing that vertex.
    """

    chi: sp.csr_matrix

    def vertex_values(self, i):
        return self.chi.getrow(i)


def _strides(shape):
    # C-order strides in units of elements
    s = np.ones(len(shape), dtype=np.int64)
    for k in range(len(shape) - 2, -1, -1):
        s[k] = s[k + 1] * shape[k + 1]
    return s


def _box_ids(lo, hi, shape):
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.ravel_multi_index([g.ravel() for g in grids], shape, order="C")


def build_hierarchy(d: int, n_f: int, n_c: int) -> GridHierarchy:
    """Construct the two-level grid.

    Requires d in {2,3}, n_c >= 2 and n_f divisible by n_c.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if n_c < 2:
        raise ValueError(f"need at least 2 coarse blocks per side, got {n_c}")
    if n_f % n_c != 0:
        raise ValueError(f"fine resolution {n_f} not divisible by coarse resolution {n_c}")

    node_shape = (n_f + 1,) * d
    cell_shape = (n_f,) * d
    block_shape = (n_c,) * d
    vertex_shape = (n_c + 1,) * d
    n_nodes = (n_f + 1) ** d
    multi = np.asarray(np.unravel_index(np.arange(n_nodes), node_shape, order="C"))
    coords = multi.T / n_f
    boundary_node = np.any((multi == 0) | (multi == n_f), axis=0)
    free_node_ids = np.flatnonzero(~boundary_node)
    free_dofs = (free_node_ids[:, None] * d + np.arange(d)).ravel()

    return GridHierarchy(
        d=d, n_f=n_f, n_c=n_c, ratio=n_f // n_c,
        h=1.0 / n_f, H=1.0 / n_c,
        node_shape=node_shape, cell_shape=cell_shape,
        block_shape=block_shape, vertex_shape=vertex_shape,
        n_nodes=n_nodes, n_cells=n_f ** d, n_dofs=n_nodes * d,
        n_blocks=n_c ** d, n_vertices=(n_c + 1) ** d,
        coords=coords, boundary_node=boundary_node, free_dofs=free_dofs,
    )


def _subdomain_from_block_box(g: GridHierarchy, kind, owner, layers, blo, bhi):
    blo = np.clip(blo, 0, g.n_c - 1)
    bhi = np.clip(bhi, 0, g.n_c - 1)
    blocks = _box_ids(blo, bhi, g.block_shape)
    cells = g.cells_in_box(blo * g.ratio, (bhi + 1) * g.ratio - 1)
    nlo = blo * g.ratio
    nhi = (bhi + 1) * g.ratio
    nodes = g.nodes_in_box(nlo, nhi)
    node_multi = np.asarray(np.unravel_index(nodes, g.node_shape, order="C"))
    on_face = np.zeros(len(nodes), dtype=bool)
    for k in range(g.d):
        on_face |= (node_multi[k] == nlo[k]) | (node_multi[k] == nhi[k])
    interior_nodes = nodes[~on_face]
    boundary_nodes = nodes[on_face]
    dofs = (nodes[:, None] * g.d + np.arange(g.d)).ravel()
    interior = (interior_nodes[:, None] * g.d + np.arange(g.d)).ravel()
    boundary = (boundary_nodes[:, None] * g.d + np.arange(g.d)).ravel()
    return SubdomainIndexSet(kind=kind, owner=owner, layers=layers,
                             block_lo=blo, block_hi=bhi, blocks=blocks,
                             cells=cells, dofs=dofs,
                             interior_dofs=interior, boundary_dofs=boundary)


def oversample_block(g: GridHierarchy, i: int, m: int) -> SubdomainIndexSet:
    """Coarse block i grown by m layers of coarse blocks, clipped at the boundary."""
    if not (0 <= i < g.n_blocks):
        raise ValueError(f"block index {i} out of range [0, {g.n_blocks})")
    if m < 0:
        raise ValueError("layer count must be nonnegative")
    bm = g.block_multi(i)
    return _subdomain_from_block_box(g, "block", i, m, bm - m, bm + m)


def neighborhood(g: GridHierarchy, i: int, p: int = 0) -> SubdomainIndexSet:
    """Union of blocks sharing coarse vertex i, optionally grown by p layers."""
    if not (0 <= i < g.n_vertices):
        raise ValueError(f"vertex index {i} out of range [0, {g.n_vertices})")
    if p < 0:
        raise ValueError("layer count must be nonnegative")
    vm = g.vertex_multi(i)
    return _subdomain_from_block_box(g, "vertex", i, p, vm - 1 - p, vm + p)


def build_pou(g: GridHierarchy) -> PartitionOfUnity:
    """Nodal values of the coarse multilinear hat functions.

    The hats sum to one at every fine node and reproduce linear functions,
    which the spectral weight construction relies on.
    """
    r = g.ratio
    indptr = [0]
    indices = []
    data = []
    hat_1d = 1.0 - np.abs(np.arange(-r, r + 1)) / r   # values on the support lattice
    for v in range(g.n_vertices):
        vm = g.vertex_multi(v)
        center = vm * r
        per_axis = []
        for k in range(g.d):
            j = np.arange(max(0, center[k] - r), min(g.n_f, center[k] + r) + 1)
            per_axis.append((j, hat_1d[j - center[k] + r]))
        grids = np.meshgrid(*[j for j, _ in per_axis], indexing="ij")
        ids = np.ravel_multi_index([x.ravel() for x in grids], g.node_shape, order="C")
        vals = reduce(np.multiply.outer, [w for _, w in per_axis]).ravel()
        indices.append(ids)
        data.append(vals)
        indptr.append(indptr[-1] + len(ids))
    chi = sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.array(indptr)),
        shape=(g.n_vertices, g.n_nodes),
    )
    return PartitionOfUnity(chi=chi)
