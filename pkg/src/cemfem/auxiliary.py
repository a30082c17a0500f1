"""Per-block generalized eigenproblems and the auxiliary coarse space.

Each coarse block carries the pencil a_i(u, v) = lambda s_i(u, v), where
a_i is the elastic energy over the block (free on the block faces, clamped
only where they meet the domain boundary) and s_i the block-restricted
weighted mass. The smallest eigenpairs per block, normalized against s_i,
span the auxiliary space; the smallest first-discarded eigenvalue across
blocks is the quality indicator the convergence theory tracks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .grid import GridHierarchy
from .media import CoefficientField


@dataclass
class BlockModes:
    """Smallest eigenpairs of one block pencil."""
    block: int
    dofs: np.ndarray        # global dofs carrying the modes
    eigvals: np.ndarray     # ascending; one more than the kept vectors
    vecs: np.ndarray        # (len(dofs), n_kept), s_i-orthonormal

    @property
    def n_kept(self):
        return self.vecs.shape[1]

    @property
    def first_discarded(self):
        return float(self.eigvals[self.n_kept])


@dataclass
class AuxiliarySpace:
    """Stacked spectral basis over all blocks plus the products built on it."""
    grid: GridHierarchy
    blocks: list
    Phi: sp.csc_matrix            # (n_dofs, n_columns) zero-extended eigenvectors
    col_block: np.ndarray
    col_j: np.ndarray
    col_start: np.ndarray         # prefix offsets, one entry per block + 1
    mass_diag: np.ndarray         # global weighted-mass diagonal
    constraint: sp.csc_matrix     # diag(mass) @ Phi; the s-product columns
    _gram_chol: tuple | None = field(default=None, repr=False)

    @property
    def n_columns(self):
        return self.Phi.shape[1]

    @property
    def n_per_block(self):
        return np.diff(self.col_start)

    @property
    def min_discarded(self):
        """Smallest first-discarded eigenvalue over all blocks."""
        return min(b.first_discarded for b in self.blocks)

    def columns_for_blocks(self, block_ids):
        """Column indices of every auxiliary function owned by the given blocks."""
        parts = [np.arange(self.col_start[b], self.col_start[b + 1]) for b in block_ids]
        return np.concatenate(parts) if parts else np.empty(0, dtype=int)

    def column_position(self, block, j):
        return int(self.col_start[block] + j)

    def gram_cholesky(self):
        if self._gram_chol is None:
            G = (self.Phi.T @ self.constraint).toarray()
            G = 0.5 * (G + G.T)
            self._gram_chol = sla.cho_factor(G)
        return self._gram_chol


def min_first_discarded(aux: AuxiliarySpace) -> float:
    return aux.min_discarded


def _solve_pencil(A_loc: sp.csr_matrix, s_diag: np.ndarray, k: int,
                  dense_cutoff: int = 1200):
    """Smallest k eigenpairs of A v = lambda diag(s) v, s-orthonormal vectors."""
    n = A_loc.shape[0]
    if k > n:
        raise ValueError(f"requested {k} eigenpairs from a {n}-dof block")
    s_diag = np.asarray(s_diag, dtype=float)
    tr = s_diag.sum()
    if s_diag.min() <= 1e-14 * tr / n:
        # weight degenerate on this block; damp it so the pencil stays definite
        s_diag = s_diag + 1e-12 * tr
    dinv = 1.0 / np.sqrt(s_diag)
    if n <= dense_cutoff:
        C = A_loc.toarray() * dinv[:, None] * dinv[None, :]
        C = 0.5 * (C + C.T)
        w, y = sla.eigh(C, subset_by_index=[0, k - 1])
    else:
        C = sp.diags(dinv) @ A_loc @ sp.diags(dinv)
        C = (0.5 * (C + C.T)).tocsc()
        scale = np.mean(C.diagonal())
        try:
            w, y = spla.eigsh(C, k=k, sigma=-1e-2 * scale, which="LM")
        except Exception:
            Cd = 0.5 * (C.toarray() + C.toarray().T)
            w, y = sla.eigh(Cd, subset_by_index=[0, k - 1])
        order = np.argsort(w)
        w, y = w[order], y[:, order]
    vecs = dinv[:, None] * y
    return w, vecs


def block_modes(g: GridHierarchy, coeff: CoefficientField, i: int, n_keep: int,
                dense_cutoff: int = 1200) -> BlockModes:
    """Solve one block pencil, keeping n_keep vectors and n_keep+1 eigenvalues."""
    bm = g.block_multi(i)
    nlo, nhi = bm * g.ratio, (bm + 1) * g.ratio
    nodes = g.nodes_in_box(nlo, nhi)
    cells = g.block_cells(i)
    all_dofs = g.node_dofs(nodes)
    clamped = np.repeat(g.boundary_node[nodes], g.d)
    keep = ~clamped
    if n_keep + 1 > keep.sum():
        raise ValueError(f"block {i} has only {keep.sum()} free dofs, "
                         f"cannot keep {n_keep} eigenpairs")
    A_all = fem.assemble_stiffness_local(g, coeff.lam_cell, coeff.mu_cell, cells, all_dofs)
    A_loc = A_all[keep][:, keep]
    s_all = fem.mass_weights(g, coeff.kappa_cell, cells=cells)[all_dofs]
    s_loc = s_all[keep]
    w, vecs = _solve_pencil(A_loc, s_loc, n_keep + 1, dense_cutoff)
    return BlockModes(block=i, dofs=all_dofs[keep], eigvals=w, vecs=vecs[:, :n_keep])


def build_auxiliary_space(g: GridHierarchy, coeff: CoefficientField,
                          n_per_block, dense_cutoff: int = 1200) -> AuxiliarySpace:
    """Assemble the auxiliary space with n_per_block eigenvectors per block.

    ``n_per_block`` may be a single count (uniform, the usual choice) or a
    per-block array.
    """
    counts = np.broadcast_to(np.asarray(n_per_block, dtype=int), (g.n_blocks,))
    if counts.min() < 1:
        raise ValueError("need at least one auxiliary function per block")
    blocks = []
    rows, cols, data = [], [], []
    col_start = np.zeros(g.n_blocks + 1, dtype=int)
    for i in range(g.n_blocks):
        bm = block_modes(g, coeff, i, int(counts[i]), dense_cutoff)
        blocks.append(bm)
        base = col_start[i]
        col_start[i + 1] = base + bm.n_kept
        for j in range(bm.n_kept):
            rows.append(bm.dofs)
            cols.append(np.full(len(bm.dofs), base + j))
            data.append(bm.vecs[:, j])
    Phi = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.n_dofs, col_start[-1]),
    ).tocsc()
    col_block = np.repeat(np.arange(g.n_blocks), np.diff(col_start))
    col_j = np.concatenate([np.arange(n) for n in np.diff(col_start)])
    mass_diag = fem.mass_weights(g, coeff.kappa_cell)
    constraint = (sp.diags(mass_diag) @ Phi).tocsc()
    return AuxiliarySpace(grid=g, blocks=blocks, Phi=Phi,
                          col_block=col_block, col_j=col_j, col_start=col_start,
                          mass_diag=mass_diag, constraint=constraint)


def pi_project(v: np.ndarray, aux: AuxiliarySpace) -> np.ndarray:
    """s-orthogonal projection of a fine vector onto the auxiliary space.

    Eigenvectors of adjacent blocks are not exactly s-orthogonal across the
    shared block faces, so the small auxiliary Gram system is solved rather
    than assuming an orthonormal expansion; this makes the projection
    idempotent and self-adjoint to solver precision.
    """
    c = aux.constraint.T @ v
    z = sla.cho_solve(aux.gram_cholesky(), c)
    return aux.Phi @ z


def s_product(aux: AuxiliarySpace, u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ (aux.mass_diag * v))


def spectra_to_csv(aux: AuxiliarySpace, path):
    """Write all computed block eigenvalues as (block, k, eigenvalue) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "k", "eigenvalue"])
        for b in aux.blocks:
            for k, w in enumerate(b.eigvals):
                writer.writerow([b.block, k, repr(float(w))])
