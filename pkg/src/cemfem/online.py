"""Residual-driven online basis functions and the adaptive enrichment loop.

Each pass solves in the current space, measures the dual norm of the
residual localized to every coarse-vertex neighborhood, selects the worst
neighborhoods by a bulk criterion, and appends one penalized local solve
per selected neighborhood to the basis. Spaces are nested across passes,
so the energy error cannot increase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import coarse as coarse_mod
from .auxiliary import AuxiliarySpace
from .grid import GridHierarchy, PartitionOfUnity, neighborhood
from .offline import BasisSet, penalized_solve


def residual_vector(A, F, u_fine) -> np.ndarray:
    """Fine-grid residual of a coarse solution; orthogonal to the basis."""
    return F - A @ u_fine


def _chi_weighted(g: GridHierarchy, pou: PartitionOfUnity, vertex: int,
                  r: np.ndarray) -> np.ndarray:
    """Residual multiplied entrywise by the vertex hat, component-wise."""
    row = pou.chi.getrow(vertex)
    out = np.zeros_like(r)
    nodes = row.indices
    vals = row.data
    for c in range(g.d):
        out[nodes * g.d + c] = vals * r[nodes * g.d + c]
    return out


def local_residual_norm(g: GridHierarchy, A, r: np.ndarray,
                        pou: PartitionOfUnity, vertex: int) -> float:
    """Dual energy norm of the hat-localized residual on one neighborhood.

    Realized by one clamped solve on the neighborhood interior: solve
    A_loc e = r_loc and return sqrt(r_loc . e).
    """
    S = neighborhood(g, vertex, 0)
    I = S.interior_dofs
    if len(I) == 0:
        return 0.0
    r_loc = _chi_weighted(g, pou, vertex, r)[I]
    if not np.any(r_loc):
        return 0.0
    A_II = A[I][:, I].tocsc()
    e = spla.spsolve(A_II, r_loc)
    return float(np.sqrt(max(r_loc @ e, 0.0)))


def select_neighborhoods(deltas, theta: float) -> np.ndarray:
    """Indices of the largest local residuals under the bulk criterion.

    After sorting descending, the smallest count k is chosen whose
    discarded tail satisfies sum_{i>k} delta_i^2 <= theta^2 sum_i delta_i^2;
    ties keep the lower index first.
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas < 0):
        raise ValueError("local residual norms must be nonnegative")
    order = np.argsort(-deltas, kind="stable")
    sq = deltas[order] ** 2
    total = sq.sum()
    if total == 0.0:
        return order[:0]
    suffix = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])  # suffix[k] = tail after k
    k = int(np.argmax(suffix <= theta ** 2 * total))
    return order[:k]


def online_basis(g: GridHierarchy, A, aux: AuxiliarySpace, pou: PartitionOfUnity,
                 vertex: int, r: np.ndarray, p: int, method: str = "auto") -> np.ndarray:
    """One penalized local solve driven by the localized residual.

    The support is the vertex neighborhood grown by p coarse layers; the
    operator matches the relaxed offline solve on that subdomain.
    """
    S = neighborhood(g, vertex, p)
    rhs = _chi_weighted(g, pou, vertex, r)
    return penalized_solve(g, A, aux, S, rhs_full=[rhs], method=method)[0]


@dataclass
class EnrichmentState:
    """Trace of an enrichment run: per-pass records plus the final space."""
    basis: BasisSet
    solution: coarse_mod.MultiscaleSolution
    history: list = field(default_factory=list)
    flag: str = "converged"


def enrich_loop(g: GridHierarchy, A, F, aux: AuxiliarySpace, pou: PartitionOfUnity,
                basis: BasisSet, u_ref, lam_cell, mu_cell,
                theta: float = 0.1, mode: str = "adaptive",
                tol_rel: float = 1e-6, tol_abs: float = 0.0, max_iter: int = 10,
                p: int | None = None, method: str = "auto",
                l2_weight: str = "paper") -> EnrichmentState:
    """Iterate solve / estimate / select / enrich until the residual is small.

    ``mode="uniform"`` enriches every neighborhood with a nonzero local
    residual; ``"adaptive"`` applies the theta bulk criterion. ``p`` is the
    oversampling of the online subdomains (defaults to the offline layer
    count of the starting basis). Errors against ``u_ref`` are recorded per
    pass.
    """
    if mode not in ("uniform", "adaptive"):
        raise ValueError(f"unknown enrichment mode {mode!r}")
    if p is None:
        p = int(basis.layers.max()) if basis.n_columns else 1
    R = basis.R
    gram = coarse_mod.gram_matrix(R, A)
    chol = sla.cho_factor(gram, lower=True)
    chol = (np.tril(chol[0]), True)
    sol = coarse_mod.coarse_solve(R, A, F, gram_chol=chol)
    history = []
    flag = "max_iter"
    sum_sq0 = None
    prev_eh1 = None
    stagnant = 0
    current = basis
    f_norm = np.linalg.norm(F)
    for it in range(max_iter + 1):
        r = residual_vector(A, F, sol.u_fine)
        if np.linalg.norm(r) <= 1e-10 * f_norm:
            # already at the reference solution up to solver precision
            el2, eh1 = coarse_mod.error_norms(g, A, lam_cell, mu_cell, sol.u_fine,
                                              u_ref, l2_weight=l2_weight)
            history.append({"iteration": it, "dof": current.n_columns, "e_l2": el2,
                            "e_h1": eh1, "residual_sq": 0.0, "selected": 0})
            flag = "converged"
            break
        deltas = np.array([local_residual_norm(g, A, r, pou, v)
                           for v in range(g.n_vertices)])
        sum_sq = float(np.sum(deltas ** 2))
        if sum_sq0 is None:
            sum_sq0 = sum_sq
        el2, eh1 = coarse_mod.error_norms(g, A, lam_cell, mu_cell, sol.u_fine,
                                          u_ref, l2_weight=l2_weight)
        rec = {"iteration": it, "dof": current.n_columns, "e_l2": el2,
               "e_h1": eh1, "residual_sq": sum_sq, "selected": 0}
        history.append(rec)
        if sum_sq <= max(tol_abs ** 2, tol_rel ** 2 * sum_sq0):
            flag = "converged"
            break
        if it == max_iter:
            break
        if prev_eh1 is not None and prev_eh1 - eh1 < 1e-12:
            stagnant += 1
            if stagnant >= 2:
                flag = "stagnation"
                break
        else:
            stagnant = 0
        prev_eh1 = eh1
        if mode == "uniform":
            selected = np.flatnonzero(deltas > 0)
        else:
            selected = select_neighborhoods(deltas, theta)
        if len(selected) == 0:
            flag = "no_selection"
            break
        rec["selected"] = int(len(selected))
        cols = []
        for v in selected:
            beta = online_basis(g, A, aux, pou, int(v), r, p, method=method)
            if np.any(beta):
                cols.append(beta)
        if not cols:
            flag = "no_selection"
            break
        new_cols = sp.csc_matrix(np.column_stack(cols))
        R_new, gram, chol, kept = coarse_mod.append_columns_guarded(
            current.R, A, gram, chol, new_cols)
        if not kept.any():
            flag = "rank_guard"
            break
        current = current.appended(new_cols[:, kept], "online",
                                   np.asarray(selected)[kept], p)
        # replace R by the guarded version to keep shapes aligned
        current = BasisSet(R=R_new, origin=current.origin, owner=current.owner,
                           aux_index=current.aux_index, layers=current.layers)
        sol = coarse_mod.coarse_solve(R_new, A, F, gram_chol=chol)
    return EnrichmentState(basis=current, solution=sol, history=history, flag=flag)
