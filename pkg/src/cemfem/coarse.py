"""Galerkin solve in the multiscale space and the weighted error measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import SolverError
from .grid import GridHierarchy


@dataclass
class MultiscaleSolution:
    """Coarse coefficients and their fine-grid prolongation."""
    coefficients: np.ndarray
    u_fine: np.ndarray
    galerkin_residual: float      # |R^T (F - A u)| / |F|
    provenance: dict


def gram_matrix(R: sp.spmatrix, A: sp.spmatrix) -> np.ndarray:
    G = (R.T @ (A @ R)).toarray()
    return 0.5 * (G + G.T)


def coarse_solve(R, A, F, gram_chol=None, provenance=None) -> MultiscaleSolution:
    """Project onto the basis columns, solve the small SPD system, prolong.

    ``gram_chol`` may carry a precomputed Cholesky factor of R^T A R, which
    the enrichment loop maintains incrementally.
    """
    if sp.issparse(R) is False:
        R = sp.csc_matrix(R)
    if gram_chol is None:
        G = gram_matrix(R, A)
        try:
            gram_chol = sla.cho_factor(G)
        except sla.LinAlgError as exc:
            rank = np.linalg.matrix_rank(G)
            raise SolverError(
                f"coarse Gram matrix singular: rank {rank} of {G.shape[0]} columns") from exc
        piv = np.abs(np.diag(gram_chol[0]))
        cond_est = (piv.max() / piv.min()) ** 2
        if cond_est > 1e15:
            rank = np.linalg.matrix_rank(G)
            raise SolverError(
                f"coarse Gram matrix numerically singular (condition estimate "
                f"{cond_est:.1e}, rank {rank} of {G.shape[0]} columns)")
    rhs = R.T @ F
    x = sla.cho_solve(gram_chol, rhs)
    u_fine = np.asarray(R @ x).ravel()
    res = R.T @ (F - A @ u_fine)
    nf = np.linalg.norm(F)
    rel = float(np.linalg.norm(res) / nf) if nf > 0 else float(np.linalg.norm(res))
    return MultiscaleSolution(coefficients=np.asarray(x).ravel(), u_fine=u_fine,
                              galerkin_residual=rel, provenance=dict(provenance or {}))


def _l2_node_weights(g: GridHierarchy, lam_cell, mu_cell, power: float) -> np.ndarray:
    """Nodal quadrature weights carrying (lam + 2 mu)^power per cell."""
    w_cell = (np.asarray(lam_cell) + 2.0 * np.asarray(mu_cell)) ** power
    acc = np.zeros(g.n_nodes)
    corners = g.cell_corner_nodes(np.arange(g.n_cells))
    quad = g.h ** g.d / 2 ** g.d
    for c in range(corners.shape[1]):
        np.add.at(acc, corners[:, c], quad * w_cell)
    return acc


def error_norms(g: GridHierarchy, A, lam_cell, mu_cell, u_coarse_fine, u_ref,
                l2_weight: str = "paper"):
    """Relative weighted L2 and energy-norm errors against the fine reference.

    The L2 integrand carries the stiffness-scaled displacement, i.e. the
    coefficient multiplies the field inside the norm; ``l2_weight="sqrt"``
    switches to the square-root-weighted variant for comparison studies.
    """
    if l2_weight not in ("paper", "sqrt"):
        raise ValueError(f"unknown L2 weighting {l2_weight!r}")
    power = 2.0 if l2_weight == "paper" else 1.0
    diff = np.asarray(u_coarse_fine) - np.asarray(u_ref)
    den_h1 = float(u_ref @ (A @ u_ref))
    num_h1 = float(diff @ (A @ diff))
    W = _l2_node_weights(g, lam_cell, mu_cell, power)
    Wd = np.repeat(W, g.d)
    num_l2 = float(np.sum(Wd * diff ** 2))
    den_l2 = float(np.sum(Wd * np.asarray(u_ref) ** 2))
    if den_h1 <= 0.0 or den_l2 <= 0.0:
        if num_h1 <= 1e-300 and num_l2 <= 1e-300:
            return 0.0, 0.0
        raise ValueError("reference solution is zero; relative errors undefined")
    return float(np.sqrt(num_l2 / den_l2)), float(np.sqrt(max(num_h1, 0.0) / den_h1))


def append_columns_guarded(R, A, gram, gram_chol, new_cols: sp.csc_matrix,
                           cond_limit: float = 1e12):
    """Grow the Gram factorization by new basis columns, dropping degenerate ones.

    Returns (R_new, gram_new, chol_new, kept_mask). Columns whose Schur
    complement pivot would push the estimated condition number of the Gram
    matrix past ``cond_limit`` are discarded.
    """
    k = new_cols.shape[1]
    AX = A @ new_cols
    X = (R.T @ AX).toarray() if sp.issparse(R) else R.T @ AX
    S = (new_cols.T @ AX).toarray()
    S = 0.5 * (S + S.T)
    # gram_chol is a cho_factor pair; normalize to a lower-triangular factor
    c, lower = gram_chol
    Lmat = np.tril(c) if lower else np.triu(c).T
    Y = sla.solve_triangular(Lmat, np.asarray(X), lower=True)      # (n_old, k)
    S_t = S - Y.T @ Y
    diag_old = np.diag(Lmat)
    keep = np.ones(k, dtype=bool)
    # greedy pivot screen: drop columns whose pivot collapses
    for trial in range(k):
        St_kept = S_t[np.ix_(keep, keep)]
        try:
            L22 = np.linalg.cholesky(St_kept)
        except np.linalg.LinAlgError:
            idx = np.flatnonzero(keep)
            worst = idx[np.argmin(np.diag(S_t)[keep])]
            keep[worst] = False
            if not keep.any():
                break
            continue
        pscale = max(diag_old.max(), np.sqrt(np.diag(St_kept).max()))
        if np.diag(L22).min() <= pscale / np.sqrt(cond_limit):
            idx = np.flatnonzero(keep)
            worst = idx[np.argmin(np.diag(L22))]
            keep[worst] = False
            if not keep.any():
                break
            continue
        break
    if not keep.any():
        return R, gram, gram_chol, keep
    cols_kept = new_cols[:, keep]
    Xk = np.asarray(X)[:, keep]
    Sk = S[np.ix_(keep, keep)]
    G_new = np.block([[gram, Xk], [Xk.T, Sk]])
    R_new = sp.hstack([R, cols_kept], format="csc")
    Yk = Y[:, keep]
    L22 = np.linalg.cholesky(Sk - Yk.T @ Yk)
    n_old = Lmat.shape[0]
    kk = keep.sum()
    L_new = np.zeros((n_old + kk, n_old + kk))
    L_new[:n_old, :n_old] = Lmat
    L_new[n_old:, :n_old] = Yk.T
    L_new[n_old:, n_old:] = L22
    return R_new, G_new, (L_new, True), keep


def export_solution(path, g: GridHierarchy, u: np.ndarray, fmt: str = "csv"):
    """Write a fine displacement field as (node, x.., components) rows or raw bytes."""
    comps = np.asarray(u).reshape(g.n_nodes, g.d)
    if fmt == "csv":
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node"] + [f"x{k}" for k in range(g.d)]
                       + [f"u{k}" for k in range(g.d)])
            for n in range(g.n_nodes):
                w.writerow([n] + [repr(float(x)) for x in g.coords[n]]
                           + [repr(float(x)) for x in comps[n]])
    elif fmt == "bin":
        comps.astype("<f8").tofile(path)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
