"""Multiscale basis functions by energy minimization over oversampled patches.

For each auxiliary function of block i the constrained variant minimizes
elastic energy subject to unit s-product with that function and zero
s-product with every other auxiliary function alive on the patch; the
relaxed variant trades the constraints for an s-penalty:

  constrained:  min a(psi, psi)  s.t.  C^T psi = e
  relaxed:      (A + C C^T) psi = C e

with C the s-product columns of the patch's auxiliary functions. Since the
patch stiffness A is positive definite on the clamped interior, both
reduce to one sparse factorization of A plus small dense capacitance
systems (C^T A^{-1} C and I + C^T A^{-1} C); a round of iterative
refinement keeps the constraint residuals at solver precision. Large 3D
patches avoid the factorization entirely and run multigrid-preconditioned
conjugate gradients on the penalized operator. The same machinery with a
vector right-hand side serves the online residual-driven basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .auxiliary import AuxiliarySpace
from .fem import SolverError
from .grid import GridHierarchy, SubdomainIndexSet, oversample_block


@dataclass(frozen=True)
class BasisSet:
    """Multiscale basis matrix with one fine-grid column per function."""
    R: sp.csc_matrix
    origin: np.ndarray      # "constrained" | "relaxed" | "online" per column
    owner: np.ndarray       # owning block (offline) or vertex (online)
    aux_index: np.ndarray   # auxiliary index j for offline columns, -1 online
    layers: np.ndarray      # oversampling layers used per column

    @property
    def n_columns(self):
        return self.R.shape[1]

    def appended(self, cols: sp.csc_matrix, origin: str, owner, layers) -> "BasisSet":
        n = cols.shape[1]
        return BasisSet(
            R=sp.hstack([self.R, cols], format="csc"),
            origin=np.concatenate([self.origin, np.full(n, origin)]),
            owner=np.concatenate([self.owner, np.asarray(owner, dtype=int)]),
            aux_index=np.concatenate([self.aux_index, np.full(n, -1, dtype=int)]),
            layers=np.concatenate([self.layers, np.full(n, layers, dtype=int)]),
        )


class PatchSolver:
    """Factorization of one patch shared by every solve on that patch.

    ``method`` picks the strategy: "direct" factors the bordered system
    (interior stiffness plus the s-product columns) once per corner kind
    and serves any number of right-hand sides; "cg" runs matrix-free
    conjugate gradients on the penalized operator with an
    algebraic-multigrid hint, for large 3D patches where sparse
    factorization fill is prohibitive. The constrained variant has no cg
    route.
    """

    def __init__(self, g: GridHierarchy, A, aux: AuxiliarySpace,
                 S: SubdomainIndexSet, method: str = "auto"):
        self.g = g
        self.S = S
        self.I = S.interior_dofs
        if len(self.I) == 0:
            raise ValueError(f"subdomain ({S.kind} {S.owner}, m={S.layers}) "
                             "has empty interior")
        self.A_II = A[self.I][:, self.I].tocsc()
        self.cols = aux.columns_for_blocks(S.blocks)
        self.C = aux.constraint[:, self.cols].tocsr()[self.I].tocsc()
        if method in ("auto", "schur"):
            method = "cg" if (g.d == 3 and len(self.I) > 9000) else "direct"
        self.method = method
        self._lu = {}
        self._amg = None

    # -- bordered factorizations ------------------------------------------

    def _factor(self, penalty: bool):
        if penalty not in self._lu:
            k = self.C.shape[1]
            corner = -sp.identity(k, format="csc") if penalty else None
            K = sp.bmat([[self.A_II, self.C], [self.C.T, corner]], format="csc")
            try:
                self._lu[penalty] = spla.splu(
                    K, permc_spec="COLAMD", options=dict(DiagPivotThresh=0.01))
            except RuntimeError as exc:
                raise SolverError(
                    f"patch factorization failed on ({self.S.kind} {self.S.owner}, "
                    f"m={self.S.layers}): {exc}; the {k} auxiliary columns may be "
                    "s-degenerate here") from exc
        return self._lu[penalty]

    def _solve_bordered(self, penalty: bool, top, bottom, refine_tol=1e-10):
        lu = self._factor(penalty)
        n = self.A_II.shape[0]
        k = self.C.shape[1]
        rhs = np.zeros(n + k)
        if top is not None:
            rhs[:n] = top
        if bottom is not None:
            rhs[n:] = bottom
        x = lu.solve(rhs)
        resid = rhs - self._apply_bordered(penalty, x)
        scale = np.linalg.norm(rhs)
        if scale > 0 and np.linalg.norm(resid) > refine_tol * scale:
            x = x + lu.solve(resid)
        return x[:n], x[n:]

    def _apply_bordered(self, penalty, x):
        n = self.A_II.shape[0]
        top = self.A_II @ x[:n] + self.C @ x[n:]
        bottom = self.C.T @ x[:n]
        if penalty:
            bottom = bottom - x[n:]
        return np.concatenate([top, bottom])

    # -- constrained minimization -----------------------------------------

    def solve_constrained(self, positions, check_tol: float = 1e-8):
        """Energy minimizers meeting the unit-coordinate constraints.

        ``positions`` are global auxiliary column ids; returns (list of
        interior solutions, list of multipliers).
        """
        if self.method == "cg":
            raise SolverError("constrained basis has no matrix-free route; "
                              "use the direct method")
        out_psi, out_mult = [], []
        for pos in positions:
            q = self._position(pos)
            e = np.zeros(len(self.cols))
            e[q] = 1.0
            psi, y = self._solve_bordered(penalty=False, top=None, bottom=e)
            resid = e - self.C.T @ psi
            if np.max(np.abs(resid)) > check_tol:
                raise SolverError(
                    f"constraint residual {np.max(np.abs(resid)):.2e} exceeds "
                    f"{check_tol:.0e} on patch ({self.S.kind} {self.S.owner})")
            out_psi.append(psi)
            out_mult.append(y)
        return out_psi, out_mult

    # -- penalized (relaxed and online) solves -----------------------------

    def solve_penalized(self, rhs_full=None, positions=None, rtol: float = 1e-9):
        """(A + C C^T) psi = rhs for vector loads or s-product columns.

        In the bordered form [[A, C], [C^T, -I]] [psi; y] = [b; d] the top
        block solves (A + C C^T) psi = b + C d, so an s-product-column load
        takes d = e and b = 0.
        """
        loads = []
        if positions is not None:
            for pos in positions:
                loads.append(("aux", self._position(pos)))
        if rhs_full is not None:
            for r in rhs_full:
                loads.append(("vec", np.asarray(r)[self.I]))
        if self.method == "cg":
            return self._penalized_cg(loads, rtol)
        out = []
        for kind, load in loads:
            if kind == "aux":
                e = np.zeros(len(self.cols))
                e[load] = 1.0
                psi, _ = self._solve_bordered(penalty=True, top=None, bottom=e)
            else:
                psi, _ = self._solve_bordered(penalty=True, top=load, bottom=None)
            out.append(psi)
        return out

    def _penalized_cg(self, loads, rtol):
        import pyamg

        if self._amg is None:
            nodes = self.I[::self.g.d] // self.g.d
            B = fem.rigid_modes(self.g, nodes)
            ml = pyamg.smoothed_aggregation_solver(self.A_II.tocsr(), B=B,
                                                   max_coarse=300)
            self._amg = ml.aspreconditioner(cycle="V")
        C = self.C

        def matvec(x):
            return self.A_II @ x + C @ (C.T @ x)

        op = spla.LinearOperator(self.A_II.shape, matvec=matvec)
        out = []
        for kind, load in loads:
            if kind == "aux":
                b = np.asarray(C[:, load].todense()).ravel()
            else:
                b = load
            x, info = spla.cg(op, b, rtol=rtol, maxiter=4000, M=self._amg)
            if info != 0:
                raise SolverError(f"penalized patch solve stalled (info={info})")
            out.append(x)
        return out

    def _position(self, pos):
        hits = np.flatnonzero(self.cols == pos)
        if len(hits) != 1:
            raise ValueError(f"auxiliary column {pos} not on this patch")
        return int(hits[0])

    def embed(self, v_interior):
        return fem.embed(v_interior, self.I, self.g.n_dofs)


def patch_system(g, A, aux, S):
    """Interior stiffness, s-product columns and their ids for a patch."""
    ps = PatchSolver(g, A, aux, S, method="schur")
    return ps.A_II, ps.C, ps.cols


def penalized_solve(g, A, aux, S, rhs_full=None, aux_positions=None,
                    method: str = "auto"):
    """One-shot penalized solves on a patch; returns full-length vectors."""
    ps = PatchSolver(g, A, aux, S, method=method)
    sols = ps.solve_penalized(rhs_full=rhs_full, positions=aux_positions)
    return [ps.embed(s) for s in sols]


def constrained_block_basis(g: GridHierarchy, A, aux: AuxiliarySpace, i: int, m: int,
                            js=None, check_tol: float = 1e-8, solver=None):
    """All constrained basis vectors of block i at oversampling m.

    Returns (columns, multipliers, subdomain); the constraint residual is
    checked against ``check_tol``.
    """
    S = oversample_block(g, i, m)
    ps = solver or PatchSolver(g, A, aux, S, method="schur")
    counts = aux.n_per_block
    if js is None:
        js = range(int(counts[i]))
    positions = [aux.column_position(i, j) for j in js]
    psis, mults = ps.solve_constrained(positions, check_tol=check_tol)
    return [ps.embed(p) for p in psis], mults, S


def relaxed_block_basis(g: GridHierarchy, A, aux: AuxiliarySpace, i: int, m: int,
                        js=None, method: str = "auto", solver=None):
    """All relaxed basis vectors of block i at oversampling m."""
    S = oversample_block(g, i, m)
    ps = solver or PatchSolver(g, A, aux, S, method=method)
    counts = aux.n_per_block
    if js is None:
        js = range(int(counts[i]))
    positions = [aux.column_position(i, j) for j in js]
    psis = ps.solve_penalized(positions=positions)
    return [ps.embed(p) for p in psis], S


def constrained_basis(g, A, aux, i, j, m):
    """Single constrained basis vector (convenience wrapper)."""
    psis, _, _ = constrained_block_basis(g, A, aux, i, m, js=[j])
    return psis[0]


def relaxed_basis(g, A, aux, i, j, m, method="auto"):
    """Single relaxed basis vector (convenience wrapper)."""
    psis, _ = relaxed_block_basis(g, A, aux, i, m, js=[j], method=method)
    return psis[0]


def global_basis(g, A, aux, i, j, variant: str):
    """Whole-domain limit of a basis vector; the localization target."""
    m_full = g.n_c  # enough layers to cover the box from any block
    if variant == "constrained":
        return constrained_basis(g, A, aux, i, j, m_full)
    if variant == "relaxed":
        return relaxed_basis(g, A, aux, i, j, m_full, method="schur")
    raise ValueError(f"unknown variant {variant!r}")


def constrained_basis_nullspace(g, A, aux, i, j, m, size_limit: int = 6000):
    """Dense null-space elimination of the constraints; small patches only.

    An independent route to the constrained minimizer, kept as a
    cross-check for the capacitance solver.
    """
    S = oversample_block(g, i, m)
    ps = PatchSolver(g, A, aux, S, method="schur")
    n = ps.A_II.shape[0]
    if n > size_limit:
        raise ValueError(f"null-space solver limited to {size_limit} dofs, patch has {n}")
    q = ps._position(aux.column_position(i, j))
    Cd = ps.C.toarray()
    e = np.zeros(Cd.shape[1])
    e[q] = 1.0
    # least-norm particular solution of C^T psi = e, then minimize in the kernel
    psi_p = Cd @ np.linalg.solve(Cd.T @ Cd, e)
    Z = sla.null_space(Cd.T)
    Ad = ps.A_II.toarray()
    w = np.linalg.solve(Z.T @ Ad @ Z, -Z.T @ (Ad @ psi_p))
    return ps.embed(psi_p + Z @ w)


def build_basis_matrix(g: GridHierarchy, A, aux: AuxiliarySpace, variant: str,
                       m: int, method: str = "auto", check_rank: bool = True) -> BasisSet:
    """Assemble the basis matrix, one column per auxiliary function.

    The column order follows the auxiliary numbering (block-major). With
    ``check_rank`` the coarse Gram matrix is factorized once to certify
    full column rank; rank failures report the offending blocks.
    """
    if variant not in ("constrained", "relaxed"):
        raise ValueError(f"unknown variant {variant!r}")
    counts = aux.n_per_block
    rows, cols, data = [], [], []
    c0 = 0
    for i in range(g.n_blocks):
        if variant == "constrained":
            psis, _, _ = constrained_block_basis(g, A, aux, i, m)
        else:
            psis, _ = relaxed_block_basis(g, A, aux, i, m, method=method)
        for v in psis:
            nz = np.flatnonzero(v)
            rows.append(nz)
            cols.append(np.full(len(nz), c0))
            data.append(v[nz])
            c0 += 1
    R = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.n_dofs, c0),
    ).tocsc()
    basis = BasisSet(
        R=R,
        origin=np.full(c0, variant),
        owner=np.repeat(np.arange(g.n_blocks), counts),
        aux_index=np.concatenate([np.arange(n) for n in counts]),
        layers=np.full(c0, m, dtype=int),
    )
    if check_rank:
        G = (basis.R.T @ (A @ basis.R)).toarray()
        try:
            sla.cho_factor(0.5 * (G + G.T))
        except sla.LinAlgError as exc:
            bad = _suspect_blocks(G, basis)
            raise SolverError(
                f"basis Gram matrix is not positive definite; suspect blocks {bad}") from exc
    return basis


def _suspect_blocks(G, basis: BasisSet):
    d = np.diag(G)
    bad_cols = np.flatnonzero(d <= 1e-14 * d.max())
    return sorted(set(basis.owner[bad_cols].tolist()))


def export_basis(basis: BasisSet, directory):
    """One raw float64 file per column plus a JSON sidecar with its metadata."""
    import json
    import os

    os.makedirs(directory, exist_ok=True)
    for c in range(basis.n_columns):
        v = np.asarray(basis.R[:, c].todense()).ravel()
        stem = os.path.join(directory, f"basis_{c:05d}")
        v.astype("<f8").tofile(stem + ".bin")
        with open(stem + ".json", "w") as fh:
            json.dump({
                "column": c,
                "origin": str(basis.origin[c]),
                "owner": int(basis.owner[c]),
                "aux_index": int(basis.aux_index[c]),
                "layers": int(basis.layers[c]),
                "length": len(v),
            }, fh, indent=1)
