"""Fine-grid assembly and solves for isotropic linear elasticity.

The stiffness form is a(u,v) = int 2 mu eps(u):eps(v) + lam div u div v
with per-cell constant coefficients, discretized with Q1 multilinear
elements and full 2^d Gauss quadrature (exact for this data). The weighted
mass uses the nodal (corner) rule, so it is diagonal; block-restricted
weighted masses summed over blocks reproduce the global one exactly.

Operators are assembled on the full dof set. Clamped boundary dofs are
eliminated symmetrically in place: their rows and columns are zeroed and
the diagonal set to one, which keeps the matrix size stable so subdomain
restriction is plain index extraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridHierarchy, SubdomainIndexSet

_GAUSS_1D = (0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0)))


class SolverError(RuntimeError):
    """A linear solve failed; the message carries diagnostics."""


def _reference_gradient_tensor(d):
    """G[k, l, a, b] = int_{[0,1]^d} dN_a/dx_k dN_b/dx_l over the unit cell."""
    nc = 2 ** d
    deltas = np.array(list(np.ndindex(*(2,) * d)))
    G = np.zeros((d, d, nc, nc))
    for pt in np.ndindex(*(2,) * d):
        xi = np.array([_GAUSS_1D[p] for p in pt])
        w = 0.5 ** d
        vals = np.where(deltas == 1, xi, 1.0 - xi)          # (nc, d) per-axis factors
        grads = np.empty((nc, d))
        for k in range(d):
            fac = np.prod(np.delete(vals, k, axis=1), axis=1)
            grads[:, k] = np.where(deltas[:, k] == 1, 1.0, -1.0) * fac
        for k in range(d):
            for l in range(d):
                G[k, l] += w * np.outer(grads[:, k], grads[:, l])
    return G


def _element_matrices(d, h):
    """Unit-coefficient element stiffness pair (mu part, lambda part)."""
    G = _reference_gradient_tensor(d) * h ** (d - 2)
    nc = 2 ** d
    n = nc * d
    K_mu = np.zeros((n, n))
    K_lam = np.zeros((n, n))
    trace = sum(G[k, k] for k in range(d))
    for i in range(d):
        for j in range(d):
            blk_mu = G[j, i].copy()
            if i == j:
                blk_mu += trace
            K_mu[i::d, j::d] = blk_mu
            K_lam[i::d, j::d] = G[i, j]
    return K_mu, K_lam


_ELEMENT_CACHE: dict = {}


def element_matrices(g: GridHierarchy):
    key = (g.d, g.n_f)
    if key not in _ELEMENT_CACHE:
        _ELEMENT_CACHE[key] = _element_matrices(g.d, g.h)
    return _ELEMENT_CACHE[key]


def _eliminate(A, g: GridHierarchy):
    """Zero clamped rows/columns symmetrically and put 1 on their diagonal."""
    free = np.zeros(g.n_dofs, dtype=bool)
    free[g.free_dofs] = True
    d = sp.diags(free.astype(float))
    A = d @ A @ d
    fixed = sp.diags((~free).astype(float))
    return (A + fixed).tocsr()


def assemble_stiffness(g: GridHierarchy, lam_cell, mu_cell, cells=None,
                       eliminate=True) -> sp.csr_matrix:
    """Elasticity stiffness over all cells or a subset.

    With ``eliminate`` the boundary-clamped dofs are removed symmetrically
    (identity rows in place); pass ``eliminate=False`` for local Neumann
    problems such as the block spectral pencils.
    """
    lam_cell = np.asarray(lam_cell, dtype=float)
    mu_cell = np.asarray(mu_cell, dtype=float)
    if np.any(lam_cell <= 0) or np.any(mu_cell <= 0):
        raise ValueError("Lame coefficients must be positive in every cell")
    if cells is None:
        cells = np.arange(g.n_cells)
    K_mu, K_lam = element_matrices(g)
    nloc = K_mu.shape[0]
    A = sp.csr_matrix((g.n_dofs, g.n_dofs))
    for chunk in _chunks(np.asarray(cells), max_entries=2 ** 25, per_cell=nloc * nloc):
        eldofs = g.cell_dofs(chunk).astype(np.int32)
        rows = np.repeat(eldofs, nloc, axis=1).ravel()
        cols = np.tile(eldofs, (1, nloc)).ravel()
        data = (mu_cell[chunk, None] * K_mu.ravel()[None, :]
                + lam_cell[chunk, None] * K_lam.ravel()[None, :]).ravel()
        A = A + sp.coo_matrix((data, (rows, cols)), shape=(g.n_dofs, g.n_dofs)).tocsr()
    if eliminate:
        A = _eliminate(A, g)
    A.sum_duplicates()
    return A


def _chunks(cells, max_entries, per_cell):
    step = max(1, max_entries // per_cell)
    for i in range(0, len(cells), step):
        yield cells[i:i + step]


def assemble_stiffness_local(g: GridHierarchy, lam_cell, mu_cell, cells,
                             dofs) -> sp.csr_matrix:
    """Stiffness over ``cells`` indexed by the sorted dof list ``dofs``.

    Every dof touched by the cells must appear in ``dofs``; no boundary
    elimination is applied (local problems handle their own conditions).
    """
    cells = np.asarray(cells)
    dofs = np.asarray(dofs)
    K_mu, K_lam = element_matrices(g)
    nloc = K_mu.shape[0]
    eldofs = g.cell_dofs(cells)
    loc = np.searchsorted(dofs, eldofs)
    if np.any(loc >= len(dofs)) or np.any(dofs[np.minimum(loc, len(dofs) - 1)] != eldofs):
        raise ValueError("cells touch dofs outside the given index set")
    rows = np.repeat(loc, nloc, axis=1).ravel()
    cols = np.tile(loc, (1, nloc)).ravel()
    data = (np.asarray(mu_cell)[cells, None] * K_mu.ravel()[None, :]
            + np.asarray(lam_cell)[cells, None] * K_lam.ravel()[None, :]).ravel()
    n = len(dofs)
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def mass_weights(g: GridHierarchy, kappa, cells=None) -> np.ndarray:
    """Diagonal of the weighted mass under the nodal quadrature rule.

    Each cell contributes h^d / 2^d times its weight at each of its
    corners. ``kappa`` may hold one value per fine cell (the canonical
    form; keeps the weight of a subdomain independent of its surroundings)
    or one value per fine node. Restricting ``cells`` to one coarse block
    yields that block's weighted mass, and the blocks sum to the global
    diagonal exactly.
    """
    kappa = np.asarray(kappa, dtype=float)
    if cells is None:
        cells = np.arange(g.n_cells)
    cells = np.asarray(cells)
    w = g.h ** g.d / 2 ** g.d
    acc = np.zeros(g.n_nodes)
    corners = g.cell_corner_nodes(cells)
    if kappa.size == g.n_cells:
        contrib = w * kappa[cells]
        for c in range(corners.shape[1]):
            np.add.at(acc, corners[:, c], contrib)
    elif kappa.size == g.n_nodes:
        for c in range(corners.shape[1]):
            np.add.at(acc, corners[:, c], w)
        acc *= kappa
    else:
        raise ValueError(f"weight length {kappa.size} matches neither the "
                         f"{g.n_cells} cells nor the {g.n_nodes} nodes")
    return np.repeat(acc, g.d)


def assemble_weighted_mass(g: GridHierarchy, kappa, cells=None) -> sp.csr_matrix:
    """Weighted mass operator; diagonal by construction, one scalar per dof."""
    if np.any(np.asarray(kappa) < 0):
        raise ValueError("spectral weight must be nonnegative")
    return sp.diags(mass_weights(g, kappa, cells)).tocsr()


def assemble_load(g: GridHierarchy, f=None, eliminate=True) -> np.ndarray:
    """Consistent load vector for a constant force (default all ones).

    A callable ``f(x) -> (npts, d)`` is integrated with the same Gauss rule
    as the stiffness; the constant case uses the exact hat integrals
    h^d / 2^d per cell corner.
    """
    if f is None:
        f = np.ones(g.d)
    F = np.zeros(g.n_dofs)
    corners = g.cell_corner_nodes(np.arange(g.n_cells))
    if callable(f):
        deltas = np.array(list(np.ndindex(*(2,) * g.d)))
        multi = np.asarray(np.unravel_index(np.arange(g.n_cells), g.cell_shape, order="C")).T
        for pt in np.ndindex(*(2,) * g.d):
            xi = np.array([_GAUSS_1D[p] for p in pt])
            w = g.h ** g.d * 0.5 ** g.d
            x = (multi + xi) * g.h
            fx = np.asarray(f(x))
            shape_vals = np.prod(np.where(deltas == 1, xi, 1.0 - xi), axis=1)
            for a in range(corners.shape[1]):
                for c in range(g.d):
                    np.add.at(F, corners[:, a] * g.d + c, w * shape_vals[a] * fx[:, c])
    else:
        f = np.asarray(f, dtype=float)
        if f.shape != (g.d,):
            raise ValueError(f"force must have {g.d} components, got shape {f.shape}")
        w = g.h ** g.d / 2 ** g.d
        acc = np.zeros(g.n_nodes)
        for a in range(corners.shape[1]):
            np.add.at(acc, corners[:, a], w)
        F = (acc[:, None] * f).ravel()
    if eliminate:
        mask = np.repeat(g.boundary_node, g.d)
        F[mask] = 0.0
    return F


def restrict(obj, S: SubdomainIndexSet | np.ndarray):
    """Extract the interior-dof part of an operator or vector.

    Subdomain boundary dofs take homogeneous Dirichlet data, so the
    restricted system lives on the interior index set only.
    """
    dofs = S.interior_dofs if isinstance(S, SubdomainIndexSet) else np.asarray(S)
    if len(dofs) == 0:
        raise ValueError("subdomain has empty interior")
    if sp.issparse(obj):
        return obj[dofs][:, dofs].tocsr()
    return np.asarray(obj)[dofs]


def embed(v_local, dofs, n_dofs) -> np.ndarray:
    out = np.zeros(n_dofs)
    out[dofs] = v_local
    return out


def rigid_modes(g: GridHierarchy, nodes=None) -> np.ndarray:
    """Columns spanning the d(d+1)/2 rigid displacements at the given nodes."""
    if nodes is None:
        xyz = g.coords
    else:
        xyz = g.coords[nodes]
    n = len(xyz)
    d = g.d
    cols = []
    for c in range(d):
        m = np.zeros((n, d))
        m[:, c] = 1.0
        cols.append(m.ravel())
    if d == 2:
        m = np.zeros((n, 2))
        m[:, 0] = -xyz[:, 1]
        m[:, 1] = xyz[:, 0]
        cols.append(m.ravel())
    else:
        for (i, j) in ((0, 1), (1, 2), (0, 2)):
            m = np.zeros((n, 3))
            m[:, i] = -xyz[:, j]
            m[:, j] = xyz[:, i]
            cols.append(m.ravel())
    return np.column_stack(cols)


@dataclass
class FineSolution:
    """Reference displacement on the fine grid (zero on the boundary)."""
    u: np.ndarray
    rel_residual: float
    method: str
    iterations: int = 0


def _block_jacobi(A_ff, d):
    """Inverse of the d x d node-diagonal blocks as a preconditioner."""
    n = A_ff.shape[0] // d
    diag_blocks = np.empty((n, d, d))
    for i in range(d):
        for j in range(d):
            off = j - i
            band = A_ff.diagonal(off)
            diag_blocks[:, i, j] = band[i::d][:n] if off >= 0 else band[j::d][:n]
    inv = np.linalg.inv(diag_blocks)

    def apply(r):
        return np.einsum("bij,bj->bi", inv, r.reshape(n, d)).ravel()

    return spla.LinearOperator(A_ff.shape, matvec=apply)


def _amg_preconditioner(A_ff, g, free_nodes):
    import pyamg

    B = rigid_modes(g, free_nodes)
    ml = pyamg.smoothed_aggregation_solver(A_ff.tocsr(), B=B, max_coarse=200)
    return ml.aspreconditioner(cycle="V")


def solve_fine(A: sp.csr_matrix, F: np.ndarray, g: GridHierarchy,
               method: str = "auto", rtol: float = 1e-10,
               precond: str = "amg") -> FineSolution:
    """Solve the clamped fine system A u = F.

    ``auto`` picks a sparse direct factorization up to roughly 3e5 dofs in
    2D; 3D fill-in makes direct factorization impractical much earlier, so
    large 3D systems go to preconditioned conjugate gradients.

    The reported residual is the normwise backward error
    |F - A u| / (|A| |u| + |F|); at high contrast the plain |F|-relative
    residual bottoms out at the float64 rounding of the matrix product and
    stops being meaningful.
    """
    free = g.free_dofs
    n = len(free)
    if method == "auto":
        method = "direct" if (g.d == 2 and n <= 300_000) or (g.d == 3 and n <= 40_000) else "cg"
    A_ff = A[free][:, free].tocsc()
    b = F[free]
    if not np.any(b):
        return FineSolution(u=np.zeros(g.n_dofs), rel_residual=0.0, method=method)
    if method == "direct":
        try:
            lu = spla.splu(A_ff, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverError(f"direct factorization failed ({exc}); "
                              "matrix may be indefinite or singular") from exc
        x = lu.solve(b)
        b_norm = np.linalg.norm(b)
        prev = np.inf
        for _ in range(5):   # refinement: high contrast costs the LU digits
            resid = b - A_ff @ x
            rnorm = np.linalg.norm(resid)
            if rnorm <= 1e-12 * b_norm or rnorm >= 0.5 * prev:
                break
            x = x + lu.solve(resid)
            prev = rnorm
        iters = 0
    elif method == "cg":
        free_nodes = free[::g.d] // g.d
        if precond == "amg":
            try:
                M = _amg_preconditioner(A_ff, g, free_nodes)
            except Exception:
                M = _block_jacobi(A_ff, g.d)
        else:
            M = _block_jacobi(A_ff, g.d)
        it = [0]

        def cb(_):
            it[0] += 1

        x, info = spla.cg(A_ff, b, rtol=rtol, maxiter=20000, M=M, callback=cb)
        if info < 0:
            raise SolverError(f"conjugate gradients broke down (info={info}, "
                              f"{it[0]} iterations)")
        iters = it[0]
    else:
        raise ValueError(f"unknown solve method {method!r}")
    norm_a = abs(A_ff).sum(axis=0).max()
    rel = np.linalg.norm(A_ff @ x - b) / (norm_a * np.linalg.norm(x)
                                          + np.linalg.norm(b))
    if rel > max(rtol, 1e-10) * 10:
        raise SolverError(f"fine solve backward error {rel:.2e} exceeds tolerance; "
                          f"method={method}, {iters} iterations")
    u = embed(x, free, g.n_dofs)
    return FineSolution(u=u, rel_residual=float(rel), method=method, iterations=iters)


def energy_product(A: sp.spmatrix, u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ (A @ v))


def element_energy(g: GridHierarchy, lam_cell, mu_cell, u: np.ndarray,
                   cells=None) -> float:
    """a(u, u) accumulated cell by cell; independent of the sparse assembly."""
    if cells is None:
        cells = np.arange(g.n_cells)
    K_mu, K_lam = element_matrices(g)
    eldofs = g.cell_dofs(np.asarray(cells))
    ue = u[eldofs]
    e_mu = np.einsum("ci,ij,cj->c", ue, K_mu, ue)
    e_lam = np.einsum("ci,ij,cj->c", ue, K_lam, ue)
    return float(np.sum(np.asarray(mu_cell)[cells] * e_mu
                        + np.asarray(lam_cell)[cells] * e_lam))


def write_coo(path, M: sp.spmatrix):
    """Dump a sparse operator as '(row, col, value)' text for external checks."""
    coo = sp.coo_matrix(M)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


def write_vector(path, v: np.ndarray):
    with open(path, "w") as fh:
        fh.write(f"# {len(v)}\n")
        for i, x in enumerate(v):
            fh.write(f"{i} {float(x)!r}\n")
