"""Build the two offline coarse spaces on a small channelized medium and
compare them against the fine reference solution.

Walks the full offline pipeline: grid hierarchy, medium, fine operators,
per-block spectral basis, energy-minimizing basis functions (constrained
and relaxed), coarse Galerkin solve and the weighted error norms. Takes a
few seconds.
"""

import numpy as np

import cemfem as cf
from cemfem.coarse import coarse_solve, error_norms
from cemfem.offline import build_basis_matrix, relaxed_basis
from cemfem.grid import oversample_block
from cemfem import fem

# a 64^2 fine grid split into 8x8 coarse blocks
g = cf.build_hierarchy(d=2, n_f=64, n_c=8)
print(f"grid: {g.n_f}^2 fine cells, {g.n_c}^2 blocks, {g.n_dofs} displacement dofs")

# stiff channels + random blobs at contrast 1e4 (fixed seed)
mspec = cf.preset("model1-like", n_f=64)
e_cell = cf.generate_medium(mspec)
coeff = cf.build_coefficients(g, e_cell, nu=0.2)
print(f"medium: {np.mean(e_cell > 1) * 100:.0f}% stiff cells at contrast {mspec.e_contrast:g}")

A = cf.assemble_stiffness(g, coeff.lam_cell, coeff.mu_cell)
F = cf.assemble_load(g)                  # constant unit force
u_h = cf.solve_fine(A, F, g).u
print(f"fine reference solved, energy {u_h @ (A @ u_h):.4e}")

# four spectral functions per block; the smallest discarded eigenvalue
# indicates how well the auxiliary space separates the contrast modes
aux = cf.build_auxiliary_space(g, coeff, 4)
print(f"auxiliary space: {aux.n_columns} functions, "
      f"min first-discarded eigenvalue {aux.min_discarded:.3f}")

for variant in ("constrained", "relaxed"):
    basis = build_basis_matrix(g, A, aux, variant, m=2)
    sol = coarse_solve(basis.R, A, F)
    el2, eh1 = error_norms(g, A, coeff.lam_cell, coeff.mu_cell, sol.u_fine, u_h)
    print(f"{variant:>11}: {basis.n_columns} columns, e_L2 = {el2:.3e}, e_H1 = {eh1:.3e}")

# the relaxed functions concentrate on their block and decay outward
i = g.block_id((4, 4))
psi = relaxed_basis(g, A, aux, i, 0, m=3)
total = psi @ (A @ psi)
print("energy fraction outside the block grown by 0/1/2 layers:")
for layer in range(3):
    S = oversample_block(g, i, layer)
    outside = np.setdiff1d(np.arange(g.n_cells), S.cells)
    frac = fem.element_energy(g, coeff.lam_cell, coeff.mu_cell, psi, cells=outside) / total
    print(f"  {layer} layers: {frac:.2e}")
