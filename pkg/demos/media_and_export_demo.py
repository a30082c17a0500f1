"""Medium construction, raster files and the export surfaces.

Shows the descriptor-based medium recipes, the per-cell raster format for
loading external fields, the per-block spectra dump and the operator,
basis and solution exports.
"""

import os
import tempfile

import numpy as np

import cemfem as cf
from cemfem import fem
from cemfem.auxiliary import spectra_to_csv
from cemfem.coarse import coarse_solve, export_solution
from cemfem.media import load_raster, save_raster
from cemfem.offline import build_basis_matrix, export_basis

out = tempfile.mkdtemp(prefix="cemfem_demo_")
print(f"writing demo artifacts to {out}")

# hand-built medium: one horizontal channel, one L bend, two blobs
spec = cf.MediumSpec(
    d=2, n_f=32, e_contrast=1e4,
    channels=(
        cf.Channel(start=(0, 10), axis=0, length=32, thickness=2),
        cf.LChannel(start=(4, 24), axis1=0, length1=20, axis2=1, length2=-8,
                    thickness=2),
    ),
    inclusions=(cf.Inclusion(corner=(20, 4), extents=(3, 3)),
                cf.Inclusion(corner=(8, 16), extents=(2, 4))),
)
e_cell = cf.generate_medium(spec)

# rasters round-trip through flat binary or CSV, C-ordered over (x, y)
raster = os.path.join(out, "young.bin")
save_raster(raster, e_cell)
reloaded = load_raster(raster, (32, 32)).ravel()
assert np.array_equal(reloaded, e_cell)
print(f"raster round trip ok ({os.path.getsize(raster)} bytes)")

g = cf.build_hierarchy(2, 32, 4)
coeff = cf.build_coefficients(g, e_cell)
A = cf.assemble_stiffness(g, coeff.lam_cell, coeff.mu_cell)
F = cf.assemble_load(g)
aux = cf.build_auxiliary_space(g, coeff, 3)

# per-block spectra as CSV for gap inspection
spectra_to_csv(aux, os.path.join(out, "spectra.csv"))

# operators in (row, col, value) text form for external verification
fem.write_coo(os.path.join(out, "stiffness.txt"), A)
fem.write_vector(os.path.join(out, "load.txt"), F)

basis = build_basis_matrix(g, A, aux, "relaxed", 1)
export_basis(basis, os.path.join(out, "basis"))
sol = coarse_solve(basis.R, A, F)
export_solution(os.path.join(out, "coarse.csv"), g, sol.u_fine, fmt="csv")
export_solution(os.path.join(out, "reference.bin"), g, cf.solve_fine(A, F, g).u,
                fmt="bin")

for name in sorted(os.listdir(out)):
    print(" ", name)
