"""Coarse-space solvers for high-contrast linear elasticity.

The library builds multiscale finite element spaces by constrained or
penalized energy minimization over oversampled subdomains, on top of a
per-block spectral (auxiliary) space, and enriches them online from
residuals. See the README for the workflow and the demos directory for
worked examples.
"""

__version__ = "0.1.0"

from .grid import (GridHierarchy, PartitionOfUnity, SubdomainIndexSet,
                   build_hierarchy, build_pou, neighborhood, oversample_block)
from .media import (Channel, CoefficientField, Inclusion, LChannel, MediumSpec,
                    build_coefficients, generate_medium, kappa_tilde,
                    kappa_tilde_cell, lame_from_young, preset)
from .fem import (FineSolution, SolverError, assemble_load, assemble_stiffness,
                  assemble_weighted_mass, mass_weights, restrict, solve_fine)
from .auxiliary import AuxiliarySpace, build_auxiliary_space, pi_project
from .offline import (BasisSet, build_basis_matrix, constrained_basis,
                      global_basis, relaxed_basis)
from .coarse import MultiscaleSolution, coarse_solve, error_norms
from .online import (EnrichmentState, enrich_loop, local_residual_norm,
                     online_basis, residual_vector, select_neighborhoods)

__all__ = [name for name in dir() if not name.startswith("_")]
