import numpy as np
import pytest

import cemfem as cf
from cemfem import experiments


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


def _problem(d, n_f, n_c, mspec, n_aux, nu=0.2):
    g = cf.build_hierarchy(d, n_f, n_c)
    e = cf.generate_medium(mspec)
    coeff = cf.build_coefficients(g, e, nu=nu)
    A = cf.assemble_stiffness(g, coeff.lam_cell, coeff.mu_cell)
    A_free = cf.assemble_stiffness(g, coeff.lam_cell, coeff.mu_cell, eliminate=False)
    F = cf.assemble_load(g)
    u_h = cf.solve_fine(A, F, g).u
    aux = cf.build_auxiliary_space(g, coeff, n_aux)
    pou = cf.build_pou(g)
    return {"g": g, "coeff": coeff, "A": A, "A_free": A_free, "F": F,
            "u_h": u_h, "aux": aux, "pou": pou, "mspec": mspec}


@pytest.fixture(scope="session")
def prob32():
    """2D 32x32 grid, 4x4 blocks, one channel plus blobs; 3 aux per block."""
    mspec = cf.MediumSpec(
        d=2, n_f=32,
        channels=(cf.Channel(start=(0, 10), axis=0, length=32, thickness=2),),
        n_random_inclusions=4, seed=3)
    return _problem(2, 32, 4, mspec, 3)


@pytest.fixture(scope="session")
def prob16():
    """2D 16x16 grid for dense oracles."""
    mspec = cf.MediumSpec(
        d=2, n_f=16,
        channels=(cf.Channel(start=(0, 6), axis=0, length=16, thickness=2),),
        seed=5)
    return _problem(2, 16, 4, mspec, 2)


@pytest.fixture(scope="session")
def prob_homog32():
    """Homogeneous 2D medium on the 32x32 grid."""
    mspec = cf.MediumSpec(d=2, n_f=32)
    return _problem(2, 32, 4, mspec, 3)


@pytest.fixture(scope="session")
def prob_homog64():
    """Homogeneous 2D medium, 8x8 coarse blocks; room for localization sweeps."""
    mspec = cf.MediumSpec(d=2, n_f=64)
    return _problem(2, 64, 8, mspec, 3)


@pytest.fixture(scope="session")
def prob3d():
    """3D 16^3 grid with a rod medium; 6 aux per block."""
    mspec = cf.MediumSpec(
        d=3, n_f=16,
        channels=(cf.Channel(start=(0, 6, 6), axis=0, length=16, thickness=2),),
        seed=9)
    return _problem(3, 16, 4, mspec, 6)


@pytest.fixture(scope="session")
def session():
    return experiments.Session()


@pytest.fixture(scope="session")
def trend_session():
    """Shared cache for the preset-scale trend tests."""
    return experiments.Session(basis_cache_size=6)
