import numpy as np
import pytest
import scipy.linalg as sla

import cemfem as cf
from cemfem import fem
from cemfem.auxiliary import (AuxiliarySpace, BlockModes, block_modes,
                              build_auxiliary_space, min_first_discarded,
                              pi_project, s_product, spectra_to_csv)


def _center_block(g):
    return g.block_id(tuple([g.n_c // 2] * g.d))


def test_rigid_kernel_2d(prob_homog32):
    g, coeff = prob_homog32["g"], prob_homog32["coeff"]
    bm = block_modes(g, coeff, _center_block(g), 3)
    assert np.all(bm.eigvals >= -1e-10)
    assert bm.eigvals[2] <= 1e-10 * bm.eigvals[3]
    assert bm.eigvals[3] > 1e-3


def test_rigid_kernel_3d():
    g = cf.build_hierarchy(3, 16, 4)
    coeff = cf.build_coefficients(g, np.ones(g.n_cells))
    bm = block_modes(g, coeff, _center_block(g), 6)
    assert bm.eigvals[5] <= 1e-10 * bm.eigvals[6]
    assert bm.eigvals[6] > 1e-3


def test_boundary_block_has_no_kernel(prob_homog32):
    # blocks clamped along the domain boundary lose the rigid modes
    g, coeff = prob_homog32["g"], prob_homog32["coeff"]
    bm = block_modes(g, coeff, g.block_id((0, 0)), 3)
    assert bm.eigvals[0] > 1e-8


def test_dense_oracle_matches(prob32):
    """Independent dense eigendecomposition of the same pencil."""
    g, coeff, aux = prob32["g"], prob32["coeff"], prob32["aux"]
    for i in (0, 5, 10):
        blk = aux.blocks[i]
        bmu = g.block_multi(i)
        nodes = g.nodes_in_box(bmu * g.ratio, (bmu + 1) * g.ratio)
        all_dofs = g.node_dofs(nodes)
        keep = ~np.repeat(g.boundary_node[nodes], g.d)
        A_loc = fem.assemble_stiffness_local(
            g, coeff.lam_cell, coeff.mu_cell, g.block_cells(i), all_dofs)
        A_loc = A_loc[keep][:, keep].toarray()
        s_loc = fem.mass_weights(g, coeff.kappa_cell,
                                 cells=g.block_cells(i))[all_dofs][keep]
        dinv = 1.0 / np.sqrt(s_loc)
        C = A_loc * dinv[:, None] * dinv[None, :]
        w_all = np.linalg.eigvalsh(0.5 * (C + C.T))
        k = blk.n_kept + 1
        scale = abs(w_all[k - 1]) + abs(w_all).max() * 1e-12
        assert np.abs(w_all[:k] - blk.eigvals) .max() <= 1e-8 * scale


def test_eigsh_path_matches_dense(prob32):
    g, coeff = prob32["g"], prob32["coeff"]
    i = _center_block(g)
    dense = block_modes(g, coeff, i, 3, dense_cutoff=10_000)
    sparse = block_modes(g, coeff, i, 3, dense_cutoff=1)
    scale = dense.eigvals[-1]
    assert np.abs(dense.eigvals - sparse.eigvals).max() <= 1e-8 * scale
    # eigenspaces agree up to rotation; compare via principal angles
    angles = sla.subspace_angles(dense.vecs, sparse.vecs)
    assert np.max(angles) <= 1e-6


def test_s_orthonormality(prob32):
    g, coeff, aux = prob32["g"], prob32["coeff"], prob32["aux"]
    for i in (2, 7):
        blk = aux.blocks[i]
        bmu = g.block_multi(i)
        nodes = g.nodes_in_box(bmu * g.ratio, (bmu + 1) * g.ratio)
        keep = ~np.repeat(g.boundary_node[nodes], g.d)
        all_dofs = g.node_dofs(nodes)
        s_loc = fem.mass_weights(g, coeff.kappa_cell,
                                 cells=g.block_cells(i))[all_dofs][keep]
        gram = blk.vecs.T @ (s_loc[:, None] * blk.vecs)
        assert np.abs(gram - np.eye(blk.n_kept)).max() <= 1e-10


def test_block_locality(prob32):
    g, aux = prob32["g"], prob32["aux"]
    Phi = aux.Phi.tocsc()
    for i in (1, 6):
        bmu = g.block_multi(i)
        nodes = g.nodes_in_box(bmu * g.ratio, (bmu + 1) * g.ratio)
        allowed = set(g.node_dofs(nodes).tolist())
        for c in range(aux.col_start[i], aux.col_start[i + 1]):
            rows = Phi[:, c].indices
            assert set(rows.tolist()) <= allowed


def test_min_discarded_definition():
    def fake(block, eigvals, n_kept):
        w = np.asarray(eigvals, dtype=float)
        return BlockModes(block=block, dofs=np.arange(2), eigvals=w,
                          vecs=np.zeros((2, n_kept)))

    one = AuxiliarySpace.__new__(AuxiliarySpace)
    one.blocks = [fake(0, [0, 0, 0, 2.5, 7.1], 4)]
    assert min_first_discarded(one) == pytest.approx(7.1)
    two = AuxiliarySpace.__new__(AuxiliarySpace)
    two.blocks = [fake(0, [0, 1, 3.0], 2), fake(1, [0, 0.5, 1.2], 2)]
    assert min_first_discarded(two) == pytest.approx(1.2)


def test_min_discarded_monotone_in_count(prob32):
    g, coeff = prob32["g"], prob32["coeff"]
    l3 = build_auxiliary_space(g, coeff, 3).min_discarded
    l4 = build_auxiliary_space(g, coeff, 4).min_discarded
    assert l4 >= l3 - 1e-12


def test_pi_reproduces_auxiliary(prob32):
    aux = prob32["aux"]
    col = np.asarray(aux.Phi[:, 7].todense()).ravel()
    proj = pi_project(col, aux)
    assert np.abs(proj - col).max() <= 1e-10 * np.abs(col).max()


def test_pi_annihilates_s_orthogonal_vectors(prob32, rng):
    aux = prob32["aux"]
    v = rng.standard_normal(aux.Phi.shape[0])
    w = v - pi_project(v, aux)     # lies in the kernel by construction
    pw = pi_project(w, aux)
    assert np.abs(pw).max() <= 1e-10 * np.abs(v).max()


def test_pi_residual_s_orthogonal(prob32, rng):
    aux = prob32["aux"]
    v = rng.standard_normal(aux.Phi.shape[0])
    resid = v - pi_project(v, aux)
    prods = aux.constraint.T @ resid
    scale = np.abs(aux.constraint.T @ v).max()
    assert np.abs(prods).max() <= 1e-10 * max(scale, 1.0)


def test_pi_idempotent_and_self_adjoint(prob32, rng):
    aux = prob32["aux"]
    u = rng.standard_normal(aux.Phi.shape[0])
    v = rng.standard_normal(aux.Phi.shape[0])
    pu = pi_project(u, aux)
    assert np.abs(pi_project(pu, aux) - pu).max() <= 1e-10 * np.abs(pu).max()
    left = s_product(aux, pu, v)
    right = s_product(aux, u, pi_project(v, aux))
    assert left == pytest.approx(right, rel=1e-10)


def test_rejects_oversized_request(prob16):
    g, coeff = prob16["g"], prob16["coeff"]
    with pytest.raises(ValueError):
        block_modes(g, coeff, 0, 10_000)
    with pytest.raises(ValueError):
        build_auxiliary_space(g, coeff, 0)


def test_spectra_csv(tmp_path, prob16):
    path = tmp_path / "spectra.csv"
    spectra_to_csv(prob16["aux"], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "block,k,eigenvalue"
    # one row per computed eigenvalue: blocks * (kept + 1)
    expect = sum(b.n_kept + 1 for b in prob16["aux"].blocks)
    assert len(lines) == 1 + expect
