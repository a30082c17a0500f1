"""Acceptance suite: one test per criterion, one printed verdict line each.

Criteria 1-10 are exact property checks on small grids and finish in well
under two minutes. Criteria 11-16 reproduce the study designs on the
shipped seeded presets at working scale (128^2 / 32^3); they are marked
``trend`` and dominate the runtime (tens of minutes single-threaded).
Run ``pytest tests/test_acceptance.py -v -s`` for the per-criterion lines;
``-m "not trend"`` deselects the long part.
"""

import contextlib

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

import cemfem as cf
from cemfem import experiments as ex
from cemfem import fem
from cemfem.auxiliary import block_modes
from cemfem.coarse import coarse_solve, error_norms
from cemfem.grid import build_hierarchy, build_pou, neighborhood, oversample_block
from cemfem.media import build_coefficients, generate_medium, lame_from_young
from cemfem.offline import (PatchSolver, build_basis_matrix, constrained_basis,
                            constrained_basis_nullspace, global_basis,
                            relaxed_basis)
from cemfem.online import (enrich_loop, local_residual_norm, residual_vector)

from test_fem import _energy_error_quadrature, _mms_fields


@contextlib.contextmanager
def criterion(num, text):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {num:02d} FAIL - {text}")
        raise
    print(f"ACCEPTANCE {num:02d} PASS - {text}")


def a_norm(A, v):
    return float(np.sqrt(max(v @ (A @ v), 0.0)))


@pytest.fixture(scope="module")
def small64(trend_session):
    """2D 64^2 / 8x8 blocks on the shipped medium at reduced resolution."""
    cfg = ex.ExperimentConfig.from_dict(
        {"medium": "model1-like", "d": 2, "n_f": 64, "n_c": 8,
         "n_basis": 4, "layers": 2})
    mspec = cfg.medium_spec(1e4)
    g = trend_session.grid(2, 64, 8)
    fine = trend_session.fine(mspec, 0.2, "paper")
    aux = trend_session.aux(mspec, 0.2, "paper", 8, 4)
    return {"cfg": cfg, "mspec": mspec, "g": g, "aux": aux, **fine}


# --------------------------------------------------------------------------
# property criteria
# --------------------------------------------------------------------------

def test_c01_partition_of_unity():
    with criterion(1, "hat functions sum to one within 1e-14 (2D and 3D)"):
        for d, n_f, n_c in ((2, 64, 8), (3, 16, 4)):
            g = build_hierarchy(d, n_f, n_c)
            total = np.asarray(build_pou(g).chi.sum(axis=0)).ravel()
            assert np.abs(total - 1.0).max() <= 1e-14


def test_c02_rigid_body_kernel():
    with criterion(2, "homogeneous interior blocks carry 3 (2D) / 6 (3D) "
                      "zero-energy modes within 1e-10 of the next eigenvalue"):
        for d, n_f, n_c, n_zero in ((2, 64, 8, 3), (3, 16, 4, 6)):
            g = build_hierarchy(d, n_f, n_c)
            coeff = build_coefficients(g, np.ones(g.n_cells))
            i = g.block_id(tuple([n_c // 2] * d))
            bm = block_modes(g, coeff, i, n_zero)
            assert np.all(bm.eigvals >= -1e-10)
            assert bm.eigvals[n_zero - 1] <= 1e-10 * bm.eigvals[n_zero]


def test_c03_constrained_orthogonality_full_run(small64):
    with criterion(3, "every constrained column meets the unit-coordinate "
                      "s-products within 1e-8 on the 64^2 run"):
        g, A, aux = small64["g"], small64["A"], small64["aux"]
        basis = build_basis_matrix(g, A, aux, "constrained", 2, check_rank=False)
        prods = (aux.constraint.T @ basis.R).toarray()
        expect = np.eye(aux.n_columns)
        assert np.abs(prods - expect).max() <= 1e-8


def test_c04_kkt_vs_nullspace(prob32):
    with criterion(4, "saddle-point and null-space constructions agree to "
                      "1e-8 in energy norm on a 32^2 grid"):
        g, A, aux = prob32["g"], prob32["A"], prob32["aux"]
        for (i, j, m) in ((5, 0, 1), (10, 2, 1), (0, 1, 2)):
            fast = constrained_basis(g, A, aux, i, j, m)
            slow = constrained_basis_nullspace(g, A, aux, i, j, m)
            assert a_norm(A, fast - slow) <= 1e-8 * max(a_norm(A, fast), 1e-30)


def test_c05_relaxed_weak_identity(prob32, rng):
    with criterion(5, "relaxed columns satisfy their weak equation against "
                      "20 random local tests within 1e-8"):
        g, A, aux = prob32["g"], prob32["A"], prob32["aux"]
        S = oversample_block(g, 5, 1)
        ps = PatchSolver(g, A, aux, S)
        pos = aux.column_position(5, 1)
        q = ps._position(pos)
        psi = ps.solve_penalized(positions=[pos])[0]
        scale = a_norm(ps.A_II, psi)
        for _ in range(20):
            v = rng.standard_normal(len(S.interior_dofs))
            lhs = v @ (ps.A_II @ psi) + (ps.C.T @ v) @ (ps.C.T @ psi)
            rhs = (ps.C.T @ v)[q]
            assert abs(lhs - rhs) <= 1e-8 * max(scale * a_norm(ps.A_II, v), 1e-30)


def test_c06_galerkin_and_pythagoras(prob32):
    with criterion(6, "coarse solve is Galerkin-orthogonal (1e-8) and energies "
                      "split by Pythagoras (1e-8)"):
        g, A, F, u_h = prob32["g"], prob32["A"], prob32["F"], prob32["u_h"]
        basis = build_basis_matrix(g, A, prob32["aux"], "relaxed", 1)
        sol = coarse_solve(basis.R, A, F)
        assert np.linalg.norm(basis.R.T @ (F - A @ sol.u_fine)) \
            <= 1e-8 * np.linalg.norm(F)
        total = u_h @ (A @ u_h)
        kept = sol.u_fine @ (A @ sol.u_fine)
        diff = u_h - sol.u_fine
        assert total == pytest.approx(kept + diff @ (A @ diff), rel=1e-8)


def test_c07_localization_limit(prob32):
    with criterion(7, "whole-domain oversampling reproduces the global basis "
                      "to 1e-8 for both variants"):
        g, A, aux = prob32["g"], prob32["A"], prob32["aux"]
        for variant, build in (("constrained", constrained_basis),
                               ("relaxed", relaxed_basis)):
            loc = build(g, A, aux, 5, 1, g.n_c)
            glo = global_basis(g, A, aux, 5, 1, variant)
            assert a_norm(A, loc - glo) <= 1e-8 * max(a_norm(A, glo), 1e-30)


def test_c08_online_monotone_and_terminating(prob32):
    with criterion(8, "enrichment never increases the energy error and "
                      "terminates once the residual vanishes"):
        g, A, F, u_h = prob32["g"], prob32["A"], prob32["F"], prob32["u_h"]
        coeff = prob32["coeff"]
        basis = build_basis_matrix(g, A, prob32["aux"], "relaxed", 1)
        state = enrich_loop(g, A, F, prob32["aux"], prob32["pou"], basis, u_h,
                            coeff.lam_cell, coeff.mu_cell, theta=0.2,
                            mode="adaptive", max_iter=3)
        eh1 = [rec["e_h1"] for rec in state.history]
        assert all(b <= a + 1e-10 for a, b in zip(eh1, eh1[1:]))
        # a zero residual stops the loop with no enrichment
        n_free = len(g.free_dofs)
        full = sp.csc_matrix((np.ones(n_free), (g.free_dofs, np.arange(n_free))),
                             shape=(g.n_dofs, n_free))
        from cemfem.offline import BasisSet
        full_basis = BasisSet(R=full, origin=np.full(n_free, "online"),
                              owner=np.zeros(n_free, dtype=int),
                              aux_index=np.full(n_free, -1),
                              layers=np.ones(n_free, dtype=int))
        done = enrich_loop(g, A, F, prob32["aux"], prob32["pou"], full_basis, u_h,
                           coeff.lam_cell, coeff.mu_cell, max_iter=3)
        assert done.flag == "converged" and len(done.history) == 1


def test_c09_dual_norm_dense_oracle(prob16):
    with criterion(9, "local residual norms match the dense rank-one "
                      "eigenvalue oracle to 1e-6 on a 16^2 grid"):
        g, A, F, pou, aux = (prob16["g"], prob16["A"], prob16["F"],
                             prob16["pou"], prob16["aux"])
        basis = build_basis_matrix(g, A, aux, "relaxed", 1)
        sol = coarse_solve(basis.R, A, F)
        r = residual_vector(A, F, sol.u_fine)
        checked = 0
        for v in range(g.n_vertices):
            S = neighborhood(g, v, 0)
            if len(S.interior_dofs) == 0:
                continue
            row = pou.chi.getrow(v)
            chi = np.zeros(g.n_nodes)
            chi[row.indices] = row.data
            r_loc = (np.repeat(chi, g.d) * r)[S.interior_dofs]
            got = local_residual_norm(g, A, r, pou, v)
            A_loc = A[S.interior_dofs][:, S.interior_dofs].toarray()
            lam = sla.eigh(np.outer(r_loc, r_loc), A_loc, eigvals_only=True)
            expect = np.sqrt(max(lam.max(), 0.0))
            assert got == pytest.approx(expect, rel=1e-6, abs=1e-14)
            checked += 1
        assert checked >= 9


def test_c10_fine_solver_convergence():
    with criterion(10, "manufactured-solution energy error decays at first "
                       "order (slope 1.0 +/- 0.15) under refinement"):
        errors = []
        for n_f in (8, 16, 32):
            g = build_hierarchy(2, n_f, 2)
            lam_f, mu_f = lame_from_young(np.ones(g.n_cells), 0.2)
            disp, grad, force = _mms_fields(lam_f[0], mu_f[0])
            A = fem.assemble_stiffness(g, lam_f, mu_f)
            F = fem.assemble_load(g, force)
            u_h = fem.solve_fine(A, F, g).u
            errors.append(_energy_error_quadrature(g, lam_f[0], mu_f[0], u_h, grad))
        slope = np.log2(np.array(errors[:-1]) / np.array(errors[1:])).mean()
        assert abs(slope - 1.0) <= 0.15


# --------------------------------------------------------------------------
# trend criteria on the shipped presets
# --------------------------------------------------------------------------

pytestmark_trend = pytest.mark.trend


@pytest.mark.trend
def test_c11_h_sweep_relaxed(trend_session):
    with criterion(11, "relaxed errors fall with the coarse size and stay "
                       "within the pinned envelopes"):
        cfg = ex.ExperimentConfig.from_dict(
            {"medium": "model1-like", "d": 2, "n_f": 128,
             "n_c": [8, 16, 32], "variant": "relaxed", "n_basis": 4,
             "layers": "auto"})
        rows = ex.run(cfg, trend_session)["rows"]
        eh1 = [r["e_h1"] for r in rows]
        el2 = [r["e_l2"] for r in rows]
        assert eh1[0] > eh1[1] > eh1[2]
        assert eh1[0] <= 0.5
        assert eh1[1] <= 0.15
        hs = np.array([r["H"] for r in rows])
        slope_l2 = np.polyfit(np.log(hs), np.log(el2), 1)[0]
        slope_h1 = np.polyfit(np.log(hs), np.log(eh1), 1)[0]
        assert slope_l2 > slope_h1


@pytest.mark.trend
def test_c12_oversampling_sweep_constrained(trend_session):
    with criterion(12, "constrained errors fall monotonically with the "
                       "oversampling layers, at least 5x from m=3 to m=7"):
        cfg = ex.ExperimentConfig.from_dict(
            {"medium": "model1-like", "d": 2, "n_f": 128, "n_c": 16,
             "variant": "constrained", "n_basis": 4, "layers": [3, 4, 5, 6, 7]})
        rows = ex.run(cfg, trend_session)["rows"]
        eh1 = [r["e_h1"] for r in rows]
        assert all(b <= a + 1e-12 for a, b in zip(eh1, eh1[1:]))
        assert eh1[0] / eh1[-1] >= 5.0


@pytest.mark.trend
def test_c13_contrast_robustness(trend_session):
    with criterion(13, "relaxed errors stay within 2x across contrasts while "
                       "constrained degrade at least 3x"):
        results = {}
        for variant in ("relaxed", "constrained"):
            cfg = ex.ExperimentConfig.from_dict(
                {"medium": "model1-like", "d": 2, "n_f": 128, "n_c": 16,
                 "variant": variant, "n_basis": 6, "layers": 6,
                 "contrast": [1e2, 1e4, 1e6]})
            results[variant] = [r["e_h1"] for r in ex.run(cfg, trend_session)["rows"]]
        relaxed = results["relaxed"]
        constrained = results["constrained"]
        assert max(relaxed) / min(relaxed) <= 2.0
        assert constrained[2] / constrained[0] >= 3.0


@pytest.mark.trend
def test_c14_uniform_enrichment(trend_session):
    with criterion(14, "two uniform enrichment passes cut the energy error "
                       "by at least 10x"):
        cfg = ex.ExperimentConfig.from_dict(
            {"medium": "model1-like", "d": 2, "n_f": 128, "n_c": 32,
             "variant": "relaxed", "n_basis": 4, "layers": "auto",
             "online": {"mode": "uniform", "theta": 0.0, "max_iter": 2}})
        hist = ex.run_online(cfg, trend_session)["history"]
        # convergence may arrive before the two-pass budget; judge the last state
        assert 2 <= len(hist) <= 3
        assert hist[0]["e_h1"] / hist[-1]["e_h1"] >= 10.0


@pytest.mark.trend
def test_c15_adaptive_enrichment_economy(trend_session):
    with criterion(15, "adaptive selection adds at most 30% of the uniform "
                       "dofs per pass while cutting the L2 error 10x in three"):
        base = {"medium": "model1-like", "d": 2, "n_f": 128, "n_c": 32,
                "variant": "relaxed", "n_basis": 4, "layers": "auto"}
        uniform = ex.run_online(ex.ExperimentConfig.from_dict(
            {**base, "online": {"mode": "uniform", "theta": 0.0,
                                "max_iter": 2}}), trend_session)["history"]
        adaptive = ex.run_online(ex.ExperimentConfig.from_dict(
            {**base, "online": {"mode": "adaptive", "theta": 0.1,
                                "max_iter": 3}}), trend_session)["history"]
        compared = 0
        for rec_a, rec_u in zip(adaptive, uniform):
            if rec_u["selected"] and rec_a["selected"]:
                assert rec_a["selected"] <= 0.30 * rec_u["selected"]
                compared += 1
        assert compared >= 1
        # early convergence is allowed; judge the economy and the last state
        assert 2 <= len(adaptive) <= 4
        assert adaptive[0]["e_l2"] / adaptive[-1]["e_l2"] >= 10.0


@pytest.mark.trend
def test_c16_three_dimensional_smoke(trend_session):
    with criterion(16, "3D preset at 32^3 runs through the iterative fine "
                       "path and the error falls with the coarse size"):
        cfg = ex.ExperimentConfig.from_dict(
            {"medium": "model2-like", "d": 3, "n_f": 32, "n_c": [4, 8],
             "variant": "relaxed", "n_basis": 8, "layers": "auto"})
        rows = ex.run(cfg, trend_session)["rows"]
        assert rows[1]["e_h1"] < rows[0]["e_h1"]
        fine = trend_session.fine(cfg.medium_spec(1e4), 0.2, "paper")
        assert fine["fine_method"] == "cg"
        assert fine["fine_residual"] <= 1e-9
