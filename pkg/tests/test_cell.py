import itertools
import math

import numpy as np
import pytest

import latticehom.cell as cellmod
from latticehom.cell import (IslandConstants, MonotonicityViolation, aggregate_m, boundary_layer_energy,
                             boundary_set, cell_box, default_boundary_width, f_hom_estimate, fhom_matrix,
                             fhom_table, island_min, phi_g_convex, phi_g_general, phi_limit, phi_M,
                             phi_quadratic, phi_tilde_M, solve_cell)
from latticehom.energy import EnergyModel, PowerLaw, Quadratic, SitePotential
from latticehom.lattice import PeriodicLatticeModel
from latticehom.models import NN_1D, grid_with_holes, grid_with_island, quadratic_energy

Z9 = list(itertools.product([-1.0, 0.0, 1.0], repeat=2))


def exh2_scan(z, c, n=100_001):
    # per period: hard site (z-c)^2, soft site min over v of 2(v-z)^2 + (v-c)^2, halved
    lo, hi = min(z, c) - 1, max(z, c) + 1
    v = np.linspace(lo, hi, n)
    return 0.5 * ((z - c) ** 2 + np.min(2 * (v - z) ** 2 + (v - c) ** 2)), 0.5 * np.min(2 * (v - z) ** 2 + (v - c) ** 2)


class TestPhiM:
    @pytest.mark.parametrize("M", [2, 4, 8])
    @pytest.mark.parametrize("z", Z9)
    def test_two_chains(self, exh1, quad, M, z):
        assert abs(phi_M(z, M, exh1, quad) - (z[0] - z[1]) ** 2) < 1e-8

    def test_two_chains_hand_sum(self, exh1, quad):
        # M = 2 torus {-2,-1}... two sites, two weak bonds, each (z1 - z2)^2, divided by 2
        z = (0.3, -1.1)
        assert math.isclose(phi_M(z, 2, exh1, quad), 2 * (z[0] - z[1]) ** 2 / 2, rel_tol=1e-10)

    @pytest.mark.parametrize("z", [-2.0, -0.5, 0.0, 0.7, 3.0])
    def test_chain_with_soft(self, exh2, quad_pinned, z):
        total, soft = exh2_scan(z, 0.0)
        for M in (2, 4, 8):
            sol = solve_cell([z], M, exh2, quad_pinned)
            assert abs(sol.value - 5 / 6 * z ** 2) < 1e-8
            assert abs(sol.soft_only - 1 / 3 * z ** 2) < 1e-8
            assert abs(sol.value - total) < 1e-8
            assert abs(sol.soft_only - soft) < 1e-8

    def test_target_and_profile(self, exh2):
        e = EnergyModel(2, Quadratic(), Quadratic(), SitePotential(Quadratic(), lambda x: 2 * x[:, 0]))
        assert math.isclose(phi_M([1.0], 4, exh2, e, x=[0.25]), 5 / 6 * 0.25, rel_tol=1e-9)
        assert math.isclose(phi_M([1.0], 4, exh2, e, target=[3.0]), 5 / 6 * 4, rel_tol=1e-9)

    def test_equal_levels_zero(self, exh1, quad):
        assert abs(phi_M([0.4, 0.4], 4, exh1, quad)) < 1e-12

    def test_free_boundary_lower(self, exh1, quad):
        assert phi_M([1.0, 0.0], 8, exh1, quad, boundary="free") < phi_M([1.0, 0.0], 8, exh1, quad)

    def test_bad_size(self, exh2, quad_pinned):
        with pytest.raises(ValueError):
            phi_M([0.0], 3, exh2, quad_pinned)
        with pytest.raises(ValueError):
            phi_M([0.0, 1.0], 4, exh2, quad_pinned)

    def test_cell_box_centred(self):
        b = cell_box(8, 1, 2)
        assert b.lo == (-4,) and b.shape == (8,)


class TestPhiTilde:
    def test_zero(self, exh2, quad):
        assert abs(phi_tilde_M([0.0], 8, exh2, quad)) < 1e-12

    @pytest.mark.parametrize("z", [-1.0, 0.5, 2.0])
    def test_above_free_and_decaying(self, exh2, quad_pinned, z):
        gaps = []
        for M in (8, 16, 32, 64):
            gaps.append(phi_tilde_M([z], M, exh2, quad_pinned) - phi_M([z], M, exh2, quad_pinned, boundary="free"))
        assert min(gaps) >= -1e-8
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_boundary_set(self, exh2):
        box = cell_box(8, 1, 2)
        bs = boundary_set(exh2, box, 4)
        sites = box.sites()[bs, 0]
        assert set(sites.tolist()) == {-3, 3}

    def test_boundary_set_includes_islands(self):
        model = grid_with_island()
        box = cell_box(8, 2, 4)
        bs = set(boundary_set(model, box, 8).tolist())
        # every site lies in a layer of width 8 on an 8-cell; islands included, infinite component excluded
        role = model.phases.role[tuple(np.mod(box.sites(), 4).T)]
        assert bs == set(np.flatnonzero(role <= 0).tolist())

    def test_default_width(self, exh2):
        assert default_boundary_width(exh2) == 2
        assert default_boundary_width(grid_with_island()) == 2


class TestPhiLimit:
    def test_constant_sequences(self, exh1, exh2, quad, quad_pinned):
        t1 = phi_limit([[1.0, 0.0], [2.0, -1.0]], [2, 4, 8], exh1, quad)
        assert np.allclose(t1.increments, 0, atol=1e-9)
        assert np.allclose(t1.extrapolated, [1.0, 9.0])
        t2 = phi_limit([[1.0]], [2, 4, 8], exh2, quad_pinned)
        assert np.allclose(t2.increments, 0, atol=1e-9)
        assert t2.monotone()
        assert len(list(t2.rows())) == 3

    def test_island_sequence(self):
        model = grid_with_island()
        t = phi_limit([[1.0]], [4, 8, 16, 32], model, quadratic_energy(0.5), boundary="free")
        inc = t.increments[0]
        assert np.all(inc > 0) and np.all(np.diff(inc) < 0)

    def test_needs_three(self, exh2, quad_pinned):
        with pytest.raises(ValueError):
            phi_limit([[0.0]], [2, 4], exh2, quad_pinned)

    def test_violation(self, exh2, quad_pinned, monkeypatch):
        monkeypatch.setattr(cellmod, "_phi_task", lambda args: 1.0 / args[1])
        with pytest.raises(MonotonicityViolation):
            phi_limit([[0.0]], [2, 4, 8], exh2, quad_pinned)

    def test_workers_match(self, exh1, quad):
        a = phi_limit(Z9[:3], [2, 4, 8], exh1, quad)
        b = phi_limit(Z9[:3], [2, 4, 8], exh1, quad, workers=2)
        assert np.array_equal(a.values, b.values)


class TestBoundaryLayer:
    @pytest.mark.parametrize("R", [2, 4, 6])
    def test_two_chains_closed_form(self, exh1, quad, R):
        M = 16
        sol = solve_cell([1.0, -1.0], M, exh1, quad)
        # layer of R sites with the wrap bond: R - 1 weak bonds of squared length 4
        assert math.isclose(boundary_layer_energy(sol, R), (R - 1) * 4 / M, rel_tol=1e-9)

    def test_constant_zero(self, exh2, quad):
        sol = solve_cell([0.5], 8, exh2, quad)
        assert abs(boundary_layer_energy(sol, 4)) < 1e-12

    def test_decays(self, exh2, quad_pinned):
        vals = []
        for M in (16, 64, 256):
            sol = solve_cell([1.0], M, exh2, quad_pinned)
            vals.append(boundary_layer_energy(sol, math.ceil(math.sqrt(M))))
        assert vals[0] > vals[1] > vals[2]


class TestHomogenized:
    @pytest.mark.parametrize("K", [8, 16, 32])
    @pytest.mark.parametrize("xi", [1.0, 2.0, -1.0, 0.0])
    def test_two_chains(self, exh1, quad, K, xi):
        for j in (1, 2):
            assert abs(f_hom_estimate(j, xi, K, exh1, quad) - 2 * xi ** 2) < 1e-8

    @pytest.mark.parametrize("K", [8, 16, 32])
    def test_dirichlet_layer(self, exh1, quad, K):
        # K/2 - 1 bonds of (2 xi)^2 inside [0, K)
        assert math.isclose(f_hom_estimate(1, 1.0, K, exh1, quad, boundary="dirichlet"), 2 * (1 - 2 / K))

    def test_full_lattice(self, quad):
        model = PeriodicLatticeModel([1], [NN_1D, NN_1D])
        assert math.isclose(f_hom_estimate(1, 3.0, 4, model, quad), 9.0)

    def test_matrix(self, exh1, quad):
        assert np.allclose(fhom_matrix(1, exh1, quad, 8), [[2.0]])

    def test_matrix_2d(self, quad):
        model = grid_with_holes()
        A = fhom_matrix(1, model, quad, 4)
        assert np.allclose(A, A.T)
        assert np.all(np.linalg.eigvalsh(A) > -1e-10)
        xi = np.array([0.3, -0.7])
        assert math.isclose(f_hom_estimate(1, xi, 4, model, quad), xi @ A @ xi, rel_tol=1e-8)

    def test_homogeneity(self, exh1):
        e = EnergyModel(4, PowerLaw(4), PowerLaw(4))
        a = f_hom_estimate(1, 1.0, 8, exh1, e)
        assert math.isclose(f_hom_estimate(1, 1.5, 8, exh1, e), 1.5 ** 4 * a, rel_tol=1e-6)

    def test_table(self, exh1, quad):
        t = fhom_table(2, [[1.0], [2.0]], [8, 16], exh1, quad)
        assert np.allclose(t.extrapolated, [2.0, 8.0]) and np.allclose(t.matrix, [[2.0]])

    def test_errors(self, exh1, exh2, quad):
        with pytest.raises(ValueError):
            f_hom_estimate(1, 1.0, 7, exh1, quad)
        with pytest.raises(ValueError):
            f_hom_estimate(2, 1.0, 8, exh2, quad)


class TestIslands:
    def test_three_sites(self):
        r = island_min([0, 1, 2], [-2, -1, 0, 1, 2], Quadratic(shift=[1.0]))
        assert abs(r.value - 1 / 3) < 1e-10
        u = r.field[:, 0]
        assert np.allclose([u[0] - u[1], u[1] - u[2]], [2 / 3, 2 / 3])

    def test_quadratic_zero(self):
        assert abs(island_min([[0, 0], [1, 0], [1, 1]], [[1, 0], [0, 1], [-1, 0], [0, -1], [0, 0]],
                              Quadratic()).value) < 1e-12

    def test_single_site(self):
        r = island_min([5], [-1, 0, 1], Quadratic(shift=[1.0]))
        assert r.value == 0.0

    def test_aggregate(self, exh2, quad):
        assert aggregate_m(exh2, quad).m == 0.0
        agg = aggregate_m(grid_with_island(), quad)
        assert list(agg.values) == [(1, 0)] and agg.m == 0.0
        assert math.isclose(IslandConstants({(1, 0): 1 / 3}, 4, 1).m, 1 / 12)
        assert math.isclose(IslandConstants({(1, 0): 0.2, (2, 0): 0.2}, 4, 1).m, 0.1)


class TestTwoScale:
    def test_hand_value(self, exh2):
        z, v, c = 0.7, -0.4, 0.2
        got = phi_g_convex([[z], [v]], c, exh2, quadratic_energy(), g=Quadratic())
        assert math.isclose(got, 0.5 * (2 * (v - z) ** 2 + (v - c) ** 2 + (z - c) ** 2), rel_tol=1e-12)

    def test_constant_zero(self, exh1):
        assert phi_g_convex([[0.3], [0.3]], 0.3, exh1, quadratic_energy(), g=Quadratic()) == 0.0

    def test_soft_sites_only(self, exh2):
        got = phi_g_convex([[1.0], [0.0]], 0.0, exh2, quadratic_energy(), g=Quadratic(), sites="soft")
        assert math.isclose(got, 1.0)

    def test_batch(self, exh2, rng):
        U = rng.normal(size=(3, 4, 2, 1))
        got = phi_g_convex(U, 0.0, exh2, quadratic_energy(), g=Quadratic())
        assert got.shape == (3, 4)
        assert math.isclose(got[1, 2], phi_g_convex(U[1, 2], 0.0, exh2, quadratic_energy(), g=Quadratic()))

    def test_hard_must_agree(self):
        model = PeriodicLatticeModel([1, 1, 0, 0], [NN_1D, [[-3], [-1], [0], [1], [3]]])
        with pytest.raises(ValueError):
            phi_g_convex([[0.0], [1.0], [0.0], [0.0]], 0.0, model, quadratic_energy(), g=Quadratic())

    @pytest.mark.parametrize("M", [1, 2, 4])
    def test_general_matches_convex(self, exh2, rng, M):
        e = EnergyModel(3, PowerLaw(3), PowerLaw(3))
        for _ in range(3):
            u = rng.normal(size=(2, 1))
            w = rng.normal(size=(2, 1))
            a = phi_g_convex(u, w, exh2, e, g=PowerLaw(2.5))
            b = phi_g_general(u, w, M, exh2, e, g=PowerLaw(2.5))
            assert abs(a - b) < 1e-8

    def test_quadratic_form(self, exh2, quad_pinned):
        q = phi_quadratic(exh2, quad_pinned)
        assert np.allclose(q.Q, 5 / 6 * np.array([[1, -1], [-1, 1]]), atol=1e-10)
        assert math.isclose(q([2.0], [0.5])[0], 5 / 6 * 1.5 ** 2)
