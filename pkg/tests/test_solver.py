"""Solver tests against frozen stencils and exactly solvable problems.

Oracles used here:
  * Euclidean metric: interior rows must be the classical 7-point star
    (-6, 1, 1, 1, 1, 1, 1) / h^2 and nothing else.
  * diag(1, 1, 4): flux coefficients C = sqrt(det g) g^{-1} give axis
    couplings (2, 2, 1/2); dividing by sqrt(det g) = 2 leaves the row
    weights (1, 1, 1/4) / h^2.
  * u = x3 solves the continuum problem exactly whenever the metric has
    C_13 = C_23 = 0 and C_33 independent of x3; the discrete scheme then
    reproduces it to solver tolerance because every stencil difference
    of a vertically linear field vanishes.
  * quadratics are reproduced exactly: central second differences are
    exact on quadratics and the ghost-flux convention F(-h/2) :=
    2F(0) - F(h/2) is exact whenever the flux is linear in the normal
    coordinate.
"""

import dataclasses

import numpy as np
import pytest

from harmcube.grid import Grid
from harmcube.metrics import MetricField
from harmcube.solver import (
    SolverConfig,
    SolverError,
    assemble_operator,
    continuation_solve,
    field_bundle,
    manufactured_solution_error,
    max_principle_check,
    solve_mixed_bvp,
)

CONFORMAL_F = "0.1*sin(pi*x1)*sin(pi*x2)"


def shifted_metric(eps=0.1):
    return MetricField.from_entries(
        {"g11": "1", "g22": "1", "g33": "1", "g12": str(eps)},
        name=f"shifted{eps}")


def crossed_metric():
    return MetricField.from_entries(
        {"g11": "1", "g22": "1", "g33": "1",
         "g12": "0.1*sin(pi*x1)*sin(pi*x2)"},
        name="crossed")


def flat_index(n, i, j, k):
    return i + n * j + n * n * k


class TestAssembly:
    def test_euclidean_seven_point(self):
        grid = Grid(9)
        op = assemble_operator(MetricField.euclidean(), grid)
        n, h = grid.n, grid.h
        p = flat_index(n, 4, 4, 4)
        row = op.matrix.getrow(p).toarray().ravel()
        expected = np.zeros(n ** 3)
        expected[p] = -6 / h ** 2
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                  (0, 0, 1), (0, 0, -1)):
            expected[flat_index(n, 4 + d[0], 4 + d[1], 4 + d[2])] = 1 / h ** 2
        np.testing.assert_allclose(row, expected, rtol=0, atol=1e-12)

    def test_diagonal_metric_weights(self):
        grid = Grid(9)
        op = assemble_operator(MetricField.diagonal(1, 1, 4), grid)
        n, h = grid.n, grid.h
        p = flat_index(n, 3, 4, 5)
        row = op.matrix.getrow(p).toarray().ravel()
        assert row[p] == pytest.approx(-4.5 / h ** 2, rel=1e-13)
        assert row[flat_index(n, 2, 4, 5)] == pytest.approx(1 / h ** 2)
        assert row[flat_index(n, 4, 4, 5)] == pytest.approx(1 / h ** 2)
        assert row[flat_index(n, 3, 3, 5)] == pytest.approx(1 / h ** 2)
        assert row[flat_index(n, 3, 5, 5)] == pytest.approx(1 / h ** 2)
        assert row[flat_index(n, 3, 4, 4)] == pytest.approx(0.25 / h ** 2)
        assert row[flat_index(n, 3, 4, 6)] == pytest.approx(0.25 / h ** 2)

    def test_wall_row_doubles_inner_coupling(self):
        grid = Grid(9)
        op = assemble_operator(MetricField.euclidean(), grid)
        n, h = grid.n, grid.h
        p = flat_index(n, 0, 4, 4)
        row = op.matrix.getrow(p).toarray().ravel()
        assert row[flat_index(n, 1, 4, 4)] == pytest.approx(2 / h ** 2)
        assert row[p] == pytest.approx(-6 / h ** 2)

    @pytest.mark.parametrize("metric", [
        MetricField.euclidean(),
        MetricField.conformal(CONFORMAL_F),
        MetricField.warped("1 + 0.2*x1"),
        shifted_metric(),
        crossed_metric(),
    ], ids=lambda m: m.name)
    def test_row_sums_vanish(self, metric):
        grid = Grid(9)
        op = assemble_operator(metric, grid)
        sums = op.row_sums()
        pde = op.pde_index()
        scale = np.abs(op.matrix.diagonal()).max()
        assert np.max(np.abs(sums[pde])) <= 1e-12 * scale

    def test_euclidean_m_matrix(self):
        grid = Grid(9)
        op = assemble_operator(MetricField.euclidean(), grid)
        coo = op.matrix.tocoo()
        pde = set(op.pde_index().tolist())
        for r, c, v in zip(coo.row, coo.col, coo.data):
            if r not in pde:
                continue
            if r == c:
                assert v < 0
            else:
                assert v >= 0

    def test_symmetrized_system_euclidean_exact(self):
        op = assemble_operator(MetricField.euclidean(), Grid(9))
        assert op.symmetry_defect() == 0.0

    @pytest.mark.parametrize("metric", [
        MetricField.conformal(CONFORMAL_F),
        MetricField.warped("1 + 0.2*x1"),
        shifted_metric(),
        crossed_metric(),
    ], ids=lambda m: m.name)
    def test_symmetrized_system(self, metric):
        op = assemble_operator(metric, Grid(9))
        assert op.symmetry_defect() <= 1e-12


class TestLinearExactness:
    @pytest.mark.parametrize("metric", [
        MetricField.euclidean(),
        MetricField.conformal(CONFORMAL_F),
        MetricField.warped("1 + 0.2*x1"),
        shifted_metric(),
    ], ids=lambda m: m.name)
    def test_vertical_coordinate_is_exact(self, metric):
        grid = Grid(9)
        sol = solve_mixed_bvp(metric, grid)
        exact = grid.points()[..., 2]
        assert np.max(np.abs(sol.u - exact)) <= 1e-9

    def test_euclidean_converges_instantly(self):
        sol = solve_mixed_bvp(MetricField.euclidean(), Grid(9))
        assert sol.iterations == 0


class TestSolvers:
    def test_methods_agree(self):
        metric = MetricField.conformal(CONFORMAL_F)
        grid = Grid(9)
        u = {}
        for method in ("cg", "sor", "direct"):
            cfg = SolverConfig(method=method, tolerance=1e-12,
                               max_iterations=60000)
            u[method] = solve_mixed_bvp(metric, grid, cfg).u
        assert np.max(np.abs(u["cg"] - u["direct"])) <= 1e-8
        assert np.max(np.abs(u["sor"] - u["direct"])) <= 1e-8

    def test_crossed_metric_cg_vs_direct(self):
        metric = crossed_metric()
        grid = Grid(17)
        cg = solve_mixed_bvp(metric, grid,
                             SolverConfig(method="cg", tolerance=1e-12))
        direct = solve_mixed_bvp(metric, grid, SolverConfig(method="direct"))
        assert np.max(np.abs(cg.u - direct.u)) <= 1e-8
        assert cg.residual <= 1e-12
        assert len(cg.residual_history) == cg.iterations + 1

    def test_direct_size_limit(self):
        with pytest.raises(SolverError):
            solve_mixed_bvp(MetricField.conformal(CONFORMAL_F), Grid(65),
                            SolverConfig(method="direct"))

    def test_iteration_cap_raises_with_history(self):
        metric = MetricField.conformal("0.1*sin(pi*x1)*sin(pi*x3)")
        with pytest.raises(SolverError) as err:
            solve_mixed_bvp(metric, Grid(17),
                            SolverConfig(method="cg", tolerance=1e-14,
                                         max_iterations=3))
        assert len(err.value.residual_history) >= 3

    def test_continuation_matches_plain_solve(self):
        metric = MetricField.warped("1 + 0.2*x1")
        grid = Grid(9)
        sol, steps = continuation_solve(metric, grid, steps=3)
        direct = solve_mixed_bvp(metric, grid, SolverConfig(method="direct"))
        assert len(steps) == 3
        assert steps[-1]["t"] == 1.0
        assert all(s["residual"] <= 1e-10 for s in steps)
        assert np.max(np.abs(sol.u - direct.u)) <= 1e-8


class TestManufactured:
    def test_quadratic_reproduced_exactly(self):
        # harmonic quadratic, inhomogeneous flux data on two side walls
        res = manufactured_solution_error(
            MetricField.euclidean(), "x1^2 + x2^2 - 2*x3^2 + x3",
            grids=(9, 17), config=SolverConfig(method="direct"))
        assert res["exact"]
        assert all(e <= 1e-10 for e in res["errors"])

    def test_harmonic_mode_second_order(self):
        expr = ("sin(pi*x1)*(exp(pi*x3)+exp(-pi*x3))"
                "/(exp(pi)+exp(-pi))")
        res = manufactured_solution_error(
            MetricField.euclidean(), expr, grids=(9, 17, 33),
            config=SolverConfig(tolerance=1e-11))
        assert all(o >= 1.8 for o in res["orders"]), res

    def test_conformal_metric_second_order(self):
        res = manufactured_solution_error(
            MetricField.conformal(CONFORMAL_F),
            "x1^2 - x3^2 + x3 + 0.5*x2^2*x3", grids=(9, 17, 33),
            config=SolverConfig(tolerance=1e-11))
        assert all(o >= 1.8 for o in res["orders"]), res

    def test_crossed_metric_second_order(self):
        res = manufactured_solution_error(
            crossed_metric(), "x1^2 - x3^2 + x3", grids=(9, 17, 33),
            config=SolverConfig(tolerance=1e-11))
        assert all(o >= 1.8 for o in res["orders"]), res


class TestMaxPrinciple:
    def test_clean_solution_passes(self):
        sol = solve_mixed_bvp(MetricField.conformal(CONFORMAL_F), Grid(17))
        report = max_principle_check(sol)
        assert report.passed
        assert report.range_ok
        assert not report.interior_extrema
        assert all(m > 0 for m in report.face_margins.values())
        assert all(m > 0 for m in report.edge_margins.values())

    def test_interior_bump_is_flagged(self):
        sol = solve_mixed_bvp(MetricField.euclidean(), Grid(17))
        u = sol.u.copy()
        u[8, 8, 8] += 0.5
        bad = dataclasses.replace(sol, u=u)
        report = max_principle_check(bad)
        assert not report.passed
        assert (8, 8, 8) in report.interior_extrema
        assert report.messages

    def test_boundary_spike_is_flagged(self):
        sol = solve_mixed_bvp(MetricField.euclidean(), Grid(17))
        u = sol.u.copy()
        u[0, 5, 9] = 1.5
        bad = dataclasses.replace(sol, u=u)
        report = max_principle_check(bad)
        assert not report.passed
        assert not report.range_ok
        assert report.face_margins["F1"] < 0


class TestDerivedFields:
    def test_cubic_fields_match_calculus(self):
        grid = Grid(17)
        metric = MetricField.euclidean()
        sol = field_bundle(grid, metric, lambda p:
                           p[..., 0] ** 2 * p[..., 1] + p[..., 2])
        pts = grid.points()
        x1, x2 = pts[..., 0], pts[..., 1]
        np.testing.assert_allclose(sol.du[..., 0], 2 * x1 * x2, atol=1e-11)
        np.testing.assert_allclose(sol.du[..., 1], x1 ** 2, atol=1e-11)
        np.testing.assert_allclose(sol.du[..., 2], 1.0, atol=1e-11)
        np.testing.assert_allclose(sol.hessian[..., 0, 0], 2 * x2,
                                   atol=1e-10)
        np.testing.assert_allclose(sol.hessian[..., 0, 1], 2 * x1,
                                   atol=1e-10)
        np.testing.assert_allclose(sol.hessian[..., 1, 1], 0.0, atol=1e-10)
        grad2 = 4 * x1 ** 2 * x2 ** 2 + x1 ** 4 + 1
        np.testing.assert_allclose(sol.grad_norm, np.sqrt(grad2), atol=1e-10)

    def test_covariant_correction_conformal(self):
        # for u = x3 the coordinate Hessian vanishes, so the covariant
        # Hessian is -Gamma^3_ij; with f independent of x3 this equals
        # -(d_i f delta_j3 + d_j f delta_i3) + f_3-terms that vanish
        grid = Grid(9)
        metric = MetricField.conformal(CONFORMAL_F)
        sol = field_bundle(grid, metric, lambda p: p[..., 2])
        from harmcube.expressions import Expression
        f = Expression(CONFORMAL_F)
        grad_f = f.grad(grid.points())
        np.testing.assert_allclose(sol.hessian[..., 0, 2], -grad_f[..., 0],
                                   atol=1e-9)
        np.testing.assert_allclose(sol.hessian[..., 1, 2], -grad_f[..., 1],
                                   atol=1e-9)
        np.testing.assert_allclose(sol.hessian[..., 0, 0], 0.0, atol=1e-9)
        # |du|_g for du = dx3 is sqrt(g^{33}) = exp(-f)
        np.testing.assert_allclose(sol.grad_norm,
                                   np.exp(-f(grid.points())), atol=1e-12)

    def test_interpolation_probe(self):
        grid = Grid(17)
        sol = field_bundle(grid, MetricField.euclidean(),
                           lambda p: p[..., 2])
        probe = np.array([[0.3, 0.5, 0.25], [0.1, 0.9, 0.75]])
        np.testing.assert_allclose(sol.interpolate("u", probe),
                                   probe[:, 2], atol=1e-12)
