"""Inequality assembly tests against closed-form term values.

For the conformal factor exp(2 e f) with f = sin(pi x1) sin(pi x2) the
solved field is the height function and every term integrates in closed
form:

    quadratic term      int (f_1^2 + f_2^2) e^2       = e^2 pi^2 / 2
    scalar term         16 e - e^2 pi^2 / 2
    boundary term       -16 e   (side walls; caps are minimal)
    Euler term          2 pi,   turning integral 2 pi

so both sides cancel exactly and the continuum slack is zero at every
e.  The side-wall term regrouped through the level curves gives the
geodesic-curvature integral -8 e.

Mapping-torus arithmetic, frozen: volume 4 pi with width 1 gives genus
bound 4; volume 6 with unit constants gives 18/(4 pi) + 1; volume 6 pi
with |chi| = 2, K = 1 gives the entropy interval [1, 4.5].
"""

import dataclasses
import math

import numpy as np
import pytest

from harmcube.grid import Grid
from harmcube.inequality import (
    FlowEscapeError,
    TorusBoundInput,
    bochner_residual,
    compute_inequality_terms,
    rigidity_diagnostics,
    torus_bounds,
    verify_inequality,
)
from harmcube.levelset import level_family
from harmcube.metrics import MetricField
from harmcube.solver import SolverConfig, field_bundle, solve_mixed_bvp

EUC = MetricField.euclidean()
DIRECT = SolverConfig(method="direct")


@pytest.fixture(scope="module")
def euc17():
    return solve_mixed_bvp(EUC, Grid(17))


@pytest.fixture(scope="module")
def conformal33():
    metric = MetricField.conformal("0.1*sin(pi*x1)*sin(pi*x2)")
    return solve_mixed_bvp(metric, Grid(33))


@pytest.fixture(scope="module")
def conformal_report(conformal33):
    return compute_inequality_terms(conformal33, theta_samples=32)


class TestInequalityTerms:
    def test_euclidean_terms_vanish(self, euc17):
        rep = compute_inequality_terms(euc17, theta_samples=16)
        assert abs(rep.hess_term) <= 1e-8
        assert abs(rep.scalar_term) <= 1e-8
        assert abs(rep.boundary_mean_term) <= 1e-8
        assert abs(rep.euler_term - 2 * np.pi) <= 1e-12
        assert abs(rep.gamma_integral - 2 * np.pi) <= 1e-9
        assert abs(rep.turning_term) <= 1e-9
        assert np.all(rep.corner_counts == 4)
        assert abs(rep.slack) <= 1e-6
        assert rep.excluded_mass == 0.0
        assert rep.error_estimate <= 1e-8

    def test_product_metric_terms_vanish(self):
        sol = solve_mixed_bvp(MetricField.diagonal(1, 1, 4), Grid(17))
        rep = compute_inequality_terms(sol, theta_samples=16)
        assert abs(rep.hess_term) <= 1e-8
        assert abs(rep.scalar_term) <= 1e-8
        assert abs(rep.boundary_mean_term) <= 1e-8
        assert abs(rep.slack) <= 1e-6

    def test_conformal_frozen_terms(self, conformal_report):
        eps = 0.1
        rep = conformal_report
        assert abs(rep.hess_term - eps ** 2 * np.pi ** 2 / 2) <= 5e-4
        assert abs(rep.scalar_term
                   - (16 * eps - eps ** 2 * np.pi ** 2 / 2)) <= 1e-2
        assert abs(rep.boundary_mean_term + 16 * eps) <= 5e-3
        assert abs(rep.boundary_parts["caps"]) <= 1e-9
        assert abs(rep.euler_term - 2 * np.pi) <= 1e-12
        assert abs(rep.gamma_integral - 2 * np.pi) <= 1e-9
        assert abs(rep.turning_term) <= 1e-9
        assert abs(rep.slack) <= 1e-2
        assert abs(rep.slack) <= rep.error_estimate + 1e-6

    def test_conformal_side_groupings(self, conformal_report):
        side = conformal_report.side_groupings
        assert abs(side["mean"] + 1.6) <= 5e-3
        assert abs(side["geodesic"] + 0.8) <= 5e-3
        assert abs(side["difference"] - 0.8) <= 8e-3
        assert side["mean"] == conformal_report.boundary_parts["sides"]

    def test_term_convergence_within_error_bars(self, conformal33,
                                                conformal_report):
        metric = conformal33.metric
        fine = solve_mixed_bvp(metric, Grid(65))
        rep65 = compute_inequality_terms(fine, theta_samples=32)
        rep33 = conformal_report
        assert rep65.error_estimate <= rep33.error_estimate / 2
        for term in ("hess_term", "scalar_term", "boundary_mean_term"):
            drift = abs(getattr(rep33, term) - getattr(rep65, term))
            assert drift <= 3 * rep33.error_estimate

    def test_regularization_stability(self, conformal33):
        rep = compute_inequality_terms(conformal33, theta_samples=16)
        halved = compute_inequality_terms(conformal33, theta_samples=16,
                                          delta_reg=rep.delta_reg / 2)
        assert abs(halved.hess_term - rep.hess_term) <= \
            0.01 * abs(rep.hess_term)

    def test_deterministic_records(self, euc17):
        a = compute_inequality_terms(euc17, theta_samples=16).to_record()
        b = compute_inequality_terms(euc17, theta_samples=16).to_record()
        assert a == b

    def test_report_text_round_trip(self, euc17):
        rep = compute_inequality_terms(euc17, theta_samples=16)
        text = rep.to_text()
        assert "slack" in text
        assert str(rep.to_record()["euler_term"]) in text

    def test_empty_family_rejected(self, euc17):
        with pytest.raises(ValueError):
            compute_inequality_terms(euc17, family=[])

    def test_unknown_variant_rejected(self, euc17):
        with pytest.raises(ValueError):
            compute_inequality_terms(euc17, variant="sphere")

    def test_dirichlet_variant_keeps_gamma_out(self, euc17):
        rep = compute_inequality_terms(euc17, theta_samples=16,
                                       variant="dirichlet")
        assert rep.variant == "dirichlet"
        assert abs(rep.rhs - 2 * np.pi) <= 1e-9
        assert abs(rep.slack - 2 * np.pi) <= 1e-6


class TestVerification:
    def test_euclidean_passes_with_tol_margin(self, euc17):
        rep = compute_inequality_terms(euc17, theta_samples=16)
        res = verify_inequality(rep, tol=1e-6)
        assert res.passed
        assert abs(res.margin) <= 2e-6

    def test_conformal_passes(self, conformal_report):
        res = verify_inequality(conformal_report)
        assert res.passed
        assert res.margin >= 0.0

    def test_dirichlet_chain(self, euc17):
        rep = compute_inequality_terms(euc17, theta_samples=16,
                                       variant="dirichlet")
        res = verify_inequality(rep)
        assert res.passed
        assert "conclusion" not in res.checks

    def test_negative_control_fails(self, conformal_report):
        broken = dataclasses.replace(
            conformal_report, hess_term=-conformal_report.hess_term)
        res = verify_inequality(broken)
        assert not res.passed
        assert res.checks["hess_nonnegative"] < 0.0


class TestBochner:
    def test_euclidean_identity_exact(self, euc17):
        res = bochner_residual(euc17)
        assert res.max_norm <= 1e-8
        assert np.isnan(res.values[0, 0, 0])
        assert res.mask.sum() == 13 ** 3

    def test_warped_profile_analytic(self):
        sol = solve_mixed_bvp(MetricField.warped("1 + 0.1*x1"), Grid(33),
                              DIRECT)
        res = bochner_residual(sol)
        assert res.max_norm <= 1e-6

    def test_conformal_refinement_order(self):
        metric = MetricField.conformal("0.05*sin(pi*x1)*sin(pi*x3)")
        norms = []
        for n in (17, 33):
            sol = solve_mixed_bvp(metric, Grid(n), DIRECT)
            norms.append(bochner_residual(sol).max_norm)
        rate = math.log2(norms[0] / norms[1])
        assert rate >= 1.5

    def test_margin_guard(self, euc17):
        with pytest.raises(ValueError):
            bochner_residual(euc17, margin=8)


class TestRigidity:
    def test_euclidean_equality_case(self, euc17):
        fam = level_family(euc17, thetas=[0.25, 0.75])
        diag = rigidity_diagnostics(euc17, fam)
        assert diag.max_hessian <= 1e-6
        assert diag.max_scalar_curvature <= 1e-6
        assert diag.max_boundary_mean <= 1e-6
        assert diag.max_turning_deviation <= 1e-6
        assert diag.flow_isometry_defect <= 1e-4
        assert abs(diag.flow_distance - 0.5) <= 1e-6
        assert diag.equality_case()

    def test_product_metric_stretches_flow(self):
        sol = solve_mixed_bvp(MetricField.diagonal(1, 1, 4), Grid(17))
        fam = level_family(sol, thetas=[0.25, 0.75])
        diag = rigidity_diagnostics(sol, fam)
        assert diag.equality_case()
        assert diag.flow_isometry_defect <= 1e-4
        # the flow crosses g-distance c (theta2 - theta1) for g33 = c^2
        assert abs(diag.flow_distance - 2 * 0.5) <= 1e-6

    def test_conformal_breaks_rigidity(self):
        metric = MetricField.conformal("0.1*sin(pi*x1)*sin(pi*x3)")
        sol = solve_mixed_bvp(metric, Grid(17), DIRECT)
        # asymmetric span: the factor differs between the two levels,
        # so the transport distortion survives to first order
        fam = level_family(sol, thetas=[0.25, 0.5])
        diag = rigidity_diagnostics(sol, fam)
        assert not diag.equality_case()
        assert diag.max_hessian > 0.1
        assert diag.max_scalar_curvature > 1.0
        assert diag.max_boundary_mean > 0.1
        assert diag.flow_isometry_defect > 1e-3

    def test_single_level_rejected(self, euc17):
        fam = level_family(euc17, thetas=[0.5])
        with pytest.raises(ValueError):
            rigidity_diagnostics(euc17, fam)

    def test_corrupted_field_escapes(self, euc17):
        fam = level_family(euc17, thetas=[0.25, 0.75])
        down = np.zeros_like(euc17.du)
        down[..., 2] = -1.0
        bad = dataclasses.replace(euc17, du=down)
        with pytest.raises(FlowEscapeError):
            rigidity_diagnostics(bad, fam)


class TestTorusBounds:
    def test_width_bound_frozen(self):
        out = torus_bounds(TorusBoundInput(volume=4 * math.pi, width=1.0))
        assert abs(out.genus_from_width - 4.0) <= 1e-12
        assert out.genus_from_translation is None
        assert out.entropy_lower is None

    def test_translation_bound_frozen(self):
        out = torus_bounds(TorusBoundInput(
            volume=6.0, translation_length=1.0, width_constant=1.0))
        expected = 18.0 / (4.0 * math.pi) + 1.0
        assert abs(out.genus_from_translation - expected) <= 1e-12

    def test_entropy_interval_frozen(self):
        out = torus_bounds(TorusBoundInput(
            volume=6 * math.pi, euler=2.0, bilipschitz=1.0))
        assert abs(out.entropy_lower - 1.0) <= 1e-12
        assert abs(out.entropy_upper - 4.5) <= 1e-12

    def test_nonpositive_divisors_rejected(self):
        with pytest.raises(ValueError):
            torus_bounds(TorusBoundInput(volume=1.0, width=0.0))
        with pytest.raises(ValueError):
            torus_bounds(TorusBoundInput(volume=-1.0))
        with pytest.raises(ValueError):
            torus_bounds(TorusBoundInput(volume=1.0, euler=0.0))
        with pytest.raises(ValueError):
            torus_bounds(TorusBoundInput(volume=1.0, euler=2.0,
                                         bilipschitz=-1.0))
        with pytest.raises(ValueError):
            torus_bounds(TorusBoundInput(volume=1.0,
                                         translation_length=1.0))

    def test_monotonicity(self):
        vols = np.linspace(1.0, 10.0, 7)
        widths = np.linspace(0.5, 4.0, 7)
        by_vol = [torus_bounds(TorusBoundInput(volume=v, width=1.0,
                                               euler=2.0, bilipschitz=1.0))
                  for v in vols]
        for a, b in zip(by_vol, by_vol[1:]):
            assert b.genus_from_width > a.genus_from_width
            assert b.entropy_upper > a.entropy_upper
        by_width = [torus_bounds(TorusBoundInput(volume=5.0, width=w))
                    for w in widths]
        for a, b in zip(by_width, by_width[1:]):
            assert b.genus_from_width < a.genus_from_width
        by_k = [torus_bounds(TorusBoundInput(volume=5.0, euler=2.0,
                                             bilipschitz=k))
                for k in widths]
        for a, b in zip(by_k, by_k[1:]):
            assert b.entropy_upper < a.entropy_upper
