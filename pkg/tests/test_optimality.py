"""Optimality certificates: dual weights, KKT residuals, structure reports."""
import numpy as np
import pytest
from scipy.optimize import brentq

from pure_explore.costs import sampling_fraction, worst_pair_rate
from pure_explore.families import RewardFamily
from pure_explore.instance import InstanceSpec, uniform_pair_weights
from pure_explore.optimality import (
    check_kkt,
    check_monotone,
    check_structure,
    check_sufficient_condition,
    equality_pairs,
    estimate_pair_weights,
    optimality_gap,
    reference_solution,
)
from pure_explore.solvers import FrankWolfeGradientAscent

EX31 = InstanceSpec(RewardFamily.gaussian(0.25, 5), [0.51, 0.5, 0.0, -0.01, -0.092], 2)
PSI_STAR_PAPER = np.array([0.2185, 0.2371, 0.2185, 0.2026, 0.1232])
REMARK = InstanceSpec(RewardFamily.gaussian(0.25, 4), [1.0, 0.7, 0.0, -0.5], 2)
PSI_SUBOPT = np.array([0.0482, 0.459, 0.4603, 0.0325])


@pytest.fixture(scope="module")
def ex31_reference():
    return reference_solution(EX31)


class TestPairWeights:
    def test_reference_support_and_values(self, ex31_reference):
        psi_ref, mu_ref, _ = ex31_reference
        # stationarity solved on the three worst pairs (0,2), (1,3), (1,4)
        mu, residual = estimate_pair_weights(EX31, psi_ref, rtol=1e-4)
        support = {pair for pair, w in zip(EX31.pair_list(), mu) if w > 1e-6}
        assert support == {(0, 2), (1, 3), (1, 4)}
        assert residual <= 1e-6
        expected = {(0, 2): 0.437, (1, 3): 0.3757, (1, 4): 0.1873}
        for pair, w in zip(EX31.pair_list(), mu):
            if pair in expected:
                assert w == pytest.approx(expected[pair], abs=2e-3)
        assert check_kkt(EX31, psi_ref, mu).max_residual <= 1e-3

    def test_paper_rounded_point_still_certifies(self):
        mu, _ = estimate_pair_weights(EX31, PSI_STAR_PAPER, rtol=1e-3)
        assert check_kkt(EX31, PSI_STAR_PAPER, mu).max_residual <= 1e-3

    def test_uniform_point_fails(self):
        psi = np.full(5, 0.2)
        res = check_kkt(EX31, psi, uniform_pair_weights(6))
        assert res.max_residual > 0.01

    def test_two_arm_fixed_point(self):
        inst = InstanceSpec(RewardFamily.bernoulli(), [0.8, 0.3], 1)
        # the single-pair stationary point solves psi_0 = top share at psi
        gap = brentq(lambda a: sampling_fraction(inst, [a, 1 - a], 0, 1) - a,
                     1e-6, 1 - 1e-6, xtol=1e-15)
        psi = np.array([gap, 1.0 - gap])
        res = check_kkt(inst, psi, np.array([1.0]))
        assert res.max_residual <= 1e-9


class TestOptimalityGap:
    def test_saddle_self_gap_zero(self, ex31_reference):
        psi_ref, mu_ref, _ = ex31_reference
        assert abs(optimality_gap(EX31, psi_ref, mu_ref, psi_ref, mu_ref)) <= 1e-9

    def test_uniform_is_strictly_positive(self, ex31_reference):
        psi_ref, mu_ref, _ = ex31_reference
        gap = optimality_gap(EX31, np.full(5, 0.2), uniform_pair_weights(6),
                             psi_ref, mu_ref)
        assert gap > 1e-3

    def test_solver_gap_shrinks(self, ex31_reference):
        psi_ref, mu_ref, _ = ex31_reference
        gaps = {}
        for n in (100, 10_000):
            sol = FrankWolfeGradientAscent(n_iters=n).fit(EX31)
            gaps[n] = optimality_gap(EX31, sol.allocation_, sol.pair_weights_,
                                     psi_ref, mu_ref)
        assert gaps[10_000] >= -1e-6
        assert gaps[100] / max(gaps[10_000], 1e-12) >= 5.0


class TestStructureReport:
    def test_components_at_tight_tolerance(self, ex31_reference):
        psi_ref, _, _ = ex31_reference
        # two non-optimal pairs sit ~4e-4 above the optimum, so the published
        # two-component structure emerges at a tolerance below that
        report = check_structure(EX31, psi_ref, rtol=1e-4)
        assert report.components == [([0], [2]), ([1], [3, 4])]
        assert all(r <= 1e-3 for r in report.balance_residuals)
        assert report.rowcol_ok and report.monotone_ok
        assert report.optimal

    def test_paper_rounded_point(self):
        report = check_structure(EX31, PSI_STAR_PAPER, rtol=1e-4)
        assert report.components == [([0], [2]), ([1], [3, 4])]
        assert all(r <= 1e-3 for r in report.balance_residuals)

    def test_suboptimal_stationary_point_passes_necessary_fails_kkt(self):
        report = check_structure(REMARK, PSI_SUBOPT)
        assert report.value == pytest.approx(0.0873, abs=2e-3)
        assert report.equality_pairs == [(0, 2), (0, 3), (1, 3)]
        assert report.necessary_ok
        assert not report.kkt_ok
        assert not report.optimal

    def test_remark_optimum_passes_everything(self):
        psi_ref, _, _ = reference_solution(REMARK)
        report = check_structure(REMARK, psi_ref, rtol=1e-4)
        assert report.optimal
        assert report.equality_pairs == [(0, 2), (1, 2), (1, 3)]

    def test_two_arm_balance_residual(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 2), [1.0, 0.0], 1)
        psi = np.array([0.6, 0.4])
        report = check_structure(inst, psi, rtol=10.0)
        assert len(report.components) == 1
        assert report.balance_residuals[0] == pytest.approx(
            abs(0.6**2 - 0.4**2) / 0.25, abs=1e-12)

    def test_general_family_balance_matches_gaussian_form(self, ex31_reference):
        # the path-product balance evaluated on a Bernoulli optimum is zero too
        inst = InstanceSpec(RewardFamily.bernoulli(), [0.7, 0.4, 0.3], 1)
        psi_ref, _, _ = reference_solution(inst)
        report = check_structure(inst, psi_ref, rtol=1e-4)
        assert all(r <= 1e-3 for r in report.balance_residuals)
        assert report.optimal

    def test_empty_graph_reported_not_fatal(self):
        report = check_structure(EX31, np.full(5, 0.2), rtol=1e-12)
        assert not report.rowcol_ok
        assert not report.optimal


class TestMonotone:
    def test_direction_within_groups(self):
        assert check_monotone(EX31, PSI_STAR_PAPER)
        bad_top = np.array([0.28, 0.17, 0.2185, 0.2026, 0.1232])
        assert not check_monotone(EX31, bad_top)
        bad_bottom = np.array([0.2185, 0.2371, 0.1232, 0.2026, 0.2185])
        assert not check_monotone(EX31, bad_bottom)


class TestSufficientCondition:
    def test_remark_optimum_connected_case(self):
        psi_ref, _, _ = reference_solution(REMARK)
        report = check_sufficient_condition(REMARK, psi_ref, rtol=1e-4)
        assert report.applies
        assert report.equality_ok
        assert report.balance_residual <= 1e-4

    def test_disconnected_case_does_not_match(self, ex31_reference):
        psi_ref, _, _ = ex31_reference
        report = check_sufficient_condition(EX31, psi_ref, rtol=1e-4)
        assert not report.equality_ok


class TestEqualityPairs:
    def test_all_pairs_within_loose_tolerance(self, ex31_reference):
        psi_ref, _, _ = ex31_reference
        pairs, value = equality_pairs(EX31, psi_ref, rtol=1e-2)
        assert len(pairs) == 6  # near-ties merge at the display tolerance
        assert value == pytest.approx(0.05684, abs=1e-4)

    def test_worst_pair_consistency(self, ex31_reference):
        psi_ref, _, _ = ex31_reference
        _, pair = worst_pair_rate(EX31, psi_ref)
        pairs, _ = equality_pairs(EX31, psi_ref, rtol=1e-4)
        assert pair in pairs
