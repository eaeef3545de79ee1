"""Pair-rate machinery: tilted means, costs, gradients, budget rates, fractions."""
import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from pure_explore.costs import (
    DegeneratePairError,
    budget_rate,
    budget_rate_grad,
    pair_rates,
    pair_sampling_fraction,
    pair_transport_cost,
    sampling_fraction,
    tilted_mean,
    transport_cost,
    transport_cost_grad,
    worst_pair_rate,
)
from pure_explore.families import FamilyKind, RewardFamily
from pure_explore.instance import InstanceSpec

EX31 = InstanceSpec(RewardFamily.gaussian(0.25, 5), [0.51, 0.5, 0.0, -0.01, -0.092], 2)
PSI_STAR = np.array([0.2185, 0.2371, 0.2185, 0.2026, 0.1232])


def random_instance(rng, family_kind, n_arms=None, k=None, equal_var=False):
    n = int(n_arms or rng.integers(2, 6))
    k = int(k or rng.integers(1, n))
    while True:
        if family_kind == FamilyKind.GAUSSIAN:
            theta = np.sort(rng.uniform(-1, 1, n))[::-1]
            sigma2 = rng.uniform(0.1, 1.0) if equal_var else rng.uniform(0.1, 1.0, n)
            family = RewardFamily.gaussian(sigma2, n)
        elif family_kind == FamilyKind.BERNOULLI:
            theta = np.sort(rng.uniform(0.05, 0.95, n))[::-1]
            family = RewardFamily.bernoulli()
        else:
            theta = np.sort(rng.uniform(0.2, 5.0, n))[::-1]
            family = RewardFamily.poisson()
        if theta[k - 1] - theta[k] > 0.05:
            return InstanceSpec(family, theta, k)


ALL_KINDS = (FamilyKind.GAUSSIAN, FamilyKind.BERNOULLI, FamilyKind.POISSON)


class TestTiltedMean:
    def test_equal_weights_midpoint(self):
        inst = InstanceSpec(RewardFamily.bernoulli(), [0.8, 0.2], 1)
        assert tilted_mean(inst, [0.5, 0.5], 0, 1) == pytest.approx(0.5)

    def test_zero_weight_boundary(self):
        inst = InstanceSpec(RewardFamily.bernoulli(), [0.8, 0.2], 1)
        assert tilted_mean(inst, [1.0, 0.0], 0, 1) == pytest.approx(0.8)

    def test_weighted_example(self):
        inst = InstanceSpec(RewardFamily.gaussian(1.0, 2), [1.0, 0.0], 1)
        assert tilted_mean(inst, [0.75, 0.25], 0, 1) == pytest.approx(0.75)

    def test_degenerate_pair_raises(self):
        inst = InstanceSpec(RewardFamily.gaussian(1.0, 3), [1.0, 0.5, 0.0], 1)
        with pytest.raises(DegeneratePairError):
            tilted_mean(inst, [1.0, 0.0, 0.0], 1, 2)

    def test_heterogeneous_variance_minimizes(self):
        # the tilted mean must minimize the weighted divergence sum
        fam = RewardFamily.gaussian([0.1, 2.0])
        inst = InstanceSpec(fam, [1.0, 0.0], 1)
        psi = np.array([0.3, 0.7])
        bar = tilted_mean(inst, psi, 0, 1)
        objective = lambda x: (psi[0] * fam.kl(0, 1.0, x) + psi[1] * fam.kl(1, 0.0, x))
        best = minimize_scalar(objective, bounds=(0.0, 1.0), method="bounded",
                               options={"xatol": 1e-12}).x
        assert bar == pytest.approx(best, abs=1e-8)
        assert objective(bar) <= objective(best) + 1e-14


class TestTransportCost:
    def test_gaussian_balanced_pair(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 2), [1.0, 0.0], 1)
        # (1 / 0.5) * (0.25 / 1) = 0.5
        assert transport_cost(inst, [0.5, 0.5], 0, 1) == pytest.approx(0.5)

    def test_degenerate_pair_is_zero(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 3), [1.0, 0.5, 0.0], 1)
        assert transport_cost(inst, [0.0, 1.0, 0.0], 0, 2) == 0.0

    def test_paper_equalities_at_optimum(self):
        assert transport_cost(EX31, PSI_STAR, 0, 2) == pytest.approx(0.0568, abs=5e-4)
        assert transport_cost(EX31, PSI_STAR, 1, 3) == pytest.approx(0.0568, abs=5e-4)
        assert transport_cost(EX31, PSI_STAR, 1, 4) == pytest.approx(0.0568, abs=5e-4)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_concavity_probe(self, kind):
        rng = np.random.default_rng(29)
        inst = random_instance(rng, kind, n_arms=4, k=2)
        i, j = int(inst.top_arms[0]), int(inst.bottom_arms[-1])
        for _ in range(200):
            pa = rng.dirichlet(np.ones(4))
            pb = rng.dirichlet(np.ones(4))
            lam = rng.uniform()
            mix = transport_cost(inst, lam * pa + (1 - lam) * pb, i, j)
            split = lam * transport_cost(inst, pa, i, j) + (1 - lam) * transport_cost(inst, pb, i, j)
            assert mix >= split - 1e-10

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(31)
        h = 1e-6
        for _ in range(100):
            inst = random_instance(rng, kind, n_arms=3, k=1)
            psi = rng.dirichlet(np.ones(3)) * 0.9 + 0.03
            i, j = int(inst.top_arms[0]), int(rng.choice(inst.bottom_arms))
            gi, gj = transport_cost_grad(inst, psi, i, j)
            for arm, grad in ((i, gi), (j, gj)):
                up, dn = psi.copy(), psi.copy()
                up[arm] += h
                dn[arm] -= h
                numeric = (transport_cost(inst, up, i, j) - transport_cost(inst, dn, i, j)) / (2 * h)
                assert numeric == pytest.approx(grad, rel=1e-5, abs=1e-9)

    def test_gradient_zero_for_equal_means(self):
        inst = InstanceSpec.plugin(RewardFamily.bernoulli(), [0.5, 0.5], 1)
        assert transport_cost_grad(inst, [0.4, 0.6], 0, 1) == (0.0, 0.0)

    def test_gaussian_gradient_closed_form(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 2), [1.0, 0.0], 1)
        psi = np.array([0.3, 0.1])
        gi, gj = transport_cost_grad(inst, psi, 0, 1)
        scale = 1.0 / (2 * 0.25)
        assert gi == pytest.approx(scale * (0.1 / 0.4) ** 2, rel=1e-12)
        assert gj == pytest.approx(scale * (0.3 / 0.4) ** 2, rel=1e-12)

    def test_gradient_degenerate_raises(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 3), [1.0, 0.5, 0.0], 1)
        with pytest.raises(DegeneratePairError):
            transport_cost_grad(inst, [0.0, 1.0, 0.0], 0, 2)  # psi_0 + psi_2 = 0


class TestBudgetRate:
    def test_gaussian_equals_transport_cost(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            inst = random_instance(rng, FamilyKind.GAUSSIAN, n_arms=4)
            psi = rng.dirichlet(np.ones(4))
            i, j = int(rng.choice(inst.top_arms)), int(rng.choice(inst.bottom_arms))
            assert budget_rate(inst, psi, i, j) == pytest.approx(
                transport_cost(inst, psi, i, j), abs=1e-12)

    def test_equal_means_zero(self):
        inst = InstanceSpec.plugin(RewardFamily.poisson(), [2.0, 2.0], 1)
        assert budget_rate(inst, [0.5, 0.5], 0, 1) == 0.0

    @pytest.mark.parametrize("kind", [FamilyKind.BERNOULLI, FamilyKind.POISSON])
    def test_matches_scalar_minimization_oracle(self, kind):
        rng = np.random.default_rng(41)
        for _ in range(20):
            inst = random_instance(rng, kind, n_arms=2, k=1)
            fam, (ti, tj) = inst.family, inst.theta
            psi = rng.dirichlet(np.ones(2)) * 0.9 + 0.05
            mine = budget_rate(inst, psi, 0, 1)
            objective = lambda x: float(psi[0] * fam.kl(0, x, ti) + psi[1] * fam.kl(1, x, tj))
            lo, hi = (1e-9, 1 - 1e-9) if kind == FamilyKind.BERNOULLI else (1e-9, 10.0)
            oracle = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                                     options={"xatol": 1e-12}).fun
            assert mine == pytest.approx(oracle, abs=1e-8)

    def test_bernoulli_spec_example(self):
        inst = InstanceSpec(RewardFamily.bernoulli(), [0.8, 0.2], 1)
        fam = inst.family
        objective = lambda x: float(0.5 * fam.kl(0, x, 0.8) + 0.5 * fam.kl(0, x, 0.2))
        oracle = minimize_scalar(objective, bounds=(1e-9, 1 - 1e-9), method="bounded",
                                 options={"xatol": 1e-13}).fun
        assert budget_rate(inst, [0.5, 0.5], 0, 1) == pytest.approx(oracle, abs=1e-8)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_budget_gradient_finite_differences(self, kind):
        rng = np.random.default_rng(43)
        h = 1e-6
        for _ in range(30):
            inst = random_instance(rng, kind, n_arms=3, k=1)
            psi = rng.dirichlet(np.ones(3)) * 0.9 + 0.03
            i, j = int(inst.top_arms[0]), int(rng.choice(inst.bottom_arms))
            gi, gj = budget_rate_grad(inst, psi, i, j)
            for arm, grad in ((i, gi), (j, gj)):
                up, dn = psi.copy(), psi.copy()
                up[arm] += h
                dn[arm] -= h
                numeric = (budget_rate(inst, up, i, j) - budget_rate(inst, dn, i, j)) / (2 * h)
                assert numeric == pytest.approx(grad, rel=1e-5, abs=1e-9)


class TestWorstPairRate:
    def test_uniform_matches_enumeration(self):
        psi = np.full(5, 0.2)
        direct = min(transport_cost(EX31, psi, i, j)
                     for i in EX31.top_arms for j in EX31.bottom_arms)
        value, _ = worst_pair_rate(EX31, psi)
        assert value == pytest.approx(direct, abs=1e-15)

    def test_zero_top_row_gives_zero(self):
        value, _ = worst_pair_rate(EX31, [0.0, 0.4, 0.2, 0.2, 0.2])
        assert value == 0.0

    def test_paper_value_at_optimum(self):
        value, _ = worst_pair_rate(EX31, PSI_STAR)
        assert value == pytest.approx(0.0568, abs=5e-4)

    def test_lexicographic_tie_break(self):
        inst = InstanceSpec(RewardFamily.gaussian(1.0, 4), [1.0, 1.0, 0.0, 0.0], 2)
        _, pair = worst_pair_rate(inst, np.full(4, 0.25))
        assert pair == (0, 2)

    def test_budget_mode_dispatch(self):
        inst = InstanceSpec(RewardFamily.bernoulli(), [0.8, 0.6, 0.2], 1)
        psi = np.array([0.5, 0.3, 0.2])
        value, pair = worst_pair_rate(inst, psi, mode="budget")
        direct = min(budget_rate(inst, psi, 0, j) for j in (1, 2))
        assert value == pytest.approx(direct, abs=1e-15)
        with pytest.raises(ValueError):
            pair_rates(inst, psi, mode="bogus")


class TestSamplingFraction:
    def test_gaussian_symmetric(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 2), [1.0, 0.0], 1)
        assert sampling_fraction(inst, [0.5, 0.5], 0, 1) == pytest.approx(0.5)

    def test_gaussian_closed_form(self):
        inst = InstanceSpec(RewardFamily.gaussian(0.25, 2), [1.0, 0.0], 1)
        # share of the top arm equals the opposite allocation share
        assert sampling_fraction(inst, [0.3, 0.1], 0, 1) == pytest.approx(0.25)

    def test_shares_sum_to_one(self):
        rng = np.random.default_rng(47)
        fam = RewardFamily.bernoulli()
        for _ in range(50):
            ti, tj = np.sort(rng.uniform(0.05, 0.95, 2))[::-1]
            pi_, pj_ = rng.uniform(0.05, 1.0, 2)
            top_share = pair_sampling_fraction(fam, 0, 1, ti, tj, pi_, pj_)
            bottom_share = pair_sampling_fraction(fam, 1, 0, tj, ti, pj_, pi_)
            assert float(top_share + bottom_share) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_returns_half(self):
        inst = InstanceSpec.plugin(RewardFamily.bernoulli(), [0.5, 0.5], 1)
        assert sampling_fraction(inst, [0.4, 0.6], 0, 1) == 0.5

    def test_fast_path_matches_generic_composition(self):
        rng = np.random.default_rng(51)
        fam = RewardFamily.gaussian(rng.uniform(0.1, 2.0, 6))
        from pure_explore.costs import pair_tilted_mean

        arms = rng.integers(0, 6, size=(200, 2))
        ta, tb = rng.normal(size=200), rng.normal(size=200)
        pa, pb = rng.uniform(0.01, 1, 200), rng.uniform(0.01, 1, 200)
        bar = pair_tilted_mean(fam, arms[:, 0], arms[:, 1], ta, tb, pa, pb)
        naive = pa * fam.kl(arms[:, 0], ta, bar) + pb * fam.kl(arms[:, 1], tb, bar)
        fast = pair_transport_cost(fam, arms[:, 0], arms[:, 1], ta, tb, pa, pb)
        np.testing.assert_allclose(fast, naive, atol=1e-13)
