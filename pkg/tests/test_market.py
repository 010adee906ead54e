import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashpricing.market import (
    MarketObservation,
    MarketParams,
    expected_demand,
    expected_profit,
    purchase_elasticity,
    realized_sales,
    win_probabilities,
)


@pytest.fixture
def params():
    return MarketParams(beta0=15, beta1=-1.05, beta2=-3.1, a=0.1, n_agents=3)


class TestParams:
    def test_rejects_bad_coefficients(self):
        with pytest.raises(ValueError):
            MarketParams(beta0=-1, beta1=-1, beta2=0, a=0.1, n_agents=3)
        with pytest.raises(ValueError):
            MarketParams(beta0=1, beta1=0.5, beta2=0, a=0.1, n_agents=3)
        with pytest.raises(ValueError):
            MarketParams(beta0=1, beta1=-1, beta2=0.5, a=0.1, n_agents=3)
        with pytest.raises(ValueError):
            MarketParams(beta0=1, beta1=-1, beta2=0, a=0.1, n_agents=1)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            MarketParams(beta0=1, beta1=-1, beta2=0, a=0.1, n_agents=2,
                         price_grid=(3, 2, 1))
        with pytest.raises(ValueError):
            MarketParams(beta0=1, beta1=-1, beta2=0, a=0.1, n_agents=2,
                         price_grid=(0, 1, 2))

    def test_json_round_trip(self, params):
        assert MarketParams.from_json(params.to_json()) == params

    def test_json_field_names(self, params):
        import json

        keys = set(json.loads(params.to_json()))
        assert keys == {"beta0", "beta1", "beta2", "a", "b", "n_agents", "price_grid"}


class TestExpectedDemand:
    def test_direct_evaluation(self, params):
        assert expected_demand(params, 5, 5).value == pytest.approx(9.75)

    def test_zero_prices_gives_intercept(self, params):
        assert expected_demand(params, 0, 0).value == params.beta0

    def test_clamped_to_zero(self, params):
        d = expected_demand(params, 10, 1)
        assert d.value == 0.0
        assert d.clamped

    def test_rejects_negative_mean_price(self, params):
        with pytest.raises(ValueError):
            expected_demand(params, -1, 5)

    def test_non_increasing_in_mean_price(self, params):
        values = [expected_demand(params, x, 5.0).value for x in np.linspace(0, 12, 50)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestPurchaseElasticity:
    def test_interior(self, params):
        assert purchase_elasticity(params, 5) == pytest.approx(0.5)

    def test_above_cutoff(self, params):
        assert purchase_elasticity(params, 12) == 0.0

    def test_limit_at_zero(self, params):
        assert purchase_elasticity(params, 1e-9) == pytest.approx(1.0)

    def test_rejects_nonpositive_price(self, params):
        with pytest.raises(ValueError):
            purchase_elasticity(params, 0)
        with pytest.raises(ValueError):
            purchase_elasticity(params, -2)


class TestWinProbabilities:
    def test_symmetry(self, params):
        probs = win_probabilities(params, [4, 4, 4])
        assert np.allclose(probs, 1 / 3)

    def test_two_agent_logistic_gap(self, params):
        probs = win_probabilities(params, [5, 10])
        assert probs[0] == pytest.approx(0.62245933, abs=1e-6)
        assert probs[1] == pytest.approx(0.37754067, abs=1e-6)

    def test_all_above_cutoff_uniform(self, params):
        probs = win_probabilities(params, [11, 12, 13, 14, 15])
        assert np.allclose(probs, 0.2)

    @given(st.lists(st.floats(0.1, 50), min_size=2, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one(self, prices):
        params = MarketParams(beta0=15, beta1=-1.05, beta2=-3.1, a=0.1, n_agents=3)
        assert abs(win_probabilities(params, prices).sum() - 1.0) < 1e-12

    def test_permutation_equivariance(self, params):
        prices = [2.0, 5.0, 7.0]
        probs = win_probabilities(params, prices)
        perm = [2, 0, 1]
        permuted = win_probabilities(params, [prices[i] for i in perm])
        assert np.allclose(permuted, probs[perm])


class TestExpectedProfit:
    def test_symmetric(self, params):
        obs = MarketObservation.from_prices([5, 5, 5], 5)
        assert expected_profit(params, 0, obs) == pytest.approx((1 / 3) * 5 * 9.75)

    def test_zero_demand_zero_profit(self, params):
        obs = MarketObservation.from_prices([10, 10, 10], 1)
        for n in range(3):
            assert expected_profit(params, n, obs) == 0.0

    def test_agent_out_of_range(self, params):
        obs = MarketObservation.from_prices([5, 5, 5], 5)
        with pytest.raises(IndexError):
            expected_profit(params, 3, obs)


class TestRealizedSales:
    def test_zero_demand(self, params):
        obs = MarketObservation.from_prices([10, 10, 10], 1)
        assert realized_sales(params, obs, 0).sum() == 0

    def test_deterministic_given_seed(self, params):
        obs = MarketObservation.from_prices([4, 5, 6], 5)
        a = realized_sales(params, obs, 123)
        b = realized_sales(params, obs, 123)
        assert np.array_equal(a, b)

    def test_monte_carlo_matches_expected_profit(self, params):
        obs = MarketObservation.from_prices([4, 5, 6], 5)
        rng = np.random.default_rng(7)
        n = 100_000
        totals = np.zeros(3)
        sq = np.zeros(3)
        prices = np.array(obs.per_agent_prices)
        for _ in range(n):
            rev = realized_sales(params, obs, rng) * prices
            totals += rev
            sq += rev**2
        mean = totals / n
        se = np.sqrt((sq / n - mean**2) / n)
        expected = np.array([expected_profit(params, i, obs) for i in range(3)])
        assert np.all(np.abs(mean - expected) < 3 * se + 1e-9)
