"""Oligopoly market economy: demand, purchase probabilities, profit, realized sales.

All operations are pure functions of their inputs (plus a seed for the
stochastic ones), so they are safe to evaluate in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class MarketParams:
    """Ground-truth economy parameters, hidden from the learning agents.

    ``beta0`` is the demand intercept (expected sales per period),
    ``beta1`` the own-price slope, ``beta2`` the reference-gap slope,
    ``a`` the slope of the purchase-elasticity weight and ``b`` its
    maximum value (fixed at 1).
    """

    beta0: float
    beta1: float
    beta2: float
    a: float
    n_agents: int
    price_grid: tuple[float, ...] = tuple(float(p) for p in range(1, 11))
    b: float = 1.0

    def __post_init__(self):
        if self.beta0 < 0:
            raise ValueError("beta0 must be >= 0")
        if self.beta1 >= 0:
            raise ValueError("beta1 must be < 0")
        if self.beta2 > 0:
            raise ValueError("beta2 must be <= 0")
        if self.a < 0:
            raise ValueError("a must be >= 0")
        if self.b != 1.0:
            raise ValueError("b is fixed at 1")
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        grid = np.asarray(self.price_grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("price_grid must be strictly increasing and positive")
        object.__setattr__(self, "price_grid", tuple(float(p) for p in grid))

    @property
    def n_actions(self) -> int:
        return len(self.price_grid)

    def to_json(self) -> str:
        return json.dumps(
            {
                "beta0": self.beta0,
                "beta1": self.beta1,
                "beta2": self.beta2,
                "a": self.a,
                "b": self.b,
                "n_agents": self.n_agents,
                "price_grid": list(self.price_grid),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MarketParams":
        d = json.loads(text)
        return cls(
            beta0=d["beta0"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            a=d["a"],
            b=d.get("b", 1.0),
            n_agents=d["n_agents"],
            price_grid=tuple(d["price_grid"]),
        )


@dataclass(frozen=True)
class MarketObservation:
    """One market snapshot: reference price, demand-driving mean price, and
    the per-agent price vector.

    ``mean_price`` is the arithmetic mean of ``per_agent_prices`` when the
    observation comes from a joint action, but can be set independently
    (e.g. to price a single deviating agent's demand).
    """

    reference_price: float
    mean_price: float
    per_agent_prices: tuple[float, ...]

    @classmethod
    def from_prices(cls, prices: Sequence[float], reference_price: float) -> "MarketObservation":
        prices = tuple(float(p) for p in prices)
        return cls(
            reference_price=float(reference_price),
            mean_price=float(np.mean(prices)),
            per_agent_prices=prices,
        )


class Demand(NamedTuple):
    value: float
    clamped: bool


def expected_demand(params: MarketParams, mean_price: float, reference_price: float) -> Demand:
    """Expected sales for one period, clamped at zero.

    The clamp flag reports whether the linear form went negative.
    """
    if mean_price < 0:
        raise ValueError("mean_price must be >= 0")
    raw = (
        params.beta0
        + params.beta1 * mean_price
        + params.beta2 * (mean_price - reference_price)
    )
    if raw < 0:
        return Demand(0.0, True)
    return Demand(float(raw), False)


def purchase_elasticity(params: MarketParams, price: float) -> float:
    """Price-to-attractiveness weight: b - a*price, floored at 0."""
    if price <= 0:
        raise ValueError("price must be > 0")
    if params.a == 0:
        return params.b
    if price >= params.b / params.a:
        return 0.0
    return params.b - params.a * price


def win_probabilities(params: MarketParams, per_agent_prices: Sequence[float]) -> np.ndarray:
    """Softmax over per-agent elasticity weights: probability each agent wins
    a given customer's purchase."""
    weights = np.array([purchase_elasticity(params, p) for p in per_agent_prices])
    shifted = np.exp(weights - weights.max())
    return shifted / shifted.sum()


def expected_profit(params: MarketParams, agent: int, obs: MarketObservation) -> float:
    """Expected per-period profit of one agent: win probability times own
    price times expected demand."""
    n = len(obs.per_agent_prices)
    if not 0 <= agent < n:
        raise IndexError(f"agent index {agent} out of range for {n} agents")
    probs = win_probabilities(params, obs.per_agent_prices)
    demand = expected_demand(params, obs.mean_price, obs.reference_price)
    return float(probs[agent] * obs.per_agent_prices[agent] * demand.value)


def realized_sales(
    params: MarketParams,
    obs: MarketObservation,
    rng: int | np.random.Generator,
) -> np.ndarray:
    """Stochastic sales: total demand drawn from a Poisson arrival process,
    each sale assigned to an agent by its win probability."""
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    demand = expected_demand(params, obs.mean_price, obs.reference_price)
    total = int(gen.poisson(demand.value))
    probs = win_probabilities(params, obs.per_agent_prices)
    if total == 0:
        return np.zeros(len(probs), dtype=int)
    return gen.multinomial(total, probs)
