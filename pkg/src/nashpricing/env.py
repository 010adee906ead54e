"""Episodic N-agent pricing game: discretized reference-price state, joint
price actions, noisy mean-price transition, reward emission.

The transition and step operations are pure functions of their inputs and
an RNG (seed or generator), so seeded runs replay exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import MarketParams, MarketObservation, expected_profit, realized_sales

DEFAULT_MAX_STEPS = 30
DEFAULT_NOISE_SIGMA = 0.25


@dataclass(frozen=True)
class GameState:
    state_index: int
    reference_price: float
    step: int = 0


@dataclass(frozen=True)
class JointAction:
    action_indices: tuple[int, ...]
    prices: tuple[float, ...]

    @classmethod
    def from_indices(cls, indices: Sequence[int], params: MarketParams) -> "JointAction":
        indices = tuple(int(i) for i in indices)
        for i in indices:
            if not 0 <= i < params.n_actions:
                raise ValueError(f"action index {i} out of range")
        return cls(indices, tuple(params.price_grid[i] for i in indices))


@dataclass
class Experience:
    """One replay transition. ``policy`` is the behaviour policy queried at
    the state; ``nash_policy`` the equilibrium policy found for it (the
    regression target for the policy net)."""

    state: GameState
    joint_action: JointAction
    rewards: np.ndarray
    delta: float
    policy: "np.ndarray"
    next_state: GameState
    done: bool
    nash_policy: "np.ndarray | None" = None


def _as_rng(rng: int | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def snap_to_grid(params: MarketParams, price: float) -> int:
    """Nearest grid index; ties resolve toward the lower index."""
    grid = np.asarray(params.price_grid)
    return int(np.argmin(np.abs(grid - price)))


def reset(params: MarketParams, rng: int | np.random.Generator) -> GameState:
    """Fresh episode: reference price drawn uniformly from the price grid."""
    gen = _as_rng(rng)
    idx = int(gen.integers(0, params.n_actions))
    return GameState(state_index=idx, reference_price=params.price_grid[idx], step=0)


def transition(
    params: MarketParams,
    state: GameState,
    action: JointAction,
    noise_sigma: float,
    rng: int | np.random.Generator,
) -> GameState:
    """Next reference price: mean of the joint prices plus Gaussian noise,
    snapped to the grid."""
    gen = _as_rng(rng)
    raw = float(np.mean(action.prices))
    if noise_sigma > 0:
        raw += gen.normal(0.0, noise_sigma)
    idx = snap_to_grid(params, raw)
    return GameState(
        state_index=idx,
        reference_price=params.price_grid[idx],
        step=state.step + 1,
    )


def rewards_for(
    params: MarketParams,
    state: GameState,
    action: JointAction,
    reward_mode: str,
    rng: int | np.random.Generator,
) -> np.ndarray:
    obs = MarketObservation.from_prices(action.prices, state.reference_price)
    if reward_mode == "expected":
        return np.array(
            [expected_profit(params, n, obs) for n in range(len(action.prices))]
        )
    if reward_mode == "sampled":
        sales = realized_sales(params, obs, rng)
        return sales * np.asarray(action.prices)
    raise ValueError(f"unknown reward_mode {reward_mode!r}")


def step(
    params: MarketParams,
    state: GameState,
    action: JointAction,
    reward_mode: str,
    rng: int | np.random.Generator,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> tuple[GameState, np.ndarray, bool]:
    """Advance one step: emit rewards, transition the reference price, and
    flag episode end at the step cap."""
    if state.step >= max_steps:
        raise ValueError("cannot step a finished episode")
    gen = _as_rng(rng)
    rewards = rewards_for(params, state, action, reward_mode, gen)
    nxt = transition(params, state, action, noise_sigma, gen)
    done = nxt.step >= max_steps
    return nxt, rewards, done
