"""Closed-form deviation analysis: gain function, optimal deviation, and
epsilon surfaces marking where unilateral price deviations stop paying off.

Everything here is a pure function of the market parameters and a
(mean price, reference price) context, and serves as the theoretical
ground truth that the learned policies are checked against.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .market import MarketParams, expected_demand, purchase_elasticity

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DeviationContext:
    """Symmetric-market context for deviation analysis.

    All non-deviating agents price at ``mean_price``; derived quantities:
    ``gamma`` (combined demand slope magnitude), ``demand`` (expected demand
    at the symmetric price) and ``crowd_weight`` (summed softmax weight of
    the non-deviating agents).
    """

    params: MarketParams
    mean_price: float
    reference_price: float
    gamma: float = field(init=False)
    demand: float = field(init=False)
    crowd_weight: float = field(init=False)

    def __post_init__(self):
        gamma = -(self.params.beta1 + self.params.beta2)
        if gamma <= 0:
            raise ValueError("combined demand slope must be positive")
        dem = expected_demand(self.params, self.mean_price, self.reference_price)
        weight = purchase_elasticity(self.params, self.mean_price)
        object.__setattr__(self, "gamma", float(gamma))
        object.__setattr__(self, "demand", dem.value)
        object.__setattr__(
            self, "crowd_weight", (self.params.n_agents - 1) * math.exp(weight)
        )

    @property
    def symmetric_profit(self) -> float:
        """Per-agent expected profit when everyone prices at the mean price."""
        return self.mean_price * self.demand / self.params.n_agents


def win_factor(ctx: DeviationContext, d: float | np.ndarray) -> np.ndarray:
    """Multiplier on the deviating agent's win probability when it prices
    ``d`` below the symmetric market price.

    Computed from the softmax weights directly, so the elasticity clipping
    at zero is honoured; equals exp(a*d) * (W + e0) / (W + e0*exp(a*d)) in
    the unclipped region, with W the crowd weight and e0 the symmetric
    weight exponential.
    """
    d = np.asarray(d, dtype=float)
    new_price = ctx.mean_price - d
    if np.any(new_price <= 0):
        raise ValueError("deviated price must stay positive")
    w = ctx.crowd_weight
    if w <= 0:
        raise ValueError("degenerate context: non-positive crowd weight")
    e0 = math.exp(purchase_elasticity(ctx.params, ctx.mean_price))
    phi_dev = np.array(
        [purchase_elasticity(ctx.params, p) for p in np.atleast_1d(new_price)]
    ).reshape(d.shape)
    ed = np.exp(phi_dev)
    out = (ed / (w + ed)) * ((w + e0) / e0)
    return out if out.shape else float(out)


def win_factor_bound(ctx: DeviationContext, d: float | np.ndarray) -> np.ndarray:
    """Exponential upper bound on the win factor for undercutting."""
    d = np.asarray(d, dtype=float)
    out = np.exp(ctx.crowd_weight * ctx.params.a * d)
    return out if out.shape else float(out)


def admissible_range(ctx: DeviationContext) -> tuple[float, float]:
    """Open deviation interval on which the gain ratio stays positive."""
    if ctx.demand <= 0:
        return (0.0, 0.0)
    return (-ctx.demand / ctx.gamma, ctx.mean_price)


def gain(ctx: DeviationContext, d: float) -> float:
    """Ratio of the deviating agent's expected profit to the symmetric
    profit. Exact (no win-factor bound)."""
    if ctx.demand <= 0:
        raise ValueError("gain undefined: expected demand is zero at this context")
    lo, hi = admissible_range(ctx)
    if d == lo or d == hi:
        return 0.0
    if not lo < d < hi:
        raise ValueError(
            f"deviation {d} outside admissible range ({lo}, {hi})"
        )
    return float(
        win_factor(ctx, d)
        * (1.0 + ctx.gamma / ctx.demand * d)
        * (1.0 - d / ctx.mean_price)
    )


def _gain_curve(ctx: DeviationContext, d: np.ndarray, use_bound: bool) -> np.ndarray:
    factor = win_factor_bound(ctx, d) if use_bound else win_factor(ctx, d)
    return factor * (1.0 + ctx.gamma / ctx.demand * d) * (1.0 - d / ctx.mean_price)


def undercut_profitable(ctx: DeviationContext) -> tuple[bool, tuple[float, float]]:
    """Whether pricing below the symmetric market price raises expected
    profit, and the undercut interval on which it does."""
    if ctx.demand <= 0:
        raise ValueError("undefined: expected demand is zero at this context")
    if ctx.mean_price > ctx.demand / ctx.gamma:
        return True, (0.0, ctx.mean_price - ctx.demand / ctx.gamma)
    return False, (0.0, 0.0)


def optimal_deviation(
    ctx: DeviationContext,
    use_bound: bool = True,
    domain: str = "admissible",
    grid_points: int = 512,
    tol: float = 1e-6,
) -> tuple[float, float]:
    """Numerically maximized deviation advantage.

    Returns ``(d_star, epsilon)`` where epsilon is the symmetric profit
    times the excess gain, floored at zero. ``domain`` selects the search
    interval: the full admissible range, or ``"undercut"`` for d >= 0 only.
    A dense grid seeds a golden-section refinement so bimodal contexts
    near the plateau edge do not trap the search in a local maximum.
    """
    if domain not in ("admissible", "undercut"):
        raise ValueError(f"unknown domain {domain!r}")
    if ctx.demand <= 0:
        return (0.0, 0.0)
    lo, hi = admissible_range(ctx)
    if domain == "undercut":
        lo = 0.0
    eps_edge = 1e-12 * max(1.0, abs(hi - lo))
    grid = np.linspace(lo + eps_edge, hi - eps_edge, grid_points)
    values = _gain_curve(ctx, grid, use_bound)
    best = int(np.argmax(values))
    # golden-section refinement in the bracket around the best grid point
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, grid_points - 1)]
    c = b - GOLDEN * (b - a)
    dd = a + GOLDEN * (b - a)
    fc = _gain_curve(ctx, np.array([c]), use_bound)[0]
    fd = _gain_curve(ctx, np.array([dd]), use_bound)[0]
    while abs(b - a) > tol:
        if fc >= fd:
            b, dd, fd = dd, c, fc
            c = b - GOLDEN * (b - a)
            fc = _gain_curve(ctx, np.array([c]), use_bound)[0]
        else:
            a, c, fc = c, dd, fd
            dd = a + GOLDEN * (b - a)
            fd = _gain_curve(ctx, np.array([dd]), use_bound)[0]
    refined_d = (a + b) / 2.0
    refined_v = _gain_curve(ctx, np.array([refined_d]), use_bound)[0]
    if refined_v >= values[best]:
        d_star, gain_max = refined_d, refined_v
    else:
        d_star, gain_max = float(grid[best]), float(values[best])
    epsilon = ctx.symmetric_profit * (gain_max - 1.0)
    return (float(d_star), max(0.0, float(epsilon)))


def closed_form_deviation(ctx: DeviationContext) -> float:
    """Closed-form candidate for the optimal deviation.

    Returns NaN when the discriminant is negative. Kept as a secondary
    cross-check only; the numeric maximizer is authoritative (see
    compare_deviation_paths).
    """
    if ctx.demand <= 0:
        return float("nan")
    c1 = ctx.gamma / ctx.demand - 1.0 / ctx.mean_price
    c2 = ctx.gamma / (ctx.demand * ctx.mean_price)
    disc = c1 * c1 - c1 + 4.0 * (c2 - 1.0) * c2 - 2.0 * c2
    if disc < 0 or c2 == 0:
        return float("nan")
    return math.sqrt(disc) / (2.0 * c2)


def compare_deviation_paths(ctx: DeviationContext) -> dict:
    """Report numeric vs closed-form optimal deviation for one context."""
    d_num, eps_num = optimal_deviation(ctx)
    d_cf = closed_form_deviation(ctx)
    return {
        "mean_price": ctx.mean_price,
        "reference_price": ctx.reference_price,
        "numeric_d": d_num,
        "numeric_epsilon": eps_num,
        "closed_form_d": d_cf,
        "abs_difference": abs(d_num - d_cf) if math.isfinite(d_cf) else float("nan"),
    }


@dataclass
class EpsilonSurface:
    """Deviation-advantage surface over a mean-price x reference-price grid."""

    x_grid: np.ndarray
    p_grid: np.ndarray
    epsilon: np.ndarray  # shape (len(x_grid), len(p_grid))
    ne_mask: np.ndarray
    epsilon_threshold: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_mean", "p_ref", "epsilon", "is_ne"])
            for i, x in enumerate(self.x_grid):
                for j, p in enumerate(self.p_grid):
                    writer.writerow(
                        [repr(float(x)), repr(float(p)),
                         repr(float(self.epsilon[i, j])),
                         int(self.ne_mask[i, j])]
                    )


def epsilon_surface(
    params: MarketParams,
    x_grid: Sequence[float],
    p_grid: Sequence[float],
    epsilon_threshold: float,
    use_bound: bool = True,
    domain: str = "undercut",
    workers: int = 0,
) -> EpsilonSurface:
    """Maximum deviation advantage at every (mean price, reference price)
    grid cell, with the cells where it falls below the threshold flagged
    as the equilibrium plateau.

    The default uses the exponential win-factor bound and undercut-only
    deviations, so the surface is a true upper bound on the advantage of
    undercutting. Cell evaluation is pure, so ``workers`` > 0 fans cells
    out across threads with deterministic assembly.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    p_grid = np.asarray(p_grid, dtype=float)

    def cell(idx):
        i, j = idx
        ctx = DeviationContext(params, float(x_grid[i]), float(p_grid[j]))
        return optimal_deviation(ctx, use_bound=use_bound, domain=domain)[1]

    indices = [(i, j) for i in range(len(x_grid)) for j in range(len(p_grid))]
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(cell, indices))
    else:
        flat = [cell(idx) for idx in indices]
    eps = np.array(flat).reshape(len(x_grid), len(p_grid))
    return EpsilonSurface(
        x_grid=x_grid,
        p_grid=p_grid,
        epsilon=eps,
        ne_mask=eps < epsilon_threshold,
        epsilon_threshold=epsilon_threshold,
    )


def ne_reward_band(
    params: MarketParams,
    reference_price: float,
    epsilon_threshold: float,
    x_grid: Sequence[float] | None = None,
    use_bound: bool = True,
    domain: str = "undercut",
) -> tuple[float, float] | None:
    """Range of per-agent symmetric expected rewards over the mean prices
    whose deviation advantage is below the threshold at this reference
    price. None when no such mean price exists."""
    if x_grid is None:
        x_grid = params.price_grid
    rewards = []
    for x in x_grid:
        ctx = DeviationContext(params, float(x), float(reference_price))
        _, eps = optimal_deviation(ctx, use_bound=use_bound, domain=domain)
        if eps < epsilon_threshold:
            rewards.append(ctx.symmetric_profit)
    if not rewards:
        return None
    return (min(rewards), max(rewards))


def all_reward_bands(
    params: MarketParams,
    epsilon_threshold: float,
    p_grid: Sequence[float] | None = None,
    x_grid: Sequence[float] | None = None,
) -> dict[float, tuple[float, float] | None]:
    if p_grid is None:
        p_grid = params.price_grid
    return {
        float(p): ne_reward_band(params, float(p), epsilon_threshold, x_grid=x_grid)
        for p in p_grid
    }


def union_band(bands: dict[float, tuple[float, float] | None]) -> tuple[float, float] | None:
    """Union (envelope) of the per-reference-price reward bands."""
    lows = [b[0] for b in bands.values() if b is not None]
    highs = [b[1] for b in bands.values() if b is not None]
    if not lows:
        return None
    return (min(lows), max(highs))


def bands_to_json(bands: dict[float, tuple[float, float] | None], path) -> None:
    payload = {
        repr(float(p)): (list(b) if b is not None else None) for p, b in bands.items()
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
