"""Simplex-constrained trust-region black-box optimization.

A Gaussian-process surrogate with Thompson sampling proposes candidates
inside one or more trust regions; every candidate is renormalized so each
agent's probability block sums to one before the objective ever sees it.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

L_INIT = 0.4
L_MIN = 0.01
L_MAX = 1.0
SUCC_TOL = 2
FAIL_TOL = 3
JOINT_SAMPLE_LIMIT = 200  # above this many candidates, sample marginals


@dataclass(frozen=True)
class SimplexLayout:
    """Partition of the search dimension into equal per-agent blocks."""

    n_blocks: int
    block_size: int

    @property
    def dim(self) -> int:
        return self.n_blocks * self.block_size


def normalize_candidate(layout: SimplexLayout, raw: np.ndarray) -> np.ndarray:
    """Scale each block to sum to one; an all-zero block becomes uniform."""
    raw = np.maximum(np.asarray(raw, dtype=float), 0.0)
    blocks = raw.reshape(layout.n_blocks, layout.block_size)
    sums = blocks.sum(axis=1, keepdims=True)
    uniform = np.full(layout.block_size, 1.0 / layout.block_size)
    out = np.where(sums > 0, blocks / np.where(sums > 0, sums, 1.0), uniform)
    return out.reshape(layout.dim)


def normalize_candidates(layout: SimplexLayout, raw: np.ndarray) -> np.ndarray:
    """Batched normalize_candidate over rows of a (n, dim) array."""
    raw = np.maximum(np.asarray(raw, dtype=float), 0.0)
    blocks = raw.reshape(len(raw), layout.n_blocks, layout.block_size)
    sums = blocks.sum(axis=2, keepdims=True)
    uniform = 1.0 / layout.block_size
    out = np.where(sums > 0, blocks / np.where(sums > 0, sums, 1.0), uniform)
    return out.reshape(len(raw), layout.dim)


def check_simplex(layout: SimplexLayout, point: np.ndarray, tol: float = 1e-12) -> bool:
    blocks = np.asarray(point).reshape(layout.n_blocks, layout.block_size)
    return bool(np.all(blocks >= 0) and np.all(np.abs(blocks.sum(axis=1) - 1.0) <= tol))


class GaussianProcess:
    """Constant-mean GP with a squared-exponential kernel.

    Hyperparameters are fit by log-marginal-likelihood grid search around a
    median-distance heuristic. Observation jitter starts at 1e-6 and is
    escalated tenfold (up to 1e-2) if the kernel matrix is singular.
    """

    def __init__(self, jitter: float = 1e-6):
        self.jitter = jitter
        self.x = None
        self.y = None
        self.mean = 0.0
        self.lengthscale = 1.0
        self.variance = 1.0
        self._chol = None
        self._alpha = None

    def _kernel(self, a: np.ndarray, b: np.ndarray, ls: float, var: float) -> np.ndarray:
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return var * np.exp(-0.5 * d2 / (ls * ls))

    def _try_chol(self, k: np.ndarray) -> np.ndarray | None:
        jitter = self.jitter
        while jitter <= 1e-2:
            try:
                return np.linalg.cholesky(k + jitter * np.eye(k.shape[0])), jitter
            except np.linalg.LinAlgError:
                jitter *= 10
        return None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        if len(y) < 2:
            raise ValueError("need at least 2 archive points")
        self.x, self.y = x, y
        self.mean = float(y.mean())
        resid = y - self.mean
        yvar = float(resid.var()) or 1.0
        d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        med = float(np.sqrt(np.median(d2[d2 > 0]))) if np.any(d2 > 0) else 1.0
        best = (-np.inf, med, yvar, None, None)
        for ls in med * np.array([0.25, 0.5, 1.0, 2.0, 4.0]):
            k_unit = np.exp(-0.5 * d2 / (ls * ls))
            for var in yvar * np.array([0.25, 1.0, 4.0]):
                res = self._try_chol(var * k_unit)
                if res is None:
                    continue
                chol, _ = res
                alpha = np.linalg.solve(
                    chol.T, np.linalg.solve(chol, resid)
                )
                lml = (
                    -0.5 * resid @ alpha
                    - np.log(np.diag(chol)).sum()
                    - 0.5 * len(y) * math.log(2 * math.pi)
                )
                if lml > best[0]:
                    best = (lml, float(ls), float(var), chol, alpha)
        if best[3] is None:
            raise np.linalg.LinAlgError("kernel matrix singular at maximum jitter")
        _, self.lengthscale, self.variance, self._chol, self._alpha = best
        return self

    def predict(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        ks = self._kernel(xq, self.x, self.lengthscale, self.variance)
        mean = self.mean + ks @ self._alpha
        v = np.linalg.solve(self._chol, ks.T)
        var = np.maximum(self.variance - (v * v).sum(axis=0), 1e-12)
        return mean, var

    def sample(self, xq: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Posterior draw at the query points (joint for small query sets,
        marginal beyond JOINT_SAMPLE_LIMIT)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        mean, var = self.predict(xq)
        if xq.shape[0] <= JOINT_SAMPLE_LIMIT:
            ks = self._kernel(xq, self.x, self.lengthscale, self.variance)
            v = np.linalg.solve(self._chol, ks.T)
            kqq = self._kernel(xq, xq, self.lengthscale, self.variance)
            cov = kqq - v.T @ v
            cov += 1e-10 * np.eye(cov.shape[0])
            try:
                lc = np.linalg.cholesky(cov)
                return mean + lc @ rng.standard_normal(xq.shape[0])
            except np.linalg.LinAlgError:
                pass
        return mean + np.sqrt(var) * rng.standard_normal(xq.shape[0])


def fit_surrogate(archive: Sequence[tuple[np.ndarray, float]]) -> GaussianProcess:
    """Fit the posterior sampler over an observed (point, value) archive."""
    x = np.array([p for p, _ in archive])
    y = np.array([v for _, v in archive])
    return GaussianProcess().fit(x, y)


@dataclass
class TrustRegionState:
    center: np.ndarray
    side_length: float = L_INIT
    success_count: int = 0
    failure_count: int = 0
    archive: list = field(default_factory=list)

    def record_round(self, improved: bool) -> None:
        if improved:
            self.success_count += 1
            self.failure_count = 0
            if self.success_count >= SUCC_TOL:
                self.side_length = min(2.0 * self.side_length, L_MAX)
                self.success_count = 0
        else:
            self.failure_count += 1
            self.success_count = 0
            if self.failure_count >= FAIL_TOL:
                self.side_length = max(self.side_length / 2.0, L_MIN)
                self.failure_count = 0


@dataclass
class EvalRecord:
    round: int
    eval_index: int
    value: float
    incumbent: float


@dataclass
class OptimizeResult:
    best_point: np.ndarray
    best_value: float
    log: list[EvalRecord]
    n_evals: int
    guard_checks: int = 0
    guard_violations: int = 0

    def log_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "eval_index", "value", "incumbent"])
            for rec in self.log:
                writer.writerow(
                    [rec.round, rec.eval_index, repr(rec.value), repr(rec.incumbent)]
                )


def optimize(
    objective: Callable[[np.ndarray], float],
    layout: SimplexLayout,
    budget: int,
    batch: int,
    rng: int | np.random.Generator,
    mode: str = "max",
    init_points: Sequence[np.ndarray] | None = None,
    n_regions: int = 1,
    candidates_per_dim: int = 50,
) -> OptimizeResult:
    """Budgeted black-box search over block-simplex points.

    Runs exactly ceil(budget/batch) rounds; every point handed to the
    objective is guard-checked against the simplex invariant. Points where
    the objective returns a non-finite value are dropped from the archive
    with a warning but still consume budget. Deterministic given a seed.
    """
    if mode not in ("max", "min"):
        raise ValueError(f"unknown mode {mode!r}")
    if not budget >= batch >= 1:
        raise ValueError("require budget >= batch >= 1")
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    sign = 1.0 if mode == "max" else -1.0
    d = layout.dim
    n_cand = candidates_per_dim * d

    log: list[EvalRecord] = []
    archive_x: list[np.ndarray] = []
    archive_y: list[float] = []  # internal, sign-adjusted
    best_point = None
    best_internal = -np.inf
    guard_checks = 0
    guard_violations = 0
    regions: list[TrustRegionState] = []
    eval_index = 0

    def evaluate(point: np.ndarray, rnd: int):
        nonlocal best_point, best_internal, eval_index, guard_checks, guard_violations
        guard_checks += 1
        if not check_simplex(layout, point):
            guard_violations += 1
            raise AssertionError("candidate violates the block-simplex invariant")
        value = float(objective(point))
        if math.isfinite(value):
            internal = sign * value
            archive_x.append(point)
            archive_y.append(internal)
            if internal > best_internal:
                best_internal = internal
                best_point = point
        else:
            warnings.warn("objective returned a non-finite value; point discarded")
        incumbent = sign * best_internal if best_point is not None else float("nan")
        log.append(EvalRecord(rnd, eval_index, value, incumbent))
        eval_index += 1
        return sign * value if math.isfinite(value) else float("nan")

    n_rounds = math.ceil(budget / batch)
    for rnd in range(n_rounds):
        k = min(batch, budget - eval_index)
        if k <= 0:
            break
        prev_best = best_internal
        if rnd == 0:
            candidates = []
            for p in init_points or []:
                candidates.append(normalize_candidate(layout, np.asarray(p, dtype=float)))
            while len(candidates) < k:
                candidates.append(normalize_candidate(layout, gen.uniform(0, 1, d)))
            for point in candidates[:k]:
                evaluate(point, rnd)
            center = best_point if best_point is not None else candidates[0]
            regions = [
                TrustRegionState(center=np.array(center)) for _ in range(n_regions)
            ]
        else:
            if best_point is not None:
                for tr in regions:
                    tr.center = np.array(best_point)
            raw_pool = []
            per_region = max(1, n_cand // max(1, len(regions)))
            for tr in regions:
                half = tr.side_length / 2.0
                raw = tr.center + gen.uniform(-half, half, size=(per_region, d))
                raw_pool.append(np.clip(raw, 0.0, 1.0))
            raw_pool = np.vstack(raw_pool)
            cands = normalize_candidates(layout, raw_pool)
            if len(archive_x) >= 2:
                try:
                    gp = GaussianProcess().fit(np.array(archive_x), np.array(archive_y))
                    chosen: list[int] = []
                    for _ in range(k):
                        draw = gp.sample(cands, gen)
                        order = np.argsort(-draw)
                        pick = next((i for i in order if i not in chosen), int(order[0]))
                        chosen.append(int(pick))
                except np.linalg.LinAlgError:
                    chosen = list(gen.choice(len(cands), size=k, replace=False))
            else:
                chosen = list(gen.choice(len(cands), size=k, replace=False))
            for i in chosen:
                evaluate(cands[i], rnd)
        improved = best_internal > prev_best + 1e-12 * max(1.0, abs(prev_best))
        for tr in regions:
            tr.record_round(improved)

    if best_point is None:
        # every evaluation was non-finite; surface the last attempted point
        best_point = normalize_candidate(layout, gen.uniform(0, 1, d))
        best_value = float("nan")
    else:
        best_value = sign * best_internal
    return OptimizeResult(
        best_point=np.asarray(best_point),
        best_value=best_value,
        log=log,
        n_evals=eval_index,
        guard_checks=guard_checks,
        guard_violations=guard_violations,
    )
