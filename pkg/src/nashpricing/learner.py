"""Nash Q-learning pipeline: joint-policy values, deviation-advantage
estimation and equilibrium-policy search via the simplex trust-region
optimizer, experience replay, and the full training loop, plus the naive
cooperative Q-learning baseline.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from . import env as game
from . import turbo
from .env import Experience, GameState, JointAction
from .market import MarketParams
from .nets import (
    MlpNet,
    encode_state_action,
    encode_state_policy,
    make_advantage_net,
    make_policy_net,
    make_q_net,
    one_hot,
)

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class JointPolicy:
    """Per-agent action-probability rows for one state."""

    probs: np.ndarray  # (n_agents, n_actions)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError("policy must be a 2-D (agents x actions) array")
        if np.any(p < -SIMPLEX_TOL) or np.any(
            np.abs(p.sum(axis=1) - 1.0) > SIMPLEX_TOL
        ):
            raise ValueError("policy rows must be simplexes")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_agents: int, n_actions: int) -> "JointPolicy":
        return cls(np.full((n_agents, n_actions), 1.0 / n_actions))

    @classmethod
    def from_flat(cls, flat: np.ndarray, n_agents: int, n_actions: int) -> "JointPolicy":
        return cls(np.asarray(flat, dtype=float).reshape(n_agents, n_actions))

    @property
    def flat(self) -> np.ndarray:
        return self.probs.ravel()

    def replace_row(self, agent: int, row: np.ndarray) -> "JointPolicy":
        p = self.probs.copy()
        p[agent] = row
        return JointPolicy(p)


class ReplayBuffer:
    """Bounded FIFO store of transitions; minibatches are sampled without
    replacement."""

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._items: list[Experience] = []
        self._cursor = 0

    def append(self, exp: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(exp)
        else:
            self._items[self._cursor] = exp
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, k: int, rng: np.random.Generator) -> list[Experience]:
        idx = rng.choice(len(self._items), size=min(k, len(self._items)), replace=False)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


class QEvaluator:
    """Evaluates a joint-action value function over enumerated (or sampled)
    joint actions for a state, with caching keyed on the net version.

    ``q_source`` is either an MlpNet or a callable
    (state_index, joint_action_index_array) -> (n_joint, n_agents) values.
    """

    def __init__(
        self,
        q_source: MlpNet | Callable,
        n_states: int,
        n_agents: int,
        n_actions: int,
        enumeration_cap: int = 10_000,
        sample_size: int = 10_000,
        sample_seed: int = 0,
        reduce: str = "mean",
    ):
        self.q_source = q_source
        self.n_states = n_states
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.reduce = reduce
        n_joint = n_actions**n_agents
        if n_joint <= enumeration_cap:
            self.joints = np.array(
                list(itertools.product(range(n_actions), repeat=n_agents)), dtype=int
            )
        else:
            rng = np.random.default_rng(sample_seed)
            self.joints = rng.integers(
                0, n_actions, size=(sample_size, n_agents), dtype=int
            )
        self._cache: dict = {}

    def _q_values(self, state_index: int) -> np.ndarray:
        if isinstance(self.q_source, MlpNet):
            key = (self.q_source.version, state_index)
            if key not in self._cache:
                inputs = np.zeros(
                    (len(self.joints), self.n_states + self.n_agents * self.n_actions)
                )
                inputs[:, state_index] = 1.0
                for n in range(self.n_agents):
                    cols = self.n_states + n * self.n_actions + self.joints[:, n]
                    inputs[np.arange(len(self.joints)), cols] = 1.0
                if len(self._cache) > 64:
                    self._cache.clear()
                self._cache[key] = self.q_source.forward(inputs)
            return self._cache[key]
        return np.asarray(self.q_source(state_index, self.joints), dtype=float)

    def scalarized(self, state_index: int) -> np.ndarray:
        q = self._q_values(state_index)
        if self.reduce == "mean":
            return q.mean(axis=1)
        if self.reduce == "max":
            return q.max(axis=1)
        raise ValueError(f"unknown reduce {self.reduce!r}")

    def per_agent(self, state_index: int) -> np.ndarray:
        return self._q_values(state_index)

    def joint_probs(self, policy: JointPolicy) -> np.ndarray:
        """Probability of each enumerated joint action under the policy."""
        p = policy.probs
        out = np.ones(len(self.joints))
        for n in range(self.n_agents):
            out *= p[n, self.joints[:, n]]
        return out

    def value_at(self, state_index: int, joint_action_indices: Sequence[int]) -> np.ndarray:
        """Per-agent values at one specific joint action."""
        if isinstance(self.q_source, MlpNet):
            x = encode_state_action(
                state_index, joint_action_indices, self.n_states, self.n_actions
            )
            return self.q_source.forward(x)
        row = np.asarray(joint_action_indices, dtype=int)[None, :]
        return np.asarray(self.q_source(state_index, row), dtype=float)[0]


def policy_value(qeval: QEvaluator, state_index: int, policy: JointPolicy) -> float:
    """Value of a joint policy at a state: the best probability-scaled
    scalarized joint-action value."""
    scalar = qeval.scalarized(state_index)
    probs = qeval.joint_probs(policy)
    return float(np.max(scalar * probs))


@dataclass
class TurboConfig:
    max_evals: int = 10
    batch: int = 4
    n_regions: int = 1
    candidates_per_dim: int = 50


def estimate_delta(
    qeval: QEvaluator,
    state_index: int,
    policy: JointPolicy,
    cfg: TurboConfig,
    rng: np.random.Generator,
    deviator: int = 0,
) -> float:
    """Maximum value gain a single agent can obtain by unilaterally swapping
    its policy row, found by budgeted black-box search. Floored at zero."""
    base = policy_value(qeval, state_index, policy)
    layout = turbo.SimplexLayout(1, qeval.n_actions)

    def objective(row: np.ndarray) -> float:
        return policy_value(qeval, state_index, policy.replace_row(deviator, row)) - base

    result = turbo.optimize(
        objective,
        layout,
        budget=cfg.max_evals,
        batch=cfg.batch,
        rng=rng,
        mode="max",
        init_points=[policy.probs[deviator]],
        n_regions=cfg.n_regions,
        candidates_per_dim=cfg.candidates_per_dim,
    )
    return max(0.0, float(result.best_value))


def estimate_delta_exhaustive(
    qeval: QEvaluator,
    state_index: int,
    policy: JointPolicy,
    deviator_rows: Sequence[np.ndarray],
    deviator: int = 0,
) -> float:
    """Deviation advantage maximized exactly over an enumerated set of
    deviator policy rows (oracle path for small games)."""
    base = policy_value(qeval, state_index, policy)
    best = 0.0
    for row in deviator_rows:
        gain = policy_value(qeval, state_index, policy.replace_row(deviator, row)) - base
        best = max(best, gain)
    return best


def simplex_grid(n_actions: int, points_per_edge: int = 11) -> list[np.ndarray]:
    """All probability rows on a regular simplex lattice."""
    steps = points_per_edge - 1
    rows = []
    for combo in itertools.combinations_with_replacement(range(n_actions), steps):
        counts = np.bincount(combo, minlength=n_actions)
        rows.append(counts / steps)
    return rows


@dataclass
class NashPolicyResult:
    policy: JointPolicy
    delta: float
    guard_checks: int
    guard_violations: int
    turbo_evals: int


def find_nash_policy(
    qeval: QEvaluator,
    gammanet: MlpNet | None,
    state_index: int,
    cfg: TurboConfig,
    rng: np.random.Generator,
    learning_rate: float = 0.001,
    selector: str = "measured",
) -> NashPolicyResult:
    """Search the joint-policy space for the policy whose measured deviation
    advantage is smallest.

    The advantage net, when provided, is trained on the (candidate, measured
    advantage) pairs as a learned surrogate; by default the returned policy
    is the one with the best measured advantage (``selector="gamma"``
    selects by surrogate prediction instead, for ablation).
    """
    layout = turbo.SimplexLayout(qeval.n_agents, qeval.n_actions)
    pairs: list[tuple[np.ndarray, float]] = []
    guard = [0, 0, 0]

    def objective(flat: np.ndarray) -> float:
        candidate = JointPolicy.from_flat(flat, qeval.n_agents, qeval.n_actions)
        delta = estimate_delta(qeval, state_index, candidate, cfg, rng)
        pairs.append((flat.copy(), delta))
        return delta

    uniform = JointPolicy.uniform(qeval.n_agents, qeval.n_actions)
    result = turbo.optimize(
        objective,
        layout,
        budget=cfg.max_evals,
        batch=cfg.batch,
        rng=rng,
        mode="min",
        init_points=[uniform.flat],
        n_regions=cfg.n_regions,
        candidates_per_dim=cfg.candidates_per_dim,
    )
    if gammanet is not None and pairs:
        inputs = np.array(
            [encode_state_policy(state_index, f, qeval.n_states) for f, _ in pairs]
        )
        targets = np.array([[d] for _, d in pairs])
        gammanet.train_batch(inputs, targets, learning_rate)
    if selector == "gamma" and gammanet is not None and pairs:
        preds = [
            float(
                gammanet.forward(
                    encode_state_policy(state_index, f, qeval.n_states)
                )[0]
            )
            for f, _ in pairs
        ]
        flat, delta = pairs[int(np.argmin(preds))]
    else:
        flat, delta = result.best_point, result.best_value
    return NashPolicyResult(
        policy=JointPolicy.from_flat(flat, qeval.n_agents, qeval.n_actions),
        delta=float(delta),
        guard_checks=result.guard_checks,
        guard_violations=result.guard_violations,
        turbo_evals=result.n_evals,
    )


def nash_operator(qeval: QEvaluator, psinet: MlpNet, next_state_index: int) -> np.ndarray:
    """Bootstrap value vector: per-agent value of the equilibrium joint
    action scaled by the equilibrium policy's probability of playing it."""
    pi = JointPolicy.from_flat(
        psinet.forward(one_hot(next_state_index, qeval.n_states)),
        qeval.n_agents,
        qeval.n_actions,
    )
    scalar = qeval.scalarized(next_state_index)
    probs = qeval.joint_probs(pi)
    j = int(np.argmax(scalar * probs))
    return qeval.per_agent(next_state_index)[j] * probs[j]


def nash_q_target(
    qeval: QEvaluator,
    psinet: MlpNet,
    exp: Experience,
    alpha_mix: float = 0.5,
    discount: float = 0.9,
) -> np.ndarray:
    """Per-agent regression target for the value net; terminal transitions
    bootstrap nothing and regress to the raw reward."""
    if exp.done:
        return np.asarray(exp.rewards, dtype=float)
    q_cur = qeval.value_at(exp.state.state_index, exp.joint_action.action_indices)
    boot = exp.rewards + discount * nash_operator(qeval, psinet, exp.next_state.state_index)
    return (1.0 - alpha_mix) * q_cur + alpha_mix * boot


@dataclass
class Hyperparams:
    episodes: int = 40
    max_steps: int = 30
    batch_update_frequency: int = 20
    batch_size: int = 10
    exploration: float = 0.05
    discount: float = 0.9
    learning_rate: float = 0.001
    alpha_mix: float = 0.5
    action_dims: int = 10
    turbo_max_evals: int = 10
    turbo_batch: int = 4
    turbo_every: int = 1
    noise_sigma: float = 0.25
    reward_mode: str = "expected"
    replay_capacity: int = 10_000
    q_hidden: int = 75
    policy_hidden: int = 1500
    advantage_hidden: int = 1500
    hidden_layers: int = 3
    enumeration_cap: int = 10_000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class TrainReport:
    episode_market_mean: list[float] = field(default_factory=list)
    episode_agent0_mean: list[float] = field(default_factory=list)
    loss_q: list[float] = field(default_factory=list)
    loss_psi: list[float] = field(default_factory=list)
    loss_gamma: list[float] = field(default_factory=list)
    delta_trace: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    guard_checks: int = 0
    guard_violations: int = 0
    turbo_evals: int = 0
    aborted: bool = False
    abort_reason: str = ""

    def rewards_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "market_mean", "agent0_mean"])
            for i, (m, a) in enumerate(
                zip(self.episode_market_mean, self.episode_agent0_mean)
            ):
                writer.writerow([i, repr(m), repr(a)])

    def losses_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["update_index", "loss_q", "loss_psi", "loss_gamma"])
            for i in range(len(self.loss_q)):
                psi = self.loss_psi[i] if i < len(self.loss_psi) else ""
                gam = self.loss_gamma[i] if i < len(self.loss_gamma) else ""
                writer.writerow(
                    [
                        i,
                        repr(self.loss_q[i]),
                        repr(psi) if psi != "" else "",
                        repr(gam) if gam != "" else "",
                    ]
                )


def _sample_actions(
    policy: JointPolicy, exploration: float, rng: np.random.Generator
) -> list[int]:
    actions = []
    n_actions = policy.probs.shape[1]
    for row in policy.probs:
        a = int(rng.choice(n_actions, p=row / row.sum()))
        if rng.uniform() < exploration:
            a = int(rng.integers(0, n_actions))
        actions.append(a)
    return actions


def train(
    params: MarketParams,
    hp: Hyperparams | None = None,
    seed: int = 0,
) -> TrainReport:
    """Full equilibrium-learning loop: per step the policy net proposes the
    behaviour policy, the trust-region search measures its deviation
    advantage and finds the advantage-minimizing policy, and the replay
    minibatch updates drive all three nets. Deterministic per seed."""
    hp = hp or Hyperparams()
    t0 = time.perf_counter()
    n_states = params.n_actions
    n_agents = params.n_agents
    n_actions = params.n_actions

    seq = np.random.SeedSequence(seed)
    s_env, s_turbo, s_explore, s_replay, s_nets = seq.spawn(5)
    rng_env = np.random.default_rng(s_env)
    rng_turbo = np.random.default_rng(s_turbo)
    rng_explore = np.random.default_rng(s_explore)
    rng_replay = np.random.default_rng(s_replay)
    net_seeds = s_nets.generate_state(3)

    qnet = make_q_net(
        n_states, n_agents, n_actions, hp.q_hidden, hp.hidden_layers, int(net_seeds[0])
    )
    psinet = make_policy_net(
        n_states, n_agents, n_actions, hp.policy_hidden, hp.hidden_layers, int(net_seeds[1])
    )
    gammanet = make_advantage_net(
        n_states, n_agents, n_actions, hp.advantage_hidden, hp.hidden_layers, int(net_seeds[2])
    )
    qeval = QEvaluator(
        qnet, n_states, n_agents, n_actions, hp.enumeration_cap, sample_seed=seed
    )
    cfg = TurboConfig(max_evals=hp.turbo_max_evals, batch=hp.turbo_batch)
    buffer = ReplayBuffer(hp.replay_capacity)
    report = TrainReport()
    global_step = 0
    last_delta = 0.0
    last_nash: dict[int, JointPolicy] = {}

    try:
        for _ in range(hp.episodes):
            state = game.reset(params, rng_env)
            ep_market: list[float] = []
            ep_agent0: list[float] = []
            for _ in range(hp.max_steps):
                pi = JointPolicy.from_flat(
                    psinet.forward(one_hot(state.state_index, n_states)),
                    n_agents,
                    n_actions,
                )
                actions = _sample_actions(pi, hp.exploration, rng_explore)
                joint = JointAction.from_indices(actions, params)

                if global_step % hp.turbo_every == 0:
                    last_delta = estimate_delta(
                        qeval, state.state_index, pi, cfg, rng_turbo
                    )
                    nash = find_nash_policy(
                        qeval, gammanet, state.state_index, cfg, rng_turbo,
                        learning_rate=hp.learning_rate,
                    )
                    report.guard_checks += nash.guard_checks
                    report.guard_violations += nash.guard_violations
                    report.turbo_evals += nash.turbo_evals
                    last_nash[state.state_index] = nash.policy
                report.delta_trace.append(last_delta)
                nash_pi = last_nash.get(
                    state.state_index, JointPolicy.uniform(n_agents, n_actions)
                )

                next_state, rewards, done = game.step(
                    params, state, joint, hp.reward_mode, rng_env,
                    noise_sigma=hp.noise_sigma, max_steps=hp.max_steps,
                )
                buffer.append(
                    Experience(
                        state=state,
                        joint_action=joint,
                        rewards=rewards,
                        delta=last_delta,
                        policy=pi.probs,
                        next_state=next_state,
                        done=done,
                        nash_policy=nash_pi.probs,
                    )
                )
                ep_market.append(float(rewards.mean()))
                ep_agent0.append(float(rewards[0]))
                global_step += 1

                if (
                    global_step % hp.batch_update_frequency == 0
                    and len(buffer) >= hp.batch_size
                ):
                    batch = buffer.sample(hp.batch_size, rng_replay)
                    q_inputs = np.array(
                        [
                            encode_state_action(
                                e.state.state_index,
                                e.joint_action.action_indices,
                                n_states,
                                n_actions,
                            )
                            for e in batch
                        ]
                    )
                    q_targets = np.array(
                        [
                            nash_q_target(qeval, psinet, e, hp.alpha_mix, hp.discount)
                            for e in batch
                        ]
                    )
                    report.loss_q.append(
                        qnet.train_batch(q_inputs, q_targets, hp.learning_rate)
                    )
                    psi_inputs = np.array(
                        [one_hot(e.state.state_index, n_states) for e in batch]
                    )
                    psi_targets = np.array([np.ravel(e.nash_policy) for e in batch])
                    report.loss_psi.append(
                        psinet.train_batch(psi_inputs, psi_targets, hp.learning_rate)
                    )
                    gamma_inputs = np.array(
                        [
                            encode_state_policy(e.state.state_index, e.policy, n_states)
                            for e in batch
                        ]
                    )
                    gamma_targets = np.array([[e.delta] for e in batch])
                    report.loss_gamma.append(
                        gammanet.train_batch(gamma_inputs, gamma_targets, hp.learning_rate)
                    )

                state = next_state
                if done:
                    break
            report.episode_market_mean.append(float(np.mean(ep_market)))
            report.episode_agent0_mean.append(float(np.mean(ep_agent0)))
    except FloatingPointError as exc:
        report.aborted = True
        report.abort_reason = str(exc)
    report.wall_clock = time.perf_counter() - t0
    return report


def train_baseline(
    params: MarketParams,
    hp: Hyperparams | None = None,
    seed: int = 0,
) -> TrainReport:
    """Naive cooperative Q learner: each agent greedily plays its component
    of the joint action that maximizes its own value estimate, and the
    bootstrap is a plain maximum over joint actions. No policy/advantage
    nets and no black-box search."""
    hp = hp or Hyperparams()
    t0 = time.perf_counter()
    n_states = params.n_actions
    n_agents = params.n_agents
    n_actions = params.n_actions

    seq = np.random.SeedSequence(seed)
    s_env, _s_turbo, s_explore, s_replay, s_nets = seq.spawn(5)
    rng_env = np.random.default_rng(s_env)
    rng_explore = np.random.default_rng(s_explore)
    rng_replay = np.random.default_rng(s_replay)
    net_seeds = s_nets.generate_state(3)

    qnet = make_q_net(
        n_states, n_agents, n_actions, hp.q_hidden, hp.hidden_layers, int(net_seeds[0])
    )
    qeval = QEvaluator(
        qnet, n_states, n_agents, n_actions, hp.enumeration_cap, sample_seed=seed
    )
    buffer = ReplayBuffer(hp.replay_capacity)
    report = TrainReport()
    global_step = 0

    try:
        for _ in range(hp.episodes):
            state = game.reset(params, rng_env)
            ep_market: list[float] = []
            ep_agent0: list[float] = []
            for _ in range(hp.max_steps):
                per_agent_q = qeval.per_agent(state.state_index)
                actions = []
                for n in range(n_agents):
                    j = int(np.argmax(per_agent_q[:, n]))
                    a = int(qeval.joints[j, n])
                    if rng_explore.uniform() < hp.exploration:
                        a = int(rng_explore.integers(0, n_actions))
                    actions.append(a)
                joint = JointAction.from_indices(actions, params)
                next_state, rewards, done = game.step(
                    params, state, joint, hp.reward_mode, rng_env,
                    noise_sigma=hp.noise_sigma, max_steps=hp.max_steps,
                )
                buffer.append(
                    Experience(
                        state=state,
                        joint_action=joint,
                        rewards=rewards,
                        delta=0.0,
                        policy=JointPolicy.uniform(n_agents, n_actions).probs,
                        next_state=next_state,
                        done=done,
                    )
                )
                ep_market.append(float(rewards.mean()))
                ep_agent0.append(float(rewards[0]))
                global_step += 1

                if (
                    global_step % hp.batch_update_frequency == 0
                    and len(buffer) >= hp.batch_size
                ):
                    batch = buffer.sample(hp.batch_size, rng_replay)
                    inputs = np.array(
                        [
                            encode_state_action(
                                e.state.state_index,
                                e.joint_action.action_indices,
                                n_states,
                                n_actions,
                            )
                            for e in batch
                        ]
                    )
                    targets = []
                    for e in batch:
                        if e.done:
                            targets.append(np.asarray(e.rewards, dtype=float))
                        else:
                            nxt = qeval.per_agent(e.next_state.state_index)
                            boot = e.rewards + hp.discount * nxt.max(axis=0)
                            q_cur = qeval.value_at(
                                e.state.state_index, e.joint_action.action_indices
                            )
                            targets.append(
                                (1.0 - hp.alpha_mix) * q_cur + hp.alpha_mix * boot
                            )
                    report.loss_q.append(
                        qnet.train_batch(inputs, np.array(targets), hp.learning_rate)
                    )
                state = next_state
                if done:
                    break
            report.episode_market_mean.append(float(np.mean(ep_market)))
            report.episode_agent0_mean.append(float(np.mean(ep_agent0)))
    except FloatingPointError as exc:
        report.aborted = True
        report.abort_reason = str(exc)
    report.wall_clock = time.perf_counter() - t0
    return report
