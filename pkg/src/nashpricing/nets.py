"""Minimal feed-forward approximator with backpropagation.

Three roles are instantiated from the same class: a joint-action value net
(linear head, one output per agent), a policy net (blockwise-softmax head,
one simplex row per agent) and a deviation-advantage net (linear scalar
head). Adam updates, ReLU hidden layers, uniform fan-in init. The adaptive
step matters: at the small batch budgets used here, plain SGD at the same
learning rate leaves the value net far from the reward scale.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def encode_state_action(
    state_index: int,
    action_indices: Sequence[int],
    n_states: int,
    n_actions: int,
) -> np.ndarray:
    """State one-hot followed by one concatenated one-hot per agent action."""
    parts = [one_hot(state_index, n_states)]
    parts += [one_hot(int(a), n_actions) for a in action_indices]
    return np.concatenate(parts)


def encode_state_policy(
    state_index: int, policy_matrix: np.ndarray, n_states: int
) -> np.ndarray:
    """State one-hot followed by the flattened per-agent probability rows."""
    return np.concatenate([one_hot(state_index, n_states), np.ravel(policy_matrix)])


def _block_softmax(z: np.ndarray, block_size: int) -> np.ndarray:
    # z: (batch, n_blocks * block_size)
    b, d = z.shape
    blocks = z.reshape(b, d // block_size, block_size)
    shifted = blocks - blocks.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=2, keepdims=True)).reshape(b, d)


class MlpNet:
    """Feed-forward net with ReLU hidden layers.

    ``head`` is "linear" or "softmax_blocks"; the latter applies a softmax
    independently to each consecutive block of ``block_size`` outputs, so
    every block is a valid probability simplex by construction.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        head: str = "linear",
        block_size: int = 1,
        role: str = "",
        seed: int = 0,
    ):
        if head not in ("linear", "softmax_blocks"):
            raise ValueError(f"unknown head {head!r}")
        if head == "softmax_blocks" and layer_sizes[-1] % block_size != 0:
            raise ValueError("output size must divide into blocks")
        self.layer_sizes = list(int(s) for s in layer_sizes)
        self.head = head
        self.block_size = int(block_size)
        self.role = role
        self.version = 0
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            k = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-k, k, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-k, k, size=fan_out))
        self._adam_m = [np.zeros_like(p) for p in self.weights + self.biases]
        self._adam_v = [np.zeros_like(p) for p in self.weights + self.biases]
        self._adam_t = 0

    # -- forward ---------------------------------------------------------

    def _forward_cached(self, x: np.ndarray):
        pre = []
        act = [x]
        h = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if i < n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.head == "softmax_blocks":
                h = _block_softmax(z, self.block_size)
            else:
                h = z
            act.append(h)
        return pre, act

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input width {x.shape[1]} != layer 0 width {self.layer_sizes[0]}"
            )
        _, act = self._forward_cached(x)
        out = act[-1]
        return out[0] if single else out

    # -- training --------------------------------------------------------

    def gradients(self, inputs: np.ndarray, targets: np.ndarray):
        """Mean-squared-error loss and its gradients w.r.t. all parameters."""
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        t = np.atleast_2d(np.asarray(targets, dtype=float))
        pre, act = self._forward_cached(x)
        y = act[-1]
        batch = x.shape[0]
        loss = float(np.mean((y - t) ** 2))
        # d(mean sq err)/dy
        dy = 2.0 * (y - t) / (batch * y.shape[1])
        if self.head == "softmax_blocks":
            bs = self.block_size
            yb = y.reshape(batch, -1, bs)
            dyb = dy.reshape(batch, -1, bs)
            inner = (dyb * yb).sum(axis=2, keepdims=True)
            dz = (yb * (dyb - inner)).reshape(batch, -1)
        else:
            dz = dy
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = act[i].T @ dz
            grads_b[i] = dz.sum(axis=0)
            if i > 0:
                dz = (dz @ self.weights[i].T) * (pre[i - 1] > 0)
        return loss, grads_w, grads_b

    def train_batch(
        self, inputs: np.ndarray, targets: np.ndarray, learning_rate: float = 0.001
    ) -> float:
        """One Adam step on the batch; returns the pre-update MSE."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if inputs.shape[0] == 0:
            raise ValueError("batch must be non-empty")
        loss, gw, gb = self.gradients(inputs, targets)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss {loss} on {self.role or 'mlp'} net"
            )
        if learning_rate != 0.0:
            self._adam_t += 1
            beta1, beta2, eps = 0.9, 0.999, 1e-8
            params = self.weights + self.biases
            grads = gw + gb
            for i, (p, g) in enumerate(zip(params, grads)):
                self._adam_m[i] = beta1 * self._adam_m[i] + (1 - beta1) * g
                self._adam_v[i] = beta2 * self._adam_v[i] + (1 - beta2) * g * g
                m_hat = self._adam_m[i] / (1 - beta1**self._adam_t)
                v_hat = self._adam_v[i] / (1 - beta2**self._adam_t)
                p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        self.version += 1
        return loss

    # -- checkpointing ---------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "layer_sizes": self.layer_sizes,
            "head": self.head,
            "block_size": self.block_size,
            "role": self.role,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "MlpNet":
        with open(path) as fh:
            payload = json.load(fh)
        net = cls(
            payload["layer_sizes"],
            head=payload["head"],
            block_size=payload["block_size"],
            role=payload["role"],
        )
        net.weights = [np.array(w) for w in payload["weights"]]
        net.biases = [np.array(b) for b in payload["biases"]]
        return net


def make_q_net(n_states, n_agents, n_actions, hidden=75, layers=3, seed=0) -> MlpNet:
    sizes = [n_states + n_agents * n_actions] + [hidden] * layers + [n_agents]
    return MlpNet(sizes, head="linear", role="Q", seed=seed)


def make_policy_net(n_states, n_agents, n_actions, hidden=1500, layers=3, seed=0) -> MlpNet:
    sizes = [n_states] + [hidden] * layers + [n_agents * n_actions]
    return MlpNet(sizes, head="softmax_blocks", block_size=n_actions, role="Psi", seed=seed)


def make_advantage_net(n_states, n_agents, n_actions, hidden=1500, layers=3, seed=0) -> MlpNet:
    sizes = [n_states + n_agents * n_actions] + [hidden] * layers + [1]
    return MlpNet(sizes, head="linear", role="Gamma", seed=seed)
