"""Named market scenario catalog used by the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .market import MarketParams

DEFAULT_EPSILON_THRESHOLD = 1e-4


@dataclass(frozen=True)
class Scenario:
    name: str
    params: MarketParams
    noise_sigma: float = 0.25
    epsilon_threshold: float = DEFAULT_EPSILON_THRESHOLD

    def with_agents(self, n_agents: int) -> "Scenario":
        return replace(self, params=replace(self.params, n_agents=n_agents))


def _make(name, beta0, beta1, beta2, a):
    return Scenario(
        name=name,
        params=MarketParams(beta0=beta0, beta1=beta1, beta2=beta2, a=a, n_agents=3),
    )


SCENARIOS: dict[str, Scenario] = {
    "scenario1": _make("scenario1", 25.0, -0.6, -6.1, 0.1),
    "scenario2": _make("scenario2", 15.0, -1.05, -3.1, 0.1),
    "scenario3": _make("scenario3", 27.0, -1.1, -1.0, 0.1),
    "scenario4": _make("scenario4", 27.0, -3.05, -1.1, 0.2),
}


def get_scenario(name: str) -> Scenario:
    key = str(name).lower()
    if key.isdigit():
        key = f"scenario{key}"
    if key not in SCENARIOS:
        raise KeyError(
            f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}"
        )
    return SCENARIOS[key]
