"""Dynamic-pricing Markov game laboratory: oligopoly market model,
deviation-advantage equilibrium analysis, and Nash Q-learning with a
simplex-constrained trust-region optimizer."""

__version__ = "0.1.0"

from .market import MarketParams, MarketObservation
from .scenarios import SCENARIOS, Scenario, get_scenario

__all__ = [
    "MarketParams",
    "MarketObservation",
    "SCENARIOS",
    "Scenario",
    "get_scenario",
    "__version__",
]
