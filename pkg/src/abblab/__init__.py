"""Voting on accelerated branching Brownian motion: nonlinearity, Monte Carlo, PDE and barrier certificates."""

from .errors import (
    AbbError,
    ConfigurationError,
    ConstructionError,
    DomainError,
    PreconditionError,
    RuleError,
    SpreadingError,
)
from .nonlinearity import (
    Nonlinearity,
    VotingRule,
    eval_F,
    eval_F_prime,
    majority_rule,
    sigma,
    speeds,
)

__version__ = "0.1.0"

__all__ = [
    "AbbError",
    "ConfigurationError",
    "ConstructionError",
    "DomainError",
    "PreconditionError",
    "RuleError",
    "SpreadingError",
    "Nonlinearity",
    "VotingRule",
    "eval_F",
    "eval_F_prime",
    "majority_rule",
    "sigma",
    "speeds",
]
