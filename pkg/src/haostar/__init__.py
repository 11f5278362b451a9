"""Heuristic search for hybrid-state MDPs with continuous, monotonically consumed resources."""

__version__ = "0.1.0"

from .exceptions import ContractError, DomainError, OracleOverflow, ProblemError
from .model import (
    Action,
    Branch,
    Goal,
    HybridProblem,
    Outcome,
    ResourceSpace,
    executable_actions,
    is_terminal,
    validate_problem,
)
from .pwc import Box, PwcFunction
from .search import Solution, solve
from .oracle import OracleTable, solve_exact

__all__ = [
    "Action",
    "Box",
    "Branch",
    "ContractError",
    "DomainError",
    "Goal",
    "HybridProblem",
    "OracleOverflow",
    "OracleTable",
    "Outcome",
    "ProblemError",
    "PwcFunction",
    "ResourceSpace",
    "Solution",
    "executable_actions",
    "is_terminal",
    "solve",
    "solve_exact",
    "validate_problem",
]
