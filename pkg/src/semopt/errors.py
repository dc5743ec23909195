"""Exception types shared across the package."""

from __future__ import annotations


class SemoptError(Exception):
    """Base class for all package errors."""


class ValidationError(SemoptError):
    """One or more structural invariants are violated.

    Carries the full list of violations so callers see every problem at
    once instead of fixing them one by one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConfigError(SemoptError):
    """Configuration file could not be parsed or failed strict validation."""


class InfeasibleProblem(SemoptError):
    """A (sub)problem has an empty feasible set.

    ``stage`` identifies the pipeline stage ('sca', 'segment', 'greedy',
    'init'), ``binding`` lists the constraint labels that could not be
    satisfied.
    """

    def __init__(self, stage: str, binding, message: str = ""):
        self.stage = stage
        self.binding = list(binding)
        msg = message or f"infeasible at stage '{stage}': {', '.join(self.binding)}"
        super().__init__(msg)


class NumericalFailure(SemoptError):
    """A numerical routine broke down (singular systems, non-finite values)."""

    def __init__(self, stage: str, message: str = ""):
        self.stage = stage
        super().__init__(message or f"numerical failure at stage '{stage}'")
