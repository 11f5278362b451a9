class DomainError(ValueError):
    """A point or argument lies outside the domain an operation is defined on."""


class ProblemError(ValueError):
    """A problem description or generator parameter set is malformed."""


class ContractError(RuntimeError):
    """An internal precondition was violated (missing successor value, undefined policy...)."""


class OracleOverflow(RuntimeError):
    """Forward enumeration exceeded its state cap."""
