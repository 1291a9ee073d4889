class ContractViolation(ValueError):
    """Raised when an argument breaks a documented precondition."""


class InvalidProblem(ValueError):
    """Start or goal configuration is in collision or out of bounds."""


class NoFreeSpace(RuntimeError):
    """Rejection sampling could not find admissible configurations."""
