"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class StateError(RuntimeError):
    """Operation attempted before the state it needs was built."""


class PositivityError(ContractError):
    """An adjustment formula needs probability mass where the joint has none."""


class EvidenceError(ContractError):
    """Counterfactual evidence has zero probability, so no posterior exists."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed, truncated, or incompatible."""


class ConfigError(ValueError):
    """Config file is malformed or carries unknown or inconsistent keys."""
