"""Exception types shared across the toolkit."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class FormatError(RuntimeError):
    """A persisted artifact has a missing or mismatched version header."""


class DependencyError(RuntimeError):
    """A pipeline stage is missing an upstream artifact."""


class InsufficientRewardDataError(RuntimeError):
    """No rewarded episode available to fit a reward-based prior."""


class ExpertFailedError(RuntimeError):
    """The scripted expert did not reach the goal from a requested start."""
