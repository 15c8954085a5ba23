"""Exception hierarchy shared by every fedreid module."""


class FedError(Exception):
    pass


class DimensionError(FedError, ValueError):
    pass


class ContractError(FedError, ValueError):
    """A caller broke an operation's precondition."""


class ConfigurationError(FedError, ValueError):
    pass


class SplitError(FedError, ValueError):
    pass


class InitializationError(FedError, RuntimeError):
    pass


class StateError(FedError, RuntimeError):
    pass


class SamplerError(FedError, ValueError):
    pass


class ProtocolError(FedError, ValueError):
    pass


class CheckpointError(FedError, IOError):
    """Checkpoint is unreadable or does not match the expected architecture."""
