"""
Exception hierarchy

Every error carries the process exit status the CLI reports for it:
1 for validation / contract failures, 2 for bad input or format problems.
"""


class MVNetError(Exception):
    """Base class for all MVNet errors"""
    exit_code = 1


class DimensionError(MVNetError):
    """Incompatible shapes or out-of-range axes"""


class DomainError(MVNetError):
    """Argument outside a function's mathematical domain"""


class ContractError(MVNetError):
    """Caller broke an API precondition"""


class TrainingDivergedError(MVNetError):
    """Loss or gradients became non-finite during training"""

    def __init__(self, message: str, parameter: str = None):
        super().__init__(message)
        self.parameter = parameter


class InputError(MVNetError):
    """User-supplied data is unusable"""
    exit_code = 2


class FormatError(InputError):
    """File does not follow the expected on-disk format"""


class ConfigError(InputError):
    """Unknown or malformed configuration key"""


class CheckpointError(FormatError):
    """Checkpoint file is corrupt or has an unsupported version"""
