"""Exception hierarchy shared across the engine.

UsageError covers bad inputs (files, shapes, parameter values) and maps to
CLI exit code 2; ContractError covers violated runtime contracts and maps
to exit code 3.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class UsageError(EngineError):
    """Invalid input: bad file, bad shape, bad parameter value."""


class ContractError(EngineError):
    """A runtime contract was violated (stale profile, short corpus, ...)."""


class ShapeError(UsageError):
    """Input or layer shapes are inconsistent."""


class ModelFormatError(UsageError):
    """Model file cannot be parsed or fails validation."""


class DatasetFormatError(UsageError):
    """IDX dataset file is malformed or inconsistent."""


class MutationParamError(UsageError):
    """Mutation parameters outside their legal ranges."""


class CapabilityError(UsageError):
    """Operation requested on an unsupported layer kind."""


class ProfileMismatchError(ContractError):
    """Profile does not match the model or scorer it is used with."""


class InsufficientErrorsError(ContractError):
    """Corpus does not contain enough matching error cases."""


class HoldoutOverlapError(ContractError):
    """Retraining arm overlaps the error holdout set."""
