"""Exception types shared across the package."""


class NmlGclError(Exception):
    pass


class ParseError(NmlGclError, ValueError):
    """Malformed input file; message carries ``path:line``."""


class BoundsError(NmlGclError, IndexError):
    pass


class ShapeError(NmlGclError, ValueError):
    pass


class ArgumentError(NmlGclError, ValueError):
    pass


class ContractError(NmlGclError, ValueError):
    """A documented precondition on an input was violated."""


class NumericError(NmlGclError, ArithmeticError):
    pass


class OracleError(NmlGclError, RuntimeError):
    pass


class DegenerateSplitError(NmlGclError, ValueError):
    pass


class ConfigError(NmlGclError, ValueError):
    pass


class TrainingDiverged(NumericError):
    """Raised when a loss turns non-finite mid-run.

    ``last_good`` holds the parameters from the last finite epoch.
    """

    def __init__(self, epoch, last_good, message=None):
        self.epoch = epoch
        self.last_good = last_good
        super().__init__(message or f"non-finite loss at epoch {epoch}")
