"""Exception hierarchy shared by every layer of the simulator."""


class CIMError(Exception):
    """Base class for all simulator errors."""


class InvalidArgument(CIMError, ValueError):
    pass


class CapacityExceeded(CIMError, ValueError):
    pass


class NumericalFailure(CIMError, ArithmeticError):
    """A trajectory produced a non-finite value.

    ``trajectory_index`` and ``step`` locate the failure when known.
    """

    def __init__(self, message, trajectory_index=None, step=None):
        super().__init__(message)
        self.trajectory_index = trajectory_index
        self.step = step


class EnsembleInvalid(CIMError):
    """Too many trajectories diverged for the ensemble statistics to be trusted."""


class ConfigInvalid(CIMError, ValueError):
    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class IOFailure(CIMError, OSError):
    pass
