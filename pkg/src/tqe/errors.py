"""Exception types raised by the engine."""


class TqeError(Exception):
    """Base class for every engine error."""


class KernelError(TqeError, ValueError):
    pass


class StorageError(TqeError, ValueError):
    pass


class PlanError(TqeError, ValueError):
    """Malformed or unsupported plan file."""


class RewriteError(TqeError):
    pass


class CompileError(TqeError, ValueError):
    """Expression or operator cannot be turned into a tensor program."""


class ExecutionError(TqeError):
    """An operator failed at run time; ``alias`` names the failing operator."""

    def __init__(self, alias, cause):
        super().__init__(f"{alias}: {cause}")
        self.alias = alias
        self.cause = cause
