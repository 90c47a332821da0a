"""Exception hierarchy shared by all rydnet modules."""


class RydnetError(Exception):
    """Base class for every error raised by rydnet."""


class InvalidInputError(RydnetError, ValueError):
    """An argument violates a documented precondition."""


class CapacityError(RydnetError):
    """An exact computation would exceed its configured state budget."""

    def __init__(self, cap, reached, what="feasible states"):
        self.cap = cap
        self.reached = reached
        super().__init__(
            f"enumeration budget exceeded: more than {cap} {what} "
            f"(stopped after reaching {reached})"
        )


class InfeasibleTargetError(InvalidInputError):
    """A requested excitation target cannot be attained."""


class SolverError(RydnetError):
    """A numerical solver failed, as opposed to returning a negative answer."""


class ConfigError(RydnetError):
    """An experiment configuration is malformed or inconsistent."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
