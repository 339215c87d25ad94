"""Exception types shared across the package."""


class FastPCIError(Exception):
    pass


class ShapeError(FastPCIError, ValueError):
    pass


class ArgumentError(FastPCIError, ValueError):
    pass


class NumericError(FastPCIError, ArithmeticError):
    pass


class ContractError(FastPCIError, RuntimeError):
    pass


class CapacityError(FastPCIError, ValueError):
    pass


class FormatError(FastPCIError, ValueError):
    """Malformed file contents. ``path`` and ``location`` are kept for CLI reporting."""

    def __init__(self, message, path=None, location=None):
        super().__init__(message)
        self.path = path
        self.location = location

    def __str__(self):
        msg = super().__str__()
        where = ", ".join(str(x) for x in (self.path, self.location) if x is not None)
        return f"{where}: {msg}" if where else msg
