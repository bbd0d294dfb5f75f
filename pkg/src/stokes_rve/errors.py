"""Exception hierarchy shared by all modules."""


class StokesRVEError(Exception):
    """Base class for every error raised by the package."""


class InvalidParams(StokesRVEError, ValueError):
    pass


class JammingFailure(StokesRVEError):
    def __init__(self, placed: int, target: int, attempts: int):
        self.placed = placed
        self.target = target
        self.attempts = attempts
        super().__init__(
            f"random sequential addition jammed after {attempts} consecutive "
            f"rejections ({placed}/{target} centers placed)"
        )


class ResolutionTooCoarse(StokesRVEError, ValueError):
    pass


class ShapeMismatch(StokesRVEError, ValueError):
    pass


class NoConvergence(StokesRVEError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Krylov solver did not converge: {iterations} iterations, "
            f"relative residual {residual:.3e}"
        )


class SingularSystem(StokesRVEError):
    pass


class InconsistentInputs(StokesRVEError, ValueError):
    pass


class GridMismatch(StokesRVEError, ValueError):
    pass


class ConfigParseError(StokesRVEError, ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
