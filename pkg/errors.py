class SimulationError(Exception):
    """Base error; carries a CLI exit code and an HTTP status like HTTPException does."""

    exit_code = 1
    status_code = 500

    def __init__(self, detail: str, exit_code: int | None = None, status_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code
        if status_code is not None:
            self.status_code = status_code


class ParameterError(SimulationError):
    exit_code = 2
    status_code = 422


class ConfigError(SimulationError):
    exit_code = 2
    status_code = 422


class EnumerationLimitError(SimulationError):
    exit_code = 2
    status_code = 422


class CapExceededError(SimulationError):
    exit_code = 3
    status_code = 409


class DirtyRegionError(SimulationError):
    status_code = 409


class WindowTooSmallError(SimulationError):
    status_code = 409


class PartialLoopError(SimulationError):
    status_code = 409


class MassMismatchError(SimulationError):
    exit_code = 2
    status_code = 422


class GridMismatchError(SimulationError):
    exit_code = 2
    status_code = 422


class DiscardRateError(SimulationError):
    exit_code = 3
    status_code = 409
