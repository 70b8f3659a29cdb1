"""Exception hierarchy shared by all adaas modules."""


class AdaasError(Exception):
    """Base class for every error raised by this package."""


class RejectedSampleError(AdaasError, ValueError):
    """A sample carried a non-finite value; detector state is left unchanged."""


class InputError(AdaasError, ValueError):
    """Malformed caller input (e.g. non-monotonic timestamps)."""


class SourceNotFoundError(AdaasError):
    pass


class MalformedRowError(AdaasError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TransientSourceError(AdaasError):
    """Retryable failure while pulling from a source (network, timeouts)."""


class MalformedPayloadError(AdaasError, ValueError):
    pass


class SinkError(AdaasError):
    pass


class UnknownAnalysisError(AdaasError, KeyError):
    def __str__(self) -> str:
        return f"unknown analysis: {self.args[0]!r}"


class DuplicateAnalysisError(AdaasError):
    pass


class ValidationError(AdaasError, ValueError):
    """Parameter or request validation failure."""


class DuplicateDetectorError(AdaasError):
    pass


class UnknownDetectorError(AdaasError, KeyError):
    def __str__(self) -> str:
        return f"unknown detector id: {self.args[0]!r}"


class BridgeUnavailableError(AdaasError):
    pass


class ConvergenceError(AdaasError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual
