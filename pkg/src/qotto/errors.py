"""Exception hierarchy. The CLI maps the three base classes to exit codes."""


class OttoError(Exception):
    pass


class ConfigError(OttoError, ValueError):
    """Invalid configuration or out-of-domain physical input (exit code 2)."""


class NumericalError(OttoError, ArithmeticError):
    """Quadrature, integration or fit failure (exit code 3)."""


class DataError(OttoError, ValueError):
    """Malformed or inconsistent input data (exit code 4)."""


class HalfFluxError(ConfigError):
    pass


class UnreachableDetuningError(ConfigError):
    pass


class ResonanceError(NumericalError):
    pass


class IntegratorInstabilityError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class FitError(NumericalError):
    pass


class ExtractionError(DataError):
    pass


class InconsistentCountsError(DataError):
    pass


class SingularMatrixError(NumericalError):
    pass
