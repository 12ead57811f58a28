"""Exception and warning types raised across the package."""


class FactorSensError(Exception):
    """Base class for all package errors."""

    #: module that raised the error, used for CLI provenance
    module = "factorsens"
    #: CLI exit code family
    exit_code = 4


class ConfigError(FactorSensError):
    module = "cli"
    exit_code = 2


class DataError(FactorSensError):
    module = "cli"
    exit_code = 3


class DimensionMismatch(FactorSensError, ValueError):
    pass


class NotPositiveDefinite(FactorSensError, ValueError):
    module = "numlin"


class NonConvergence(FactorSensError):
    module = "estimation"


class UnsupportedMethod(FactorSensError, ValueError):
    module = "estimation"
    exit_code = 2


class DegenerateDirection(FactorSensError, ValueError):
    module = "bounds"


class DegenerateNC(FactorSensError):
    module = "negcontrol"


class IncompatibleNC(FactorSensError):
    module = "negcontrol"


class SingularKbb(FactorSensError):
    module = "negcontrol"


class JTooLarge(FactorSensError):
    module = "negcontrol"


class EmptyRegion(FactorSensError):
    module = "ncnumeric"


class HeywoodWarning(UserWarning):
    """A uniqueness was clamped at its lower bound during factor analysis."""


class ConvergenceWarning(UserWarning):
    pass


class SingularDesignWarning(UserWarning):
    """Collinear regression terms were dropped."""


class IncompatibleNCWarning(UserWarning):
    """Observed negative-control effects are not reproducible by any loading vector."""


class FactorCountWarning(UserWarning):
    pass
