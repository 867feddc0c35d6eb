"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-facing configuration (CLI flags, config files, study setup)."""


class IllPosedError(ConfigError):
    """The requested covariance admits no solution (power-law exponent too large)."""


class SolveError(RuntimeError):
    """A linear or fixed-point solve failed to converge."""


class ContractionError(SolveError):
    """Lipschitz constant of the nonlinearity is not below the Poincare constant."""


class QuadratureError(SolveError):
    """Requested modes oscillate too fast for the maximum quadrature degree."""
