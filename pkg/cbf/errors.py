class GridError(ValueError):
    """Raised for an invalid torus grid description."""


class RegimeError(ValueError):
    """Raised when parameters fall outside the regime an operation needs."""


class ConfigError(ValueError):
    """Raised by the config loader; carries every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class BlowUpError(RuntimeError):
    """Raised when the forward solution leaves the stability envelope."""

    def __init__(self, message, step=None, time=None, sup_norm=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.sup_norm = sup_norm


class ConvergenceError(RuntimeError):
    """Raised when a step needs a converged inverse solution and did not get one."""
