"""Exception hierarchy shared by all modules."""


class ScatMcrbError(Exception):
    """Base class for library errors."""


class DomainError(ScatMcrbError, ValueError):
    """Argument outside the mathematical domain of a function."""


class SingularityError(ScatMcrbError, ValueError):
    """Evaluation at a singular point (zero distance, coincident points)."""


class GeometryError(ScatMcrbError, ValueError):
    """Invalid scatterer/transducer configuration."""


class ResonanceError(ScatMcrbError, ArithmeticError):
    """Foldy-Lax interaction system is singular or too ill-conditioned."""

    def __init__(self, message, freq_index=None, tx_index=None):
        super().__init__(message)
        self.freq_index = freq_index
        self.tx_index = tx_index


class RankError(ScatMcrbError, ArithmeticError):
    """Least-squares dictionary is rank deficient."""


class RegularityError(ScatMcrbError, ArithmeticError):
    """Slepian matrix or FIM not invertible (bound undefined)."""


class NonFiniteError(ScatMcrbError, ArithmeticError):
    """Objective evaluated to NaN or infinity."""


class ConfigError(ScatMcrbError, ValueError):
    """Malformed or inconsistent run configuration."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line
