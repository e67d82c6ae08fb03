"""Exception types shared across the package.

Every error raised by this package derives from :class:`GraphUnlearnError`
and carries a short machine-readable ``code`` that the CLI prints alongside
the human-readable message.
"""


class GraphUnlearnError(Exception):
    """Base class for all package errors."""

    code = "error"


class InputError(GraphUnlearnError, ValueError):
    """Invalid argument: unknown node/edge ids, shape mismatches, bad ranges."""

    code = "input"


class ParseError(InputError):
    """Malformed dataset or request file."""

    code = "parse"

    def __init__(self, message, path=None, line=None):
        if line is not None:
            message = f"{path or '<input>'}:{line}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class ConfigurationError(GraphUnlearnError, ValueError):
    """Inconsistent configuration, e.g. solver regularization != training regularization."""

    code = "config"


class NumericError(GraphUnlearnError, ArithmeticError):
    """Non-finite values encountered during a numeric procedure."""

    code = "numeric"


class DivergenceError(NumericError):
    """Iterative solver diverged (spectral condition violated)."""

    code = "divergence"


class SingularHessianError(NumericError):
    """Direct solve failed to factorize or left a large residual."""

    code = "singular"


class UnsupportedOperationError(GraphUnlearnError):
    """Operation not defined for this backbone kind or request kind."""

    code = "unsupported"
