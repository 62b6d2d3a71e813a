"""Exception types. The CLI maps these to exit codes 1 and 2."""


class ValidationError(ValueError):
    """Bad input: shapes, ranges, files, manifests, configs."""


class NumericalError(ArithmeticError):
    """Non-finite values, divergence, or a failed numerical check."""
