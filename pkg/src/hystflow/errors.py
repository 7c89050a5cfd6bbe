"""Exception types shared across the package."""


class HystflowError(Exception):
    """Base class for all package errors."""


class InvalidThresholdError(HystflowError, ValueError):
    pass


class OracleFailure(HystflowError):
    """A brute-force verifier found no admissible candidate (indicates a bug)."""


class DimensionMismatch(HystflowError, ValueError):
    pass


class InconsistencyError(HystflowError):
    """An identity that must hold by construction was violated."""


class InvalidTransformError(HystflowError, ValueError):
    pass


class DivergentMassError(HystflowError, ValueError):
    pass


class IncompatibleInitialData(HystflowError, ValueError):
    pass


class ScenarioError(HystflowError, ValueError):
    """Invalid scenario data; ``field`` names the offending key path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ScenarioParseError(ScenarioError):
    """Malformed scenario text, with the position reported by the parser."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}" if line is not None else "<document>"
        super().__init__(where, message)


class StepFailure(HystflowError):
    """Nonlinear solve did not converge."""

    def __init__(self, message, residual_norm, step=None):
        self.residual_norm = residual_norm
        self.step = step
        super().__init__(f"{message} (residual {residual_norm:.3e}, step {step})")
