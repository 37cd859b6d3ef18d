"""Exception hierarchy shared by all hllk modules."""


class HLLKError(Exception):
    """Base class for every error raised by hllk."""


class ExprSyntaxError(HLLKError, ValueError):
    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnknownFunctionError(ExprSyntaxError):
    pass


class DimensionError(HLLKError, ValueError):
    pass


class UnboundParameterError(HLLKError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else "unbound parameter"


class EvaluationError(HLLKError, ArithmeticError):
    pass


class FlowError(HLLKError, RuntimeError):
    pass


class GridError(HLLKError, ValueError):
    pass


class TransportError(HLLKError, RuntimeError):
    pass


class InvariantError(HLLKError, ValueError):
    pass


class UnsupportedGeneratorError(HLLKError, ValueError):
    pass


class SpectralError(HLLKError, RuntimeError):
    pass


class QuantizationError(HLLKError, ValueError):
    pass


class ScenarioError(HLLKError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
