class ModelException(Exception):
    """
    General exception class for problems in a model definition (model files, expressions, parameters)
    """

    ...


class ExpressionSyntaxException(ModelException):
    """
    Raised when an expression cannot be parsed. Carries the 1-based line and column of the offending token.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class UnknownFunctionException(ExpressionSyntaxException):
    """
    Raised when an expression calls a function that is not part of the grammar
    """

    ...


class UnboundNameException(ModelException):
    """
    Raised when an expression references a name without a binding
    """

    ...


class EvaluationException(Exception):
    """
    General exception class for numerical failures while evaluating expressions or jets
    """

    ...


class DomainException(EvaluationException):
    """
    Raised for out-of-domain operations (ln of a non-positive number, division by zero, ...) and non-finite results
    """

    ...


class JetShapeException(EvaluationException):
    """
    Raised when jets of different order, mode or dimension meet in one operation
    """

    ...


class EliminationException(EvaluationException):
    """
    Raised when the implicit elimination of the first slow variable fails
    """

    ...


class NotAnEquilibriumException(Exception):
    """
    Raised when a point handed to a classification routine is not an equilibrium of the field
    """

    ...


class IntegrationException(Exception):
    """
    General exception class for failures of the ODE integrator
    """

    ...


class StepUnderflowException(IntegrationException):
    """
    Raised when the adaptive step size collapses below the resolvable minimum
    """

    ...


class NonFiniteStateException(IntegrationException):
    """
    Raised when the integrated state becomes NaN or infinite
    """

    ...
