"""Exception hierarchy for fieldnet."""


class FieldnetException(Exception):
    pass


class InvalidSpecException(FieldnetException):
    pass


class GridIndexException(FieldnetException, IndexError):
    pass


class TopologyException(FieldnetException):
    pass


class NonphysicalTemperatureException(FieldnetException):
    pass


class ExpressionException(FieldnetException):
    pass


class NetlistParseException(FieldnetException):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SerializationException(FieldnetException):
    pass


class SingularCircuitException(FieldnetException):
    def __init__(self, message: str, node: str | None = None) -> None:
        self.node = node
        super().__init__(message)


class RequiresInitialConditionException(FieldnetException):
    pass


class ConvergenceException(FieldnetException):
    def __init__(self, message: str, state: dict[str, float] | None = None) -> None:
        self.state = state or {}
        super().__init__(message)


class ConfigurationException(FieldnetException):
    pass


class ProblemException(FieldnetException):
    def __init__(self, message: str, path: str = "$") -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


class ComparisonException(FieldnetException):
    pass
