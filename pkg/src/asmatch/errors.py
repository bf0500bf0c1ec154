"""Exception hierarchy shared by every module of the package."""


class ASMError(Exception):
    """Base class for all errors raised by asmatch."""


class InvalidMapping(ASMError):
    pass


class IncompleteMapping(ASMError):
    pass


class ParseError(ASMError):
    pass


class SchemaViolation(ASMError):
    pass


class EmptySelection(ASMError):
    pass


class IndexOutOfRange(ASMError):
    pass


class EmptyGraph(ASMError):
    pass


class SizeTooLarge(ASMError):
    pass


class InfeasibleNoise(ASMError):
    pass


class TooLarge(ASMError):
    """Oracle enumeration would exceed its budget."""


class QueryLargerThanTarget(ASMError):
    pass


class TerminalState(ASMError):
    pass


class IllegalAction(ASMError):
    pass


class BudgetError(ASMError):
    pass


class ShapeMismatch(ASMError):
    pass


class NonFinite(ASMError):
    pass


class NotScalar(ASMError):
    pass


class EmptyActionSet(ASMError):
    pass


class ConfigError(ASMError):
    pass


class CheckpointError(ASMError):
    pass
