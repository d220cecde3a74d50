"""Exceptions raised by the hp_vem library.

Library functions raise these; only the CLI and the study drivers catch them.
"""


class HpVemError(Exception):
    """Base class for all hp_vem errors."""


class InvalidParameter(HpVemError):
    pass


class InvalidDegree(HpVemError):
    pass


class DegreeTooLow(HpVemError):
    pass


class NonConforming(HpVemError):
    pass


class ParseError(HpVemError):
    """Mesh or config file that cannot be read.

    line and field locate the problem in the source document, reason names
    the violated rule (for instance "NonConforming").
    """

    def __init__(self, message, line=None, field=None, reason=None):
        self.line = line
        self.field = field
        self.reason = reason
        context = []
        if line is not None:
            context.append(f"line {line}")
        if field is not None:
            context.append(f"field '{field}'")
        if reason is not None:
            context.append(reason)
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class NotStarShaped(HpVemError):
    pass


class IllConditioned(HpVemError):
    pass


class SingularG(HpVemError):
    pass


class SingularSystem(HpVemError):
    pass


class NotSPD(HpVemError):
    pass


class NoConvergence(HpVemError):
    pass


class UnconvergedOracle(HpVemError):
    pass


class DegenerateMap(HpVemError):
    pass


class ConfigError(HpVemError):
    pass
