"""Error hierarchy for the laboratory.

Every error carries the process exit code the command line reports for it:
1 for configuration and expression problems, 2 for failed verifications and
numerical failures.
"""


class LabError(Exception):
    exit_code = 2


class ConfigurationError(LabError):
    exit_code = 1


class ExpressionError(ConfigurationError):
    pass


class ExprSyntaxError(ExpressionError):
    def __init__(self, offset, expected, source=''):
        self.offset = offset
        self.expected = expected
        self.source = source
        super().__init__(f"syntax error at byte {offset}: expected {expected}")


class UnknownFunctionError(ExpressionError):
    def __init__(self, name, offset):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown function '{name}' at byte {offset}")


class UnboundVariableError(ExpressionError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unbound variable '{name}'")


class ExprDomainError(ExpressionError):
    pass


class NonDifferentiableError(ExpressionError):
    pass


class VerificationError(LabError):
    exit_code = 2


class ResidualError(VerificationError):
    pass


class FamilyConstructionError(VerificationError):
    pass


class BlowupTrendError(VerificationError):
    pass


class ComputationError(LabError):
    exit_code = 2


class OutOfRangeError(ComputationError):
    pass


class ResolutionError(ComputationError):
    pass


class IntegrationError(ComputationError):
    def __init__(self, message, t=None):
        self.t = t
        where = f" at t={t!r}" if t is not None else ''
        super().__init__(f"{message}{where}")


class MatrizantError(ComputationError):
    pass


class ZoneBoundaryError(ComputationError):
    pass


class UnknownModeError(ComputationError):
    pass
