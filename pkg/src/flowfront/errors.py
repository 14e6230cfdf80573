"""Exception types shared across the package."""


class FlowfrontError(Exception):
    """Base class for domain errors raised by this package."""


class ContractViolation(FlowfrontError, ValueError):
    """An operation was called with arguments that break its preconditions."""


class ConfigurationError(FlowfrontError, ValueError):
    """A component was configured with unsupported sizes or options."""


class InputTooShortError(FlowfrontError, ValueError):
    """The input signal or feature sequence is shorter than required."""


class DegenerateTraceError(FlowfrontError, ArithmeticError):
    """The MVDR normalising trace vanished for at least one frequency."""


class InfeasibleAlignmentError(FlowfrontError, ValueError):
    """No CTC alignment exists for the label at the given input length."""


class VocabularyError(FlowfrontError, KeyError):
    """A symbol is not part of the vocabulary."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""
