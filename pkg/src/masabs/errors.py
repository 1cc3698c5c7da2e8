"""Exception hierarchy shared by every module."""


class MasError(Exception):
    """Base class for all errors raised by masabs."""


class SpecificationError(MasError):
    """The model violates a structural invariant."""


class ResolutionError(MasError):
    """A name does not resolve to a declared variable, location or channel."""


class EvaluationError(MasError):
    """Runtime failure while evaluating an expression (division by zero, overflow)."""


class UnsupportedFeature(MasError):
    """The input uses a modelling feature outside the supported subset."""


class ParseError(MasError):
    """Malformed expression, declaration or model text."""


class FormatError(MasError):
    """Malformed domain or configuration file."""


class ConfigError(FormatError):
    """Invalid configuration value."""


class DomainTooLarge(MasError):
    """The local-domain computation exceeded its vector budget."""


class AbstractionError(MasError):
    """The mapping function cannot be applied to the given model and domain."""
