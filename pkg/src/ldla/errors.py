"""Exception types shared across the package."""


class LdlaError(Exception):
    """Base class for all package-specific errors."""


class ParseError(LdlaError, ValueError):
    """A file could not be parsed as the documented format."""


class ValidationError(LdlaError, ValueError):
    """Parsed data violates a documented invariant."""


class DomainError(LdlaError, ValueError):
    """A numeric argument is outside its documented domain."""


class ShapeError(LdlaError, ValueError):
    """Array/tensor shapes are incompatible."""


class GeometryError(LdlaError, ValueError):
    """A pixel rectangle is degenerate or out of bounds."""


class NumericError(LdlaError, RuntimeError):
    """A numeric computation produced non-finite or invalid values."""


class ConfigError(LdlaError, ValueError):
    """A run configuration is inconsistent or incomplete."""
