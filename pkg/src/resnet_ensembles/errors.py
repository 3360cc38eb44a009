"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside the range an operation accepts."""


class DomainError(ValueError):
    """A point or parameter lies outside the domain where a formula is valid."""


class SizeError(ValueError):
    """A requested tensor would exceed the desk-scale memory guard."""
