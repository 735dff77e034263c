"""Shared exception types.

Everything the library can reject at runtime for domain reasons (a point
behind the camera, a malformed file, a divergent optimization) raises
DomainError or a subclass, so callers can distinguish bad data from bugs.
"""


class DomainError(ValueError):
    """Input is structurally valid Python but violates a domain precondition."""


class BehindCameraError(DomainError):
    """A transformed point has non-positive depth and cannot be projected."""


class FormatError(DomainError):
    """A file does not conform to its declared on-disk format."""


class DivergenceError(DomainError):
    """An optimization run produced a non-finite or exploding objective."""
