"""Exception types raised across the package."""


class XrayFieldError(Exception):
    """Base class for all package errors."""


class BehindCamera(XrayFieldError):
    pass


class NonMonotonicDistortion(XrayFieldError):
    pass


class OutOfBounds(XrayFieldError):
    pass


class DomainError(XrayFieldError):
    pass


class NonFiniteGradient(XrayFieldError):
    pass


class Diverged(XrayFieldError):
    pass


class EmptyHull(XrayFieldError):
    pass


class EmptyMask(XrayFieldError):
    pass


class Degenerate(UserWarning):
    """Warned, not raised: collinear input to ``min_area_rect``."""


class DimMismatch(XrayFieldError):
    pass


class BadCheckpoint(XrayFieldError):
    pass
