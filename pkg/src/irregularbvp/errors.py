"""Exception types shared by the solver modules."""


class ValidationError(ValueError):
    """Input outside the admissible range of an operation."""


class ConfigurationError(ValidationError):
    """Missing or inconsistent configuration entries."""


class GeometryError(ValidationError):
    """Degenerate or self-intersecting polygon."""


class ResourceError(ValidationError):
    """Requested refinement level above the configured maximum."""


class EllipticityError(ValidationError):
    """Coefficient matrix fails the uniform ellipticity test."""


class NumericError(RuntimeError):
    """Factorization or eigensolver failure."""


class CoercivityError(RuntimeError):
    """Refusal to solve a form that is not certified coercive.

    Attributes
    ----------
    certificate : dict
        The certificate details (smallest generalized eigenvalue, shift).
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate or {}
