"""Exception types raised across the package."""


class SoftgaitError(Exception):
    """Base class for all package errors."""


class MeshFormatError(SoftgaitError, ValueError):
    """Malformed tet-mesh file or inconsistent mesh arrays."""


class DegenerateElementError(SoftgaitError, ValueError):
    def __init__(self, element, volume):
        super().__init__(f"element {element} has zero volume ({volume:.3e})")
        self.element = element
        self.volume = volume


class EigenSolveError(SoftgaitError, RuntimeError):
    """The generalized eigensolve failed or lacks enough modes."""


class FactorizationError(SoftgaitError, RuntimeError):
    def __init__(self, message, min_eigenvalue=None):
        if min_eigenvalue is not None:
            message = f"{message} (smallest eigenvalue ~ {min_eigenvalue:.3e})"
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ConfigError(SoftgaitError, ValueError):
    """Invalid run configuration."""


class ArtifactError(SoftgaitError, ValueError):
    """Unreadable or incompatible binary artifact."""
