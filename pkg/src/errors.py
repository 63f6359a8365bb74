"""
Exception hierarchy for the lab.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class LabError(Exception):
    """Base class for all lab errors"""

    exit_code: int = 1

    def __init__(self, message: str, detail: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail or {}


class ConfigError(LabError):
    """Invalid experiment configuration or unknown registry key"""

    exit_code = 2


class ResourceLimitError(LabError):
    """Requested problem exceeds a configured resource guard"""

    exit_code = 3


class GeometryError(LabError):
    """Point off the manifold, non-tangent vector, degenerate chart or embedding"""


class ResolutionError(LabError):
    """Mesh or grid too coarse for the requested object"""


class AssemblyError(LabError):
    """Assembled matrices are inconsistent or non-finite"""


class SpectrumError(LabError):
    """Eigenproblem cannot be solved as posed"""

    def __init__(self, message: str, smallest_eigenvalue: Optional[float] = None, detail: Optional[dict] = None):
        super().__init__(message, detail)
        self.smallest_eigenvalue = smallest_eigenvalue
