"""Few-photon scattering matrices of a local quantum system on a chiral waveguide."""

from .system import LocalSystem, build_kerr, build_two_level, eigen_decompose
from .engine import FrequencyConfig, NearSingularWarning, OffShellError, connected_density
from .kerr import KerrParams
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FrequencyConfig",
    "KerrParams",
    "LocalSystem",
    "NearSingularWarning",
    "OffShellError",
    "build_kerr",
    "build_two_level",
    "connected_density",
    "eigen_decompose",
]
