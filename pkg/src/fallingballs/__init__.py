"""Three balls falling under gravity: event-driven simulation and hyperbolicity diagnostics."""

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .dynamics import MassTriple, OrbitLog, PhaseState, random_orbit, simulate  # noqa: E402

__all__ = ["MassTriple", "OrbitLog", "PhaseState", "random_orbit", "simulate", "__version__"]
