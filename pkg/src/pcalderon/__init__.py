"""Forward solver and inclusion reconstruction for the two-dimensional p-conductivity equation."""

from .geometry import Circle, Kind, Polygon, Scenario, build_scenario
from .mesh import Mesh, triangulate

__all__ = ["Circle", "Kind", "Mesh", "Polygon", "Scenario", "build_scenario", "triangulate"]
__version__ = "0.1.0"
