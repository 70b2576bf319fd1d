"""bvextend: stopping-time approximation of dyadic martingales and elliptic
solutions by functions of bounded variation, on truncated dyadic half-spaces.

Subpackages/modules map onto the building blocks: dyadic cube geometry
(cubes), the maximal/Carleson/area functionals (functionals), the
stopping-time approximant of the dyadic average extension (martingale),
the iterated exact extension and mollification (extension), the stopped
square function machinery (square), the elliptic-solution pipeline
(elliptic), and the experiment harness/CLI (harness, cli).
"""

from .cubes import DyadicCube, GeometryConfig, SkipGrid, WhitneyRegion, unit_cube
from .functionals import GridFunction, JumpMeasure, WhitneyFunction, lp_norm

__version__ = "0.1.0"

__all__ = [
    "DyadicCube",
    "GeometryConfig",
    "SkipGrid",
    "WhitneyRegion",
    "unit_cube",
    "GridFunction",
    "JumpMeasure",
    "WhitneyFunction",
    "lp_norm",
    "__version__",
]
