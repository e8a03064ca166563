"""Constrained motion planning on implicit manifolds.

Projection- and continuation-based constraint adherence, constrained
RRTConnect / FMT* planners, a learned sampling layer (generator,
discriminator, gradient-based sample repair), and a benchmark CLI for
the point-on-sphere environment.
"""

from manifoldplan.constraints import ConstraintSystem, sphere_constraint, proj, pseudoinverse
from manifoldplan.atlas import Atlas, AtlasParams, Chart
from manifoldplan.integrators import IntegratorParams, Motion

__version__ = "0.1.0"

__all__ = [
    "Atlas",
    "AtlasParams",
    "Chart",
    "ConstraintSystem",
    "IntegratorParams",
    "Motion",
    "proj",
    "pseudoinverse",
    "sphere_constraint",
    "__version__",
]
