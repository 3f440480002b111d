"""Rearrangement, polarization and stability experiments for a trilinear form on spheres."""

from .errors import (AmplitudeError, CollarError, ConvergenceError, DomainError, GridMismatchError,
                     PreconditionError, SphereSymmError)
from .set_model import Grid, SphericalSet
from .sphere_core import AdmissibleTriple, Cap, Hyperplane, Point, TripleClass, classify_triple

__version__ = "0.1.0"
