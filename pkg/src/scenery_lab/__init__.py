"""Subshift-driven iterated function systems, Gibbs measures and their scenery.

Modules:
    symbolic   subshifts of finite type, admissible words, connectors
    gibbs      locally constant potentials, pressure, Markov Gibbs measures
    ifs        similarity and conformal systems, sampling, separation checks
    subsystem  separated subsystems with Moran dimension lower bounds
    scenery    b-adic zooms, scenery walks, frame structure checks
    geometry   projections, distance sets, dimension estimators
    cli        the ``scenery-lab`` command
"""

__version__ = "0.1.0"

from .cloud import WeightedCloud
from .exceptions import (
    CapError,
    DegenerateResultError,
    EmptyFrameError,
    InputError,
    NoPathError,
    NotMixingError,
    NotTransitiveError,
    SceneryLabError,
)
from .gibbs import GibbsModel, Potential, build_gibbs, parry_measure, pressure
from .ifs import IfsSystem, natural_measure, preset, sample_measure
from .symbolic import SymbolicSystem, full_shift

__all__ = [
    "CapError",
    "DegenerateResultError",
    "EmptyFrameError",
    "GibbsModel",
    "IfsSystem",
    "InputError",
    "NoPathError",
    "NotMixingError",
    "NotTransitiveError",
    "Potential",
    "SceneryLabError",
    "SymbolicSystem",
    "WeightedCloud",
    "build_gibbs",
    "full_shift",
    "natural_measure",
    "parry_measure",
    "preset",
    "pressure",
    "sample_measure",
]
