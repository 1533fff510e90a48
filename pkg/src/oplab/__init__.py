"""Oriented site and bond percolation laboratory."""

__version__ = "0.1.0"

from .engine import Batch, ProcessParams, run_bond, run_coupled, run_site, simulate
from .kernels import SiteFieldKernel, get_kernel
from .lattice import (
    Channel,
    ContractError,
    FullLine,
    HalfLine,
    Interval,
    LevelSet,
    Product,
    RandomSource,
    Singleton,
    SiteCoord,
    cone_sites,
    floor_even,
    make_initial,
    uniform_at,
)
from .oracle import CapacityError, exact_evolve, exact_survival

__all__ = [
    "Batch", "CapacityError", "Channel", "ContractError", "FullLine", "HalfLine", "Interval",
    "LevelSet", "ProcessParams", "Product", "RandomSource", "Singleton", "SiteCoord",
    "SiteFieldKernel", "cone_sites", "exact_evolve", "exact_survival", "floor_even", "get_kernel",
    "make_initial", "run_bond", "run_coupled", "run_site", "simulate", "uniform_at",
]
