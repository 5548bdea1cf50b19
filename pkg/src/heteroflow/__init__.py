"""Numerical laboratory for the unique fast-slow heteroclinic orbit near a
fold of critical points: solver, weighted-norm diagnostics, index-pair
geometry, and the acceptance experiments."""

from .model import (
    AffinePerturbation,
    Point,
    ProblemTriple,
    SaturatedPerturbation,
    WPoint,
    ZeroPerturbation,
    build_triple,
    limit_solution,
    load_triple,
    save_triple,
)
from .norms import Grid, GridPath, WeightContext
from .operators import LinearizedSystem, SliceSolveReport, assemble
from .solver import IntegrateOptions, NewtonOptions, Solution, newton_solve
from .conley import ConleyConfig, FaceLabel, K_constant
from .verify import ConvergenceReport, DecayReport

__all__ = [
    "AffinePerturbation", "Point", "ProblemTriple", "SaturatedPerturbation",
    "WPoint", "ZeroPerturbation", "build_triple", "limit_solution",
    "load_triple", "save_triple", "Grid", "GridPath", "WeightContext",
    "LinearizedSystem", "SliceSolveReport", "assemble", "IntegrateOptions",
    "NewtonOptions", "Solution", "newton_solve", "ConleyConfig", "FaceLabel",
    "K_constant", "ConvergenceReport", "DecayReport",
]

__version__ = "0.1.0"
