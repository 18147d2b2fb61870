"""Numerical tools for the state-constrained Pontryagin maximum principle.

Problems are loaded with :func:`load_problem`; trajectories come from
:func:`solve_forward`; candidates ``(u*, psi, eta)`` are verified with
:func:`check_certificate`.  See the submodules for Stieltjes integration
(:mod:`pmpkit.bv`), measure-driven linear systems
(:mod:`pmpkit.stieltjes_cauchy`), spike variations (:mod:`pmpkit.spike`)
and the penalized descent (:mod:`pmpkit.ekeland`).
"""

from .bv import BVPath, CellFunction, NBVMeasure, TimeGrid
from .checker import Candidate, Certificate, Tolerances, assemble_adjoint, check_certificate
from .ode import ControlSignal, Trajectory, solve_forward
from .problem import load_problem, load_problem_file

__version__ = "0.1.0"

__all__ = [
    "BVPath",
    "Candidate",
    "CellFunction",
    "Certificate",
    "ControlSignal",
    "NBVMeasure",
    "TimeGrid",
    "Tolerances",
    "Trajectory",
    "assemble_adjoint",
    "check_certificate",
    "load_problem",
    "load_problem_file",
    "solve_forward",
]
