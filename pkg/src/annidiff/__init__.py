"""Two-species annihilating reflected diffusions with harvest absorption.

A Monte Carlo engine for the interacting particle system (reflected
diffusions on adjacent boxes, pair annihilation near the shared interface,
absorption at the far faces), deterministic solvers for its coupled
nonlinear-boundary limit PDE, and experiments verifying the hydrodynamic
limit and its checkable identities at desk scale.
"""

__version__ = "0.1.0"

from .geometry import BoxGeometry, TubeSpec, ball_volume, tube_constant
from .diffusion import DriftSpec
from .particles import SimParams
from .pde import SolverParams, solve_fd, solve_mild

__all__ = [
    "BoxGeometry", "TubeSpec", "ball_volume", "tube_constant", "DriftSpec",
    "SimParams", "SolverParams", "solve_fd", "solve_mild", "__version__",
]
