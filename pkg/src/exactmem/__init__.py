"""Exact reduced dynamics of a system coupled to a Markovian memory.

A system S interacts unitarily with a memory M that is itself reset towards a
fixed state at rate ``gamma``.  The package computes the reduced dynamics of S
along several independent routes (bipartite master equation, memory-kernel
solvers, collision models, Laplace inversion) and compares them.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .qmat import DensityMatrix, HermitianOperator, Trajectory, kron, partial_trace, tensor
from .liouville import QuantumMap, build_bipartite_generator, integrate_bipartite
from .memkernel import (MapTable, dynamical_map_recursion, dynamical_map_series,
                        solve_quadrature, solve_recursion, tabulate_maps)
from .collision import (CollisionConfig, map_s, prob_swap, simulate_bipartite_cm,
                        simulate_chain, swap_unitary)
from .laplace import laplace_solution, talbot_invert, transformed_maps
from .verify import Scenario, choi_of, compare_routes, is_cptp, trace_distance
from .models import ModelSpec, from_config, jaynes_cummings_model, xx_model
