"""betheadmm finds approximate map assignments of pairwise markov random fields.

the local polytope relaxation is split over a cover of trees and solved by an admm
whose proximal term is the bethe entropy, so every tree subproblem is one pass of
sum-product.
"""

try:
    from ._version import __version__
except ModuleNotFoundError:
    __version__ = "0.0.0"

from .decomposition import (
    DecompositionError,
    DecompositionPlan,
    TreeSubgraph,
    edge_decomposition,
    split_potentials,
    tree_cover,
    validate_cover,
)
from .mrf import (
    ModelError,
    PairwiseMRF,
    Pseudomarginal,
    eval_assignment,
    lp_objective,
    polytope_violation,
    round_solution,
    to_cost,
)
from .solver import SolverConfig, run
from .types import Assignment
