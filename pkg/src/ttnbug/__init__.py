"""Rank-adaptive time integration of tree tensor networks."""

from .tree import Leaf, Node, build_balanced_binary, build_tt_tree, parse_tree
from .ttn import TTN, inner, norm, orthonormalize, param_count, max_rank, random_ttn, to_full
from .operators import KroneckerSumOp, Rhs, RhsKind, energy, expectation, explicit, gradient, schrodinger, zero
from .ode import OdeConfig
from .integrator import StepConfig, integrate, step, truncate
from .spin import IsingSpec, all_up_state, ising_hamiltonian, magnetization

__all__ = [
    "Leaf", "Node", "build_balanced_binary", "build_tt_tree", "parse_tree",
    "TTN", "inner", "norm", "orthonormalize", "param_count", "max_rank", "random_ttn", "to_full",
    "KroneckerSumOp", "Rhs", "RhsKind", "energy", "expectation", "explicit", "gradient", "schrodinger", "zero",
    "OdeConfig", "StepConfig", "integrate", "step", "truncate",
    "IsingSpec", "all_up_state", "ising_hamiltonian", "magnetization",
]
