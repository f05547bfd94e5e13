"""Entropic unbalanced multi-marginal optimal transport with tree-structured costs."""

from .errors import (InputError, NumericalError, StaleMessageError, TreeError,
                     UMOTError)
from .kernels import CostMatrix, GibbsKernel, apply_kernel, gibbs_kernel, squared_distance_cost
from .measures import (DiscreteMeasure, Equality, Free, KL, MarginalPenalty, TV, aprox,
                       conjugate_value, divergence, entropy, kl_divergence, tv_divergence)
from .problems import (TransferOperator, barycenter_identity, build_barycenter_problem,
                       coupled_barycenter, extract_barycenter, interpolate_tree, propagate,
                       solve_barycenter, star_decomposition, transfer_operator)
from .solver import (ScalingState, SolverConfig, TransportPlan, TreeProblem, dense_sinkhorn,
                     dual_objective, edge_marginal, primal_objective, recover_plan_dense,
                     tree_marginal_projection, tree_sinkhorn)
from .tree import TreeGraph, path_tree, preorder_dfs, star_tree, validate_tree

__version__ = "0.1.0"
