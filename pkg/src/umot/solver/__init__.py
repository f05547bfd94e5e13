"""Sinkhorn solvers: tree message passing and the dense tensor oracle."""

from .dense import (dense_c_eps_transform, dense_cost_tensor, dense_dual,
                    dense_log_plan, dense_marginal, dense_pair_marginal,
                    dense_sinkhorn, primal_objective)
from .messages import (check_messages, edge_marginal, incoming_product,
                       message_is_fresh, node_marginals, refresh_messages,
                       total_mass, tree_marginal_projection, update_alpha)
from .plan import TransportPlan, implicit_plan, plan_from_potentials, recover_plan_dense
from .problem import DEFAULT_DENSE_CAP, ScalingState, SolverConfig, TreeProblem
from .sweep import (SolverDiagnostics, conjugate_term, dual_objective,
                    sinkhorn_update, state_dual, tree_sinkhorn, umot_dual_value)

__all__ = [
    "TreeProblem", "SolverConfig", "ScalingState", "SolverDiagnostics",
    "TransportPlan", "DEFAULT_DENSE_CAP",
    "tree_sinkhorn", "sinkhorn_update", "update_alpha", "incoming_product",
    "tree_marginal_projection", "edge_marginal", "node_marginals",
    "message_is_fresh", "refresh_messages", "check_messages", "total_mass",
    "dual_objective", "umot_dual_value", "state_dual", "conjugate_term",
    "dense_sinkhorn", "dense_c_eps_transform", "dense_cost_tensor", "dense_dual",
    "dense_log_plan", "dense_marginal", "dense_pair_marginal", "primal_objective",
    "recover_plan_dense", "implicit_plan", "plan_from_potentials",
]
