"""Transport plans: a dense tensor or the implicit tree-factored form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InputError
from .dense import dense_log_plan, dense_marginal, dense_pair_marginal, _check_cap
from .messages import edge_marginal, tree_marginal_projection
from .problem import DEFAULT_DENSE_CAP, ScalingState, TreeProblem

__all__ = ["TransportPlan", "recover_plan_dense", "implicit_plan"]


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Either ``tensor`` (dense) or ``problem`` plus ``state`` (implicit).

    Both answer node- and pair-marginal queries; the implicit form can be
    densified on small instances.
    """

    problem: TreeProblem
    tensor: Optional[np.ndarray] = None
    state: Optional[ScalingState] = None

    def __post_init__(self):
        if (self.tensor is None) == (self.state is None):
            raise InputError("give exactly one of a dense tensor or a scaling state")

    @property
    def is_dense(self) -> bool:
        return self.tensor is not None

    def node_marginal(self, j: int) -> np.ndarray:
        if self.is_dense:
            return dense_marginal(self.tensor, j)
        return tree_marginal_projection(self.state, self.problem, j)

    def pair_marginal(self, j: int, k: int) -> np.ndarray:
        if self.is_dense:
            return dense_pair_marginal(self.tensor, j, k)
        return edge_marginal(self.problem, self.state, j, k)

    def mass(self) -> float:
        return float(np.sum(self.node_marginal(0)))

    def dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        if self.is_dense:
            return self.tensor
        return recover_plan_dense(self.problem, self.state, cap).tensor


def recover_plan_dense(problem: TreeProblem, state: ScalingState,
                       cap: int = DEFAULT_DENSE_CAP) -> TransportPlan:
    """``K * (u_1 x ... x u_N)`` as a full tensor, with ``K`` the product of edge kernels."""
    _check_cap(problem, cap)
    n = problem.n
    out = np.ones(problem.sizes)
    for (j, k) in problem.tree.edges:
        shape = [1] * n
        shape[j], shape[k] = problem.sizes[j], problem.sizes[k]
        out = out * problem.kernel_matrix(j, k).reshape(shape)
    for i, u in enumerate(state.u):
        shape = [1] * n
        shape[i] = -1
        out = out * u.reshape(shape)
    return TransportPlan(problem, tensor=out)


def implicit_plan(problem: TreeProblem, state: ScalingState) -> TransportPlan:
    return TransportPlan(problem, state=state)


def plan_from_potentials(problem: TreeProblem, f, cap: int = DEFAULT_DENSE_CAP) -> TransportPlan:
    """``exp((f^+ - C)/eps)`` straight from log-potentials."""
    _check_cap(problem, cap)
    return TransportPlan(problem, tensor=np.exp(dense_log_plan(problem, f)))
