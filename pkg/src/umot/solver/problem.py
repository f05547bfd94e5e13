"""Problem instances, solver configuration and the scaling iterate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import InputError
from ..kernels import CostMatrix, GibbsKernel, apply_kernel, gibbs_kernel, squared_distance_cost
from ..measures import (DEFAULT_WEIGHT_FLOOR, DiscreteMeasure, MarginalPenalty,
                        check_full_support)
from ..tree import Edge, TreeGraph

__all__ = ["TreeProblem", "SolverConfig", "ScalingState", "DEFAULT_DENSE_CAP"]

DEFAULT_DENSE_CAP = 10 ** 7
EQUALITY_MASS_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class TreeProblem:
    """An entropic unbalanced multi-marginal instance with tree-decoupled cost.

    ``measures[i]`` gives the support of node ``i`` and, unless the node's
    penalty is ``Free``, the target weights. ``kernels`` maps every edge
    ``(j, k)`` with ``j < k`` to the Gibbs kernel of ``t_e * c_e`` with
    shape ``(m_j, m_k)``.
    """

    tree: TreeGraph
    measures: Tuple[DiscreteMeasure, ...]
    penalties: Tuple[MarginalPenalty, ...]
    kernels: Mapping[Edge, GibbsKernel]
    epsilon: float
    weight_floor: float = DEFAULT_WEIGHT_FLOOR

    def __post_init__(self):
        n = self.tree.n
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if len(self.measures) != n or len(self.penalties) != n:
            raise InputError(
                f"tree has {n} nodes but got {len(self.measures)} measures and "
                f"{len(self.penalties)} penalties")
        object.__setattr__(self, "measures", tuple(self.measures))
        object.__setattr__(self, "penalties",
                           tuple(MarginalPenalty.parse(p) for p in self.penalties))
        if set(self.kernels) != set(self.tree.edges):
            raise InputError("kernels must be given for exactly the tree edges")
        for (j, k), K in self.kernels.items():
            want = (self.measures[j].size, self.measures[k].size)
            if K.shape != want:
                raise InputError(f"kernel on edge {(j, k)} has shape {K.shape}, expected {want}")
            if abs(K.epsilon - self.epsilon) > 1e-15 * self.epsilon or \
                    abs(K.weight - self.tree.edge_weight(j, k)) > 1e-12:
                raise InputError(f"kernel on edge {(j, k)} built with different epsilon/weight")
        for i, (m, p) in enumerate(zip(self.measures, self.penalties)):
            if p.kind != "Free":
                check_full_support(p, m.weights, self.weight_floor, node=i)
        pinned = [float(np.sum(self.measures[i].weights)) for i, p in enumerate(self.penalties)
                  if p.kind == "Equality"]
        if pinned and max(pinned) - min(pinned) > EQUALITY_MASS_RTOL * max(pinned):
            # every marginal of a plan carries the same mass
            raise InputError(
                f"Equality-constrained nodes have unequal masses {pinned}: no feasible plan")
        if sum(p.recession for p in self.penalties) == 0 and self.cost_infimum() <= 0:
            raise InputError(
                "no penalty controls mass and inf c = 0: the problem has no minimiser")

    @classmethod
    def build(cls, tree: TreeGraph, measures: Sequence[DiscreteMeasure],
              penalties: Sequence, epsilon: float,
              costs: Optional[Mapping[Edge, CostMatrix]] = None,
              separable: Optional[bool] = None,
              weight_floor: float = DEFAULT_WEIGHT_FLOOR) -> "TreeProblem":
        """Assemble kernels from per-edge costs (squared distance by default)."""
        measures = tuple(measures)
        if len(measures) != tree.n:
            raise InputError(f"tree has {tree.n} nodes but got {len(measures)} measures")
        kernels = {}
        for (j, k), t in zip(tree.edges, tree.weights):
            if costs is not None and (j, k) in costs:
                c = costs[(j, k)]
            elif costs is not None and (k, j) in costs:
                c = costs[(k, j)].transpose()
            else:
                c = squared_distance_cost(measures[j], measures[k],
                                          separable=separable is not False)
            kernels[(j, k)] = gibbs_kernel(c, t, epsilon, separable=separable
                                           if c.representation == "grid" else False)
        return cls(tree, measures, tuple(penalties), kernels, float(epsilon), weight_floor)

    @property
    def n(self) -> int:
        return self.tree.n

    @cached_property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(m.size for m in self.measures)

    def target(self, i: int) -> Optional[np.ndarray]:
        """Target weights of node ``i``, ``None`` for unpenalised nodes."""
        if self.penalties[i].kind == "Free":
            return None
        return self.measures[i].weights

    def apply(self, j: int, k: int, v) -> np.ndarray:
        """``K^{(j,k)} v`` mapping a vector on node ``k`` to node ``j``."""
        if j < k:
            return apply_kernel(self.kernels[(j, k)], v)
        return apply_kernel(self.kernels[(k, j)], v, transpose=True)

    def kernel_matrix(self, j: int, k: int) -> np.ndarray:
        """Dense ``K^{(j,k)}`` of shape ``(m_j, m_k)`` (small instances)."""
        if j < k:
            return self.kernels[(j, k)].dense()
        return self.kernels[(k, j)].dense().T

    @cached_property
    def sides(self) -> Dict[Edge, np.ndarray]:
        """For each directed edge ``(j, k)`` the nodes on ``k``'s side."""
        out = {}
        for j, k in self.tree.edges:
            out[(j, k)] = np.array(self.tree.side(j, k))
            out[(k, j)] = np.array(self.tree.side(k, j))
        return out

    def cost_infimum(self) -> float:
        """``min_x sum_e t_e c_e(x_j, x_k)`` by min-plus message passing."""
        if self.n == 1:
            return 0.0
        best = {}
        order = _postorder(self.tree, 0)
        for x, parent in order:
            acc = np.zeros(self.sizes[x])
            for y in self.tree.neighbors(x):
                if y != parent:
                    acc = acc + best[y]
            if parent is None:
                return float(acc.min())
            j, k = min(parent, x), max(parent, x)
            c = self.kernels[(j, k)].weighted_cost()
            c = c if j == parent else c.T
            best[x] = np.min(c + acc[None, :], axis=1)
        raise AssertionError("unreachable")


def _postorder(tree: TreeGraph, root: int):
    out, stack = [], [(root, None, False)]
    while stack:
        x, parent, done = stack.pop()
        if done:
            out.append((x, parent))
            continue
        stack.append((x, parent, True))
        for y in tree.neighbors(x):
            if y != parent:
                stack.append((y, x, False))
    return out


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    ``tol`` bounds the per-sweep relative sup-norm change of every scaling
    vector. ``dual_every`` sets how often (in sweeps) the dual value is
    recorded. ``domain`` selects exp or log arithmetic for the dense path.
    ``schedule`` selects when the child-to-parent messages are refreshed in
    the tree path (see :func:`umot.solver.tree_sinkhorn`).
    """

    epsilon: Optional[float] = None
    max_sweeps: int = 5000
    tol: float = 1e-8
    dual_every: int = 1
    domain: str = "exp"
    schedule: str = "postorder"
    check_messages: bool = True
    dense_cap: int = DEFAULT_DENSE_CAP

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise InputError("max_sweeps must be at least 1")
        if self.dual_every < 1:
            raise InputError("dual_every must be at least 1")
        if self.domain not in ("exp", "log"):
            raise InputError(f"unknown domain {self.domain!r}")
        if self.schedule not in ("postorder", "deferred"):
            raise InputError(f"unknown schedule {self.schedule!r}")


@dataclass(eq=False)
class ScalingState:
    """Exp-domain potentials ``u_i = exp(f_i / eps)`` and directed messages.

    ``alpha[(j, k)]`` lives on node ``j`` and summarises the subtree on
    ``k``'s side. Stamps record the logical time of the last write so that
    consuming a message older than a potential it depends on is detected.
    """

    u: List[np.ndarray]
    alpha: Dict[Edge, np.ndarray] = field(default_factory=dict)
    sweeps: int = 0
    dual_value: float = math.nan
    kernel_applications: int = 0
    clock: int = 0
    u_stamp: List[int] = field(default_factory=list)
    alpha_stamp: Dict[Edge, int] = field(default_factory=dict)

    @classmethod
    def ones(cls, problem: TreeProblem) -> "ScalingState":
        return cls(u=[np.ones(m) for m in problem.sizes], u_stamp=[0] * problem.n)

    @classmethod
    def from_potentials(cls, problem: TreeProblem, f) -> "ScalingState":
        u = [np.exp(np.asarray(fi, dtype=float) / problem.epsilon) for fi in f]
        return cls(u=u, u_stamp=[0] * problem.n)

    def potentials(self, epsilon: float) -> List[np.ndarray]:
        return [epsilon * np.log(ui) for ui in self.u]

    def copy(self) -> "ScalingState":
        return ScalingState(
            u=[x.copy() for x in self.u],
            alpha={e: a.copy() for e, a in self.alpha.items()},
            sweeps=self.sweeps, dual_value=self.dual_value,
            kernel_applications=self.kernel_applications, clock=self.clock,
            u_stamp=list(self.u_stamp), alpha_stamp=dict(self.alpha_stamp))
