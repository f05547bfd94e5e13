"""Problem builders on top of the tree solver.

Barycenters through a star tree with a free center, interpolation along
general trees, the multiple-star approximation, the coupled two-marginal
barycenter used as a baseline, and transfer operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, NumericalError
from .kernels import CostMatrix, apply_kernel, gibbs_kernel, squared_distance_cost
from .measures import (DiscreteMeasure, Equality, Free, MarginalPenalty, aprox,
                       entropy, measures_share_support)
from .solver import (ScalingState, SolverConfig, SolverDiagnostics, TreeProblem,
                     edge_marginal, tree_marginal_projection,
                     tree_sinkhorn)
from .tree import TreeGraph, path_tree, star_tree

__all__ = [
    "build_barycenter_problem",
    "extract_barycenter",
    "solve_barycenter",
    "pinned_uot_value",
    "barycenter_identity",
    "coupled_barycenter",
    "CoupledBarycenter",
    "interpolate_tree",
    "TreeSolution",
    "star_weights",
    "star_decomposition",
    "TransferOperator",
    "transfer_operator",
    "propagate",
    "uot_plan",
    "sequential_uot_operator",
]

SIMPLEX_TOL = 1e-9


def _check_simplex(weights) -> Tuple[float, ...]:
    t = tuple(float(w) for w in weights)
    if not t or any(not (0 < w < 1 or (w == 1 and len(t) == 1)) for w in t) \
            or abs(sum(t) - 1) > SIMPLEX_TOL:
        raise InputError(f"barycentric weights must lie in the open simplex, got {t}")
    return t


def _default_support(measures: Sequence[DiscreteMeasure]) -> DiscreteMeasure:
    if not measures_share_support(measures):
        raise InputError("inputs live on different supports; give the barycenter support")
    return measures[0]


@dataclass
class TreeSolution:
    """A solved tree problem with all node marginals read off the plan."""

    problem: TreeProblem
    state: ScalingState
    diagnostics: SolverDiagnostics

    def marginal(self, j: int) -> DiscreteMeasure:
        w = tree_marginal_projection(self.state, self.problem, j)
        return self.problem.measures[j].with_weights(w)

    @property
    def marginals(self) -> List[DiscreteMeasure]:
        return [self.marginal(j) for j in range(self.problem.n)]

    @property
    def value(self) -> float:
        """Optimal value with entropy ``sum pi log pi - pi`` (dual value at the iterate)."""
        return self.state.dual_value


def build_barycenter_problem(measures: Sequence[DiscreteMeasure], penalties: Sequence,
                             weights: Sequence[float], epsilon: float,
                             bary_support: Optional[DiscreteMeasure] = None,
                             costs: Optional[Sequence[CostMatrix]] = None,
                             separable: Optional[bool] = None) -> TreeProblem:
    """Star problem whose free center marginal is the barycenter.

    Leaves ``0..N-1`` carry the inputs with penalties ``t_i * phi_i``, the
    center ``N`` is unpenalised, and edge ``(i, N)`` has weight ``t_i``
    so its kernel is ``exp(-t_i c_i / eps)``.
    """
    measures = list(measures)
    n = len(measures)
    if n < 1 or len(penalties) != n:
        raise InputError("need one penalty per input measure")
    t = _check_simplex(weights)
    if len(t) != n:
        raise InputError(f"{len(t)} weights for {n} measures")
    support = _default_support(measures) if bary_support is None else bary_support
    for m in measures:
        if m.dim != support.dim:
            raise InputError(f"dimension mismatch: input {m.dim} vs barycenter {support.dim}")
    tree = star_tree(n, t)
    pens = [MarginalPenalty.parse(p).scaled(ti) for p, ti in zip(penalties, t)] + [Free()]
    cost_map = None
    if costs is not None:
        if len(costs) != n:
            raise InputError("need one cost per input measure")
        cost_map = {(i, n): c for i, c in enumerate(costs)}
    return TreeProblem.build(tree, measures + [support], pens, epsilon,
                             costs=cost_map, separable=separable)


def extract_barycenter(problem: TreeProblem, state: ScalingState,
                       center: Optional[int] = None) -> DiscreteMeasure:
    """Center marginal of the (implicit) optimal plan."""
    if center is None:
        free = problem.tree.free
        if len(free) != 1:
            raise InputError("problem does not have a single free center; pass center=")
        center = free[0]
    w = tree_marginal_projection(state, problem, center)
    return problem.measures[center].with_weights(w)


def solve_barycenter(measures, penalties, weights, epsilon, bary_support=None,
                     config: Optional[SolverConfig] = None, **kw) -> TreeSolution:
    problem = build_barycenter_problem(measures, penalties, weights, epsilon,
                                       bary_support=bary_support, **kw)
    state, diag = tree_sinkhorn(problem, config)
    return TreeSolution(problem, state, diag)


def pinned_uot_value(measure: DiscreteMeasure, penalty, weight: float,
                     xi: DiscreteMeasure, epsilon: float,
                     cost: Optional[CostMatrix] = None,
                     config: Optional[SolverConfig] = None) -> Tuple[float, TreeSolution]:
    """``t * UOT_{eps/t}(mu, xi)`` with the second marginal held at ``xi``.

    Solved as a two-node problem with cost ``t * c``, entropy weight
    ``eps``, penalty ``t * phi`` on ``mu`` and an equality constraint on
    ``xi``. The value uses the entropy ``sum pi log pi - pi``.
    """
    if not weight > 0:
        raise InputError("weight must be positive")
    c = squared_distance_cost(measure, xi) if cost is None else cost
    tree = path_tree(2, [1.0])
    pens = [MarginalPenalty.parse(penalty).scaled(weight), Equality()]
    problem = TreeProblem.build(tree, [measure, xi], pens, epsilon,
                                costs={(0, 1): c.scaled(weight)})
    config = config or SolverConfig(tol=1e-12, max_sweeps=100000)
    state, diag = tree_sinkhorn(problem, config)
    return state.dual_value, TreeSolution(problem, state, diag)


def barycenter_identity(measures, penalties, weights, epsilon, bary_support=None,
                        config: Optional[SolverConfig] = None) -> dict:
    """Both sides of the barycenter/multi-marginal value identity.

    Solves the star problem, takes its center marginal ``xi``, and
    evaluates ``sum_i t_i UOT_{eps/t_i}(mu_i, xi) - eps (N-1) E(xi)`` from
    ``N`` pinned two-marginal solves. With ``E(xi) = sum xi log xi - xi``
    the two values agree at the optimum.
    """
    config = config or SolverConfig(tol=1e-12, max_sweeps=100000)
    sol = solve_barycenter(measures, penalties, weights, epsilon,
                           bary_support=bary_support, config=config)
    xi = extract_barycenter(sol.problem, sol.state)
    n = len(measures)
    pinned = []
    for i, (m, p, t) in enumerate(zip(measures, penalties, weights)):
        c = sol.problem.kernels[(i, n)].cost
        value, _ = pinned_uot_value(m, p, t, xi, epsilon, cost=c, config=config)
        pinned.append(value)
    ent = entropy(xi.weights, reference_mass=False)
    lhs = sum(pinned) - epsilon * (n - 1) * ent
    return {
        "umot_value": sol.value,
        "lhs": lhs,
        "pinned_values": pinned,
        "entropy": ent,
        "barycenter": xi,
        "solution": sol,
    }


@dataclass
class CoupledBarycenter:
    """Result of the coupled two-marginal barycenter iteration."""

    barycenter: DiscreteMeasure
    marginals: List[DiscreteMeasure]
    iterations: int
    converged: bool
    change: float


def coupled_barycenter(measures: Sequence[DiscreteMeasure], penalties: Sequence,
                       weights: Sequence[float], epsilon: float,
                       bary_support: Optional[DiscreteMeasure] = None,
                       max_iter: int = 100000, tol: float = 1e-10) -> CoupledBarycenter:
    """Minimise ``sum_i t_i UOT_{eps/t_i}(mu_i, xi)`` over ``xi``.

    Block coordinate ascent on the dual of the coupled problem: each plan
    is ``diag(a_i) K_i diag(b_i)`` with ``K_i = exp(-t_i c_i / eps)``.
    The ``a_i`` step is the unbalanced scaling update for ``t_i phi_i``;
    the joint ``b`` step enforces equal second marginals with
    ``prod_i b_i = 1``, which makes ``xi`` the geometric mean of the
    ``K_i^T a_i``. Stops when the relative sup-change of ``xi`` drops
    below ``tol``.
    """
    measures = list(measures)
    n = len(measures)
    t = _check_simplex(weights)
    support = _default_support(measures) if bary_support is None else bary_support
    kernels = [gibbs_kernel(squared_distance_cost(m, support), ti, epsilon)
               for m, ti in zip(measures, t)]
    pens = [MarginalPenalty.parse(p).scaled(ti) for p, ti in zip(penalties, t)]
    a = [np.ones(m.size) for m in measures]
    b = [np.ones(support.size) for _ in range(n)]
    xi = np.ones(support.size)
    change, converged, it = math.inf, False, 0
    for it in range(1, max_iter + 1):
        for i in range(n):
            if pens[i].kind == "Free":
                a[i] = np.ones(measures[i].size)
                continue
            k = apply_kernel(kernels[i], b[i])
            with np.errstate(divide="ignore"):
                p = -epsilon * (np.log(measures[i].weights) - np.log(k))
            a[i] = np.exp(-aprox(pens[i], epsilon, p) / epsilon)
        kta = [apply_kernel(kernels[i], a[i], transpose=True) for i in range(n)]
        with np.errstate(divide="ignore"):
            log_xi = np.mean([np.log(v) for v in kta], axis=0)
        new_xi = np.exp(log_xi)
        if not np.all(np.isfinite(new_xi)) or np.any(new_xi <= 0):
            raise NumericalError(
                f"coupled barycenter underflowed at iteration {it}; increase epsilon")
        b = [new_xi / v for v in kta]
        change = float(np.max(np.abs(new_xi - xi)) / np.max(xi))
        xi = new_xi
        if change < tol:
            converged = True
            break
    marg = [measures[i].with_weights(a[i] * apply_kernel(kernels[i], b[i]))
            for i in range(n)]
    return CoupledBarycenter(support.with_weights(xi), marg, it, converged, change)


def interpolate_tree(tree: TreeGraph, measures: Sequence[DiscreteMeasure], penalties,
                     epsilon: float, config: Optional[SolverConfig] = None,
                     costs: Optional[Mapping] = None,
                     separable: Optional[bool] = None) -> TreeSolution:
    """Solve the tree problem with given leaves and free inner nodes.

    ``measures[i]`` supplies the support of every node and the target
    weights of the given leaves. ``penalties`` maps each given leaf (or
    lists, one per node) to its base penalty ``phi_v``; the solver uses
    ``t_v * phi_v`` with ``t_v`` the weight of the leaf's edge. Inner
    nodes are unpenalised. The free nodes' marginals are the results.
    """
    if len(measures) != tree.n:
        raise InputError(f"tree has {tree.n} nodes but got {len(measures)} measures")
    if not tree.given:
        raise InputError("no given nodes: nothing to interpolate between")
    if isinstance(penalties, Mapping):
        base = dict(penalties)
    else:
        base = {i: p for i, p in enumerate(penalties) if i in tree.given}
    pens = []
    for i in range(tree.n):
        if i in tree.given:
            if i not in base or base[i] is None:
                raise InputError(f"given node {i} needs a penalty")
            (nb,) = tree.neighbors(i) if tree.n > 1 else (i,)
            tv = tree.edge_weight(i, nb) if tree.n > 1 else 1.0
            pens.append(MarginalPenalty.parse(base[i]).scaled(tv))
        else:
            pens.append(Free())
    problem = TreeProblem.build(tree, measures, pens, epsilon, costs=costs,
                                separable=separable)
    state, diag = tree_sinkhorn(problem, config)
    return TreeSolution(problem, state, diag)


def star_weights(tree: TreeGraph, u: int) -> Tuple[Tuple[int, ...], Tuple[float, ...]]:
    """Leaves and normalised weights ``q/sum q`` of the star centred at ``u``.

    ``q_k = 1 / sum of t_e along the tree path from u to k``.
    """
    if u in tree.given:
        raise InputError(f"node {u} is a given leaf, not an inner node")
    leaves = tuple(sorted(tree.given))
    if not leaves:
        raise InputError("tree has no given leaves")
    q = []
    for k in leaves:
        path = tree.path(u, k)
        q.append(1.0 / sum(tree.edge_weight(a, b) for a, b in zip(path[:-1], path[1:])))
    total = sum(q)
    return leaves, tuple(x / total for x in q)


def star_decomposition(tree: TreeGraph, u: int, measures: Sequence[DiscreteMeasure],
                       penalties, epsilon: float,
                       base_cost: Optional[CostMatrix] = None,
                       separable: Optional[bool] = None) -> TreeProblem:
    """Star problem for one inner node of ``tree``.

    Nodes of the result are the given leaves in ascending order followed by
    ``u``. All supports must coincide. Penalties are the leaves' base
    penalties scaled by their new star weights.
    """
    leaves, w = star_weights(tree, u)
    if not measures_share_support(list(measures)):
        raise InputError("star decomposition needs identical supports on all nodes")
    if isinstance(penalties, Mapping):
        base = [penalties[k] for k in leaves]
    else:
        base = [penalties[k] for k in leaves]
    costs = None if base_cost is None else [base_cost] * len(leaves)
    return build_barycenter_problem([measures[k] for k in leaves], base, w, epsilon,
                                    bary_support=measures[u], costs=costs,
                                    separable=separable)


@dataclass(frozen=True, eq=False)
class TransferOperator:
    """Row-stochastic transition matrix from a source to a target support."""

    matrix: np.ndarray
    source: DiscreteMeasure
    target: Optional[DiscreteMeasure] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != self.source.size:
            raise InputError("operator rows must match the source support")
        if np.any(m < 0):
            raise InputError("operator entries must be non-negative")
        if not np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise InputError("operator rows must sum to one")
        if self.target is not None and self.target.size != m.shape[1]:
            raise InputError("operator columns must match the target support")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    def then(self, other: "TransferOperator") -> "TransferOperator":
        """Operator for applying ``self`` and then ``other``."""
        if other.matrix.shape[0] != self.matrix.shape[1]:
            raise InputError("operators do not chain")
        prod = self.matrix @ other.matrix
        prod = prod / prod.sum(axis=1, keepdims=True)
        return TransferOperator(prod, self.source, other.target)


def transfer_operator(edge_plan, source_marginal, target: Optional[DiscreteMeasure] = None,
                      rtol: float = 1e-8) -> TransferOperator:
    """``diag(mu^-1) pi`` for a two-marginal plan with left marginal ``mu``.

    The row sums of the plan must match ``mu`` to ``rtol`` (relative to the
    largest weight); rows are then normalised by their own sums so the
    result is row-stochastic to rounding.
    """
    plan = np.asarray(edge_plan, dtype=float)
    if isinstance(source_marginal, DiscreteMeasure):
        src = source_marginal
    else:
        w = np.asarray(source_marginal, dtype=float)
        src = DiscreteMeasure(np.arange(w.size, dtype=float)[:, None], w)
    mu = src.weights
    if plan.ndim != 2 or plan.shape[0] != mu.size:
        raise InputError(f"plan of shape {plan.shape} does not match {mu.size} source points")
    if np.any(mu <= 0):
        raise InputError("source marginal must be strictly positive")
    rows = plan.sum(axis=1)
    if np.max(np.abs(rows - mu)) > rtol * np.max(mu):
        raise InputError("plan row sums disagree with the source marginal")
    return TransferOperator(plan / rows[:, None], src, target)


def propagate(operator: TransferOperator, measure) -> DiscreteMeasure:
    """Push ``measure`` forward: weights ``K^T w``."""
    w = measure.weights if isinstance(measure, DiscreteMeasure) else np.asarray(measure, float)
    if w.shape != (operator.matrix.shape[0],):
        raise InputError(f"measure has {w.size} points, operator expects {operator.matrix.shape[0]}")
    out = operator.matrix.T @ w
    target = operator.target if operator.target is not None else (
        measure if isinstance(measure, DiscreteMeasure) and
        measure.size == out.size else None)
    if target is None:
        return DiscreteMeasure(np.arange(out.size, dtype=float)[:, None], out)
    return target.with_weights(out)


def uot_plan(mu: DiscreteMeasure, nu: DiscreteMeasure, penalties, epsilon: float,
             config: Optional[SolverConfig] = None, cost: Optional[CostMatrix] = None,
             separable: Optional[bool] = None) -> TreeSolution:
    """Two-marginal unbalanced problem, solved with the same tree machinery."""
    tree = path_tree(2, [1.0])
    costs = None if cost is None else {(0, 1): cost}
    problem = TreeProblem.build(tree, [mu, nu], list(penalties), epsilon, costs=costs,
                                separable=separable)
    state, diag = tree_sinkhorn(problem, config)
    return TreeSolution(problem, state, diag)


def sequential_uot_operator(measures: Sequence[DiscreteMeasure], penalty, epsilon: float,
                            config: Optional[SolverConfig] = None,
                            cost_scale: float = 1.0,
                            separable: Optional[bool] = None):
    """Chain of ``len(measures) - 1`` two-marginal transfer operators.

    Returns the composite operator and the per-step solutions.
    """
    ops, sols = [], []
    for mu, nu in zip(measures[:-1], measures[1:]):
        c = squared_distance_cost(mu, nu, separable=separable is not False).scaled(cost_scale)
        sol = uot_plan(mu, nu, [penalty, penalty], epsilon, config, cost=c, separable=separable)
        plan = edge_marginal(sol.problem, sol.state, 0, 1)
        ops.append(transfer_operator(plan, sol.marginal(0), target=nu.with_weights(
            np.ones(nu.size))))
        sols.append(sol)
    op = ops[0]
    for nxt in ops[1:]:
        op = op.then(nxt)
    return op, sols
