"""Tree-factored Sinkhorn sweeps and the dual objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..errors import NumericalError
from ..measures import aprox, conjugate_value
from ..tree import preorder_dfs
from .messages import (incoming_product, total_mass, tree_marginal_projection,
                       update_alpha)
from .problem import ScalingState, SolverConfig, TreeProblem

__all__ = [
    "SolverDiagnostics",
    "sinkhorn_update",
    "tree_sinkhorn",
    "conjugate_term",
    "dual_objective",
    "state_dual",
    "umot_dual_value",
]

#: absolute slack (scaled by ``max(1, |D|)``) when judging dual monotonicity
MONOTONE_SLACK = 1e-10


@dataclass
class SolverDiagnostics:
    """What happened during a run.

    ``records`` holds one dict per cadence interval with keys ``sweep``,
    ``dual_value``, ``max_u_change`` and ``kernel_applications``.
    ``update_duals`` lists the dual value after every single coordinate
    update (postorder schedule only, where it is available for free).
    """

    converged: bool = False
    sweeps: int = 0
    max_u_change: float = math.inf
    dual_value: float = math.nan
    monotone: bool = True
    records: List[dict] = field(default_factory=list)
    update_duals: List[float] = field(default_factory=list)
    kernel_applications: int = 0
    schedule: str = "postorder"

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "sweeps": self.sweeps,
            "max_u_change": self.max_u_change,
            "dual_value": self.dual_value,
            "dual_monotone": self.monotone,
            "kernel_applications": self.kernel_applications,
            "schedule": self.schedule,
        }


def conjugate_term(problem: TreeProblem, i: int, f_i) -> float:
    """``<mu_i, phi_i^*(-f_i)>``; ``+inf`` when ``-f_i`` leaves the domain.

    Free nodes carry no target; their term is 0 on the domain ``f_i >= 0``.
    Points with zero target weight contribute nothing.
    """
    pen = problem.penalties[i]
    q = -np.asarray(f_i, dtype=float)
    if pen.kind == "Free":
        return 0.0 if np.all(q <= 0) else math.inf
    mu = problem.measures[i].weights
    vals = conjugate_value(pen, q)
    pos = mu > 0
    if np.any(np.isinf(vals[pos])):
        return math.inf
    return float(np.dot(mu[pos], vals[pos]))


def _log_potential(u):
    with np.errstate(divide="ignore"):
        return np.log(u)


def dual_objective(problem: TreeProblem, f) -> float:
    """``-sum_i <mu_i, phi_i^*(-f_i)> - eps * sum exp((f^+ - c)/eps)``.

    The tensor sum is contracted along the tree, so no dense tensor is
    formed. Outside the domain of a conjugate the value is ``-inf``.
    """
    eps = problem.epsilon
    conj = sum(conjugate_term(problem, i, f[i]) for i in range(problem.n))
    if math.isinf(conj):
        return -math.inf
    u = [np.exp(np.asarray(fi, dtype=float) / eps) for fi in f]
    return -conj - eps * total_mass(problem, u)


def state_dual(problem: TreeProblem, state: ScalingState) -> float:
    return dual_objective(problem, state.potentials(problem.epsilon))


def umot_dual_value(problem: TreeProblem, f) -> float:
    """Dual value under the entropy ``KL(pi, counting)`` with its ``+1`` per point.

    Differs from :func:`dual_objective` by the constant ``eps * prod m_i``.
    """
    return dual_objective(problem, f) + problem.epsilon * math.prod(problem.sizes)


def sinkhorn_update(problem: TreeProblem, state: ScalingState, j: int,
                    check: bool = True) -> float:
    """Replace ``u_j`` by the exact maximiser of the dual in coordinate ``j``.

    With ``k = prod_l alpha[(j, l)]`` (the transform's normaliser) the
    new potential is ``f_j = -aprox(-eps log(mu_j / k))`` and ``u_j =
    exp(f_j / eps)``. Returns the relative sup-norm change of ``u_j``.
    """
    eps = problem.epsilon
    pen = problem.penalties[j]
    old = state.u[j]
    if pen.kind == "Free":
        new = np.ones_like(old)
    else:
        k = incoming_product(problem, state, j, check=check)
        mu = problem.measures[j].weights
        with np.errstate(divide="ignore"):
            p = -eps * (np.log(mu) - np.log(k))
        new = np.exp(-aprox(pen, eps, p) / eps)
        if not np.all(np.isfinite(new)) or np.any(new <= 0):
            raise NumericalError(
                f"potential at node {j} left (0, inf) in sweep {state.sweeps}; "
                f"increase epsilon (currently {eps:g})")
    scale = float(np.max(np.abs(old)))
    change = float(np.max(np.abs(new - old))) / scale if scale > 0 else math.inf
    state.u[j] = new
    state.clock += 1
    state.u_stamp[j] = state.clock
    return change


def _init_messages(problem, state, plan):
    for x in plan.backward:
        p = plan.parent[x]
        if p is not None:
            update_alpha(state, problem, p, x)


def _postorder_sweep(problem, state, plan, on_update):
    change = 0.0
    parent = plan.parent
    open_path = []
    for j in plan.forward:
        pj = parent[j]
        while open_path and open_path[-1] != pj:
            x = open_path.pop()
            update_alpha(state, problem, parent[x], x)
        if pj is not None:
            update_alpha(state, problem, j, pj)
        change = max(change, sinkhorn_update(problem, state, j))
        on_update(j)
        open_path.append(j)
    while len(open_path) > 1:
        x = open_path.pop()
        update_alpha(state, problem, parent[x], x)
    return change


def _deferred_sweep(problem, state, plan, on_update):
    # parent-to-child messages are refreshed only after the forward pass,
    # so updates at branching nodes may read messages from the last sweep
    change = 0.0
    for j in plan.forward:
        pj = plan.parent[j]
        if pj is not None:
            update_alpha(state, problem, j, pj, check=False)
        change = max(change, sinkhorn_update(problem, state, j, check=False))
        on_update(j)
    for x in plan.backward:
        p = plan.parent[x]
        if p is not None:
            update_alpha(state, problem, p, x, check=False)
    return change


def tree_sinkhorn(problem: TreeProblem, config: Optional[SolverConfig] = None,
                  root: Optional[int] = None, state: Optional[ScalingState] = None,
                  callback: Optional[Callable[[ScalingState, int], None]] = None):
    """Run Sinkhorn sweeps using message passing on the tree.

    Parameters
    ----------
    problem : TreeProblem
    config : SolverConfig, optional
    root : int, optional
        Traversal root; defaults to the lowest-index free node.
    state : ScalingState, optional
        Warm start; ``u == 1`` otherwise.
    callback : callable, optional
        Called as ``callback(state, j)`` after every coordinate update.

    Returns
    -------
    (ScalingState, SolverDiagnostics)

    Notes
    -----
    Nodes are updated in pre-order. Under the default ``"postorder"``
    schedule the message from a parent into node ``j`` is computed right
    before ``u_j`` changes and the message from a finished subtree back to
    its parent right after the traversal leaves it. Every update then sees
    current messages, each sweep is exactly one round of coordinate ascent
    in pre-order, and a sweep still costs ``2(N-1)`` kernel applications.
    ``"deferred"`` refreshes all parent-to-child messages after the forward
    pass instead; at branching nodes this reads outdated sibling
    information, so it is not coordinate ascent and the staleness guard is
    disabled for it.
    """
    config = config or SolverConfig()
    plan = preorder_dfs(problem.tree, problem.tree.default_root() if root is None else root)
    if state is None:
        state = ScalingState.ones(problem)
    else:
        state = state.copy()
        state.alpha, state.alpha_stamp = {}, {}
    diag = SolverDiagnostics(schedule=config.schedule)
    eps = problem.epsilon
    postorder = config.schedule == "postorder"

    start_apps = state.kernel_applications
    _init_messages(problem, state, plan)

    conj = [conjugate_term(problem, i, eps * _log_potential(state.u[i]))
            for i in range(problem.n)]
    last = [-math.inf]

    def on_update(j):
        if postorder:
            conj[j] = conjugate_term(problem, j, eps * _log_potential(state.u[j]))
            c = sum(conj)
            mass = float(np.sum(tree_marginal_projection(state, problem, j)))
            value = -math.inf if math.isinf(c) else -c - eps * mass
            if value < last[0] - MONOTONE_SLACK * max(1.0, abs(value)):
                diag.monotone = False
            last[0] = value
            diag.update_duals.append(value)
        if callback is not None:
            callback(state, j)

    sweep_fn = _postorder_sweep if postorder else _deferred_sweep
    prev_record = -math.inf
    for _ in range(config.max_sweeps):
        change = sweep_fn(problem, state, plan, on_update)
        state.sweeps += 1
        diag.max_u_change = change
        done = change < config.tol
        if state.sweeps % config.dual_every == 0 or done or state.sweeps == config.max_sweeps:
            value = last[0] if postorder else state_dual(problem, state)
            if value < prev_record - MONOTONE_SLACK * max(1.0, abs(value)):
                diag.monotone = False
            prev_record = value
            diag.records.append({
                "sweep": state.sweeps,
                "dual_value": value,
                "max_u_change": change,
                "kernel_applications": state.kernel_applications - start_apps,
            })
        if done:
            diag.converged = True
            break

    # upward messages are current after either schedule; refresh the
    # downward ones so projections and pair marginals can be read off
    for x in plan.forward:
        p = plan.parent[x]
        if p is not None:
            update_alpha(state, problem, x, p)
    state.dual_value = state_dual(problem, state)
    diag.sweeps = state.sweeps
    diag.dual_value = state.dual_value
    diag.kernel_applications = state.kernel_applications - start_apps
    return state, diag
