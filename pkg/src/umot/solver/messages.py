"""Message passing on the tree: subtree contractions of ``K * (u_1 x ... x u_N)``.

``alpha[(j, k)] = K^{(j,k)} (u_k * prod_{l in N(k) - j} alpha[(k, l)])`` is
a vector on node ``j``; the node marginal of the plan is ``u_j`` times the
product of all messages arriving at ``j``.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from ..errors import InputError, NumericalError, StaleMessageError
from .problem import ScalingState, TreeProblem

__all__ = [
    "update_alpha",
    "incoming_product",
    "tree_marginal_projection",
    "message_is_fresh",
    "refresh_messages",
    "check_messages",
    "edge_marginal",
    "node_marginals",
    "total_mass",
]


def message_is_fresh(problem: TreeProblem, state: ScalingState, j: int, k: int) -> bool:
    stamp = state.alpha_stamp.get((j, k))
    if stamp is None:
        return False
    side = problem.sides[(j, k)]
    return stamp >= max(state.u_stamp[i] for i in side)


def _require_fresh(problem, state, j, k, consumer):
    if not message_is_fresh(problem, state, j, k):
        raise StaleMessageError(
            f"message {(j, k)} is stale or missing when computing {consumer} "
            f"(sweep {state.sweeps})")


def incoming_product(problem: TreeProblem, state: ScalingState, j: int,
                     exclude: Optional[int] = None, check: bool = True) -> np.ndarray:
    """``prod_{l in N(j), l != exclude} alpha[(j, l)]`` (empty product is 1)."""
    out = np.ones(problem.sizes[j])
    for l in problem.tree.neighbors(j):
        if l == exclude:
            continue
        if check:
            _require_fresh(problem, state, j, l, f"a product at node {j}")
        out = out * state.alpha[(j, l)]
    return out


def update_alpha(state: ScalingState, problem: TreeProblem, j: int, k: int,
                 check: bool = True) -> np.ndarray:
    """Recompute and store ``alpha[(j, k)]``; one kernel application."""
    if not problem.tree.has_edge(j, k):
        raise InputError(f"{(j, k)} is not an edge")
    inner = state.u[k] * incoming_product(problem, state, k, exclude=j, check=check)
    msg = problem.apply(j, k, inner)
    state.kernel_applications += 1
    if not np.all(np.isfinite(msg)):
        raise NumericalError(
            f"non-finite message {(j, k)} in sweep {state.sweeps}")
    if np.any(msg <= 0):
        raise NumericalError(
            f"message {(j, k)} underflowed to zero in sweep {state.sweeps}; "
            f"increase epsilon (currently {problem.epsilon:g})")
    state.alpha[(j, k)] = msg
    state.alpha_stamp[(j, k)] = state.clock
    return msg


def tree_marginal_projection(state: ScalingState, problem: TreeProblem, j: int,
                             check: bool = True) -> np.ndarray:
    """Marginal of the plan on node ``j``: ``u_j * prod_l alpha[(j, l)]``."""
    return state.u[j] * incoming_product(problem, state, j, check=check)


def refresh_messages(state: ScalingState, problem: TreeProblem, root: int = 0) -> None:
    """Recompute every directed message: leaves-to-root, then root-to-leaves."""
    from ..tree import preorder_dfs

    plan = preorder_dfs(problem.tree, root)
    for x in plan.backward:
        p = plan.parent[x]
        if p is not None:
            update_alpha(state, problem, p, x, check=True)
    for x in plan.forward:
        p = plan.parent[x]
        if p is not None:
            update_alpha(state, problem, x, p, check=True)


def check_messages(state: ScalingState, problem: TreeProblem, rtol: float = 1e-10) -> float:
    """Verify every stored message against its defining recursion.

    Catches both stale stamps and corrupted values; raises
    :class:`StaleMessageError` naming the first offending message and
    returns the largest relative deviation otherwise.
    """
    worst = 0.0
    for (j, k) in sorted(state.alpha):
        if not message_is_fresh(problem, state, j, k):
            raise StaleMessageError(f"message {(j, k)} is stale")
        inner = state.u[k]
        for l in problem.tree.neighbors(k):
            if l != j:
                inner = inner * state.alpha[(k, l)]
        want = problem.apply(j, k, inner)
        dev = float(np.max(np.abs(want - state.alpha[(j, k)]) / np.abs(want)))
        if not dev <= rtol:
            raise StaleMessageError(
                f"message {(j, k)} deviates from its recursion by {dev:.3e} (relative)")
        worst = max(worst, dev)
    return worst


def node_marginals(state: ScalingState, problem: TreeProblem) -> List[np.ndarray]:
    return [tree_marginal_projection(state, problem, j) for j in range(problem.n)]


def total_mass(problem: TreeProblem, u) -> float:
    """``sum K * (u_1 x ... x u_N)`` from one leaves-to-root pass (no state)."""
    from ..tree import preorder_dfs

    plan = preorder_dfs(problem.tree, 0)
    up = {}
    for x in plan.backward:
        acc = np.asarray(u[x], dtype=float)
        for c in problem.tree.neighbors(x):
            if c != plan.parent[x]:
                acc = acc * up[c]
        p = plan.parent[x]
        if p is None:
            return float(np.sum(acc))
        up[x] = problem.apply(p, x, acc)
    raise AssertionError("unreachable")


def edge_marginal(problem: TreeProblem, state: ScalingState, j: int, k: int,
                  check: bool = True) -> np.ndarray:
    """Two-node marginal ``M[a, b]`` of the implicit plan for any node pair.

    For an edge this is ``diag(w_j) K^{(j,k)} diag(w_k)`` with ``w`` the
    potential times all messages except the one across the edge; for
    distant nodes the kernels along the connecting path are contracted.
    """
    if j == k:
        raise InputError("pair marginal needs two distinct nodes")
    path = problem.tree.path(j, k)
    excl = {x: set() for x in path}
    for a, b in zip(path[:-1], path[1:]):
        excl[a].add(b)
        excl[b].add(a)

    def weights(x):
        out = state.u[x].copy()
        for l in problem.tree.neighbors(x):
            if l in excl[x]:
                continue
            if check:
                _require_fresh(problem, state, x, l, f"pair marginal {(j, k)}")
            out = out * state.alpha[(x, l)]
        return out

    # rows: node j; columns walk along the path
    acc = np.diag(weights(j))
    for a, b in zip(path[:-1], path[1:]):
        # acc (m_j x m_a) times K^{(a,b)} (m_a x m_b) == (K^{(b,a)} acc^T)^T
        acc = problem.apply(b, a, acc.T).T
        acc = acc * weights(b)[None, :]
    return acc
