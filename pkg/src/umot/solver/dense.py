"""Dense N-way tensor Sinkhorn, used as an oracle on small instances.

Everything here forms the full cost tensor over the product of all
supports, so sizes are guarded by ``dense_cap``.
"""

from __future__ import annotations

import math
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import InputError, NumericalError
from ..measures import aprox, divergence, entropy
from .problem import DEFAULT_DENSE_CAP, SolverConfig, TreeProblem
from .sweep import SolverDiagnostics, conjugate_term

__all__ = [
    "dense_cost_tensor",
    "dense_c_eps_transform",
    "dense_sinkhorn",
    "dense_dual",
    "dense_log_plan",
    "dense_marginal",
    "dense_pair_marginal",
    "primal_objective",
]


def _check_cap(problem: TreeProblem, cap: int) -> None:
    size = math.prod(problem.sizes)
    if size > cap:
        raise InputError(
            f"dense tensor would have {size} entries, above the cap of {cap}")


def _axis_view(vec, axis: int, ndim: int):
    shape = [1] * ndim
    shape[axis] = -1
    return np.asarray(vec, dtype=float).reshape(shape)


def dense_cost_tensor(problem: TreeProblem, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """``C[x_1, ..., x_N] = sum_e t_e c_e(x_j, x_k)`` as a full array."""
    _check_cap(problem, cap)
    n = problem.n
    C = np.zeros(problem.sizes)
    for (j, k), K in problem.kernels.items():
        shape = [1] * n
        shape[j], shape[k] = problem.sizes[j], problem.sizes[k]
        C = C + K.weighted_cost().reshape(shape)
    return C


def _f_sum(f, sizes):
    n = len(sizes)
    out = np.zeros(sizes)
    for i, fi in enumerate(f):
        out = out + _axis_view(fi, i, n)
    return out


def dense_log_plan(problem: TreeProblem, f, C: Optional[np.ndarray] = None) -> np.ndarray:
    """``(f^+ - C) / eps``, the log-density of the plan."""
    if C is None:
        C = dense_cost_tensor(problem)
    return (_f_sum(f, problem.sizes) - C) / problem.epsilon


def dense_c_eps_transform(problem: TreeProblem, f, j: int,
                          C: Optional[np.ndarray] = None) -> np.ndarray:
    """``eps log mu_j - eps log sum_{x_-j} exp((f_-j^+ - C)/eps)``.

    ``f_j`` itself is ignored. The log-sum-exp is max-shifted. For Free
    nodes the measure's weights are still used; the Sinkhorn mapping
    discards the result there anyway.
    """
    if C is None:
        C = dense_cost_tensor(problem)
    eps = problem.epsilon
    g = list(f)
    g[j] = np.zeros(problem.sizes[j])
    logp = dense_log_plan(problem, g, C)
    axes = tuple(i for i in range(problem.n) if i != j)
    lse = logsumexp(logp, axis=axes) if axes else logp
    with np.errstate(divide="ignore"):
        return eps * np.log(problem.measures[j].weights) - eps * lse


def _sinkhorn_map(problem, j, transform):
    pen = problem.penalties[j]
    if pen.kind == "Free":
        return np.zeros(problem.sizes[j])
    return -aprox(pen, problem.epsilon, -transform)


def dense_sinkhorn(problem: TreeProblem, config: Optional[SolverConfig] = None,
                   order: Optional[Sequence[int]] = None, f0=None,
                   callback: Optional[Callable[[List[np.ndarray], int], None]] = None):
    """Cyclic coordinate ascent on the dual over the full tensor.

    Parameters
    ----------
    order : sequence of int, optional
        Node order within a sweep; ascending indices by default.
    f0 : list of arrays, optional
        Initial log-potentials, zero by default.
    callback : callable, optional
        ``callback(f, j)`` after every coordinate update.

    Returns
    -------
    (list of arrays, SolverDiagnostics)
        Log-domain potentials ``f_i = eps log u_i``.
    """
    config = config or SolverConfig()
    cap = config.dense_cap
    C = dense_cost_tensor(problem, cap)
    eps = problem.epsilon
    order = list(range(problem.n)) if order is None else list(order)
    if sorted(order) != list(range(problem.n)):
        raise InputError("order must be a permutation of the nodes")
    f = [np.zeros(m) for m in problem.sizes] if f0 is None else \
        [np.array(x, dtype=float) for x in f0]
    diag = SolverDiagnostics(schedule="dense-" + config.domain)
    K = np.exp(-C / eps) if config.domain == "exp" else None
    prev = -math.inf
    for sweep in range(1, config.max_sweeps + 1):
        change = 0.0
        for j in order:
            if config.domain == "exp":
                new_f = _exp_update(problem, K, f, j)
            else:
                new_f = _sinkhorn_map(problem, j, dense_c_eps_transform(problem, f, j, C))
            if not np.all(np.isfinite(new_f)):
                raise NumericalError(f"non-finite potential at node {j} in sweep {sweep}")
            old_u, new_u = np.exp(f[j] / eps), np.exp(new_f / eps)
            change = max(change, float(np.max(np.abs(new_u - old_u)) / np.max(old_u)))
            f[j] = new_f
            if callback is not None:
                callback(f, j)
        diag.sweeps = sweep
        diag.max_u_change = change
        done = change < config.tol
        if sweep % config.dual_every == 0 or done or sweep == config.max_sweeps:
            value = dense_dual(problem, f, C)
            if value < prev - 1e-10 * max(1.0, abs(value)):
                diag.monotone = False
            prev = value
            diag.records.append({"sweep": sweep, "dual_value": value,
                                 "max_u_change": change, "kernel_applications": 0})
        if done:
            diag.converged = True
            break
    diag.dual_value = dense_dual(problem, f, C)
    return f, diag


def _exp_update(problem, K, f, j):
    eps = problem.epsilon
    n = problem.n
    t = K
    for i in range(n):
        if i != j:
            t = t * _axis_view(np.exp(f[i] / eps), i, n)
    axes = tuple(i for i in range(n) if i != j)
    proj = t.sum(axis=axes) if axes else t
    with np.errstate(divide="ignore"):
        transform = eps * (np.log(problem.measures[j].weights) - np.log(proj))
    return _sinkhorn_map(problem, j, transform)


def dense_dual(problem: TreeProblem, f, C: Optional[np.ndarray] = None) -> float:
    """Dual objective evaluated over the full tensor (log-sum-exp)."""
    conj = sum(conjugate_term(problem, i, f[i]) for i in range(problem.n))
    if math.isinf(conj):
        return -math.inf
    lse = float(logsumexp(dense_log_plan(problem, f, C)))
    return -conj - problem.epsilon * math.exp(lse)


def dense_marginal(plan: np.ndarray, j: int) -> np.ndarray:
    axes = tuple(i for i in range(plan.ndim) if i != j)
    return plan.sum(axis=axes) if axes else plan.copy()


def dense_pair_marginal(plan: np.ndarray, j: int, k: int) -> np.ndarray:
    if j == k:
        raise InputError("pair marginal needs two distinct nodes")
    axes = tuple(i for i in range(plan.ndim) if i not in (j, k))
    m = plan.sum(axis=axes) if axes else plan
    return m if j < k else m.T


def primal_objective(problem: TreeProblem, plan: np.ndarray, reference_mass: bool = True,
                     equality_rtol: float = 1e-9, C: Optional[np.ndarray] = None) -> float:
    """``<C, pi> + eps E(pi) + sum_i D_i(pi_i, mu_i)`` for a dense plan.

    ``E`` is the entropy relative to the counting measure; with
    ``reference_mass=False`` its ``+1`` per support point is omitted, which
    pairs with :func:`umot.solver.dual_objective`.
    """
    plan = np.asarray(plan, dtype=float)
    if np.any(plan < 0):
        raise InputError("plan entries must be non-negative")
    if C is None:
        C = dense_cost_tensor(problem)
    val = float(np.sum(C * plan)) + problem.epsilon * entropy(plan, reference_mass)
    for i, pen in enumerate(problem.penalties):
        if pen.kind == "Free":
            continue
        val += divergence(pen, dense_marginal(plan, i), problem.measures[i].weights,
                          rtol=equality_rtol)
    return val
