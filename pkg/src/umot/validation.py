"""Random small instances and the oracle suite behind ``umot validate``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import StaleMessageError
from .kernels import apply_kernel, gibbs_kernel, squared_distance_cost
from .measures import DiscreteMeasure, KL, MarginalPenalty
from .solver import (SolverConfig, TreeProblem, check_messages,
                     dense_marginal, dense_sinkhorn, recover_plan_dense,
                     tree_marginal_projection, tree_sinkhorn)
from .tree import preorder_dfs, validate_tree

__all__ = ["random_tree", "random_problem", "oracle_check", "CheckResult",
           "run_validation"]


def random_tree(rng: np.random.Generator, n: int, given_leaves: bool = False):
    """Random recursive tree on ``n`` nodes with random positive weights."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    w = rng.uniform(0.2, 1.0, size=n - 1)
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum() if n > 2 else 1.0
    given = ()
    if given_leaves and n > 2:
        deg = np.zeros(n, int)
        for j, k in edges:
            deg[j] += 1
            deg[k] += 1
        given = tuple(int(i) for i in np.flatnonzero(deg == 1))
    return validate_tree(n, edges, list(w), given)


def _random_penalty(rng):
    kind = rng.choice(["Equality", "Free", "KL", "TV"])
    if kind in ("KL", "TV"):
        return MarginalPenalty(str(kind), float(rng.uniform(0.1, 2.0)))
    return MarginalPenalty(str(kind))


def random_problem(rng: np.random.Generator, max_nodes: int = 5, max_support: int = 6,
                   epsilon: Optional[float] = None, kinds: Optional[list] = None,
                   dim: Optional[int] = None) -> TreeProblem:
    """Random mixed-penalty tree instance small enough for the dense oracle."""
    n = int(rng.integers(2, max_nodes + 1))
    tree = random_tree(rng, n)
    d = int(rng.integers(1, 3)) if dim is None else dim
    measures = []
    for _ in range(n):
        m = int(rng.integers(2, max_support + 1))
        measures.append(DiscreteMeasure(rng.uniform(0, 1, (m, d)), rng.uniform(0.2, 1.5, m)))
    if kinds is None:
        pens = [_random_penalty(rng) for _ in range(n)]
    else:
        pens = [MarginalPenalty.parse(kinds[int(rng.integers(len(kinds)))]) for _ in range(n)]
    if all(p.kind == "Free" for p in pens):
        pens[0] = KL(1.0)
    # equality-pinned marginals must share one mass or nothing is feasible
    pinned = [i for i, p in enumerate(pens) if p.kind == "Equality"]
    for i in pinned[1:]:
        m = measures[i]
        scale = measures[pinned[0]].mass / m.mass
        measures[i] = m.with_weights(m.weights * scale)
    eps = float(rng.uniform(0.05, 0.5)) if epsilon is None else epsilon
    return TreeProblem.build(tree, measures, pens, eps)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{flag}  {self.name}: {self.value:.3e} (limit {self.limit:.1e}){extra}"


def oracle_check(problem: TreeProblem, sweeps: int = 50) -> dict:
    """Tree run against the dense run with the same update order.

    Returns the worst potential deviation, the worst projection deviation
    against the densified plan, the worst dual decrease across single
    updates and the kernel applications per sweep.
    """
    cfg = SolverConfig(max_sweeps=sweeps, tol=1e-300)
    root = problem.tree.default_root()
    per_sweep = []

    state, diag = tree_sinkhorn(problem, cfg, root=root)
    order = preorder_dfs(problem.tree, root).forward
    f_dense, _ = dense_sinkhorn(problem, cfg, order=order)
    f_tree = state.potentials(problem.epsilon)
    pot = max(float(np.max(np.abs(a - b))) for a, b in zip(f_tree, f_dense))

    plan = recover_plan_dense(problem, state).tensor
    proj = 0.0
    for j in range(problem.n):
        want = dense_marginal(plan, j)
        got = tree_marginal_projection(state, problem, j)
        proj = max(proj, float(np.max(np.abs(got - want)) / np.max(np.abs(want))))

    duals = np.asarray(diag.update_duals)
    drops = duals[:-1] - duals[1:]
    scale = np.maximum(1.0, np.abs(duals[1:]))
    worst_drop = float(np.max(drops / scale)) if drops.size else 0.0

    apps = [r["kernel_applications"] for r in diag.records]
    per_sweep = sorted(set(np.diff(apps).tolist())) if len(apps) > 1 else []
    return {"potential_dev": pot, "projection_dev": proj, "worst_dual_drop": worst_drop,
            "apps_per_sweep": per_sweep, "expected_apps": 2 * (problem.n - 1)}


def run_validation(seed: int = 0, instances: int = 20, inject_fault: bool = False,
                   sweeps: int = 50) -> List[CheckResult]:
    """The oracle and property suite; stops early only on an injected fault."""
    rng = np.random.default_rng(seed)
    results = []
    pot = proj = drop = 0.0
    count_ok = True
    for _ in range(instances):
        problem = random_problem(rng)
        r = oracle_check(problem, sweeps)
        pot = max(pot, r["potential_dev"])
        proj = max(proj, r["projection_dev"])
        drop = max(drop, r["worst_dual_drop"])
        count_ok &= r["apps_per_sweep"] == [r["expected_apps"]]
    results.append(CheckResult(f"tree vs dense potentials, {instances} instances",
                               pot <= 1e-9, pot, 1e-9))
    results.append(CheckResult("tree projection vs dense tensor", proj <= 1e-12, proj, 1e-12))
    results.append(CheckResult("dual decrease across single updates", drop <= 1e-10,
                               max(drop, 0.0), 1e-10))
    results.append(CheckResult("kernel applications per sweep equal 2(N-1)", count_ok,
                               0.0 if count_ok else 1.0, 0.0))

    # separable against dense application on a grid
    img = rng.uniform(0.1, 1.0, (12, 9))
    grid = DiscreteMeasure.on_grid(img, spacing=(0.1, 0.07))
    c = squared_distance_cost(grid, grid)
    ks, kd = gibbs_kernel(c, 0.5, 0.05), gibbs_kernel(c, 0.5, 0.05, separable=False)
    v = rng.uniform(0, 1, grid.size)
    a, b = apply_kernel(ks, v), apply_kernel(kd, v)
    sep = float(np.max(np.abs(a - b) / np.abs(b)))
    results.append(CheckResult("separable vs dense kernel", sep <= 1e-12, sep, 1e-12))

    # message consistency after a run, optionally with a corrupted message
    problem = random_problem(rng, max_nodes=5)
    state, _ = tree_sinkhorn(problem, SolverConfig(max_sweeps=20, tol=1e-300))
    if inject_fault:
        edge = sorted(state.alpha)[0]
        state.alpha[edge] = state.alpha[edge] * (1 + 1e-3)
    try:
        dev = check_messages(state, problem)
        results.append(CheckResult("stored messages match their recursion", True, dev, 1e-10))
    except StaleMessageError as exc:
        results.append(CheckResult("stored messages match their recursion", False,
                                   math.inf, 1e-10, str(exc)))
    return results
