"""Tree graphs over marginal indices and their traversal order.

Nodes are numbered ``0 .. n-1`` in the Python API. Configuration files use
1-based numbering and are converted at the CLI boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .errors import InputError, TreeError

__all__ = ["TreeGraph", "TraversalPlan", "validate_tree", "preorder_dfs",
           "star_tree", "path_tree"]

WEIGHT_SUM_TOL = 1e-9

Edge = Tuple[int, int]


def _norm(e) -> Edge:
    j, k = int(e[0]), int(e[1])
    return (j, k) if j < k else (k, j)


@dataclass(frozen=True)
class TreeGraph:
    """A validated tree with edge weights and a given/free node partition.

    Construct through :func:`validate_tree`.
    """

    n: int
    edges: Tuple[Edge, ...]
    weights: Tuple[float, ...]
    given: FrozenSet[int]
    adjacency: Tuple[Tuple[int, ...], ...]

    @property
    def free(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.n) if i not in self.given)

    def neighbors(self, j: int) -> Tuple[int, ...]:
        return self.adjacency[j]

    def degree(self, j: int) -> int:
        return len(self.adjacency[j])

    @property
    def leaves(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.degree(i) == 1)

    def edge_weight(self, j: int, k: int) -> float:
        return self._weight_map[_norm((j, k))]

    @cached_property
    def _weight_map(self) -> Dict[Edge, float]:
        return dict(zip(self.edges, self.weights))

    def has_edge(self, j: int, k: int) -> bool:
        return _norm((j, k)) in self._weight_map

    def path(self, j: int, k: int) -> List[int]:
        """Node sequence of the unique path from ``j`` to ``k``."""
        parent = {j: None}
        stack = [j]
        while stack:
            x = stack.pop()
            for y in self.adjacency[x]:
                if y not in parent:
                    parent[y] = x
                    stack.append(y)
        if k not in parent:
            raise InputError(f"nodes {j} and {k} are not connected")
        out = [k]
        while out[-1] != j:
            out.append(parent[out[-1]])
        return out[::-1]

    def side(self, j: int, k: int) -> Tuple[int, ...]:
        """Nodes reachable from ``k`` without passing through ``j``."""
        seen = {j, k}
        stack, out = [k], [k]
        while stack:
            x = stack.pop()
            for y in self.adjacency[x]:
                if y not in seen:
                    seen.add(y)
                    out.append(y)
                    stack.append(y)
        return tuple(sorted(out))

    def default_root(self) -> int:
        free = self.free
        return free[0] if free else 0


def validate_tree(n: int, edges: Sequence, weights: Optional[Sequence[float]] = None,
                  leaves_given: Sequence[int] = ()) -> TreeGraph:
    """Check that ``edges`` form a weighted tree on ``n`` nodes.

    Every violated invariant is collected and reported in one
    :class:`TreeError`. ``weights`` default to equal shares ``1/(n-1)``.
    """
    problems = []
    edges = [tuple(e) for e in edges]
    n = int(n)
    if n < 1:
        raise TreeError([f"node count must be positive, got {n}"])
    norm = []
    for e in edges:
        if len(e) != 2:
            problems.append(f"edge {tuple(e)} is not a pair")
            continue
        j, k = _norm(e)
        if j == k:
            problems.append(f"self-loop at node {j}")
        elif not (0 <= j < n and 0 <= k < n):
            problems.append(f"edge {(j, k)} references a node outside 0..{n - 1}")
        else:
            norm.append((j, k))
    if len(set(norm)) != len(norm):
        problems.append("duplicate edges")
    if weights is None:
        weights = [1.0 / max(len(edges), 1)] * len(edges)
    weights = [float(w) for w in weights]
    if len(weights) != len(edges):
        problems.append(f"{len(weights)} weights for {len(edges)} edges")
    if len(norm) != n - 1:
        problems.append(f"a tree on {n} nodes has {n - 1} edges, got {len(norm)}")

    # union-find for cycles and connectivity
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for j, k in norm:
        rj, rk = find(j), find(k)
        if rj == rk:
            problems.append(f"cycle closed by edge {(j, k)}")
        else:
            parent[rj] = rk
    components = len({find(i) for i in range(n)})
    if components > 1:
        problems.append(f"graph is disconnected ({components} components)")

    if n > 1 and weights:
        if any(not w > 0 for w in weights):
            problems.append("edge weights must be positive")
        if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
            problems.append(f"edge weights sum to {sum(weights)!r}, expected 1")

    adj = [[] for _ in range(n)]
    for j, k in norm:
        adj[j].append(k)
        adj[k].append(j)
    given = frozenset(int(v) for v in leaves_given)
    for v in sorted(given):
        if not 0 <= v < n:
            problems.append(f"given node {v} outside 0..{n - 1}")
        elif len(adj[v]) != 1 and n > 1:
            problems.append(f"given node {v} has degree {len(adj[v])}, expected a leaf")
    if problems:
        raise TreeError(problems)
    order = sorted(range(len(norm)), key=lambda i: norm[i])
    return TreeGraph(
        n=n,
        edges=tuple(norm[i] for i in order),
        weights=tuple(weights[i] for i in order),
        given=given,
        adjacency=tuple(tuple(sorted(a)) for a in adj),
    )


@dataclass(frozen=True)
class TraversalPlan:
    """Pre-order depth-first ordering of a rooted tree."""

    root: int
    forward: Tuple[int, ...]
    parent: Dict[int, Optional[int]]

    @property
    def backward(self) -> Tuple[int, ...]:
        return self.forward[::-1]

    def children(self, j: int) -> Tuple[int, ...]:
        return tuple(k for k in self.forward if self.parent[k] == j)


def preorder_dfs(tree: TreeGraph, root: Optional[int] = None) -> TraversalPlan:
    """Pre-order DFS visiting children in ascending node index."""
    if root is None:
        root = tree.default_root()
    if not 0 <= root < tree.n:
        raise InputError(f"root {root} outside 0..{tree.n - 1}")
    parent = {root: None}
    order = []
    stack = [root]
    while stack:
        x = stack.pop()
        order.append(x)
        kids = [y for y in tree.adjacency[x] if y != parent[x]]
        for y in kids:
            parent[y] = x
        stack.extend(reversed(kids))
    return TraversalPlan(root=root, forward=tuple(order), parent=parent)


def star_tree(n_leaves: int, weights: Optional[Sequence[float]] = None,
              given_leaves: bool = True) -> TreeGraph:
    """Star with leaves ``0..n_leaves-1`` and center ``n_leaves``."""
    edges = [(i, n_leaves) for i in range(n_leaves)]
    given = range(n_leaves) if given_leaves else ()
    return validate_tree(n_leaves + 1, edges, weights, given)


def path_tree(n: int, weights: Optional[Sequence[float]] = None,
              given: Sequence[int] = ()) -> TreeGraph:
    return validate_tree(n, [(i, i + 1) for i in range(n - 1)], weights, given)
