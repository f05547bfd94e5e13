import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from umot.errors import InputError, TreeError
from umot.tree import path_tree, preorder_dfs, star_tree, validate_tree

# 0-based H-tree (paper numbering minus one)
HTREE = [(0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6)]


def test_smallest_tree():
    t = validate_tree(2, [(0, 1)], [1.0])
    assert t.edges == ((0, 1),) and t.leaves == (0, 1)


def test_star_tree():
    t = validate_tree(5, [(i, 4) for i in range(4)], [0.25] * 4, leaves_given=range(4))
    assert t.degree(4) == 4 and t.free == (4,)
    assert star_tree(4).edges == t.edges


def test_triangle_is_rejected():
    with pytest.raises(TreeError, match="cycle"):
        validate_tree(3, [(0, 1), (0, 2), (1, 2)], [1 / 3] * 3)


def test_all_violations_reported():
    with pytest.raises(TreeError) as err:
        validate_tree(4, [(0, 1), (0, 1), (2, 2)], [0.5, 0.6, -1], leaves_given=[0, 3])
    text = str(err.value)
    for piece in ("self-loop", "duplicate", "3 edges", "disconnected", "positive",
                  "sum to", "given node 0"):
        assert piece in text, piece
    assert len(err.value.violations) >= 6


def test_weight_sum_tolerance():
    validate_tree(3, [(0, 1), (1, 2)], [0.5, 0.5 + 5e-10])
    with pytest.raises(TreeError):
        validate_tree(3, [(0, 1), (1, 2)], [0.5, 0.5 + 1e-8])


def test_edges_are_normalised_and_sorted():
    t = validate_tree(3, [(2, 1), (1, 0)], [0.3, 0.7])
    assert t.edges == ((0, 1), (1, 2))
    assert t.edge_weight(2, 1) == 0.3 and t.edge_weight(0, 1) == 0.7


def test_default_equal_weights():
    t = validate_tree(4, [(0, 1), (1, 2), (2, 3)])
    assert t.weights == pytest.approx((1 / 3,) * 3)


def test_preorder_examples():
    p = preorder_dfs(path_tree(3), 0)
    assert p.forward == (0, 1, 2) and p.parent == {0: None, 1: 0, 2: 1}
    assert p.backward == (2, 1, 0)
    assert preorder_dfs(star_tree(4), 4).forward == (4, 0, 1, 2, 3)
    h = validate_tree(7, HTREE)
    assert preorder_dfs(h, 1).forward == (1, 0, 2, 3, 5, 4, 6)


def test_preorder_bad_root():
    with pytest.raises(InputError):
        preorder_dfs(path_tree(3), 5)


def test_default_root_is_lowest_free_node():
    h = validate_tree(7, HTREE, leaves_given=[0, 2, 4, 6])
    assert h.default_root() == 1
    assert validate_tree(2, [(0, 1)], leaves_given=[0, 1]).default_root() == 0


def test_paths_and_sides():
    h = validate_tree(7, HTREE)
    assert h.path(1, 4) == [1, 3, 5, 4]
    assert h.side(1, 3) == (3, 4, 5, 6)
    assert h.side(3, 1) == (0, 1, 2)


@given(st.integers(1, 9), st.integers(0, 10 ** 6))
def test_traversal_invariants(n, seed):
    rng = np.random.default_rng(seed)
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    t = validate_tree(n, edges)
    root = int(rng.integers(0, n))
    p = preorder_dfs(t, root)
    assert len(p.forward) == n and p.forward[0] == root
    pos = {x: i for i, x in enumerate(p.forward)}
    assert all(pos[p.parent[x]] < pos[x] for x in p.forward if x != root)


@given(st.integers(1, 7), st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)),
                                   max_size=8))
def test_validate_agrees_with_networkx(n, raw):
    edges = [(j, k) for j, k in raw if j < n and k < n]
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges)
    simple = len(set(map(frozenset, edges))) == len(edges) and all(j != k for j, k in edges)
    expected = simple and nx.is_tree(g)
    try:
        validate_tree(n, edges)
        ok = True
    except TreeError:
        ok = False
    assert ok == expected
