"""Synthetic data and end-to-end runs for the three demonstration setups.

* 1D barycenters of two truncated normals of different mass,
* interpolation of four images along an H-shaped tree,
* particle tracking on a noisy drifting dot sequence.

Runners return plain dictionaries of arrays and numbers; file output is
left to the CLI.
"""

from __future__ import annotations

import logging
import time
from typing import List, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter, shift as nd_shift
from scipy.stats import truncnorm

from .errors import InputError
from .kernels import squared_distance_cost
from .measures import DiscreteMeasure, TV, MarginalPenalty, entropy
from .problems import (coupled_barycenter, extract_barycenter, interpolate_tree,
                       propagate, sequential_uot_operator, solve_barycenter,
                       star_decomposition, star_weights, transfer_operator)
from .solver import (SolverConfig, TreeProblem, edge_marginal, tree_marginal_projection,
                     tree_sinkhorn)
from .tree import TreeGraph, path_tree, validate_tree

log = logging.getLogger(__name__)

__all__ = [
    "truncated_normal_measure",
    "gaussian_inputs",
    "run_gaussian_barycenters",
    "htree",
    "htree_images",
    "run_htree",
    "dots_sequence",
    "run_tracking",
    "squared_error",
]

GAUSSIAN_DEFAULTS = {
    "n": 100,
    "means": (0.2, 0.8),
    "stds": (0.05, 0.08),
    "masses": (1.0, 2.0),
    "epsilon": 0.005,
}


def truncated_normal_measure(x, mean: float, std: float, mass: float = 1.0,
                             lo: float = 0.0, hi: float = 1.0) -> DiscreteMeasure:
    """Normal density truncated to ``[lo, hi]`` sampled at ``x``, scaled to ``mass``."""
    x = np.asarray(x, dtype=float)
    a, b = (lo - mean) / std, (hi - mean) / std
    w = truncnorm.pdf(x, a, b, loc=mean, scale=std)
    if not w.sum() > 0:
        raise InputError("sample grid misses the support of the density")
    return DiscreteMeasure(x[:, None], mass * w / w.sum())


def gaussian_inputs(n: int = 100, means=(0.2, 0.8), stds=(0.05, 0.08),
                    masses=(1.0, 2.0)) -> List[DiscreteMeasure]:
    """Two truncated normals on ``n`` equispaced points of [0, 1]."""
    x = np.linspace(0.0, 1.0, int(n))
    return [truncated_normal_measure(x, m, s, w) for m, s, w in zip(means, stds, masses)]


def run_gaussian_barycenters(measures: Sequence[DiscreteMeasure], ts: Sequence,
                             penalty="KL", epsilon: float = 0.005,
                             config: Optional[SolverConfig] = None,
                             coupled: bool = True) -> List[dict]:
    """Barycenters for each entry of ``ts``.

    An entry is either a scalar ``t`` (two inputs, weights ``(1-t, t)``)
    or a full weight vector.
    """
    out = []
    for t in ts:
        w = (1.0 - float(t), float(t)) if np.isscalar(t) else tuple(float(v) for v in t)
        pens = [penalty] * len(measures)
        sol = solve_barycenter(measures, pens, w, epsilon, config=config)
        xi = extract_barycenter(sol.problem, sol.state)
        res = {
            "weights": w,
            "barycenter": xi,
            "marginals": [sol.marginal(i) for i in range(len(measures))],
            "diagnostics": sol.diagnostics,
            "value": sol.value,
            "entropy": entropy(xi.weights),
        }
        if coupled:
            cb = coupled_barycenter(measures, pens, w, epsilon)
            res["coupled"] = cb
            res["coupled_entropy"] = entropy(cb.barycenter.weights)
        out.append(res)
    return out


# H-tree: leaves 0, 2, 4, 6 given; inner nodes 1, 3, 5
HTREE_EDGES = ((0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6))
HTREE_GIVEN = (0, 2, 4, 6)


def htree(weights: Optional[Sequence[float]] = None) -> TreeGraph:
    return validate_tree(7, HTREE_EDGES, weights, HTREE_GIVEN)


def htree_images(size: int = 16) -> List[np.ndarray]:
    """Four test images of equal mass: a disc, a square, a ring and two blobs."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    r = np.hypot(xx - 0.5, yy - 0.5)
    disc = (r < 0.3).astype(float)
    square = ((np.abs(xx - 0.5) < 0.25) & (np.abs(yy - 0.5) < 0.25)).astype(float)
    ring = ((r > 0.2) & (r < 0.38)).astype(float)
    blobs = (np.exp(-((xx - 0.3) ** 2 + (yy - 0.3) ** 2) / 0.01)
             + 1.5 * np.exp(-((xx - 0.7) ** 2 + (yy - 0.7) ** 2) / 0.01))
    imgs = []
    for img in (disc, square, ring, blobs):
        img = img + 1e-3  # full support for the KL penalty
        imgs.append(img / img.sum())
    return imgs


def run_htree(images: Sequence[np.ndarray], penalty="0.05*KL", epsilon: float = 4e-4,
              mode: str = "tree", config: Optional[SolverConfig] = None,
              tree: Optional[TreeGraph] = None, spacing: Optional[float] = None) -> dict:
    """Interpolate four leaf images along the H-tree (or another tree).

    ``mode="tree"`` solves one tree problem; ``mode="star"`` solves one
    star problem per inner node, both multi-marginal and coupled.
    """
    tree = htree() if tree is None else tree
    given = sorted(tree.given)
    if len(images) != len(given):
        raise InputError(f"expected {len(given)} images, got {len(images)}")
    shape = np.asarray(images[0]).shape
    if any(np.asarray(im).shape != shape for im in images):
        raise InputError("all images must share one grid")
    h = 1.0 / max(shape) if spacing is None else spacing
    leaf = dict(zip(given, images))
    blank = np.ones(shape)
    measures = [DiscreteMeasure.on_grid(leaf.get(i, blank), spacing=h) for i in range(tree.n)]
    pen = MarginalPenalty.parse(penalty)
    pens = {v: pen for v in given}
    if mode == "tree":
        sol = interpolate_tree(tree, measures, pens, epsilon, config)
        marg = [sol.marginal(j).as_image() for j in range(tree.n)]
        return {"mode": mode, "marginals": marg, "masses": [float(m.sum()) for m in marg],
                "diagnostics": sol.diagnostics, "value": sol.value}
    if mode != "star":
        raise InputError(f"unknown interpolation mode {mode!r}")
    umot, uot, diags, weights = {}, {}, {}, {}
    for u in tree.free:
        leaves, w = star_weights(tree, u)
        problem = star_decomposition(tree, u, measures, pens, epsilon)
        state, diag = tree_sinkhorn(problem, config)
        umot[u] = extract_barycenter(problem, state).as_image()
        cb = coupled_barycenter([measures[k] for k in leaves], [pen] * len(leaves), w,
                                epsilon, bary_support=measures[u])
        uot[u] = cb.barycenter.as_image()
        diags[u] = diag
        weights[u] = w
    return {"mode": mode, "umot": umot, "uot": uot, "diagnostics": diags,
            "star_weights": weights,
            "masses_umot": {u: float(v.sum()) for u, v in umot.items()},
            "masses_uot": {u: float(v.sum()) for u, v in uot.items()}}


TRACK_DEFAULTS = {
    "size": 32,
    "frames": 5,
    "shift": 2,
    "dot_threshold": 0.02,
    "noise_threshold": 0.004,
    "sigma": 0.8,
    "epsilon": 1e-4,
    "tv_weight": 7e-4,
    "spacing": 0.01,
}


def _dots(rng, shape, threshold, sigma):
    mask = (rng.uniform(size=shape) < threshold).astype(float)
    img = gaussian_filter(mask, sigma, mode="constant")
    top = img.max()
    return img / top if top > 0 else img


def dots_sequence(size: int = 32, frames: int = 5, shift: int = 2,
                  dot_threshold: float = 0.02, noise_threshold: float = 0.004,
                  sigma: float = 0.8, seed: int = 0):
    """Drifting dots plus transient noise dots.

    Dots come from thresholded uniform noise blurred by a Gaussian filter
    and scaled to peak 1; each frame shifts the previous one ``shift``
    pixels down, filling with zeros from the top. Noise dots are drawn
    independently per frame in the same way.
    """
    rng = np.random.default_rng(seed)
    shape = (size, size)
    first = _dots(rng, shape, dot_threshold, sigma)
    clean = [nd_shift(first, (shift * i, 0), order=0, mode="constant", cval=0.0)
             for i in range(frames)]
    noisy = [c + _dots(rng, shape, noise_threshold, sigma) for c in clean]
    return clean, noisy


def squared_error(a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sum(d * d))


def run_tracking(clean: Sequence[np.ndarray], noisy: Sequence[np.ndarray],
                 epsilon: float = 1e-4, tv_weight: float = 7e-4, spacing: float = 0.01,
                 config: Optional[SolverConfig] = None, penalty=None) -> dict:
    """Multi-marginal versus sequential two-marginal transfer operators.

    The line tree gets equal edge weights ``1/(F-1)`` and costs scaled by
    ``F-1``, so every edge kernel equals the kernel of the two-marginal
    baseline problems. ``penalty`` overrides ``TV(tv_weight)`` on every
    frame.
    """
    frames = len(noisy)
    if frames < 2:
        raise InputError("tracking needs at least two frames")
    t0 = time.perf_counter()
    measures = [DiscreteMeasure.on_grid(img, spacing=spacing) for img in noisy]
    tree = path_tree(frames, [1.0 / (frames - 1)] * (frames - 1))
    pen = TV(tv_weight) if penalty is None else MarginalPenalty.parse(penalty)
    costs = {(i, i + 1): squared_distance_cost(measures[i], measures[i + 1]).scaled(frames - 1)
             for i in range(frames - 1)}
    problem = TreeProblem.build(tree, measures, [pen] * frames, epsilon, costs=costs)
    state, diag = tree_sinkhorn(problem, config)
    marg = [tree_marginal_projection(state, problem, j) for j in range(frames)]
    plan = edge_marginal(problem, state, 0, frames - 1)
    k_umot = transfer_operator(plan, measures[0].with_weights(marg[0]))
    start = measures[0].with_weights(np.asarray(clean[0], dtype=float).reshape(-1))
    prop_umot = propagate(k_umot, start).weights.reshape(noisy[0].shape)
    t_umot = time.perf_counter() - t0

    k_uot, sols = sequential_uot_operator(measures, pen, epsilon, config)
    prop_uot = propagate(k_uot, start).weights.reshape(noisy[0].shape)
    truth = np.asarray(clean[-1], dtype=float)
    err_umot, err_uot = squared_error(prop_umot, truth), squared_error(prop_uot, truth)
    log.info("tracking: UMOT error %.6g, UOT error %.6g", err_umot, err_uot)
    return {
        "marginals": [m.reshape(noisy[0].shape) for m in marg],
        "propagated_umot": prop_umot,
        "propagated_uot": prop_uot,
        "ground_truth": truth,
        "error_umot": err_umot,
        "error_uot": err_uot,
        "row_sum_dev_umot": float(np.max(np.abs(k_umot.matrix.sum(axis=1) - 1))),
        "row_sum_dev_uot": float(np.max(np.abs(k_uot.matrix.sum(axis=1) - 1))),
        "diagnostics": diag,
        "uot_diagnostics": [s.diagnostics for s in sols],
        "seconds_umot": t_umot,
        "seconds_total": time.perf_counter() - t0,
    }
