"""Cost matrices and Gibbs kernels, dense or separable on regular grids.

For the squared Euclidean cost on a lattice the Gibbs kernel factorises
over the coordinate axes, ``exp(-|x-y|^2/eps) = prod_a exp(-(x_a-y_a)^2/eps)``,
so applying it to an image costs one small matrix product per axis and the
full ``m x m`` matrix is never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import InputError
from .measures import DiscreteMeasure

__all__ = [
    "CostMatrix",
    "GibbsKernel",
    "squared_distance_cost",
    "grid_axes",
    "gibbs_kernel",
    "apply_kernel",
]

#: Kernel entries are clamped below at this value so logarithms stay finite.
KERNEL_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Pairwise cost between two supports.

    ``representation`` is ``"dense"`` (explicit matrix) or ``"grid"``
    (squared distance between two lattices, stored as per-axis coordinates).
    ``scale`` multiplies the whole cost.
    """

    representation: str
    matrix: Optional[np.ndarray] = None
    row_axes: Optional[Tuple[np.ndarray, ...]] = None
    col_axes: Optional[Tuple[np.ndarray, ...]] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.representation == "dense":
            m = np.array(self.matrix, dtype=float)
            if m.ndim != 2:
                raise InputError("dense cost must be a matrix")
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise InputError("cost entries must be finite and non-negative")
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)
        elif self.representation == "grid":
            if self.row_axes is None or self.col_axes is None or \
                    len(self.row_axes) != len(self.col_axes):
                raise InputError("grid cost needs matching row/column axes")
            object.__setattr__(self, "row_axes",
                               tuple(np.asarray(a, dtype=float) for a in self.row_axes))
            object.__setattr__(self, "col_axes",
                               tuple(np.asarray(a, dtype=float) for a in self.col_axes))
        else:
            raise InputError(f"unknown cost representation {self.representation!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InputError("cost scale must be positive")

    @classmethod
    def from_matrix(cls, matrix) -> "CostMatrix":
        return cls("dense", matrix=matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        if self.representation == "dense":
            return self.matrix.shape
        return (math.prod(a.size for a in self.row_axes),
                math.prod(a.size for a in self.col_axes))

    def axis_costs(self):
        """Per-axis squared-difference matrices of a grid cost (scale applied)."""
        if self.representation != "grid":
            raise InputError("axis costs exist only for grid costs")
        return [self.scale * (r[:, None] - c[None, :]) ** 2
                for r, c in zip(self.row_axes, self.col_axes)]

    def dense(self) -> np.ndarray:
        if self.representation == "dense":
            return self.scale * self.matrix if self.scale != 1.0 else self.matrix
        parts = self.axis_costs()
        rshape = tuple(p.shape[0] for p in parts)
        cshape = tuple(p.shape[1] for p in parts)
        d = len(parts)
        total = np.zeros(rshape + cshape)
        for a, part in enumerate(parts):
            shape = [1] * (2 * d)
            shape[a], shape[d + a] = part.shape
            total = total + part.reshape(shape)
        return total.reshape(self.shape)

    def min(self) -> float:
        if self.representation == "dense":
            return float(self.scale * self.matrix.min()) if self.matrix.size else 0.0
        return float(sum(p.min() for p in self.axis_costs()))

    def scaled(self, factor: float) -> "CostMatrix":
        return CostMatrix(self.representation, self.matrix, self.row_axes,
                          self.col_axes, self.scale * factor)

    def transpose(self) -> "CostMatrix":
        if self.representation == "dense":
            return CostMatrix("dense", matrix=self.matrix.T, scale=self.scale)
        return CostMatrix("grid", row_axes=self.col_axes, col_axes=self.row_axes,
                          scale=self.scale)


def grid_axes(measure: DiscreteMeasure):
    """Per-axis coordinates if ``measure`` lies on a row-major lattice, else ``None``."""
    if measure.grid_shape is None or len(measure.grid_shape) != measure.dim:
        return None
    shape = measure.grid_shape
    pts = measure.points.reshape(*shape, measure.dim)
    axes = []
    for a in range(len(shape)):
        index = [0] * len(shape)
        index[a] = slice(None)
        axes.append(np.array(pts[tuple(index) + (a,)]))
    mesh = np.meshgrid(*axes, indexing="ij")
    rebuilt = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if not np.array_equal(rebuilt, measure.points):
        return None
    return tuple(axes)


def squared_distance_cost(a: DiscreteMeasure, b: DiscreteMeasure,
                          separable: bool = True) -> CostMatrix:
    """``c[j, k] = |a_j - b_k|^2``; grid-tagged when both supports are lattices."""
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if separable:
        ra, rb = grid_axes(a), grid_axes(b)
        if ra is not None and rb is not None:
            return CostMatrix("grid", row_axes=ra, col_axes=rb)
    diff = a.points[:, None, :] - b.points[None, :, :]
    return CostMatrix("dense", matrix=np.sum(diff * diff, axis=-1))


@dataclass(frozen=True, eq=False)
class GibbsKernel:
    """``exp(-weight * cost / epsilon)`` with a dense or separable backing."""

    cost: CostMatrix
    weight: float
    epsilon: float
    matrix: Optional[np.ndarray] = None
    factors: Optional[Tuple[np.ndarray, ...]] = None

    @property
    def separable(self) -> bool:
        return self.factors is not None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.cost.shape

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        out = self.factors[0]
        for f in self.factors[1:]:
            out = np.kron(out, f)
        return np.maximum(out, KERNEL_FLOOR)

    def weighted_cost(self) -> np.ndarray:
        """Dense ``weight * cost`` (small instances only)."""
        return self.weight * self.cost.dense()

    def apply(self, v, transpose: bool = False) -> np.ndarray:
        return apply_kernel(self, v, transpose)


def gibbs_kernel(cost: CostMatrix, edge_weight: float = 1.0, epsilon: float = 1.0,
                 separable: Optional[bool] = None) -> GibbsKernel:
    """Gibbs kernel of ``edge_weight * cost`` at temperature ``epsilon``.

    The separable backing is chosen for grid costs unless ``separable=False``.
    """
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    if not edge_weight > 0:
        raise InputError(f"edge weight must be positive, got {edge_weight}")
    use_sep = cost.representation == "grid" if separable is None else separable
    if use_sep and cost.representation != "grid":
        raise InputError("separable kernels need a grid cost")
    with np.errstate(under="ignore"):
        if use_sep:
            factors = tuple(np.maximum(np.exp(-edge_weight * c / epsilon), KERNEL_FLOOR)
                            for c in cost.axis_costs())
            for f in factors:
                f.setflags(write=False)
            return GibbsKernel(cost, float(edge_weight), float(epsilon), factors=factors)
        mat = np.maximum(np.exp(-edge_weight * cost.dense() / epsilon), KERNEL_FLOOR)
    mat.setflags(write=False)
    return GibbsKernel(cost, float(edge_weight), float(epsilon), matrix=mat)


def apply_kernel(K: GibbsKernel, v, transpose: bool = False) -> np.ndarray:
    """``K @ v`` (or ``K.T @ v``); ``v`` may be a vector or a column batch."""
    v = np.asarray(v, dtype=float)
    rows, cols = K.shape
    n_in = rows if transpose else cols
    if v.shape[0] != n_in:
        raise InputError(f"kernel expects length {n_in}, got {v.shape[0]}")
    if K.matrix is not None:
        return K.matrix.T @ v if transpose else K.matrix @ v
    factors = [f.T if transpose else f for f in K.factors]
    in_shape = tuple(f.shape[1] for f in factors)
    batch = v.shape[1:]
    x = v.reshape(in_shape + batch)
    for a, f in enumerate(factors):
        x = np.moveaxis(x, a, 0)
        lead = x.shape
        x = (f @ x.reshape(lead[0], -1)).reshape((f.shape[0],) + lead[1:])
        x = np.moveaxis(x, 0, a)
    return x.reshape((-1,) + batch)
