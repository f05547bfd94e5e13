"""Discrete measures, marginal penalties and their proximal operators.

All reference measures are counting measures on the discrete support, so a
measure is fully described by its support points and a weight vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "DiscreteMeasure",
    "MarginalPenalty",
    "Equality",
    "Free",
    "KL",
    "TV",
    "grid_points",
    "kl_divergence",
    "tv_divergence",
    "divergence",
    "aprox",
    "conjugate_value",
    "entropy",
]

#: Weights below this value count as zero for full-support checks.
DEFAULT_WEIGHT_FLOOR = 1e-300

PENALTY_KINDS = ("Equality", "Free", "KL", "TV")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point set ``sum_k w_k delta_{x_k}``.

    Parameters
    ----------
    points : array_like, shape (m, d) or (m,)
        Support coordinates. One-dimensional input is treated as ``d = 1``.
    weights : array_like, shape (m,)
        Non-negative masses.
    grid_shape : tuple of int, optional
        Set when the points are a row-major regular lattice (images).
    """

    points: np.ndarray
    weights: np.ndarray
    grid_shape: Optional[tuple] = None
    grid_spacing: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise InputError(f"points must be 1D or 2D, got shape {pts.shape}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise InputError(
                f"{w.shape[0]} weights for {pts.shape[0]} support points")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and non-negative")
        if self.grid_shape is not None:
            shape = tuple(int(s) for s in self.grid_shape)
            if math.prod(shape) != pts.shape[0]:
                raise InputError(
                    f"grid shape {shape} does not match {pts.shape[0]} points")
            object.__setattr__(self, "grid_shape", shape)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def on_grid(cls, image, spacing=1.0, origin=0.0):
        """Measure on a regular 2D lattice with pixel values as weights."""
        img = np.asarray(image, dtype=float)
        if img.ndim != 2:
            raise InputError("grid measures must be two-dimensional")
        pts, sp = grid_points(img.shape, spacing, origin)
        return cls(pts, img.reshape(-1), grid_shape=img.shape, grid_spacing=sp)

    def with_weights(self, weights) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, weights, self.grid_shape,
                               self.grid_spacing)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def as_image(self) -> np.ndarray:
        if self.grid_shape is None:
            raise InputError("measure is not defined on a grid")
        return self.weights.reshape(self.grid_shape)

    def __repr__(self):
        grid = f", grid={self.grid_shape}" if self.grid_shape else ""
        return f"DiscreteMeasure(m={self.size}, d={self.dim}, mass={self.mass:.6g}{grid})"


def grid_points(shape, spacing=1.0, origin=0.0):
    """Row-major lattice coordinates ``origin + index * spacing``."""
    shape = tuple(int(s) for s in shape)
    sp = np.broadcast_to(np.asarray(spacing, dtype=float), (len(shape),))
    org = np.broadcast_to(np.asarray(origin, dtype=float), (len(shape),))
    axes = [org[i] + sp[i] * np.arange(n) for i, n in enumerate(shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return pts, tuple(float(s) for s in sp)


@dataclass(frozen=True)
class MarginalPenalty:
    """Weighted entropy function ``t * phi`` penalising a marginal mismatch.

    ``kind`` is one of ``Equality`` (hard constraint), ``Free`` (no
    penalty), ``KL`` or ``TV``. The weight only matters for KL and TV.
    """

    kind: str
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise InputError(
                f"unknown penalty kind {self.kind!r}; expected one of {PENALTY_KINDS}")
        w = float(self.weight)
        if self.kind in ("KL", "TV") and not (w > 0 and math.isfinite(w)):
            raise InputError(f"{self.kind} penalty needs a positive weight, got {w}")
        object.__setattr__(self, "weight", w)

    @property
    def recession(self) -> float:
        """Recession constant of ``t * phi``."""
        return {"Equality": math.inf, "KL": math.inf,
                "Free": 0.0, "TV": self.weight}[self.kind]

    @property
    def requires_full_support(self) -> bool:
        return self.kind in ("Equality", "KL")

    def scaled(self, factor: float) -> "MarginalPenalty":
        """Penalty of ``factor * D_phi``; hard and free constraints are scale free."""
        if factor <= 0:
            raise InputError("penalty scale factor must be positive")
        if self.kind in ("KL", "TV"):
            return MarginalPenalty(self.kind, self.weight * factor)
        return self

    def aprox(self, epsilon: float, p):
        return aprox(self, epsilon, p)

    def conjugate(self, q):
        return conjugate_value(self, q)

    def __str__(self):
        if self.kind in ("KL", "TV"):
            return f"{self.weight:g}*{self.kind}"
        return self.kind

    @classmethod
    def parse(cls, spec) -> "MarginalPenalty":
        """Build from ``"KL"``, ``"0.05*KL"``, ``{"kind": "KL", "weight": 0.05}``."""
        if isinstance(spec, MarginalPenalty):
            return spec
        if isinstance(spec, dict):
            try:
                return cls(spec["kind"], spec.get("weight", 1.0))
            except KeyError:
                raise InputError(f"penalty spec {spec!r} lacks 'kind'") from None
        if isinstance(spec, str):
            text = spec.strip()
            if "*" in text:
                w, kind = text.split("*", 1)
                try:
                    return cls(kind.strip(), float(w))
                except ValueError:
                    raise InputError(f"cannot parse penalty {spec!r}") from None
            return cls(text)
        raise InputError(f"cannot parse penalty {spec!r}")


def Equality() -> MarginalPenalty:
    return MarginalPenalty("Equality")


def Free() -> MarginalPenalty:
    return MarginalPenalty("Free")


def KL(weight: float = 1.0) -> MarginalPenalty:
    return MarginalPenalty("KL", weight)


def TV(weight: float = 1.0) -> MarginalPenalty:
    return MarginalPenalty("TV", weight)


def _weights(m) -> np.ndarray:
    if isinstance(m, DiscreteMeasure):
        return m.weights
    return np.asarray(m, dtype=float)


def _pair(mu, nu):
    a, b = _weights(mu), _weights(nu)
    if a.shape != b.shape:
        raise InputError(f"support mismatch: {a.shape} vs {b.shape}")
    return a, b


def kl_divergence(mu, nu) -> float:
    """``sum mu log(mu/nu) + nu(X) - mu(X)``, infinite unless ``mu << nu``."""
    a, b = _pair(mu, nu)
    if np.any((a > 0) & (b == 0)):
        return math.inf
    pos = a > 0
    # 0 log 0 = 0 by branch
    val = np.sum(a[pos] * np.log(a[pos] / b[pos])) + np.sum(b) - np.sum(a)
    return float(max(val, 0.0))


def tv_divergence(mu, nu) -> float:
    a, b = _pair(mu, nu)
    return float(np.sum(np.abs(a - b)))


def divergence(penalty: MarginalPenalty, marginal, target, atol: float = 0.0,
               rtol: float = 1e-9) -> float:
    """``D_{t phi}(marginal, target)`` for the four supported kinds.

    Equality is judged with ``numpy.allclose(rtol, atol)`` because exact
    float equality never holds for computed marginals.
    """
    a, b = _pair(marginal, target)
    if penalty.kind == "Free":
        return 0.0
    if penalty.kind == "Equality":
        return 0.0 if np.allclose(a, b, rtol=rtol, atol=atol) else math.inf
    if penalty.kind == "KL":
        return penalty.weight * kl_divergence(a, b)
    return penalty.weight * tv_divergence(a, b)


def aprox(penalty: MarginalPenalty, epsilon: float, p):
    """Anisotropic proximity operator of the conjugate entropy.

    ``argmin_q  eps * exp((p - q)/eps) + phi^*(q)``, evaluated elementwise in
    closed form. Accepts scalars or arrays (``+-inf`` entries are allowed
    and map to the limits of the operator).
    """
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    kind = penalty.kind
    scalar = np.isscalar(p)
    p = np.asarray(p, dtype=float)
    if kind == "Equality":
        out = p.copy()
    elif kind == "Free":
        out = np.zeros_like(p)
    elif kind == "KL":
        t = penalty.weight
        out = (t / (t + epsilon)) * p
    else:
        t = penalty.weight
        out = np.clip(p, -t, t)
    return float(out) if scalar else out


CONJ_DOMAIN_SLACK = 1e-12


def conjugate_value(penalty: MarginalPenalty, q):
    """Fenchel conjugate ``(t phi)^*(q)``; ``+inf`` outside its domain."""
    scalar = np.isscalar(q)
    q = np.asarray(q, dtype=float)
    kind = penalty.kind
    t = penalty.weight
    with np.errstate(over="ignore"):
        if kind == "Equality":
            out = q.copy()
        elif kind == "Free":
            out = np.where(q <= 0, 0.0, np.inf)
        elif kind == "KL":
            out = t * np.expm1(q / t)
        else:
            # potentials clamped to the domain edge come back from the log
            # domain a few ulps outside it
            edge = t * (1 + CONJ_DOMAIN_SLACK)
            out = np.where(q <= edge, np.clip(q, -t, t), np.inf)
    return float(out) if scalar else out


def entropy(weights, reference_mass: bool = True) -> float:
    """Discrete entropy ``KL(xi, counting) = sum xi log xi - xi + 1``.

    With ``reference_mass=False`` the constant ``+1`` per support point is
    dropped, which is the normalisation under which barycentric value
    identities hold exactly.
    """
    w = _weights(weights).reshape(-1)
    pos = w > 0
    val = float(np.sum(w[pos] * np.log(w[pos])) - np.sum(w))
    if reference_mass:
        val += w.size
    return val


def check_full_support(penalty: MarginalPenalty, weights,
                       floor: float = DEFAULT_WEIGHT_FLOOR, node=None) -> None:
    if penalty.requires_full_support and np.any(_weights(weights) < floor):
        where = "" if node is None else f" at node {node}"
        raise InputError(
            f"{penalty.kind} penalty{where} needs strictly positive weights "
            f"(floor {floor:g})")


def measures_share_support(measures: Sequence[DiscreteMeasure]) -> bool:
    first = measures[0]
    return all(m.points.shape == first.points.shape
               and np.array_equal(m.points, first.points) for m in measures[1:])
