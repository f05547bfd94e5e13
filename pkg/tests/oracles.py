"""Independent reference computations used by the tests.

Nothing here calls into the package's solver code; the point is to
recompute the same quantities by a different route.
"""

import math

import numpy as np


def conj_right_derivative(kind, t, q):
    """Right derivative of the conjugate entropy ``(t phi)^*`` at ``q``."""
    q = np.asarray(q, dtype=float)
    if kind == "KL":
        with np.errstate(over="ignore"):
            return np.exp(q / t)
    if kind == "TV":
        out = np.where(q < -t, 0.0, 1.0)
        return np.where(q >= t, np.inf, out)
    if kind == "Equality":
        return np.ones_like(q)
    if kind == "Free":
        return np.where(q >= 0, np.inf, 0.0)
    raise ValueError(kind)


def conj_value(kind, t, q):
    q = np.asarray(q, dtype=float)
    if kind == "KL":
        with np.errstate(over="ignore"):
            return t * (np.exp(q / t) - 1)
    if kind == "TV":
        return np.where(q <= t, np.maximum(-t, q), np.inf)
    if kind == "Equality":
        return q
    return np.where(q <= 0, 0.0, np.inf)


def aprox_bisection(kind, t, eps, p, iters=200):
    """``argmin_q eps exp((p-q)/eps) + phi^*(q)`` by bisection on the subgradient.

    The objective is strictly convex; its minimiser is the smallest ``q``
    where the right derivative ``-exp((p-q)/eps) + phi^*'_+(q)`` is
    non-negative. Vectorised over ``p`` (and ``t``, ``eps``).
    """
    p = np.asarray(p, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), p.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), p.shape)
    lo = np.minimum(p, 0.0) - 2 * np.abs(p) - 10.0 - t
    hi = np.maximum(p, 0.0) + 2 * np.abs(p) + 10.0 + t
    if kind == "TV":
        hi = t.copy()
    if kind == "Free":
        hi = np.zeros_like(p)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        with np.errstate(over="ignore"):
            h = -np.exp((p - mid) / eps) + conj_right_derivative(kind, t, mid)
        up = h >= 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return hi


def aprox_golden(kind, t, eps, p, iters=200):
    """Golden-section search on the objective itself (looser, ~sqrt(machine eps))."""
    gr = (math.sqrt(5) - 1) / 2
    a = min(p, 0.0) - 2 * abs(p) - 10.0 - t
    b = t if kind == "TV" else max(p, 0.0) + 2 * abs(p) + 10.0 + t

    def obj(q):
        with np.errstate(over="ignore"):
            return eps * math.exp(min((p - q) / eps, 700.0)) + float(conj_value(kind, t, q))

    c, d = b - gr * (b - a), a + gr * (b - a)
    fc, fd = obj(c), obj(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = obj(d)
    return 0.5 * (a + b)


def kernel_tensor(problem):
    """Product of all edge kernels broadcast over the product support (einsum-free loop)."""
    n = problem.n
    sizes = problem.sizes
    out = np.ones(sizes)
    for (j, k), K in problem.kernels.items():
        mat = np.exp(-K.weight * K.cost.dense() / K.epsilon)
        mat = np.maximum(mat, np.finfo(float).tiny)
        shape = [1] * n
        shape[j], shape[k] = sizes[j], sizes[k]
        out = out * mat.reshape(shape)
    return out


def scaled_tensor(problem, u):
    """``K * (u_1 x ... x u_N)`` built from scratch."""
    out = kernel_tensor(problem)
    for i, ui in enumerate(u):
        shape = [1] * problem.n
        shape[i] = -1
        out = out * np.asarray(ui).reshape(shape)
    return out


def brute_marginal(tensor, j):
    other = tuple(i for i in range(tensor.ndim) if i != j)
    return tensor.sum(axis=other)


def brute_pair(tensor, j, k):
    other = tuple(i for i in range(tensor.ndim) if i not in (j, k))
    m = tensor.sum(axis=other)
    return m if j < k else m.T


def cost_tensor(problem):
    n = problem.n
    out = np.zeros(problem.sizes)
    for (j, k), K in problem.kernels.items():
        shape = [1] * n
        shape[j], shape[k] = problem.sizes[j], problem.sizes[k]
        out = out + (K.weight * K.cost.dense()).reshape(shape)
    return out


def primal_value(problem, plan, entropy_constant=True):
    """``<C, pi> + eps sum(pi log pi - pi [+ 1]) + sum_i D_i`` with explicit divergences."""
    C = cost_tensor(problem)
    pos = plan > 0
    ent = float(np.sum(plan[pos] * np.log(plan[pos])) - plan.sum())
    if entropy_constant:
        ent += plan.size
    val = float(np.sum(C * plan)) + problem.epsilon * ent
    for i, pen in enumerate(problem.penalties):
        marg = brute_marginal(plan, i)
        mu = problem.measures[i].weights
        if pen.kind == "KL":
            val += pen.weight * float(np.sum(marg * np.log(marg / mu)) - marg.sum() + mu.sum())
        elif pen.kind == "TV":
            val += pen.weight * float(np.sum(np.abs(marg - mu)))
        elif pen.kind == "Equality":
            if not np.allclose(marg, mu, rtol=1e-8, atol=0):
                return math.inf
    return val


def node_marginal_dense_sinkhorn(problem, f):
    u = [np.exp(fi / problem.epsilon) for fi in f]
    t = scaled_tensor(problem, u)
    return [brute_marginal(t, j) for j in range(problem.n)]
