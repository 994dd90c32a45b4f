"""Reverse-mode differentiation on an append-only tape of array-valued nodes.

Every primitive takes ``Var`` objects or plain arrays. When no argument is a
``Var`` the primitive simply returns the numpy result, so model code written
against this module runs unchanged with or without a tape (the MCMC oracle
uses the tape-free path).

Forward values are checked after every primitive: a NaN or infinity raises
:class:`NonFiniteError` naming the primitive and node, and inputs outside a
primitive's domain raise :class:`DomainError`.

>>> tape = Tape()
>>> x, y = tape.var(2.0), tape.var(3.0)
>>> gx, gy = backward(x * y, [x, y])
>>> float(gx), float(gy)
(3.0, 2.0)
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg as sla
from scipy import special

from .errors import DomainError, InvalidInputError, NonFiniteError

__all__ = [
    "Tape",
    "Var",
    "backward",
    "value",
    "gradient_check",
    "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt", "square",
    "sigmoid", "tanh", "softplus", "sum", "mean", "dot", "matvec", "matmul",
    "cumulative_sum", "linear_interpolate", "normal_cdf", "normal_quantile",
    "cholesky", "logdet_from_cholesky", "triangular_solve", "take_along",
    "concatenate", "stack", "clip", "reshape", "transpose", "getitem", "scatter",
]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class Tape:
    """Append-only record of primitive applications.

    ``nodes[i]`` is ``(opcode, parents, vjp)``; leaves have ``vjp = None``.
    Parents always precede children because nodes are only ever appended.
    """

    def __init__(self):
        self.nodes = []

    def var(self, x) -> "Var":
        """Register a new leaf holding ``x``."""
        v = np.array(x, dtype=float)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("leaf", len(self.nodes))
        self.nodes.append(("leaf", (), None))
        return Var(self, len(self.nodes) - 1, v)

    def __len__(self):
        return len(self.nodes)


class Var:
    __slots__ = ("tape", "index", "value")
    __array_priority__ = 100.0

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(node={self.index}, value={self.value!r})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if k == 2:
            return square(self)
        raise InvalidInputError("only integer power 2 is supported; use exp/log")

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum(self, axis)


def value(x):
    """Underlying array of a ``Var`` (or ``x`` itself)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise InvalidInputError("operands live on different tapes")
    return tape


def _record(op, out, parents, vjp, check=True):
    if check and not np.all(np.isfinite(out)):
        tape = _tape_of(parents)
        raise NonFiniteError(op, len(tape.nodes) if tape is not None else None)
    tape = _tape_of(parents)
    if tape is None:
        return out
    tape.nodes.append((op, parents, vjp))
    return Var(tape, len(tape.nodes) - 1, out)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def backward(seed: Var, wrt=None):
    """Gradient of the scalar ``seed`` with respect to ``wrt``.

    ``wrt`` is a sequence of leaf ``Var`` objects; when
    omitted, gradients of every leaf on the tape are returned in creation
    order. Entries unreachable from ``seed`` get zeros.
    """
    if not isinstance(seed, Var):
        raise InvalidInputError("seed must be a Var recorded on a tape")
    tape = seed.tape
    if not 0 <= seed.index < len(tape.nodes):
        raise InvalidInputError("seed is not on its tape")
    if seed.value.size != 1:
        raise InvalidInputError(f"seed must be scalar, got shape {seed.shape}")
    leaf_grads = {}
    grads = {seed.index: np.ones_like(seed.value)}
    for i in range(seed.index, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        op, parents, vjp = tape.nodes[i]
        if vjp is None:
            leaf_grads[i] = g
            continue
        pgrads = vjp(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not isinstance(p, Var):
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=float), p.shape)
            j = p.index
            if j in grads:
                grads[j] = grads[j] + pg
            else:
                grads[j] = pg
    if wrt is None:
        leaves = [k for k, (op, _, _) in enumerate(tape.nodes[: seed.index + 1]) if op == "leaf"]
        return [leaf_grads.get(k, 0.0) for k in leaves]
    out = []
    for v in wrt:
        g = leaf_grads.get(v.index)
        out.append(np.zeros_like(v.value) if g is None else g)
    return out


# -- elementwise ------------------------------------------------------------

def add(a, b):
    return _record("add", value(a) + value(b), (a, b), lambda g: (g, g))


def sub(a, b):
    return _record("sub", value(a) - value(b), (a, b), lambda g: (g, -g))


def mul(a, b):
    av, bv = value(a), value(b)
    return _record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    av, bv = value(a), value(b)
    if np.any(bv == 0):
        raise DomainError("div", "division by zero", _next_index(a, b))
    out = av / bv
    return _record("div", out, (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a):
    return _record("neg", -value(a), (a,), lambda g: (-g,))


def square(a):
    av = value(a)
    return _record("square", av * av, (a,), lambda g: (2.0 * g * av,))


def exp(a):
    out = np.exp(value(a))
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a):
    av = value(a)
    if np.any(av <= 0):
        raise DomainError("log", "argument must be positive", _next_index(a))
    return _record("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    av = value(a)
    if np.any(av < 0):
        raise DomainError("sqrt", "argument must be nonnegative", _next_index(a))
    out = np.sqrt(av)
    if np.any(out == 0) and isinstance(a, Var):
        raise DomainError("sqrt", "derivative undefined at zero", _next_index(a))
    return _record("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def sigmoid(a):
    out = special.expit(value(a))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(value(a))
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    """``log(1 + exp(a))`` without overflow."""
    av = value(a)
    out = np.logaddexp(0.0, av)
    return _record("softplus", out, (a,), lambda g: (g * special.expit(av),))


def normal_cdf(a):
    av = value(a)
    out = special.ndtr(av)
    return _record(
        "normal_cdf", out, (a,), lambda g: (g * np.exp(-0.5 * av * av - _LOG_SQRT_2PI),)
    )


def normal_quantile(u):
    """Inverse standard-normal CDF; derivative is ``1 / phi(z)``."""
    uv = value(u)
    if np.any((uv <= 0) | (uv >= 1)):
        raise DomainError("normal_quantile", "argument must lie in (0, 1)", _next_index(u))
    z = special.ndtri(uv)
    return _record(
        "normal_quantile", z, (u,), lambda g: (g * np.exp(0.5 * z * z + _LOG_SQRT_2PI),)
    )


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    av = value(a)
    inside = (av >= lo) & (av <= hi)
    return _record("clip", np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# -- reductions and linear algebra ------------------------------------------

def sum(a, axis=None):
    av = value(a)
    out = np.sum(av, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape),)

    return _record("sum", out, (a,), vjp)


def mean(a, axis=None):
    av = value(a)
    n = av.size if axis is None else av.shape[axis]
    return div(sum(a, axis), float(n))


def cumulative_sum(a, axis=-1):
    av = value(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis), axis),)

    return _record("cumulative_sum", np.cumsum(av, axis=axis), (a,), vjp)


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv

    def vjp(g):
        ga = gb = None
        if av.ndim == 1 and bv.ndim == 1:
            ga, gb = g * bv, g * av
        elif av.ndim == 1:
            ga = bv @ g
            gb = np.multiply.outer(av, g) if bv.ndim == 2 else None
        elif bv.ndim == 1:
            ga = np.multiply.outer(g, bv)
            gb = np.tensordot(av, g, axes=(list(range(av.ndim - 1)), list(range(g.ndim))))
        else:
            ga = g @ np.swapaxes(bv, -1, -2)
            gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return _record("matmul", out, (a, b), vjp)


def dot(a, b):
    """Inner product of two vectors."""
    if value(a).ndim != 1 or value(b).ndim != 1:
        raise InvalidInputError("dot expects two vectors")
    return matmul(a, b)


def matvec(A, x):
    if value(A).ndim != 2 or value(x).ndim != 1:
        raise InvalidInputError("matvec expects a matrix and a vector")
    return matmul(A, x)


def cholesky(A):
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    Av = value(A)
    try:
        L = np.linalg.cholesky(Av)
    except np.linalg.LinAlgError:
        raise DomainError("cholesky", "matrix is not positive definite", _next_index(A)) from None

    def vjp(Lbar):
        P = np.tril(L.T @ Lbar)
        P[np.diag_indices_from(P)] *= 0.5
        # S = L^-T P L^-1
        Y = sla.solve_triangular(L, P, lower=True, trans="T")
        S = sla.solve_triangular(L, Y.T, lower=True, trans="T").T
        return (0.5 * (S + S.T),)

    return _record("cholesky", L, (A,), vjp)


def logdet_from_cholesky(L):
    """``log det(L L^T) = 2 sum(log diag L)``."""
    d = np.diagonal(value(L))
    if np.any(d <= 0):
        raise DomainError("logdet_from_cholesky", "diagonal must be positive", _next_index(L))
    n = d.size

    def vjp(g):
        G = np.zeros((n, n))
        G[np.diag_indices(n)] = 2.0 * g / d
        return (G,)

    return _record("logdet_from_cholesky", 2.0 * np.sum(np.log(d)), (L,), vjp)


def triangular_solve(L, b, lower=True):
    """Solve ``L x = b`` for triangular ``L``; ``b`` may be a vector or matrix."""
    Lv, bv = value(L), value(b)
    if np.any(np.diagonal(Lv) == 0):
        raise DomainError("triangular_solve", "singular triangular matrix", _next_index(L, b))
    x = sla.solve_triangular(Lv, bv, lower=lower)

    def vjp(g):
        bbar = sla.solve_triangular(Lv, g, lower=lower, trans="T")
        Lbar = -np.outer(bbar, x) if x.ndim == 1 else -bbar @ x.T
        Lbar = np.tril(Lbar) if lower else np.triu(Lbar)
        return Lbar, bbar

    return _record("triangular_solve", x, (L, b), vjp)


# -- indexing and shape -----------------------------------------------------

def getitem(a, idx):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _record("getitem", av[idx], (a,), vjp, check=False)


def reshape(a, shape):
    av = value(a)
    return _record("reshape", av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),), check=False)


def transpose(a):
    return _record("transpose", value(a).T, (a,), lambda g: (g.T,), check=False)


def concatenate(parts, axis=0):
    vals = [value(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    out = np.concatenate(vals, axis=axis)
    return _record("concatenate", out, tuple(parts),
                   lambda g: tuple(np.split(g, sizes, axis=axis)), check=False)


def stack(parts, axis=0):
    out = np.stack([value(p) for p in parts], axis=axis)
    n = len(parts)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _record("stack", out, tuple(parts), vjp, check=False)


def take_along(a, idx, axis=-1):
    """``np.take_along_axis`` with scatter-add backward."""
    av = value(a)
    idx = np.asarray(idx)
    shape = np.broadcast_shapes(av.shape[:-1], idx.shape[:-1]) + idx.shape[-1:]
    if axis not in (-1, av.ndim - 1):
        raise InvalidInputError("take_along only supports the last axis")
    src = np.broadcast_to(av, shape[:-1] + av.shape[-1:])
    ix = np.broadcast_to(idx, shape)
    out = np.take_along_axis(src, ix, axis=-1)

    def vjp(g):
        full = np.zeros(shape[:-1] + av.shape[-1:])
        lead = np.indices(shape[:-1] + (shape[-1],), sparse=True)[:-1]
        np.add.at(full, tuple(lead) + (ix,), g)
        return (_unbroadcast(full, av.shape),)

    return _record("take_along", out, (a,), vjp, check=False)


def scatter(v, idx, shape):
    """Array of zeros with shape ``shape`` and ``out[idx] = v``."""
    vv = value(v)
    out = np.zeros(shape)
    out[idx] = vv
    return _record("scatter", out, (v,), lambda g: (g[idx],), check=False)


def linear_interpolate(x, xp, fp):
    """Piecewise-linear interpolation, differentiable in ``x``, ``xp`` and ``fp``.

    ``xp`` and ``fp`` have shape ``(*B, K)`` with ``xp`` nondecreasing along the
    last axis; ``x`` has shape ``(*N, *B)``. For each point the segment is the
    first knot ``j`` with ``xp[j] >= x`` and its predecessor, so zero-width
    segments are never used. Values outside ``[xp[0], xp[-1]]`` clamp to the
    end values of ``fp``.
    """
    xv, xpv, fpv = value(x), value(xp), value(fp)
    K = xpv.shape[-1]
    batch = xpv.shape[:-1]
    nb = len(batch)
    if xv.shape[xv.ndim - nb:] != batch:
        raise InvalidInputError(f"x shape {xv.shape} does not end with batch shape {batch}")
    lead = xv.shape[: xv.ndim - nb]
    # j = first index with xp[j] >= x, per batch member
    j = np.sum(xpv < xv[..., None], axis=-1)
    below = j == 0
    above = j == K
    jj = np.clip(j, 1, K - 1)
    xpb = np.broadcast_to(xpv, lead + xpv.shape)
    fpb = np.broadcast_to(fpv, lead + fpv.shape)
    a = np.take_along_axis(xpb, (jj - 1)[..., None], -1)[..., 0]
    b = np.take_along_axis(xpb, jj[..., None], -1)[..., 0]
    f0 = np.take_along_axis(fpb, (jj - 1)[..., None], -1)[..., 0]
    f1 = np.take_along_axis(fpb, jj[..., None], -1)[..., 0]
    width = np.where(below | above, 1.0, b - a)
    t = (xv - a) / width
    slope = (f1 - f0) / width
    out = np.where(below, fpb[..., 0], np.where(above, fpb[..., -1], f0 + t * (f1 - f0)))
    interior = ~(below | above)

    ix = np.indices(jj.shape, sparse=True)

    def scatter(lo_idx, w0, hi_idx, w1, base):
        full = np.zeros(lead + base.shape)
        np.add.at(full, tuple(ix) + (lo_idx,), w0)
        np.add.at(full, tuple(ix) + (hi_idx,), w1)
        return _unbroadcast(full, base.shape)

    def vjp(g):
        gi = g * interior
        gx = gi * slope
        gxp = scatter(jj - 1, gi * slope * (t - 1.0), jj, -gi * slope * t, xpv)
        # clamped points put all weight on one end knot
        gfp = scatter(
            np.where(below, 0, jj - 1), np.where(below, g, gi * (1.0 - t)),
            np.where(above, K - 1, jj), np.where(above, g, gi * t),
            fpv,
        )
        return gx, gxp, gfp

    return _record("linear_interpolate", out, (x, xp, fp), vjp)


def _next_index(*args):
    tape = _tape_of(args)
    return len(tape.nodes) if tape is not None else None


# -- validation harness -----------------------------------------------------

def gradient_check(f, x, h=1e-5, grad=None):
    """Max relative error of the reverse-mode gradient against central differences.

    ``f`` maps a ``Var`` vector to a scalar ``Var`` (it must also accept a
    plain array for the finite-difference evaluations). Returns
    ``max_i |fd_i - g_i| / (|g_i| + 1e-8)``.
    """
    x = np.asarray(x, dtype=float)
    if grad is None:
        tape = Tape()
        xv = tape.var(x)
        (grad,) = backward(f(xv), [xv])
    grad = np.asarray(grad, dtype=float).ravel()
    fd = np.empty(x.size)
    flat = x.ravel()
    for i in range(x.size):
        e = np.zeros_like(flat)
        e[i] = h
        fp = float(value(f((flat + e).reshape(x.shape))))
        fm = float(value(f((flat - e).reshape(x.shape))))
        fd[i] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(fd - grad) / (np.abs(grad) + 1e-8)))
