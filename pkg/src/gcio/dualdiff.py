"""Forward-mode automatic differentiation on numpy arrays.

A :class:`Dual` carries a value array of shape ``S`` together with a
Jacobian array of shape ``S + (m,)`` holding sensitivities with respect
to ``m`` seed directions.  All arithmetic is vectorized, so a whole batch
of evaluation points (e.g. every shooting interval of a trajectory) can
be differentiated in one pass.

The supported primitive set is deliberately small: +, -, *, /, power by a
constant, sin, cos, tan, exp, log, sqrt, minimum/maximum/clip (left
branch at ties) and the matrix products needed by forward kinematics.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "DualEvalError",
    "seed",
    "jacobian",
    "value",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "minimum",
    "maximum",
    "clip",
    "stack",
    "matmul",
    "matvec",
]


class DualEvalError(ArithmeticError):
    """Raised when a primitive is evaluated outside its smooth domain."""


class Dual:
    """Value array plus Jacobian w.r.t. ``m`` seed directions.

    ``val`` has shape ``S``; ``jac`` has shape ``S + (m,)`` (one trailing
    axis for the seeds).  Instances are immutable by convention.
    """

    __slots__ = ("val", "jac")

    # Keep numpy from consuming `ndarray <op> Dual`; Python then falls
    # back to the reflected operators below.
    __array_ufunc__ = None

    def __init__(self, val: np.ndarray, jac: np.ndarray):
        val = np.asarray(val, dtype=np.float64)
        jac = np.asarray(jac, dtype=np.float64)
        if jac.shape[:-1] != val.shape:
            raise ValueError(
                f"jacobian shape {jac.shape} does not extend value shape {val.shape}"
            )
        self.val = val
        self.jac = jac

    @property
    def nseeds(self) -> int:
        return self.jac.shape[-1]

    def __repr__(self):
        return f"Dual(val={self.val!r}, nseeds={self.nseeds})"

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Dual(self.val[key], self.jac[key + (slice(None),)])

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.jac + other.jac)
        return Dual(self.val + other, _bcast_jac(self.jac, np.shape(self.val + other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.jac - other.jac)
        return Dual(self.val - other, _bcast_jac(self.jac, np.shape(self.val - other)))

    def __rsub__(self, other):
        return Dual(other - self.val, _bcast_jac(-self.jac, np.shape(other - self.val)))

    def __neg__(self):
        return Dual(-self.val, -self.jac)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.jac * other.val[..., None] + other.jac * self.val[..., None],
            )
        other = np.asarray(other)
        val = self.val * other
        return Dual(val, _bcast_jac(self.jac * other[..., None], val.shape))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if np.any(other.val == 0.0):
                raise DualEvalError("division by zero")
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.jac - other.jac * val[..., None]) * inv[..., None])
        other = np.asarray(other, dtype=np.float64)
        if np.any(other == 0.0):
            raise DualEvalError("division by zero")
        val = self.val / other
        return Dual(val, _bcast_jac(self.jac / other[..., None], val.shape))

    def __rtruediv__(self, other):
        if np.any(self.val == 0.0):
            raise DualEvalError("division by zero")
        val = other / self.val
        return Dual(val, _bcast_jac(-self.jac * (val / self.val)[..., None], np.shape(val)))

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(log(self) * p)
        return Dual(self.val**p, p * self.val[..., None] ** (p - 1) * self.jac)


def _bcast_jac(jac: np.ndarray, val_shape: tuple) -> np.ndarray:
    """Broadcast a Jacobian to match a broadcast value shape."""
    if jac.shape[:-1] == val_shape:
        return jac
    return np.broadcast_to(jac, val_shape + jac.shape[-1:]).copy()


def value(x):
    """Value part of ``x`` (pass-through for plain arrays)."""
    return x.val if isinstance(x, Dual) else x


def seed(x: np.ndarray) -> Dual:
    """Wrap a 1-D point with the identity seed matrix."""
    x = np.asarray(x, dtype=np.float64).ravel()
    return Dual(x.copy(), np.eye(x.size))


def jacobian(f, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian of ``f`` at ``x`` by seeding unit directions.

    ``f`` must be composed of the supported primitives; the result has
    one row per output component and one column per entry of ``x``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    out = f(seed(x))
    if not isinstance(out, Dual):  # constant function
        return np.zeros((np.size(out), x.size))
    jac = out.jac
    if out.val.ndim == 0:
        jac = jac.reshape(1, x.size)
    return jac


# -- elementwise primitives -------------------------------------------


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val)[..., None] * x.jac)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val)[..., None] * x.jac)
    return np.cos(x)


def tan(x):
    if isinstance(x, Dual):
        c = np.cos(x.val)
        return Dual(np.tan(x.val), x.jac / (c * c)[..., None])
    return np.tan(x)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, e[..., None] * x.jac)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        if np.any(x.val <= 0.0):
            raise DualEvalError("log of non-positive value")
        return Dual(np.log(x.val), x.jac / x.val[..., None])
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        if np.any(x.val < 0.0):
            raise DualEvalError("sqrt of negative value")
        r = np.sqrt(x.val)
        return Dual(r, x.jac / (2.0 * r)[..., None])
    return np.sqrt(x)


def _as_dual(x, like: Dual) -> Dual:
    """Promote a constant to a Dual with zero sensitivities."""
    if isinstance(x, Dual):
        return x
    val = np.broadcast_to(np.asarray(x, dtype=np.float64), like.val.shape)
    return Dual(val.copy(), np.zeros(val.shape + (like.nseeds,)))


def _pick(cond: np.ndarray, a: Dual, b: Dual) -> Dual:
    return Dual(
        np.where(cond, a.val, b.val),
        np.where(cond[..., None], a.jac, b.jac),
    )


def minimum(a, b):
    """Elementwise minimum; ties take the left argument's derivative."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.minimum(a, b)
    ref = a if isinstance(a, Dual) else b
    a, b = _as_dual(a, ref), _as_dual(b, ref)
    return _pick(a.val <= b.val, a, b)


def maximum(a, b):
    """Elementwise maximum; ties take the left argument's derivative."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.maximum(a, b)
    ref = a if isinstance(a, Dual) else b
    a, b = _as_dual(a, ref), _as_dual(b, ref)
    return _pick(a.val >= b.val, a, b)


def clip(x, lo, hi):
    """Clamp ``x`` to ``[lo, hi]``; at the boundary the inner branch wins."""
    if not isinstance(x, Dual):
        return np.clip(x, lo, hi)
    return minimum(maximum(x, lo), hi)


# -- structural primitives --------------------------------------------


def stack(parts, axis: int = -1):
    """Stack scalars/arrays/Duals along a new value axis."""
    duals = [p for p in parts if isinstance(p, Dual)]
    if not duals:
        return np.stack(parts, axis=axis)
    ref = duals[0]
    parts = [_as_dual(p, ref) for p in parts]
    ndim_out = ref.val.ndim + 1
    ax = axis % ndim_out
    return Dual(
        np.stack([p.val for p in parts], axis=ax),
        np.stack([p.jac for p in parts], axis=ax),
    )


def matmul(a, b):
    """Matrix product on the trailing two value axes."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return a @ b
    if isinstance(a, Dual) and isinstance(b, Dual):
        val = a.val @ b.val
        jac = np.einsum("...ikm,...kj->...ijm", a.jac, b.val) + np.einsum(
            "...ik,...kjm->...ijm", a.val, b.jac
        )
        return Dual(val, jac)
    if isinstance(a, Dual):
        return Dual(a.val @ b, np.einsum("...ikm,...kj->...ijm", a.jac, b))
    return Dual(a @ b.val, np.einsum("...ik,...kjm->...ijm", a, b.jac))


def matvec(a, v):
    """Matrix-vector product: ``a`` is (..., n, k), ``v`` is (..., k)."""
    if not isinstance(a, Dual) and not isinstance(v, Dual):
        return np.einsum("...ik,...k->...i", a, v)
    if isinstance(a, Dual) and isinstance(v, Dual):
        val = np.einsum("...ik,...k->...i", a.val, v.val)
        jac = np.einsum("...ikm,...k->...im", a.jac, v.val) + np.einsum(
            "...ik,...km->...im", a.val, v.jac
        )
        return Dual(val, jac)
    if isinstance(a, Dual):
        return Dual(
            np.einsum("...ik,...k->...i", a.val, v),
            np.einsum("...ikm,...k->...im", a.jac, v),
        )
    return Dual(
        np.einsum("...ik,...k->...i", a, v.val),
        np.einsum("...ik,...km->...im", a, v.jac),
    )
