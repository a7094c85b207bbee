"""Primitive operator algebra: resolvents, proximal maps and matrix-free linear maps.

Everything the fixed-point engine consumes is built from two interfaces:
``ResolventOp`` (a maximally monotone operator exposed only through its
parametrized resolvent) and ``LinearMap`` (forward/adjoint application plus a
norm bound). All vectors are dense flat float64 arrays; images are flattened
row-major before they reach this layer.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ParameterError

__all__ = [
    "ResolventOp",
    "LinearMap",
    "BoxBounds",
    "resolvent_shifted_identity",
    "prox_l1",
    "prox_l1_shifted",
    "project_box",
    "project_dual_ball",
    "moreau_prox_conjugate",
    "estimate_operator_norm",
    "shifted_identity_op",
    "zero_op",
    "prox_op",
    "identity_map",
    "diagonal_map",
    "matrix_map",
]


def _vector(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        x = x.reshape(-1)
    if x.size == 0:
        raise DimensionMismatchError(f"{name} must have dimension >= 1")
    return x


def _check_step(step):
    if not np.isfinite(step) or step <= 0:
        raise ParameterError(f"resolvent parameter must be positive, got {step}")
    return float(step)


class ResolventOp:
    """A maximally monotone operator A on R^dim exposed through its resolvent.

    ``eval(point, step)`` returns J_{step*A}(point) = (Id + step*A)^{-1}(point),
    which is single-valued and defined everywhere for maximally monotone A.
    The parameter is passed per call because the splitting scheme needs the
    same operator at parameter 1 (primal blocks) and 1/gamma (dual blocks).
    """

    def __init__(self, eval_fn, dim):
        if dim < 1:
            raise DimensionMismatchError(f"operator dimension must be >= 1, got {dim}")
        self._eval = eval_fn
        self.dim = int(dim)

    def eval(self, point, step):
        point = _vector(point, "point")
        if point.shape != (self.dim,):
            raise DimensionMismatchError(
                f"resolvent expects dimension {self.dim}, got {point.shape[0]}"
            )
        step = _check_step(step)
        out = np.asarray(self._eval(point, step), dtype=float).reshape(-1)
        if out.shape != (self.dim,):
            raise DimensionMismatchError(
                f"resolvent returned dimension {out.shape[0]}, expected {self.dim}"
            )
        return out

    def __repr__(self):
        return f"ResolventOp(dim={self.dim})"


class LinearMap:
    """A bounded linear operator given by matrix-free forward/adjoint actions.

    ``norm_bound`` is an upper bound on the operator norm; it enters the
    step-size constraint of the solver, so a loose bound is safe and a bound
    below the true norm is not.
    """

    def __init__(self, forward, adjoint, dim_in, dim_out, norm_bound):
        if dim_in < 1 or dim_out < 1:
            raise DimensionMismatchError(
                f"linear map dimensions must be >= 1, got {dim_in} -> {dim_out}"
            )
        if not np.isfinite(norm_bound) or norm_bound < 0:
            raise ParameterError(f"norm bound must be finite and >= 0, got {norm_bound}")
        self._forward = forward
        self._adjoint = adjoint
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.norm_bound = float(norm_bound)

    def forward(self, x):
        x = _vector(x, "x")
        if x.shape != (self.dim_in,):
            raise DimensionMismatchError(
                f"forward expects dimension {self.dim_in}, got {x.shape[0]}"
            )
        out = np.asarray(self._forward(x), dtype=float).reshape(-1)
        if out.shape != (self.dim_out,):
            raise DimensionMismatchError(
                f"forward returned dimension {out.shape[0]}, expected {self.dim_out}"
            )
        return out

    def adjoint(self, y):
        y = _vector(y, "y")
        if y.shape != (self.dim_out,):
            raise DimensionMismatchError(
                f"adjoint expects dimension {self.dim_out}, got {y.shape[0]}"
            )
        out = np.asarray(self._adjoint(y), dtype=float).reshape(-1)
        if out.shape != (self.dim_in,):
            raise DimensionMismatchError(
                f"adjoint returned dimension {out.shape[0]}, expected {self.dim_in}"
            )
        return out

    def __repr__(self):
        return (
            f"LinearMap(dim_in={self.dim_in}, dim_out={self.dim_out}, "
            f"norm_bound={self.norm_bound:g})"
        )


@dataclass(frozen=True)
class BoxBounds:
    """Closed interval [lo, hi] applied componentwise."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise ParameterError(f"invalid box bounds [{self.lo}, {self.hi}]")


def resolvent_shifted_identity(c, point, step):
    """Resolvent of A(x) = x - c: the unique x with x + step*(x - c) = point."""
    c = _vector(c, "c")
    point = _vector(point, "point")
    if c.shape != point.shape:
        raise DimensionMismatchError(
            f"shift and point dimensions differ: {c.shape[0]} vs {point.shape[0]}"
        )
    step = _check_step(step)
    return (point + step * c) / (1.0 + step)


def prox_l1(x, threshold):
    """Soft thresholding: sign(x) * max(|x| - threshold, 0), componentwise."""
    if threshold < 0:
        raise ParameterError(f"threshold must be >= 0, got {threshold}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def prox_l1_shifted(x, anchor, threshold):
    """Prox of threshold*||. - anchor||_1: anchor + soft thresholding of x - anchor."""
    x = np.asarray(x, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    if x.shape != anchor.shape:
        raise DimensionMismatchError(
            f"x and anchor shapes differ: {x.shape} vs {anchor.shape}"
        )
    return anchor + prox_l1(x - anchor, threshold)


def project_box(x, bounds):
    """Componentwise clamp to [bounds.lo, bounds.hi]; idempotent."""
    x = np.asarray(x, dtype=float)
    return np.clip(x, bounds.lo, bounds.hi)


def project_dual_ball(p, q, radius):
    """Project pixel pairs (p_ij, q_ij) onto the ball of given radius.

    Each pair is rescaled by radius / max(radius, sqrt(p_ij^2 + q_ij^2)), so
    pairs already inside the ball are untouched and the map is idempotent.
    """
    if radius <= 0:
        raise ParameterError(f"radius must be > 0, got {radius}")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatchError(f"p and q shapes differ: {p.shape} vs {q.shape}")
    scale = radius / np.maximum(radius, np.sqrt(p * p + q * q))
    return p * scale, q * scale


def moreau_prox_conjugate(x, step, prox_g):
    """Prox of step*g^* evaluated via the Moreau decomposition.

    ``prox_g(point, t)`` must return prox_{t*g}(point). The returned value is
    x - step * prox_{g/step}(x / step), which equals prox_{step*g^*}(x). This
    is how the projections onto dual balls and boxes turn into prox maps of
    the corresponding support/norm functions, and vice versa.
    """
    step = _check_step(step)
    x = np.asarray(x, dtype=float)
    return x - step * np.asarray(prox_g(x / step, 1.0 / step), dtype=float)


def estimate_operator_norm(op, iterations=200, seed=0, rel_tol=1e-10):
    """Power-method estimate of ||L|| = sqrt(lambda_max(L^* L)).

    Deterministic for a fixed seed. Stops at the iteration cap or when the
    estimate changes by less than ``rel_tol`` relatively. The estimate
    approaches the true norm from below, so it never invalidates a step-size
    chosen from it only by the stated tolerance.
    """
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.dim_in)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        x = np.ones(op.dim_in)
        nx = np.linalg.norm(x)
    x = x / nx
    estimate = 0.0
    for _ in range(iterations):
        w = op.adjoint(op.forward(x))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new_estimate = np.sqrt(nw)
        if abs(new_estimate - estimate) <= rel_tol * max(new_estimate, 1.0):
            return float(new_estimate)
        estimate = new_estimate
        x = w / nw
    return float(estimate)


# ---------------------------------------------------------------------------
# canned constructors


def shifted_identity_op(c):
    """ResolventOp for the strongly monotone test operator A(x) = x - c."""
    c = _vector(c, "c")
    return ResolventOp(lambda p, s: (p + s * c) / (1.0 + s), c.shape[0])


def zero_op(dim):
    """ResolventOp for the zero operator; its resolvent is the identity."""
    return ResolventOp(lambda p, s: p, dim)


def prox_op(prox, dim):
    """ResolventOp for a subdifferential, given prox(point, t) = prox_{t*g}(point)."""
    return ResolventOp(lambda p, s: prox(p, s), dim)


def identity_map(dim):
    return LinearMap(lambda x: x, lambda y: y, dim, dim, 1.0)


def diagonal_map(entries):
    """LinearMap multiplying componentwise by ``entries``; exact norm bound."""
    d = _vector(entries, "entries")
    bound = float(np.max(np.abs(d))) if d.size else 0.0
    return LinearMap(lambda x: d * x, lambda y: d * y, d.shape[0], d.shape[0], bound)


def matrix_map(a):
    """LinearMap wrapping a dense matrix; norm bound is the exact 2-norm."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {a.shape}")
    bound = float(np.linalg.norm(a, 2))
    return LinearMap(lambda x: a @ x, lambda y: a.T @ y, a.shape[1], a.shape[0], bound)
