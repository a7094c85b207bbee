"""Problem assembly: the composite inclusion data, product-space stacking and
step-size validation.

A problem is the tuple (A_1..A_n, B_1..B_m, L_1..L_m) describing the inclusion

    find x such that 0 in sum_i A_i(x) + sum_j L_j^* B_j(L_j x),

where the A_i act on the primal space and each B_j acts on the range of its
linear map L_j.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, ParameterError
from .operators import LinearMap, ResolventOp, zero_op

__all__ = [
    "ProblemSpec",
    "SolverConfig",
    "ValidatedConfig",
    "build_product_reformulation",
    "validate_config",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable description of one composite inclusion problem.

    ``primal_ops`` are the A_i (all on the same primal space), ``composed_ops``
    the B_j and ``linear_maps`` the L_j, with matching list positions. An empty
    ``primal_ops`` list is accepted and silently completed with the zero
    operator (resolvent = identity), which leaves the solution set unchanged.
    """

    primal_ops: tuple
    composed_ops: tuple = ()
    linear_maps: tuple = ()

    def __post_init__(self):
        primal = tuple(self.primal_ops)
        composed = tuple(self.composed_ops)
        maps = tuple(self.linear_maps)
        if len(composed) != len(maps):
            raise DimensionMismatchError(
                f"got {len(composed)} composed operators but {len(maps)} linear maps"
            )
        if not primal:
            if not maps:
                raise DimensionMismatchError(
                    "problem needs at least one operator (primal or composed)"
                )
            primal = (zero_op(maps[0].dim_in),)
        dim = primal[0].dim
        for i, op in enumerate(primal):
            if op.dim != dim:
                raise DimensionMismatchError(
                    f"primal operator {i} has dimension {op.dim}, expected {dim}"
                )
        for j, (op, lin) in enumerate(zip(composed, maps)):
            if lin.dim_in != dim:
                raise DimensionMismatchError(
                    f"linear map {j} has dim_in {lin.dim_in}, expected {dim}"
                )
            if op.dim != lin.dim_out:
                raise DimensionMismatchError(
                    f"composed operator {j} has dimension {op.dim}, "
                    f"but its linear map has dim_out {lin.dim_out}"
                )
        object.__setattr__(self, "primal_ops", primal)
        object.__setattr__(self, "composed_ops", composed)
        object.__setattr__(self, "linear_maps", maps)

    @property
    def n(self):
        return len(self.primal_ops)

    @property
    def m(self):
        return len(self.composed_ops)

    @property
    def dim_primal(self):
        return self.primal_ops[0].dim

    @property
    def dims_dual(self):
        return tuple(op.dim for op in self.composed_ops)

    def linear_norm_bound_sq(self):
        """Sum of squared norm bounds of the L_j (0 when m = 0)."""
        return float(sum(lin.norm_bound**2 for lin in self.linear_maps))


@dataclass(frozen=True)
class SolverConfig:
    """Iteration parameters: relaxation ``lam`` in (0,1) and step ``gamma``.

    ``gamma`` must satisfy 0 < gamma <= 1 / sum_j ||L_j||^2 (norm bounds are
    used for the sum). The boundary value is admissible. When m = 0 the dual
    block is empty and gamma is only a norm weight; it is then fixed to 1.
    """

    lam: float
    gamma: float
    max_iterations: int = 1000
    residual_tolerance: float = 0.0


@dataclass(frozen=True)
class ValidatedConfig(SolverConfig):
    """A SolverConfig that passed validation, annotated with the bound used."""

    gamma_bound: float = np.inf


# relative slack for accepting gamma at the boundary of its interval, so that
# a bound computed in floating point (e.g. 1/(1 + 8*mu^2)) accepts the exact
# boundary step the caller intended
_BOUNDARY_SLACK = 1e-12


def validate_config(spec, config):
    """Check the (lam, gamma) inequalities against the problem's norm bounds.

    Returns the config annotated with the gamma bound actually applied.
    Raises ConfigurationError naming the violated inequality.
    """
    lam = config.lam
    if not np.isfinite(lam) or not 0.0 < lam < 1.0:
        raise ConfigurationError(
            f"relaxation must satisfy 0 < lam < 1, got lam = {lam}"
        )
    if config.max_iterations < 1:
        raise ConfigurationError(
            f"max_iterations must be >= 1, got {config.max_iterations}"
        )
    if config.residual_tolerance < 0:
        raise ConfigurationError(
            f"residual_tolerance must be >= 0, got {config.residual_tolerance}"
        )
    gamma = config.gamma
    if spec.m == 0:
        if gamma != 1.0:
            raise ConfigurationError(
                "with no composed operators gamma is only a norm weight and "
                f"must be 1, got gamma = {gamma}"
            )
        bound = np.inf
    else:
        total = spec.linear_norm_bound_sq()
        bound = np.inf if total == 0.0 else 1.0 / total
        if not np.isfinite(gamma) or gamma <= 0 or gamma > bound * (1.0 + _BOUNDARY_SLACK):
            raise ConfigurationError(
                "step size must satisfy 0 < gamma <= 1/sum_j ||L_j||^2 = "
                f"{bound:.12g}, got gamma = {gamma}"
            )
    if isinstance(config, ValidatedConfig):
        return replace(config, gamma_bound=bound)
    return ValidatedConfig(
        lam=float(lam),
        gamma=float(gamma),
        max_iterations=int(config.max_iterations),
        residual_tolerance=float(config.residual_tolerance),
        gamma_bound=bound,
    )


def build_product_reformulation(spec):
    """Stack the m composed blocks into one operator/map pair.

    Returns the cartesian-product operator B (its resolvent applies each
    block's resolvent to its slice) and the stacked map
    L x = (L_1 x, ..., L_m x) with adjoint (v_1, ..., v_m) -> sum_j L_j^* v_j.
    The stacked norm bound composes in squares: bound^2 = sum_j bound_j^2.
    """
    if spec.m == 0:
        raise ParameterError("cannot stack an empty list of composed operators")
    if spec.m == 1:
        return spec.composed_ops[0], spec.linear_maps[0]

    dims = spec.dims_dual
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    total = int(offsets[-1])
    ops = spec.composed_ops
    maps = spec.linear_maps

    def stacked_resolvent(point, step):
        return np.concatenate(
            [
                ops[j].eval(point[offsets[j] : offsets[j + 1]], step)
                for j in range(len(ops))
            ]
        )

    def stacked_forward(x):
        return np.concatenate([lin.forward(x) for lin in maps])

    def stacked_adjoint(v):
        out = np.zeros(spec.dim_primal)
        for j, lin in enumerate(maps):
            out += lin.adjoint(v[offsets[j] : offsets[j + 1]])
        return out

    bound = float(np.sqrt(spec.linear_norm_bound_sq()))
    b_stacked = ResolventOp(stacked_resolvent, total)
    l_stacked = LinearMap(stacked_forward, stacked_adjoint, spec.dim_primal, total, bound)
    return b_stacked, l_stacked
