"""Image deblurring benchmark pieces.

The restoration problem solved here is

    min over x of  mu ||A x - b/mu||_1 + alpha1 mu ||W x||_1
                   + alpha2 sum_ij sqrt(p_ij^2 + q_ij^2) + box indicator,

where A is a normalized Gaussian blur with reflexive boundaries, W the
orthonormal 2-D Haar transform, (p, q) = mu * forward differences of x, and
the box is [0, 1/mu]^n. The variable x is the image rescaled by 1/mu; the
rescaling knob mu trades the norm of the difference operator against the
admissible step size of the solver (the composite bound is 1 + 8 mu^2). All
operators are assembled matrix-free and handed to the generic splitting
engine as an n = 2, m = 2 instance.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, ParameterError
from .modeling import ProblemSpec, SolverConfig, validate_config
from .operators import (
    BoxBounds,
    LinearMap,
    ResolventOp,
    moreau_prox_conjugate,
    project_box,
    project_dual_ball,
    prox_l1_shifted,
)
from .splitting import initial_state, step

__all__ = [
    "Image",
    "DeblurParams",
    "DeblurRecord",
    "haar_forward",
    "haar_adjoint",
    "tv_gradient",
    "tv_gradient_adjoint",
    "gaussian_kernel",
    "gaussian_blur",
    "blur_map",
    "tv_map",
    "box_resolvent",
    "synthesis_l1_resolvent",
    "data_l1_prox_op",
    "dual_ball_prox_op",
    "deblur_problem",
    "deblur_objective",
    "isnr",
    "deblur_run",
    "simulate_observation",
    "gaussian_noise",
    "synthetic_phantom",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Image:
    """A 2-D grid of real intensities, nominally in [0, 1].

    ``data`` is flat, row-major, channels interleaved (length
    height * width * channels). Grayscale uses channels = 1, RGB uses 3.
    """

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise DimensionMismatchError(
                f"image size must be positive, got {self.height}x{self.width}"
            )
        if self.channels not in (1, 3):
            raise ParameterError(f"channels must be 1 or 3, got {self.channels}")
        data = np.asarray(self.data, dtype=float).reshape(-1)
        if data.size != self.height * self.width * self.channels:
            raise DimensionMismatchError(
                f"data length {data.size} does not match "
                f"{self.height}x{self.width}x{self.channels}"
            )
        if not np.all(np.isfinite(data)):
            raise ParameterError("image data must be finite")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 2:
            return cls(a.shape[0], a.shape[1], 1, a.ravel())
        if a.ndim == 3 and a.shape[2] in (1, 3):
            return cls(a.shape[0], a.shape[1], a.shape[2], a.ravel())
        raise DimensionMismatchError(f"expected (M, N) or (M, N, 3), got {a.shape}")

    def to_array(self):
        if self.channels == 1:
            return self.data.reshape(self.height, self.width)
        return self.data.reshape(self.height, self.width, self.channels)

    def plane(self, channel=0):
        """The (height, width) array of one channel."""
        if not 0 <= channel < self.channels:
            raise ParameterError(f"channel {channel} out of range")
        if self.channels == 1:
            return self.data.reshape(self.height, self.width)
        return self.data.reshape(self.height, self.width, self.channels)[:, :, channel]


# ---------------------------------------------------------------------------
# orthonormal 2-D Haar transform (square pyramid, coarse block top-left)


def _check_pow2(k, name):
    if k < 1 or (k & (k - 1)) != 0:
        raise DimensionMismatchError(f"{name} must be a power of two, got {k}")


def haar_forward(a):
    """Orthonormal 2-D Haar analysis of an (M, N) array, M and N powers of two.

    Each level splits the current low band into averages and details with the
    filter pair (1, 1)/sqrt(2), (1, -1)/sqrt(2) along both axes and recurses
    on the averages, so the top-left cell of the result holds the coarsest
    coefficient. The map is an isometry and haar_adjoint inverts it exactly.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D array, got shape {a.shape}")
    rows, cols = a.shape
    _check_pow2(rows, "height")
    _check_pow2(cols, "width")
    out = a.copy()
    m, n = rows, cols
    while m > 1 and n > 1:
        band = out[:m, :n]
        lo = (band[:, 0::2] + band[:, 1::2]) / _SQRT2
        hi = (band[:, 0::2] - band[:, 1::2]) / _SQRT2
        ll = (lo[0::2, :] + lo[1::2, :]) / _SQRT2
        hl = (lo[0::2, :] - lo[1::2, :]) / _SQRT2
        lh = (hi[0::2, :] + hi[1::2, :]) / _SQRT2
        hh = (hi[0::2, :] - hi[1::2, :]) / _SQRT2
        half_m, half_n = m // 2, n // 2
        out[:half_m, :half_n] = ll
        out[:half_m, half_n:n] = lh
        out[half_m:m, :half_n] = hl
        out[half_m:m, half_n:n] = hh
        m, n = half_m, half_n
    return out


def haar_adjoint(coeffs):
    """Adjoint (= inverse) of haar_forward."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D array, got shape {coeffs.shape}")
    rows, cols = coeffs.shape
    _check_pow2(rows, "height")
    _check_pow2(cols, "width")
    sizes = []
    m, n = rows, cols
    while m > 1 and n > 1:
        sizes.append((m, n))
        m, n = m // 2, n // 2
    out = coeffs.copy()
    for m, n in reversed(sizes):
        half_m, half_n = m // 2, n // 2
        ll = out[:half_m, :half_n]
        lh = out[:half_m, half_n:n]
        hl = out[half_m:m, :half_n]
        hh = out[half_m:m, half_n:n]
        lo = np.empty((m, half_n))
        lo[0::2, :] = (ll + hl) / _SQRT2
        lo[1::2, :] = (ll - hl) / _SQRT2
        hi = np.empty((m, half_n))
        hi[0::2, :] = (lh + hh) / _SQRT2
        hi[1::2, :] = (lh - hh) / _SQRT2
        band = np.empty((m, n))
        band[:, 0::2] = (lo + hi) / _SQRT2
        band[:, 1::2] = (lo - hi) / _SQRT2
        out[:m, :n] = band
    return out


# ---------------------------------------------------------------------------
# discrete gradient for isotropic total variation


def tv_gradient(a, scale=1.0):
    """Scaled forward differences of an (M, N) array.

    Returns (p, q) with p = scale * vertical differences (zero last row) and
    q = scale * horizontal differences (zero last column). The operator norm
    is below sqrt(8) * scale.
    """
    if scale <= 0:
        raise ParameterError(f"scale must be > 0, got {scale}")
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D array, got shape {a.shape}")
    p = np.zeros_like(a)
    q = np.zeros_like(a)
    p[:-1, :] = scale * (a[1:, :] - a[:-1, :])
    q[:, :-1] = scale * (a[:, 1:] - a[:, :-1])
    return p, q


def tv_gradient_adjoint(p, q, scale=1.0):
    """Exact transpose of tv_gradient (a negative divergence).

    The structurally zero boundary row of p and column of q are ignored, so
    the adjoint identity holds for arbitrary (p, q) inputs.
    """
    if scale <= 0:
        raise ParameterError(f"scale must be > 0, got {scale}")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 2:
        raise DimensionMismatchError(f"p and q must share a 2-D shape, got {p.shape} and {q.shape}")
    out = np.zeros_like(p)
    out[:-1, :] -= p[:-1, :]
    out[1:, :] += p[:-1, :]
    out[:, :-1] -= q[:, :-1]
    out[:, 1:] += q[:, :-1]
    return scale * out


# ---------------------------------------------------------------------------
# Gaussian blur with reflexive boundaries


def gaussian_kernel(size=9, sigma=4.0):
    """Normalized size x size kernel with weights exp(-(i^2+j^2)/(2 sigma^2))."""
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be odd and >= 1, got {size}")
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    half = (size - 1) // 2
    i, j = np.mgrid[-half : half + 1, -half : half + 1]
    k = np.exp(-(i * i + j * j) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(a, size=9, sigma=4.0):
    """Blur an (M, N) array, reflexive (edge-duplicating) boundary handling.

    Under this boundary convention the operator is self-adjoint, preserves
    constants and has unit operator norm.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D array, got shape {a.shape}")
    half = (size - 1) // 2
    if min(a.shape) < half + 1:
        raise DimensionMismatchError(
            f"image {a.shape} too small for a {size}x{size} kernel"
        )
    if size == 1:
        return a.copy()
    return ndimage.convolve(a, gaussian_kernel(size, sigma), mode="reflect")


def blur_map(shape, size=9, sigma=4.0):
    """Self-adjoint LinearMap applying the blur to flattened images."""
    rows, cols = shape
    dim = rows * cols

    def apply(x):
        return gaussian_blur(x.reshape(rows, cols), size, sigma).ravel()

    return LinearMap(apply, apply, dim, dim, 1.0)


def tv_map(shape, scale=1.0):
    """LinearMap stacking the scaled differences: flat image -> (p, q) halves."""
    rows, cols = shape
    dim = rows * cols

    def fwd(x):
        p, q = tv_gradient(x.reshape(rows, cols), scale)
        return np.concatenate([p.ravel(), q.ravel()])

    def adj(pq):
        p = pq[:dim].reshape(rows, cols)
        q = pq[dim:].reshape(rows, cols)
        return tv_gradient_adjoint(p, q, scale).ravel()

    return LinearMap(fwd, adj, dim, 2 * dim, math.sqrt(8.0) * scale)


# ---------------------------------------------------------------------------
# resolvents of the four blocks


def box_resolvent(lo, hi, dim):
    """Resolvent of the normal cone of [lo, hi]^dim: the projection, any step."""
    bounds = BoxBounds(lo, hi)
    return ResolventOp(lambda p, s: project_box(p, bounds), dim)


def synthesis_l1_resolvent(shape, weight):
    """Resolvent of the subdifferential of weight * ||W x||_1, W the Haar map.

    Because W is orthonormal the resolvent at parameter s is
    x - W^*(clip(W x, [-s*weight, s*weight])).
    """
    if weight < 0:
        raise ParameterError(f"weight must be >= 0, got {weight}")
    rows, cols = shape

    def ev(point, s):
        w = haar_forward(point.reshape(rows, cols))
        clipped = np.clip(w, -s * weight, s * weight)
        return point - haar_adjoint(clipped).ravel()

    return ResolventOp(ev, rows * cols)


def data_l1_prox_op(anchor, weight):
    """Operator whose resolvent at s is the prox of s * weight * ||. - anchor||_1."""
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    if weight < 0:
        raise ParameterError(f"weight must be >= 0, got {weight}")
    return ResolventOp(
        lambda p, s: prox_l1_shifted(p, anchor, s * weight), anchor.size
    )


def dual_ball_prox_op(shape, radius):
    """Operator whose resolvent at s is the prox of s * radius * ||(p, q)||_x.

    ||(p, q)||_x sums sqrt(p_ij^2 + q_ij^2) over pixels; its conjugate is the
    indicator of the per-pixel ball of the given radius, so the prox follows
    from the projection through the Moreau decomposition. radius = 0 gives
    the zero function, whose resolvent is the identity.
    """
    if radius < 0:
        raise ParameterError(f"radius must be >= 0, got {radius}")
    rows, cols = shape
    dim = rows * cols

    def project(pq, _t):
        p, q = project_dual_ball(
            pq[:dim].reshape(rows, cols), pq[dim:].reshape(rows, cols), radius
        )
        return np.concatenate([p.ravel(), q.ravel()])

    def ev(point, s):
        if radius == 0.0:
            return point
        return moreau_prox_conjugate(point, s, project)

    return ResolventOp(ev, 2 * dim)


# ---------------------------------------------------------------------------
# benchmark assembly


@dataclass(frozen=True)
class DeblurParams:
    """Regularization weights, rescaling and iteration budget for deblurring.

    ``gamma = None`` selects the largest admissible step for the composite
    problem, 1 / (1 + 8 mu^2); the blur contributes norm 1 and the scaled
    difference operator norm sqrt(8) * mu.
    """

    alpha1: float = 0.005
    alpha2: float = 0.009
    mu: float = 1.0
    lam: float = 0.99
    gamma: float | None = None
    iterations: int = 400
    noise_sigma: float = 1e-3
    seed: int = 0
    blur_size: int = 9
    blur_sigma: float = 4.0

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ParameterError("regularization weights must be >= 0")
        if self.mu <= 0:
            raise ParameterError(f"mu must be > 0, got {self.mu}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.blur_size < 1 or self.blur_size % 2 == 0:
            raise ParameterError(f"blur_size must be odd, got {self.blur_size}")
        if self.blur_sigma <= 0:
            raise ParameterError(f"blur_sigma must be > 0, got {self.blur_sigma}")

    def step_size(self):
        if self.gamma is not None:
            return self.gamma
        return 1.0 / (1.0 + 8.0 * self.mu * self.mu)


@dataclass
class DeblurRecord:
    """One trace row of a deblurring run (isnr is NaN when no truth is given)."""

    iteration: int
    residual_gamma: float
    residual_primal: float
    residual_dual: float
    objective: float
    isnr: float


def deblur_problem(observed, params):
    """Assemble the n = 2, m = 2 inclusion for one observed channel.

    ``observed`` is the (M, N) data in [0, 1]. Returns (spec, config, state)
    with the iterate started at z = observed / mu, v = 0; the state variable
    is the rescaled image x = s / mu constrained to [0, 1/mu].
    """
    observed = np.asarray(observed, dtype=float)
    if observed.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D channel, got {observed.shape}")
    rows, cols = observed.shape
    dim = rows * cols
    mu = params.mu

    spec = ProblemSpec(
        primal_ops=[
            box_resolvent(0.0, 1.0 / mu, dim),
            synthesis_l1_resolvent((rows, cols), params.alpha1 * mu),
        ],
        composed_ops=[
            data_l1_prox_op(observed.ravel() / mu, mu),
            dual_ball_prox_op((rows, cols), params.alpha2),
        ],
        linear_maps=[
            blur_map((rows, cols), params.blur_size, params.blur_sigma),
            tv_map((rows, cols), mu),
        ],
    )
    config = SolverConfig(
        lam=params.lam,
        gamma=params.step_size(),
        max_iterations=params.iterations,
        residual_tolerance=0.0,
    )
    state = initial_state(spec, z=[observed.ravel() / mu])
    return spec, validate_config(spec, config), state


_BOX_TOLERANCE = 1e-9


def deblur_objective(x, observed, params):
    """Objective value of the restoration problem at the rescaled image x.

    Returns +inf when x leaves [0, 1/mu] by more than a small tolerance
    (iterates satisfy the box only in the limit).
    """
    x = np.asarray(x, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if x.shape != observed.shape or x.ndim != 2:
        raise DimensionMismatchError(
            f"x and observed must share a 2-D shape, got {x.shape} and {observed.shape}"
        )
    mu = params.mu
    if np.min(x) < -_BOX_TOLERANCE or np.max(x) > 1.0 / mu + _BOX_TOLERANCE:
        return float("inf")
    blurred = gaussian_blur(x, params.blur_size, params.blur_sigma)
    data_term = mu * float(np.sum(np.abs(blurred - observed / mu)))
    wavelet_term = params.alpha1 * mu * float(np.sum(np.abs(haar_forward(x))))
    p, q = tv_gradient(x, mu)
    tv_term = params.alpha2 * float(np.sum(np.sqrt(p * p + q * q)))
    return data_term + wavelet_term + tv_term


def isnr(original, observed, current):
    """Improvement in signal-to-noise ratio, in dB.

    10 log10(||x - b||^2 / ||x - x_k||^2); +inf when the reconstruction
    matches the original exactly.
    """
    x = _flat(original)
    b = _flat(observed)
    xk = _flat(current)
    if x.shape != b.shape or x.shape != xk.shape:
        raise DimensionMismatchError("isnr arguments must share one shape")
    den = float(np.sum((x - xk) ** 2))
    if den == 0.0:
        return float("inf")
    num = float(np.sum((x - b) ** 2))
    return 10.0 * math.log10(num / den)


def _flat(img):
    if isinstance(img, Image):
        return img.data
    return np.asarray(img, dtype=float).reshape(-1)


def _run_channel(observed, params, truth):
    """Full iteration history for one channel.

    Returns the final feasible iterate (2-D, rescaled variable) plus
    per-iteration squared residuals, objective values and squared
    reconstruction errors against the truth (empty when truth is None).
    """
    spec, config, state = deblur_problem(observed, params)
    rows, cols = observed.shape
    mu = params.mu
    res_g, res_p, res_d, objs, errs = [], [], [], [], []
    x1 = None
    for _ in range(params.iterations):
        state, diag = step(state, spec, config)
        x1 = diag.x[0].reshape(rows, cols)
        res_g.append(diag.residual_gamma**2)
        res_p.append(diag.residual_primal**2)
        res_d.append(diag.residual_dual**2)
        objs.append(deblur_objective(x1, observed, params))
        if truth is not None:
            errs.append(float(np.sum((truth - mu * x1) ** 2)))
    return x1, res_g, res_p, res_d, objs, errs


def deblur_run(observed, params, truth=None, workers=1):
    """Restore an observed Image; returns (restored Image, trace records).

    Color images are processed one channel at a time (optionally in
    ``workers`` threads); trace rows aggregate the channels: residuals
    compose in squares, objective values add and the ISNR is computed over
    all channels together. The restored image is mu times the final feasible
    iterate, i.e. back in the data scale.
    """
    if not isinstance(observed, Image):
        observed = Image.from_array(observed)
    if truth is not None and not isinstance(truth, Image):
        truth = Image.from_array(truth)
    if truth is not None and (
        truth.height,
        truth.width,
        truth.channels,
    ) != (observed.height, observed.width, observed.channels):
        raise DimensionMismatchError("truth and observed images differ in shape")

    channels = range(observed.channels)
    planes = [observed.plane(c) for c in channels]
    truth_planes = [truth.plane(c) if truth is not None else None for c in channels]

    if workers > 1 and observed.channels > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    lambda args: _run_channel(args[0], params, args[1]),
                    zip(planes, truth_planes),
                )
            )
    else:
        results = [
            _run_channel(p, params, t) for p, t in zip(planes, truth_planes)
        ]

    noise_power = None
    if truth is not None:
        noise_power = float(np.sum((truth.data - observed.data) ** 2))

    trace = []
    for k in range(params.iterations):
        rg = math.sqrt(sum(r[1][k] for r in results))
        rp = math.sqrt(sum(r[2][k] for r in results))
        rd = math.sqrt(sum(r[3][k] for r in results))
        obj = sum(r[4][k] for r in results)
        if truth is not None:
            err = sum(r[5][k] for r in results)
            level = float("inf") if err == 0.0 else 10.0 * math.log10(noise_power / err)
        else:
            level = float("nan")
        trace.append(DeblurRecord(k + 1, rg, rp, rd, obj, level))

    restored = np.stack([params.mu * r[0] for r in results], axis=-1)
    if observed.channels == 1:
        restored = restored[:, :, 0]
    return Image.from_array(restored), trace


# ---------------------------------------------------------------------------
# synthetic data: observation model and a phantom


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(seed, count):
    """The first ``count`` outputs of the splitmix64 generator, vectorized."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def gaussian_noise(shape, sigma, seed):
    """Zero-mean Gaussian noise from splitmix64 + Box-Muller.

    Independent of platform RNG libraries, so runs are reproducible across
    environments up to floating-point rounding.
    """
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    bits = _splitmix64(seed, 2 * pairs)
    unit = (bits >> np.uint64(11)).astype(float) * (2.0**-53)
    u1 = 1.0 - unit[0::2]  # in (0, 1], keeps the log finite
    u2 = unit[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    samples = np.empty(2 * pairs)
    samples[0::2] = radius * np.cos(angle)
    samples[1::2] = radius * np.sin(angle)
    return sigma * samples[:count].reshape(shape)


def simulate_observation(clean, params):
    """Blur a clean Image and add seeded Gaussian noise, per channel."""
    if not isinstance(clean, Image):
        clean = Image.from_array(clean)
    planes = []
    for c in range(clean.channels):
        blurred = gaussian_blur(clean.plane(c), params.blur_size, params.blur_sigma)
        noise = gaussian_noise(blurred.shape, params.noise_sigma, params.seed + c)
        planes.append(blurred + noise)
    stacked = np.stack(planes, axis=-1)
    if clean.channels == 1:
        stacked = stacked[:, :, 0]
    return Image.from_array(stacked)


def synthetic_phantom(height=64, width=64, seed=0):
    """A deterministic grayscale test image with edges, flats and a gradient.

    The seed jitters the shape positions by a few pixels so distinct phantoms
    can be generated reproducibly.
    """
    _check_pow2(height, "height")
    _check_pow2(width, "width")
    jit = (_splitmix64(seed, 4) % np.uint64(5)).astype(int) - 2
    rr = np.arange(height)[:, None]
    cc = np.arange(width)[None, :]

    img = 0.15 + 0.35 * (rr / max(height - 1, 1)) * (cc / max(width - 1, 1))

    r0, r1 = height // 8 + jit[0], height // 2 + jit[0]
    c0, c1 = width // 6 + jit[1], width // 3 + jit[1]
    img[max(r0, 0) : r1, max(c0, 0) : c1] = 0.85

    center_r = 0.65 * height + jit[2]
    center_c = 0.62 * width + jit[3]
    radius = min(height, width) / 5.0
    disk = (rr - center_r) ** 2 + (cc - center_c) ** 2 <= radius**2
    img[disk] = 0.25

    for k, col in enumerate(range(3 * width // 4, width - 2, 4)):
        img[height // 12 : height // 3, col : col + 2] = 0.9 if k % 2 == 0 else 0.05

    return Image.from_array(np.clip(img, 0.0, 1.0))
