"""Batch front end: ``splitkit <mode> [--config <file>] [--key value ...]``.

Modes
-----
deblur              restore a PGM/PPM image (optionally simulating the
                    observation from a clean input first)
toy-inclusion       the closed-form 1-D composite inclusion, for smoke tests
mt-equivalence      compare the general step against the symmetric
                    minimal-lifting reference scheme at identity couplings
averagedness-audit  sample the averagedness inequality on a random instance

Configuration is a flat ``key = value`` text file plus command-line overrides
of the same keys. Every run writes a trace CSV, a summary line and (for
deblur) the restored image into ``output_dir``; nothing is written anywhere
else. Runs are deterministic given the config and seed. Exit codes: 0 done,
2 configuration error, 3 numerical failure, 4 I/O error.
"""

import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    FormatError,
    NumericalError,
    ParameterError,
    SplitkitError,
)
from .imaging import DeblurParams, deblur_problem, deblur_run, simulate_observation
from .modeling import ProblemSpec, SolverConfig, validate_config
from .netpbm import read_image, write_image
from .operators import identity_map, matrix_map, shifted_identity_op
from .splitting import (
    check_averaged_inequality,
    initial_state,
    malitsky_tam_step,
    run,
    step,
)

__all__ = ["ExperimentConfig", "run_experiment", "write_trace_csv", "main"]

MODES = ("deblur", "toy-inclusion", "mt-equivalence", "averagedness-audit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_USAGE = """usage: splitkit <mode> [--config <file>] [--key value ...]

modes: deblur | toy-inclusion | mt-equivalence | averagedness-audit

common keys: output_dir, seed, lambda, gamma, max_iterations,
             residual_tolerance, log_every
deblur keys: input_image, truth_image, simulate, alpha1, alpha2, mu,
             iterations, noise_sigma, blur_size, blur_sigma
audit keys:  samples, dim, n_ops, m_ops
mt keys:     sizes (comma separated operator counts), dim, iterations
"""


@dataclass
class ExperimentConfig:
    """All tunables of one experiment; invalid combinations fail before any run."""

    mode: str
    input_image: str | None = None
    truth_image: str | None = None
    output_dir: str = "splitkit_out"
    alpha1: float = 0.005
    alpha2: float = 0.009
    mu: float = 1.0
    lam: float = 0.99
    gamma: float | None = None
    iterations: int = 400
    max_iterations: int = 2000
    residual_tolerance: float = 1e-8
    noise_sigma: float = 1e-3
    seed: int = 0
    blur_size: int = 9
    blur_sigma: float = 4.0
    simulate: bool = False
    log_every: int = 0
    samples: int = 1000
    dim: int = 3
    n_ops: int = 3
    m_ops: int = 2
    sizes: tuple = (3, 4, 6)


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _parse_gamma(text):
    lowered = text.strip().lower()
    if lowered in ("none", "auto"):
        return None
    return float(text)


def _parse_sizes(text):
    return tuple(int(part) for part in text.split(",") if part.strip())


# key -> (attribute, parser); "lambda" is a Python keyword, hence the alias
_KEYS = {
    "input_image": ("input_image", str),
    "truth_image": ("truth_image", str),
    "output_dir": ("output_dir", str),
    "alpha1": ("alpha1", float),
    "alpha2": ("alpha2", float),
    "mu": ("mu", float),
    "lambda": ("lam", float),
    "lam": ("lam", float),
    "gamma": ("gamma", _parse_gamma),
    "iterations": ("iterations", int),
    "max_iterations": ("max_iterations", int),
    "residual_tolerance": ("residual_tolerance", float),
    "noise_sigma": ("noise_sigma", float),
    "seed": ("seed", int),
    "blur_size": ("blur_size", int),
    "blur_sigma": ("blur_sigma", float),
    "simulate": ("simulate", _parse_bool),
    "log_every": ("log_every", int),
    "samples": ("samples", int),
    "dim": ("dim", int),
    "n_ops": ("n_ops", int),
    "m_ops": ("m_ops", int),
    "sizes": ("sizes", _parse_sizes),
}

_MODE_DEFAULTS = {
    "toy-inclusion": {"lam": 0.9, "gamma": 1.0, "max_iterations": 2000},
    "mt-equivalence": {"lam": 0.5, "iterations": 50},
    "averagedness-audit": {"lam": 0.5, "dim": 4},
    "deblur": {},
}


def parse_config_file(path):
    """Flat ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    mapping = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigurationError(f"cannot read config file {path}: {err}") from err
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        mapping[key] = value
    return mapping


def build_config(mode, mapping):
    """Coerce a key->string mapping into an ExperimentConfig for ``mode``."""
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    values = dict(_MODE_DEFAULTS[mode])
    for key, raw in mapping.items():
        if key == "mode":
            continue
        if key not in _KEYS:
            raise ConfigurationError(
                f"unknown configuration key {key!r}; valid keys: {', '.join(sorted(_KEYS))}"
            )
        attribute, parse = _KEYS[key]
        try:
            values[attribute] = parse(raw) if isinstance(raw, str) else raw
        except (ValueError, TypeError) as err:
            raise ConfigurationError(f"bad value for {key}: {raw!r} ({err})") from err
    return ExperimentConfig(mode=mode, **values)


def parse_command_line(argv):
    """``<mode> [--config file] [--key value ...]`` into an ExperimentConfig."""
    if not argv:
        raise ConfigurationError(_USAGE.strip())
    mode = argv[0]
    overrides = {}
    config_path = None
    i = 1
    while i < len(argv):
        arg = argv[i]
        if not arg.startswith("--"):
            raise ConfigurationError(f"expected --key value pairs, got {arg!r}")
        if i + 1 >= len(argv):
            raise ConfigurationError(f"missing value for {arg}")
        key, value = arg[2:], argv[i + 1]
        if key == "config":
            config_path = value
        else:
            overrides[key] = value
        i += 2
    mapping = {}
    if config_path is not None:
        mapping.update(parse_config_file(config_path))
    mapping.update(overrides)
    return build_config(mode, mapping)


# ---------------------------------------------------------------------------
# trace output

_CSV_FIELDS = (
    "iteration",
    "residual_gamma",
    "residual_primal",
    "residual_dual",
    "objective",
    "isnr",
)


def _format_value(value):
    return repr(float(value))


def write_trace_csv(trace, path):
    """Header plus one row per iteration, full double precision, '\\n' endings.

    Rows may be any objects carrying the residual attributes; absent
    objective/isnr columns are written as nan.
    """
    lines = [",".join(_CSV_FIELDS)]
    for index, row in enumerate(trace, start=1):
        cells = [str(int(getattr(row, "iteration", index)))]
        for name in _CSV_FIELDS[1:]:
            cells.append(_format_value(getattr(row, name, float("nan"))))
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def _log_trace(trace, every):
    if every <= 0:
        return
    for index, row in enumerate(trace, start=1):
        iteration = int(getattr(row, "iteration", index))
        if iteration % every == 0 or iteration == len(trace):
            parts = [f"iter {iteration}", f"residual_gamma={row.residual_gamma:.6e}"]
            objective = getattr(row, "objective", None)
            if objective is not None:
                parts.append(f"objective={objective:.6e}")
            level = getattr(row, "isnr", None)
            if level is not None and not np.isnan(level):
                parts.append(f"isnr={level:.4f}")
            print("  ".join(parts))


# ---------------------------------------------------------------------------
# modes


def _ensure_outdir(outdir):
    # created on first write, so failed runs leave no partial outputs behind
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _toy_problem():
    # 1-D instance with closed-form solution x = 4/3: A1 = . - 1, A2 = . - 3,
    # B = Id, L = Id, so the inclusion reads 0 = (x - 1) + (x - 3) + x.
    return ProblemSpec(
        primal_ops=[shifted_identity_op([1.0]), shifted_identity_op([3.0])],
        composed_ops=[shifted_identity_op([0.0])],
        linear_maps=[identity_map(1)],
    )


def _run_toy(config, outdir):
    spec = _toy_problem()
    solver_config = SolverConfig(
        lam=config.lam,
        gamma=1.0 if config.gamma is None else config.gamma,
        max_iterations=config.max_iterations,
        residual_tolerance=config.residual_tolerance,
    )
    solution, trace = run(spec, solver_config)
    _log_trace(trace, config.log_every)
    write_trace_csv(trace, _ensure_outdir(outdir) / "trace.csv")
    return (
        f"toy-inclusion: x_bar={solution.x_bar[0]:.9f} "
        f"u_bar={solution.u_bar[0][0]:.9f} iterations={len(trace)} "
        f"residual_gamma={trace[-1].residual_gamma:.3e}"
    )


def _run_mt_equivalence(config, outdir):
    rng = np.random.default_rng(config.seed)
    dim = config.dim
    worst = 0.0
    trace = []
    for count in config.sizes:
        if count < 2:
            raise ConfigurationError(f"sizes entries must be >= 2, got {count}")
        ops = [shifted_identity_op(rng.standard_normal(dim)) for _ in range(count)]
        spec = ProblemSpec(
            primal_ops=ops[:-1],
            composed_ops=[ops[-1]],
            linear_maps=[identity_map(dim)],
        )
        solver_config = validate_config(spec, SolverConfig(lam=config.lam, gamma=1.0))
        start_z = [rng.standard_normal(dim) for _ in range(count - 2)] or [
            rng.standard_normal(dim)
        ]
        start_v = [rng.standard_normal(dim)]
        state = initial_state(spec, z=start_z, v=start_v)
        blocks = [b.copy() for b in state.z] + [state.v[0].copy()]
        trace = []
        for _ in range(config.iterations):
            state, diag = step(state, spec, solver_config)
            blocks = malitsky_tam_step(blocks, ops, config.lam)
            deviation = max(
                float(np.max(np.abs(a - b)))
                for a, b in zip(state.z + state.v, blocks)
            )
            worst = max(worst, deviation)
            trace.append(diag)
    _log_trace(trace, config.log_every)
    write_trace_csv(trace, _ensure_outdir(outdir) / "trace.csv")
    return (
        f"mt-equivalence: sizes={','.join(str(s) for s in config.sizes)} "
        f"iterations={config.iterations} max_deviation={worst:.3e}"
    )


def _run_averagedness_audit(config, outdir):
    rng = np.random.default_rng(config.seed)
    n, m, dim = config.n_ops, config.m_ops, config.dim
    if n < 2 or m < 1:
        raise ConfigurationError("averagedness-audit needs n_ops >= 2 and m_ops >= 1")
    dual_dims = [max(2, dim - 1 - j % 2) for j in range(m)]
    spec = ProblemSpec(
        primal_ops=[shifted_identity_op(rng.standard_normal(dim)) for _ in range(n)],
        composed_ops=[shifted_identity_op(rng.standard_normal(d)) for d in dual_dims],
        linear_maps=[matrix_map(rng.standard_normal((d, dim))) for d in dual_dims],
    )
    gamma = (
        1.0 / spec.linear_norm_bound_sq() if config.gamma is None else config.gamma
    )
    solver_config = validate_config(
        spec,
        SolverConfig(
            lam=config.lam,
            gamma=gamma,
            max_iterations=config.max_iterations,
            residual_tolerance=config.residual_tolerance,
        ),
    )

    def random_state(spread):
        return initial_state(
            spec,
            z=[spread * rng.standard_normal(dim) for _ in range(n - 1)],
            v=[spread * rng.standard_normal(d) for d in dual_dims],
        )

    min_slack = float("inf")
    for index in range(config.samples):
        spread = 10.0 ** ((index % 5) - 2)  # pair distances from 1e-2 to 1e2
        slack = check_averaged_inequality(
            spec, solver_config, random_state(spread), random_state(spread)
        )
        min_slack = min(min_slack, slack)

    _, trace = run(spec, solver_config)
    _log_trace(trace, config.log_every)
    write_trace_csv(trace, _ensure_outdir(outdir) / "trace.csv")
    return (
        f"averagedness-audit: samples={config.samples} lam={config.lam} "
        f"gamma={gamma:.6g} min_slack={min_slack:.3e}"
    )


def _deblur_params(config):
    return DeblurParams(
        alpha1=config.alpha1,
        alpha2=config.alpha2,
        mu=config.mu,
        lam=config.lam,
        gamma=config.gamma,
        iterations=config.iterations,
        noise_sigma=config.noise_sigma,
        seed=config.seed,
        blur_size=config.blur_size,
        blur_sigma=config.blur_sigma,
    )


def _run_deblur(config, outdir):
    params = _deblur_params(config)
    if config.input_image is None:
        raise ConfigurationError("deblur mode requires input_image")
    # shape-independent validation of (lam, gamma) against the norm bounds,
    # before any file is touched
    deblur_problem(np.zeros((2, 2)), params)

    source = read_image(config.input_image)
    truth = read_image(config.truth_image) if config.truth_image else None
    extra_outputs = []
    if config.simulate:
        observed = simulate_observation(source, params)
        if truth is None:
            truth = source
        extra_outputs.append(("observed", observed))
    else:
        observed = source

    workers = _worker_count()
    restored, trace = deblur_run(observed, params, truth=truth, workers=workers)
    _log_trace(trace, config.log_every)

    suffix = ".pgm" if restored.channels == 1 else ".ppm"
    _ensure_outdir(outdir)
    for name, img in extra_outputs + [("restored", restored)]:
        write_image(img, outdir / f"{name}{suffix}")
    write_trace_csv(trace, outdir / "trace.csv")

    last = trace[-1]
    summary = (
        f"deblur: iterations={len(trace)} mu={params.mu:.6g} "
        f"gamma={params.step_size():.6g} objective={last.objective:.6f}"
    )
    if truth is not None:
        summary += f" isnr={last.isnr:.4f}"
    return summary


def _worker_count():
    raw = os.environ.get("SPLITKIT_THREADS", "")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"SPLITKIT_THREADS must be an integer, got {raw!r}")


_MODE_RUNNERS = {
    "deblur": _run_deblur,
    "toy-inclusion": _run_toy,
    "mt-equivalence": _run_mt_equivalence,
    "averagedness-audit": _run_averagedness_audit,
}


def run_experiment(config):
    """Execute one experiment; returns the process exit status."""
    try:
        outdir = Path(config.output_dir)
        summary = _MODE_RUNNERS[config.mode](config, outdir)
        (_ensure_outdir(outdir) / "summary.txt").write_text(summary + "\n")
        print(summary)
        return EXIT_OK
    except (ConfigurationError, ParameterError, DimensionMismatchError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv and argv[0] in ("-h", "--help", "help"):
        print(_USAGE)
        return EXIT_OK
    try:
        config = parse_command_line(argv)
    except SplitkitError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
