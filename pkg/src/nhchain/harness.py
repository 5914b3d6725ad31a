"""Batch front-end: flat key=value experiment configs, dispatch, outputs, manifests.

Every run writes its primary output atomically, any JSON companion next to
it, and a ``<output>.manifest.json`` recording the configuration, code
version, wall time, per-point convergence and SHA-256 checksums of the
files written.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .entanglement import Bipartition, entropy
from .propagation import PropagationError, SteadyStateRule, evolve_trajectory, sector_populations
from .spectral import (
    EigensolverError, _fmt, critical_rate, gap_sweep, make_grid, track_levels,
)
from .spin_algebra import Model, SpinChainSpec
from .states import default_initial_state, neel_state
from .steady import scaling_analysis
from .trajectories import (
    DT_GUARD, JumpModel, LindbladError, compare_with_lindblad, no_jump_consistency,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 1, 2, 3
MEMORY_LIMIT = 8 * 2 ** 30
COMMANDS = ("gap-sweep", "spectrum-flow", "evolve", "entropy-scaling", "trajectory-check")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ResourceRefusal(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    model: Model
    N: list
    J: float = 1.0
    Omega: list = field(default_factory=lambda: [0.0])
    gamma: list = field(default_factory=lambda: [0.0])
    dt: float | None = None
    tail_tol: float = 1e-12
    t_max: float | None = None
    cut: int | None = None
    seed: int = 0
    output: str | None = None
    method: str | None = None
    k_levels: int = 4
    n_traj: int = 10000
    initial: str = "product"
    stop: bool = True
    override: bool = False

    @property
    def output_path(self) -> Path:
        return Path(self.output or f"{self.command}.csv")

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        out["model"] = self.model.value
        return out


_FLOAT_KEYS = {"J", "dt", "tail_tol", "t_max"}
_INT_KEYS = {"cut", "seed", "k_levels", "n_traj"}
_BOOL_KEYS = {"stop", "override"}
_STR_KEYS = {"output", "method", "initial"}
_ALIASES = {"N_list": "N", "Omega_list": "Omega", "gamma_grid": "gamma", "output_path": "output"}


def _parse_bool(key, s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {s!r}")


def parse_values(key: str, s: str) -> list:
    """``a:b:step`` (inclusive grid), ``x,y,...`` (list) or a single number."""
    try:
        if ":" in s:
            parts = [float(p) for p in s.split(":")]
            if len(parts) == 2:
                parts.append(0.05)
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ConfigError(key, f"bad grid {s!r}; use start:stop:step")
            return [float(x) for x in make_grid(*parts)]
        return [float(p) for p in s.split(",") if p.strip()]
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(key, f"cannot parse {s!r} as numbers") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}", f"expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_pairs(pairs) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(p, "expected key=value")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(command: str, raw: dict) -> ExperimentConfig:
    """Validate raw string settings into an :class:`ExperimentConfig`."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}; choose from {COMMANDS}")
    raw = {_ALIASES.get(k, k): v for k, v in raw.items()}
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"command"}
    for k in raw:
        if k not in known:
            raise ConfigError(k, "unknown key")
    for k in ("model", "N"):
        if k not in raw:
            raise ConfigError(k, "required")
    try:
        model = Model(raw["model"].upper())
    except ValueError:
        raise ConfigError("model", f"unknown model {raw['model']!r}") from None
    kw = {"model": model}
    for k, v in raw.items():
        if k == "model":
            continue
        if k == "N":
            Ns = parse_values(k, v)
            if not Ns or any(n != int(n) for n in Ns):
                raise ConfigError(k, f"chain lengths must be integers, got {v!r}")
            kw[k] = [int(n) for n in Ns]
        elif k in ("Omega", "gamma"):
            kw[k] = parse_values(k, v)
            if not kw[k]:
                raise ConfigError(k, "empty")
        elif k in _FLOAT_KEYS:
            try:
                kw[k] = float(v)
            except ValueError:
                raise ConfigError(k, f"expected a number, got {v!r}") from None
        elif k in _INT_KEYS:
            try:
                kw[k] = int(v)
            except ValueError:
                raise ConfigError(k, f"expected an integer, got {v!r}") from None
        elif k in _BOOL_KEYS:
            kw[k] = _parse_bool(k, v)
        elif k in _STR_KEYS:
            kw[k] = v
    cfg = ExperimentConfig(command, **kw)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    single_N = cfg.command != "entropy-scaling"
    if single_N and len(cfg.N) != 1:
        raise ConfigError("N", f"{cfg.command} takes a single chain length")
    if cfg.command != "entropy-scaling" and len(cfg.Omega) != 1:
        raise ConfigError("Omega", f"{cfg.command} takes a single field")
    if cfg.command in ("evolve", "trajectory-check") and len(cfg.gamma) != 1:
        raise ConfigError("gamma", f"{cfg.command} takes a single rate")
    if cfg.dt is not None and not cfg.dt > 0:
        raise ConfigError("dt", "must be positive")
    if cfg.t_max is not None and not cfg.t_max > 0:
        raise ConfigError("t_max", "must be positive")
    if not cfg.tail_tol > 0:
        raise ConfigError("tail_tol", "must be positive")
    if cfg.initial not in ("product", "neel"):
        raise ConfigError("initial", "choose product or neel")
    methods = {"gap-sweep": ("momentum", "dense"), "spectrum-flow": ("momentum", "dense"),
               "entropy-scaling": ("dynamics", "spectral", "both")}
    if cfg.method is not None and cfg.method not in methods.get(cfg.command, ()):
        raise ConfigError("method", f"{cfg.method!r} not valid for {cfg.command}")
    if cfg.command == "trajectory-check":
        if cfg.n_traj < 2:
            raise ConfigError("n_traj", "need at least 2 trajectories")
        if not 2 <= cfg.N[0] <= 4:
            raise ConfigError("N", "trajectory-check integrates the master equation; N in 2..4")
    try:
        for spec in _specs(cfg):
            pass
    except ValueError as exc:
        raise ConfigError("spec", str(exc)) from None


def _specs(cfg: ExperimentConfig):
    if cfg.command == "trajectory-check" and cfg.N[0] < 3:
        return
    for N in cfg.N:
        for Om in cfg.Omega:
            yield SpinChainSpec(cfg.model, N, cfg.J, Om, cfg.gamma[0],
                                allow_large=cfg.override)


# --------------------------------------------------------------------------
# resources


def estimate_memory(cfg: ExperimentConfig) -> int:
    """Rough peak working set in bytes."""
    N = max(cfg.N)
    dim = 2 ** N
    method = cfg.method
    dense = cfg.command in ("gap-sweep", "spectrum-flow") and method == "dense"
    spectral = cfg.command == "entropy-scaling" and method in ("spectral", "both")
    if dense:
        return 5 * 16 * dim * dim
    if cfg.command in ("gap-sweep", "spectrum-flow") or spectral:
        block = dim // N + 2 ** (N // 2)
        # dense blocks with eigenvectors, for every sector of one point
        return 5 * 16 * block * block * (N // 2 + 1) + 64 * dim * N
    if cfg.command == "trajectory-check":
        return 32 * dim * cfg.n_traj + 16 * dim ** 4
    return 64 * dim * (N + 8)


def _guard(cfg: ExperimentConfig):
    need = estimate_memory(cfg)
    if need > MEMORY_LIMIT and not cfg.override:
        raise ResourceRefusal(f"estimated {need / 2 ** 30:.1f} GiB exceeds "
                              f"{MEMORY_LIMIT / 2 ** 30:.0f} GiB; set override=1 to proceed")
    if (cfg.command == "entropy-scaling" and cfg.method in ("spectral", "both")
            and max(cfg.N) >= 14 and not cfg.override):
        raise ResourceRefusal("N=14 spectral entropies need a 16384-dim eigensolve; "
                              "use method=dynamics or set override=1")


# --------------------------------------------------------------------------
# output


def atomic_write(path: Path, text: str) -> str:
    """Write ``text`` via a temporary file and rename; returns its SHA-256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _finite(x):
    return float(x) if x is not None and math.isfinite(x) else None


@dataclass
class RunResult:
    status: int
    files: dict = field(default_factory=dict)
    converged: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    status: int
    converged: list
    checksums: dict
    summary: dict
    error: str | None = None

    def to_json(self) -> str:
        return _json(dataclasses.asdict(self))


def _companion(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# --------------------------------------------------------------------------
# commands


def _spec(cfg, gamma=None, N=None, Omega=None):
    return SpinChainSpec(cfg.model, N or cfg.N[0], cfg.J,
                         cfg.Omega[0] if Omega is None else Omega,
                         cfg.gamma[0] if gamma is None else gamma, allow_large=cfg.override)


def _run_gap_sweep(cfg, res: RunResult):
    table = gap_sweep(_spec(cfg, 0.0), cfg.gamma, method=cfg.method or "momentum")
    res.files[cfg.output_path] = table.to_csv()
    res.converged = [[r.gamma, r.converged] for r in table.rows]
    res.summary = {"critical_rate": critical_rate(table),
                   "crossings": [list(c) for c in table.crossings]}
    if not table.all_converged:
        res.status = EXIT_NUMERICAL


def _run_spectrum_flow(cfg, res: RunResult):
    flow = track_levels(_spec(cfg, 0.0), cfg.gamma, cfg.k_levels, method=cfg.method or "momentum")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["gamma", "re_max", "im_max", "max_sector"]
    for k in range(len(flow.tracked_levels)):
        head += [f"re_{k}", f"im_{k}", f"sector_{k}"]
    w.writerow(head)
    for i, g in enumerate(flow.gamma_grid):
        row = [_fmt(g), _fmt(flow.max_imag_curve[i].real), _fmt(flow.max_imag_curve[i].imag),
               int(flow.max_imag_sector[i])]
        for lv in flow.tracked_levels:
            row += [_fmt(lv.eigenvalues[i].real), _fmt(lv.eigenvalues[i].imag), int(lv.sector[i])]
        w.writerow(row)
    res.files[cfg.output_path] = buf.getvalue()
    res.summary = {"crossings": [list(c) for c in flow.crossings],
                   "ambiguous": [list(a) for a in flow.ambiguous],
                   "low_overlap": len(flow.low_overlap)}
    res.converged = [[float(g), True] for g in flow.gamma_grid]


def _initial(cfg, N):
    return neel_state(N) if cfg.initial == "neel" else default_initial_state(N)


def _run_evolve(cfg, res: RunResult):
    spec = _spec(cfg)
    p = Bipartition(spec.N, cfg.cut)
    observers = {"entropy": lambda v: entropy(v, p)}
    pops = spec.model in (Model.NHXX, Model.NHXX_FIELD)
    if pops:
        observers["pops"] = lambda v: sector_populations(v, spec.N)
    t_max = cfg.t_max if cfg.t_max is not None else 200.0 / spec.J
    dt = cfg.dt or 0.05
    rule = SteadyStateRule(spec) if cfg.stop else None
    series = evolve_trajectory(spec, _initial(cfg, spec.N), t_max, dt, observers,
                               tail_tol=cfg.tail_tol, stop_rule=rule)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["t", "entropy", "norm_loss_rate"]
    if pops:
        # populations of the unnormalized state, so sector decay laws are visible
        head += [f"p{n}" for n in range(spec.N + 1)]
    w.writerow(head)
    # norms refer to the jump-unraveling Hamiltonian, i.e. including the
    # constant -i gamma N/4, so the fully relaxed sector n=0 does not decay
    shift = spec.gamma * spec.N / 2.0
    rates = series.norm_loss_rate + shift
    rates[0] = 0.0
    for i, t in enumerate(series.times):
        row = [_fmt(t), _fmt(series.values["entropy"][i]), _fmt(rates[i])]
        if pops:
            scale = math.exp(2 * series.log_norm[i] - shift * t)
            row += [_fmt(x * scale) for x in series.values["pops"][i]]
        w.writerow(row)
    res.files[cfg.output_path] = buf.getvalue()
    res.converged = [[spec.gamma, True]]
    res.summary = {"final_entropy": float(series.values["entropy"][-1]),
                   "stopped_early": series.stopped_early,
                   "t_final": float(series.times[-1])}


def _run_entropy_scaling(cfg, res: RunResult):
    methods = ("dynamics", "spectral") if cfg.method == "both" else (cfg.method or "dynamics",)
    summaries = []
    for Om in cfg.Omega:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("N", "entropy", "gamma", "method"))
        family = _spec(cfg, 0.0, N=min(cfg.N), Omega=Om)
        for g in cfg.gamma:
            for m in methods:
                kwargs = {}
                if m == "dynamics":
                    kwargs = {"dt": cfg.dt or 0.05, "tail_tol": cfg.tail_tol,
                              "t_max": cfg.t_max if cfg.t_max is not None else 200.0 / cfg.J}
                rec = scaling_analysis(family, cfg.N, g, method=m, p_cut=cfg.cut, **kwargs)
                for N, S in sorted(zip(rec.N_values, rec.entropies)):
                    w.writerow((N, _fmt(S), _fmt(g), m))
                s = rec.summary()
                s.update(method=m, Omega=Om, failed=sorted(rec.failed))
                summaries.append(s)
                res.converged += [[g, N, N not in rec.failed] for N in sorted(cfg.N)]
                if rec.failed:
                    res.status = EXIT_NUMERICAL
        path = cfg.output_path
        if len(cfg.Omega) > 1:
            path = _companion(path, f"_Omega{Om:g}{path.suffix}")
        res.files[path] = buf.getvalue()
    res.files[_companion(cfg.output_path, ".fit.json")] = _json(summaries)
    res.summary = {"fits": summaries}


def _jump_model(cfg):
    g = cfg.gamma[0]
    if cfg.N[0] < 3:
        return JumpModel.test_double(cfg.model, cfg.N[0], cfg.J, cfg.Omega[0], g)
    return JumpModel.from_spec(_spec(cfg))


def _run_trajectory_check(cfg, res: RunResult):
    model = _jump_model(cfg)
    N = model.n_sites
    v0 = np.full(model.dim, 2.0 ** (-N / 2), dtype=complex) if cfg.initial == "product" \
        else _initial(cfg, N)
    t_max = cfg.t_max if cfg.t_max is not None else 2.0
    dt = cfg.dt if cfg.dt is not None else (
        min(0.05, DT_GUARD / model.gamma) if model.gamma > 0 else 0.05)
    cmp = compare_with_lindblad(model, v0, t_max, dt, cfg.n_traj, cfg.seed)
    nj = no_jump_consistency(model, v0, t_max, dt, n_traj=min(cfg.n_traj, 500),
                             seed_base=cfg.seed, tail_tol=cfg.tail_tol)
    summary = cmp.summary()
    res.files[cfg.output_path.with_suffix(".json")] = _json(summary)
    res.summary = dict(summary, mc_sigma=cmp.sigma, lindblad_within_3_sigma=cmp.passed,
                       no_jump_checks=nj.checks,
                       no_jump_probability_error=nj.probability_error,
                       generator_identity_error=model.generator_identity_error())
    ok = cmp.passed and nj.passed
    res.converged = [[model.gamma, ok]]
    if not ok:
        res.status = EXIT_NUMERICAL


_DISPATCH = {
    "gap-sweep": _run_gap_sweep,
    "spectrum-flow": _run_spectrum_flow,
    "evolve": _run_evolve,
    "entropy-scaling": _run_entropy_scaling,
    "trajectory-check": _run_trajectory_check,
}


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute one experiment, write its files and manifest, and return the exit status."""
    start = time.perf_counter()
    res = RunResult(EXIT_OK)
    try:
        _guard(cfg)
        _DISPATCH[cfg.command](cfg, res)
    except ResourceRefusal as exc:
        res.status, res.error = EXIT_RESOURCE, str(exc)
    except (EigensolverError, PropagationError, LindbladError, np.linalg.LinAlgError) as exc:
        res.status, res.error = EXIT_NUMERICAL, str(exc)
    checksums = {str(p): atomic_write(p, text) for p, text in res.files.items()}
    summary = json.loads(json.dumps(res.summary, default=_finite))
    manifest = RunManifest(cfg.echo(), __version__, time.perf_counter() - start, res.status,
                           res.converged, checksums, summary, res.error)
    manifest_path = _companion(cfg.output_path, ".manifest.json")
    atomic_write(manifest_path, manifest.to_json())
    res.files[manifest_path] = None
    return res
