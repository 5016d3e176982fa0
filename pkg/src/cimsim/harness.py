"""Run configuration, (zeta, T_max) sweeps and result files.

A run configuration is a JSON object::

    {
      "problem": "ring:16",            # pairwise-afm | ring:N | file:path
      "variant": "adiabatic-strat",
      "params": {"gamma": 1.1, "gamma_p": 100, "gamma_m": 0.1, "kappa": 0.316227},
      "zeta": [0.1, 0.3],
      "t_max": [100, 500],
      "eps_final_ratio": 2.0,
      "grid": {"dt": 0.002},           # or {"n_steps": 50000}
      "ensemble": {"n_sub": 20, "n_per_sub": 256},
      "seed": 1,
      "output": "out"
    }

Optional keys: ``scheme``, ``observations``, ``threads``, ``record_wall_time``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import re
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsembleConfig, EnsembleStats, run_ensemble
from .errors import CIMError, ConfigInvalid, EnsembleInvalid, IOFailure, NumericalFailure
from .integrator import SCHEMES, TimeGrid
from .ising import CouplingMatrix, ground_states_for, load_coupling, pairwise_afm, ring_afm
from .model import VARIANTS, DOPOParams, PumpSchedule, reduced_damping

CSV_HEADER = (
    "problem", "variant", "zeta", "t_max", "n_steps",
    "success_rate", "success_stderr", "diverged", "seed", "wall_s",
)
DEFAULT_DT = 0.002

_TOP_KEYS = {
    "problem", "variant", "params", "zeta", "t_max", "eps_final_ratio", "grid", "ensemble",
    "seed", "output", "scheme", "observations", "threads", "record_wall_time",
}
_PARAM_KEYS = {"gamma", "gamma_p", "gamma_m", "kappa"}


@dataclass(frozen=True)
class RunConfig:
    problem: str
    params: dict
    zeta: tuple
    t_max: tuple
    n_sub: int
    n_per_sub: int
    seed: int = 0
    variant: str = "adiabatic-strat"
    eps_final_ratio: float = 2.0
    dt: float | None = DEFAULT_DT
    n_steps: int | None = None
    output: str = "out"
    scheme: str | None = None
    observations: int = 101
    threads: int = 1
    record_wall_time: bool = False

    def grid(self, t_max: float) -> TimeGrid:
        if self.n_steps is not None:
            return TimeGrid(t_max, self.n_steps)
        return TimeGrid.from_dt(t_max, self.dt)

    def dopo_params(self, zeta: float) -> DOPOParams:
        return DOPOParams(zeta=zeta, **self.params)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zeta"] = list(self.zeta)
        d["t_max"] = list(self.t_max)
        return d


@dataclass
class ResultRow:
    problem: str
    variant: str
    zeta: float
    t_max: float
    n_steps: int
    success_rate: float | None
    success_stderr: float | None
    diverged: int
    seed: int
    wall_s: float
    failed: bool = False
    error: str = ""
    stats: EnsembleStats | None = field(default=None, repr=False)


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _number_list(doc, key, text, positive=True):
    v = doc.get(key)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigInvalid(f"'{key}' must be a non-empty list of numbers", field=key, line=_line_of(text, key))
    out = []
    for x in v:
        ok = isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
        if not ok or (positive and x <= 0) or x < 0:
            raise ConfigInvalid(f"'{key}' entries must be finite and {'positive' if positive else 'non-negative'}",
                                field=key, line=_line_of(text, key))
        out.append(float(x))
    return tuple(out)


def _require_int(value, name, text, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigInvalid(f"'{name}' must be an integer >= {minimum}", field=name,
                            line=_line_of(text, name.split(".")[-1]))
    return value


def config_from_dict(doc: dict, text: str | None = None, base_dir: str | Path | None = None) -> RunConfig:
    """Validate a parsed configuration; ``text`` is only used to report line numbers."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("configuration must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigInvalid(f"unknown field '{key}'", field=key, line=_line_of(text, key))
    for key in ("problem", "params", "zeta", "t_max", "ensemble"):
        if key not in doc:
            raise ConfigInvalid(f"missing field '{key}'", field=key)

    problem = doc["problem"]
    if not isinstance(problem, str) or not _problem_ok(problem):
        raise ConfigInvalid("'problem' must be pairwise-afm, ring:N (N >= 3) or file:path",
                            field="problem", line=_line_of(text, "problem"))
    if problem.startswith("file:") and base_dir is not None:
        p = Path(problem[5:])
        if not p.is_absolute():
            problem = "file:" + str(Path(base_dir) / p)

    params = doc["params"]
    if not isinstance(params, dict):
        raise ConfigInvalid("'params' must be an object", field="params", line=_line_of(text, "params"))
    for key in params:
        if key not in _PARAM_KEYS:
            raise ConfigInvalid(f"unknown parameter '{key}'", field=f"params.{key}", line=_line_of(text, key))
    for key in sorted(_PARAM_KEYS - params.keys()):
        raise ConfigInvalid(f"missing parameter '{key}'", field=f"params.{key}")
    for key, v in params.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
            raise ConfigInvalid(f"parameter '{key}' must be a finite non-negative number",
                                field=f"params.{key}", line=_line_of(text, key))
    params = {k: float(v) for k, v in params.items()}

    zeta = _number_list(doc, "zeta", text, positive=False)
    t_max = _number_list(doc, "t_max", text)

    ens = doc["ensemble"]
    if not isinstance(ens, dict) or set(ens) != {"n_sub", "n_per_sub"}:
        raise ConfigInvalid("'ensemble' must hold exactly n_sub and n_per_sub", field="ensemble",
                            line=_line_of(text, "ensemble"))
    n_sub = _require_int(ens["n_sub"], "ensemble.n_sub", text, 2)
    n_per_sub = _require_int(ens["n_per_sub"], "ensemble.n_per_sub", text, 1)

    grid = doc.get("grid", {"dt": DEFAULT_DT})
    if not isinstance(grid, dict) or len(grid) != 1 or not set(grid) <= {"dt", "n_steps"}:
        raise ConfigInvalid("'grid' must hold exactly one of dt or n_steps", field="grid",
                            line=_line_of(text, "grid"))
    dt, n_steps = None, None
    if "dt" in grid:
        dt = grid["dt"]
        if isinstance(dt, bool) or not isinstance(dt, (int, float)) or not (dt > 0 and math.isfinite(dt)):
            raise ConfigInvalid("'grid.dt' must be positive", field="grid.dt", line=_line_of(text, "dt"))
        dt = float(dt)
    else:
        n_steps = _require_int(grid["n_steps"], "grid.n_steps", text, 1)

    variant = doc.get("variant", "adiabatic-strat")
    if variant not in VARIANTS:
        raise ConfigInvalid(f"'variant' must be one of {VARIANTS}", field="variant", line=_line_of(text, "variant"))
    scheme = doc.get("scheme")
    if scheme is not None and scheme not in SCHEMES:
        raise ConfigInvalid(f"'scheme' must be one of {SCHEMES}", field="scheme", line=_line_of(text, "scheme"))
    if scheme == "rk4" and variant == "full-ito":
        raise ConfigInvalid("the full-ito variant requires the euler scheme", field="scheme",
                            line=_line_of(text, "scheme"))

    ratio = doc.get("eps_final_ratio", 2.0)
    if isinstance(ratio, bool) or not isinstance(ratio, (int, float)) or not (ratio >= 0 and math.isfinite(ratio)):
        raise ConfigInvalid("'eps_final_ratio' must be non-negative", field="eps_final_ratio",
                            line=_line_of(text, "eps_final_ratio"))
    seed = _require_int(doc.get("seed", 0), "seed", text, 0)
    if seed >= 1 << 64:
        raise ConfigInvalid("'seed' must fit in 64 bits", field="seed", line=_line_of(text, "seed"))
    output = doc.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ConfigInvalid("'output' must be a path", field="output", line=_line_of(text, "output"))
    observations = _require_int(doc.get("observations", 101), "observations", text, 1)
    threads = _require_int(doc.get("threads", 1), "threads", text, 1)
    record = doc.get("record_wall_time", False)
    if not isinstance(record, bool):
        raise ConfigInvalid("'record_wall_time' must be true or false", field="record_wall_time",
                            line=_line_of(text, "record_wall_time"))

    cfg = RunConfig(
        problem=problem, params=params, zeta=zeta, t_max=t_max, n_sub=n_sub, n_per_sub=n_per_sub,
        seed=seed, variant=variant, eps_final_ratio=float(ratio), dt=dt, n_steps=n_steps, output=output,
        scheme=scheme, observations=observations, threads=threads, record_wall_time=record,
    )
    # parameter invariants are checked for every zeta of the sweep
    for z in zeta:
        try:
            p = cfg.dopo_params(z)
        except CIMError as exc:
            raise ConfigInvalid(str(exc), field="params", line=_line_of(text, "params")) from exc
        if variant != "full-ito" and reduced_damping(p) <= 0:
            raise ConfigInvalid("reduced damping must be positive for this variant", field="params",
                                line=_line_of(text, "params"))
    return cfg


def _problem_ok(problem: str) -> bool:
    if problem == "pairwise-afm":
        return True
    if problem.startswith("ring:"):
        return problem[5:].isdigit() and int(problem[5:]) >= 3
    return problem.startswith("file:") and len(problem) > 5


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return config_from_dict(doc, text, base_dir=path.parent)


def build_problem(problem: str) -> CouplingMatrix:
    if problem == "pairwise-afm":
        return pairwise_afm()
    if problem.startswith("ring:"):
        return ring_afm(int(problem[5:]))
    if problem.startswith("file:"):
        return load_coupling(problem[5:])
    raise ConfigInvalid(f"unknown problem {problem!r}", field="problem")


def _problem_id(problem: str) -> str:
    return "file:" + Path(problem[5:]).name if problem.startswith("file:") else problem


def run_point(cfg: RunConfig, J, ground, zeta: float, t_max: float, workers: int | None = None) -> ResultRow:
    """One grid point; ensemble failures are recorded on the row instead of raised."""
    grid = cfg.grid(t_max)
    ens = EnsembleConfig(cfg.n_sub, cfg.n_per_sub, cfg.seed, cfg.variant, cfg.scheme, cfg.observations)
    sched = PumpSchedule(t_max, cfg.eps_final_ratio)
    start = time.perf_counter()
    row = ResultRow(_problem_id(cfg.problem), cfg.variant, zeta, t_max, grid.n_steps, None, None, 0, cfg.seed, 0.0)
    try:
        stats = run_ensemble(J, cfg.dopo_params(zeta), sched, grid, ens, ground, workers=workers or cfg.threads)
    except (EnsembleInvalid, NumericalFailure) as exc:
        row.failed, row.error = True, str(exc)
        row.diverged = ens.n_trajectories if isinstance(exc, EnsembleInvalid) else row.diverged
    else:
        row.success_rate = stats.success_rate_mean
        row.success_stderr = stats.success_rate_stderr
        row.diverged = stats.n_diverged
        row.stats = stats
    row.wall_s = time.perf_counter() - start
    return row


def run_sweep(cfg: RunConfig, workers: int | None = None, progress=None) -> list[ResultRow]:
    """All (zeta, T_max) points, ordered by T_max then zeta."""
    J = build_problem(cfg.problem)
    ground = ground_states_for(J, cfg.problem)
    rows = []
    for t_max in sorted(cfg.t_max):
        for zeta in sorted(cfg.zeta):
            row = run_point(cfg, J, ground, zeta, t_max, workers)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def results_csv(rows, record_wall_time: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([
            r.problem, r.variant, _fmt(r.zeta), _fmt(r.t_max), r.n_steps,
            _fmt(r.success_rate), _fmt(r.success_stderr), r.diverged, r.seed,
            _fmt(r.wall_s) if record_wall_time else "",
        ])
    return buf.getvalue()


def _write(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def emit_results(rows, path, record_wall_time: bool = False) -> Path:
    """Write the results CSV. Wall times stay blank unless requested so reruns are byte-identical."""
    _write(path, results_csv(rows, record_wall_time))
    return Path(path)


def _pairs(z) -> list:
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1).tolist()


def observables_dict(stats: EnsembleStats, meta: dict | None = None) -> dict:
    out = dict(meta or {})
    out.update(
        times=np.asarray(stats.times, dtype=float).tolist(),
        x_mean=_pairs(stats.x_mean),
        x_stderr=_pairs(stats.x_stderr),
        photon_number_mean=_pairs(stats.n_mean),
        photon_number_stderr=_pairs(stats.n_stderr),
        success_rate=stats.success_rate_mean,
        success_stderr=stats.success_rate_stderr,
        subensemble_rates=np.asarray(stats.subensemble_rates, dtype=float).tolist(),
        n_trajectories=stats.n_trajectories,
        n_diverged=stats.n_diverged,
        max_abs=stats.max_abs,
    )
    return out


def emit_observables(stats: EnsembleStats, path, meta: dict | None = None) -> Path:
    """Write moments as JSON; complex numbers become ``[re, im]`` pairs."""
    _write(path, json.dumps(observables_dict(stats, meta), indent=1) + "\n")
    return Path(path)


def load_observables(path) -> dict:
    """Read an observables file back, turning ``[re, im]`` pairs into complex arrays."""
    doc = json.loads(Path(path).read_text())
    for key in ("x_mean", "x_stderr", "photon_number_mean", "photon_number_stderr"):
        a = np.asarray(doc[key], dtype=float)
        doc[key] = a[..., 0] + 1j * a[..., 1]
    doc["times"] = np.asarray(doc["times"])
    return doc


def observables_name(row: ResultRow) -> str:
    return f"observables_T{row.t_max:g}_zeta{row.zeta:g}.json"


def write_manifest(cfg: RunConfig, rows, path) -> Path:
    import llvmlite
    import numba

    doc = {
        "code_version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
            "llvmlite": llvmlite.__version__,
        },
        "points": [
            {
                "zeta": r.zeta, "t_max": r.t_max, "n_steps": r.n_steps, "failed": r.failed,
                "error": r.error, "wall_s": r.wall_s,
                "observables": None if r.failed else observables_name(r),
            }
            for r in rows
        ],
    }
    _write(path, json.dumps(doc, indent=1) + "\n")
    return Path(path)


def write_outputs(cfg: RunConfig, rows, out_dir=None) -> Path:
    """Results CSV, one observables file per successful point, and the manifest."""
    out = Path(out_dir or cfg.output)
    emit_results(rows, out / "results.csv", cfg.record_wall_time)
    for r in rows:
        if not r.failed:
            meta = {"problem": r.problem, "variant": r.variant, "zeta": r.zeta, "t_max": r.t_max,
                    "n_steps": r.n_steps, "seed": r.seed}
            emit_observables(r.stats, out / observables_name(r), meta)
    write_manifest(cfg, rows, out / "manifest.json")
    return out


def with_overrides(cfg: RunConfig, seed=None, out=None, threads=None, variant=None) -> RunConfig:
    """Apply command-line overrides and recheck the variant/scheme pairing."""
    changes = {}
    if seed is not None:
        if not 0 <= seed < 1 << 64:
            raise ConfigInvalid("seed must be a 64-bit non-negative integer", field="seed")
        changes["seed"] = seed
    if out is not None:
        changes["output"] = os.fspath(out)
    if threads is not None:
        if threads < 1:
            raise ConfigInvalid("threads must be >= 1", field="threads")
        changes["threads"] = threads
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigInvalid(f"variant must be one of {VARIANTS}", field="variant")
        changes["variant"] = variant
    new = replace(cfg, **changes)
    if new.variant == "full-ito" and new.scheme == "rk4":
        raise ConfigInvalid("the full-ito variant requires the euler scheme", field="variant")
    return new
