"""Command line front end: ``run``, ``report`` and ``validate``.

Runs are described by a JSON document, for example::

    {
      "name": "uniform_h100",
      "problem": "positive_initial",
      "initial": "uniform",
      "N": 100, "tau": 0.01, "t_end": 10.0,
      "output_stride": 100,
      "output_times": [0.01, 10.0],
      "output_dir": "runs"
    }

``problem`` is one of ``positive_initial``, ``pure_drift_delta`` or
``semi_selection``. Delta problems take ``"initial": {"x0": 0.4}`` (plus
optional ``sigma`` and ``offset``); selection adds ``s`` and ``Ne``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .delta import MAX_SELECTION, DeltaSpec, SubproblemError, iter_delta
from .energy import ProblemSpec
from .grid_ops import EdgeFunction, nodes
from .newton import NewtonError, NewtonParams
from .stepper import (
    DensityField,
    Diagnostics,
    SolverParams,
    compute_diagnostics,
    init_state,
    recover_density,
    run_steps,
)

log = logging.getLogger("driftflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

PROBLEMS = ("positive_initial", "pure_drift_delta", "semi_selection")
INITIALS = ("uniform", "f02_polynomial_sine", "custom_samples")
EMITS = ("snapshots", "diagnostics", "energy_trace", "particle_trace")
DIAG_COLUMNS = ("time", "total_mass", "barycenter", "energy", "f_l", "f_r", "M_l", "M_r")
TABLE_COLUMNS = ("h", "tau", "M_total", "Barycenter", "f_l", "f_r", "M_l", "M_r")
MASS_CHECK_TOL = 1e-12
DUST_FRACTION = 1e-6


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


def f02(x):
    """``(2 + 6x + (pi/2) sin 2 pi x) / 5``, a smooth unit-mass density."""
    return 0.2 * (2.0 + 6.0 * x + 0.5 * np.pi * np.sin(2.0 * np.pi * x))


@dataclass
class RunConfig:
    problem: str
    N: int
    tau: float
    t_end: float
    initial: Any = "uniform"
    eps0: float = 1e-10
    output_times: list[float] = field(default_factory=list)
    output_stride: int = 1
    newton: NewtonParams = field(default_factory=NewtonParams)
    output_dir: str = "runs"
    emit: tuple[str, ...] = ("snapshots", "diagnostics")
    s: float = 0.0
    Ne: float = 10000.0
    name: str = "run"
    samples: list[float] | None = None

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def solver(self) -> SolverParams:
        return SolverParams(tau=self.tau, eps0=self.eps0, newton=self.newton)

    def delta_spec(self) -> DeltaSpec:
        return DeltaSpec(**self.initial)

    def problem_spec(self) -> ProblemSpec:
        if self.initial == "uniform":
            f0 = np.ones(self.N + 1)
        elif self.initial == "f02_polynomial_sine":
            f0 = f02(nodes(self.N))
        else:
            f0 = np.asarray(self.samples, dtype=float)
        return ProblemSpec(EdgeFunction(f0, 1.0 / self.N))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["emit"] = list(self.emit)
        return d


def _field_error(path: str, msg: str) -> ConfigError:
    return ConfigError(f"field '{path}': {msg}")


def _number(raw: dict, key: str, kind=float, required=False, default=None):
    if key not in raw:
        if required:
            raise _field_error(key, "missing required field")
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _field_error(key, f"expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise _field_error(key, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    known = {f for f in RunConfig.__dataclass_fields__} - {"samples"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise _field_error(unknown[0], "unknown field")

    problem = raw.get("problem")
    if problem not in PROBLEMS:
        raise _field_error("problem", f"must be one of {', '.join(PROBLEMS)}")
    N = _number(raw, "N", int, required=True)
    tau = _number(raw, "tau", required=True)
    t_end = _number(raw, "t_end", required=True)
    eps0 = _number(raw, "eps0", default=1e-10)
    if N < 2:
        raise _field_error("N", "must be at least 2")
    if not tau > 0:
        raise _field_error("tau", "must be positive")
    if not t_end > 0:
        raise _field_error("t_end", "must be positive")
    if not 0 < eps0 <= 1e-6:
        raise _field_error("eps0", "must lie in (0, 1e-6]")

    initial = raw.get("initial", "uniform")
    samples = None
    if problem == "positive_initial":
        if isinstance(initial, dict) and "samples" in initial:
            samples = initial["samples"]
            initial = "custom_samples"
            if not isinstance(samples, list) or len(samples) != N + 1:
                raise _field_error("initial.samples", f"need a list of N+1 = {N + 1} numbers")
            if any(isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0 for v in samples):
                raise _field_error("initial.samples", "samples must be non-negative numbers")
        elif initial not in INITIALS[:2]:
            raise _field_error("initial", f"must be one of {', '.join(INITIALS[:2])} or {{'samples': [...]}}")
    else:
        if not isinstance(initial, dict) or "x0" not in initial:
            raise _field_error("initial", "delta problems need an object with 'x0'")
        extra = sorted(set(initial) - {"x0", "sigma", "offset"})
        if extra:
            raise _field_error(f"initial.{extra[0]}", "unknown field")
        for k in initial:
            _number(initial, k)
        try:
            DeltaSpec(**{k: float(v) for k, v in initial.items()})
        except ValueError as exc:
            raise _field_error("initial", str(exc)) from None
        initial = {k: float(v) for k, v in initial.items()}

    s = _number(raw, "s", default=0.0)
    Ne = _number(raw, "Ne", default=10000.0)
    if problem == "semi_selection":
        if abs(s) > MAX_SELECTION:
            raise _field_error("s", f"|s| must be at most {MAX_SELECTION}")
        if not Ne > 0:
            raise _field_error("Ne", "must be positive")

    output_times = raw.get("output_times", [])
    if not isinstance(output_times, list) or any(
        isinstance(t, bool) or not isinstance(t, (int, float)) for t in output_times
    ):
        raise _field_error("output_times", "expected a list of numbers")
    output_times = [float(t) for t in output_times]
    if any(b <= a for a, b in zip(output_times, output_times[1:])):
        raise _field_error("output_times", "must be strictly increasing")
    if any(t < 0 or t > t_end for t in output_times):
        raise _field_error("output_times", "times must lie in [0, t_end]")
    stride = _number(raw, "output_stride", int, default=1)
    if stride < 1:
        raise _field_error("output_stride", "must be at least 1")

    newton_raw = raw.get("newton", {})
    if not isinstance(newton_raw, dict):
        raise _field_error("newton", "expected an object")
    bad = sorted(set(newton_raw) - set(NewtonParams.__dataclass_fields__))
    if bad:
        raise _field_error(f"newton.{bad[0]}", "unknown field")
    try:
        newton = NewtonParams(
            **{
                k: _number(newton_raw, k, int if k in ("max_iters", "max_backtracks") else float)
                for k in newton_raw
            }
        )
    except ConfigError as exc:
        raise ConfigError(str(exc).replace("field '", "field 'newton.")) from None
    except ValueError as exc:
        raise _field_error("newton", str(exc)) from None

    emit = raw.get("emit", ["snapshots", "diagnostics"])
    if not isinstance(emit, list) or any(e not in EMITS for e in emit):
        raise _field_error("emit", f"entries must be among {', '.join(EMITS)}")

    name = raw.get("name", "run")
    out = raw.get("output_dir", "runs")
    for key, value in (("name", name), ("output_dir", out)):
        if not isinstance(value, str) or not value:
            raise _field_error(key, "expected a non-empty string")

    return RunConfig(
        problem=problem,
        N=N,
        tau=tau,
        t_end=t_end,
        initial=initial,
        eps0=eps0,
        output_times=output_times,
        output_stride=stride,
        newton=newton,
        output_dir=out,
        emit=tuple(emit),
        s=s,
        Ne=Ne,
        name=name,
        samples=samples,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        cfg = parse_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "output_dir" not in raw:
        cfg.output_dir = str(path.parent / "runs")
    return cfg


# -- emission ---------------------------------------------------------------

def _g(v: float) -> str:
    return f"{v:.17g}"


def _e(v: float) -> str:
    return f"{v:.16e}"


def snapshot_text(field: DensityField, expected_mass: float) -> str:
    total = float(np.sum(field.masses))
    if abs(total - expected_mass) > MASS_CHECK_TOL * max(1.0, abs(expected_mass)):
        raise RuntimeError(f"snapshot mass {total!r} differs from conserved total {expected_mass!r}")
    i_s = field.free_range[0]
    buf = io.StringIO()
    buf.write("index,position,density,mass\n")
    for k, (x, f, m) in enumerate(zip(field.positions, field.density, field.masses)):
        buf.write(f"{i_s + k},{_g(x)},{_e(f)},{_g(m)}\n")
    return buf.getvalue()


def diagnostics_row(d: Diagnostics) -> list[str]:
    return [
        _g(d.time), _g(d.total_mass), _g(d.barycenter), _g(d.energy),
        _e(d.f_left), _e(d.f_right), _g(d.mass_left), _g(d.mass_right),
    ]


def _snapshot_name(t: float) -> str:
    return f"snapshot_t{t:.6f}.csv"


class _Emitter:
    def __init__(self, cfg: RunConfig, expected_mass: float):
        self.cfg = cfg
        self.expected_mass = expected_mass
        self.dir = cfg.run_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.wanted = {int(round(t / cfg.tau)): t for t in cfg.output_times}
        self.diag_rows: list[list[str]] = []
        self.energy_rows: list[list[str]] = []
        self.particle_rows: list[str] = []
        self.iterations: list[int] = []

    def record(self, step: int, x: np.ndarray, field: DensityField, diag: Diagnostics, final=False):
        if step > 0 and not final:
            self.iterations.append(diag.newton_iterations)
            if "energy_trace" in self.cfg.emit:
                self.energy_rows.append(
                    [str(step), _g(diag.time), _g(diag.energy_before), _g(diag.energy_after), _g(diag.dissipation)]
                )
        on_stride = step % self.cfg.output_stride == 0
        if on_stride or final:
            if not self.diag_rows or self.diag_rows[-1][0] != _g(diag.time):
                self.diag_rows.append(diagnostics_row(diag))
            if "particle_trace" in self.cfg.emit:
                self.particle_rows.append(_g(diag.time) + "," + ",".join(_g(v) for v in x))
        if "snapshots" in self.cfg.emit:
            if step in self.wanted:
                self._snapshot(self.wanted.pop(step), field)
            if final:
                for t in list(self.wanted.values()):
                    self._snapshot(t, field)
                self.wanted.clear()

    def _snapshot(self, t: float, field: DensityField):
        (self.dir / _snapshot_name(t)).write_text(snapshot_text(field, self.expected_mass))

    def close(self):
        if "diagnostics" in self.cfg.emit:
            _write_csv(self.dir / "diagnostics.csv", DIAG_COLUMNS, self.diag_rows)
        if "energy_trace" in self.cfg.emit:
            _write_csv(
                self.dir / "energy_trace.csv",
                ("step", "time", "energy_before", "energy_after", "dissipation"),
                self.energy_rows,
            )
        if "particle_trace" in self.cfg.emit:
            header = "time," + ",".join(f"x{i}" for i in range(self.cfg.N + 1))
            (self.dir / "particle_trace.csv").write_text(header + "\n" + "\n".join(self.particle_rows) + "\n")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _metadata(cfg: RunConfig, emitter: _Emitter, wall: float, status: str, final: Diagnostics | None, extra=None):
    iters = emitter.iterations
    meta = {
        "driftflow_version": __version__,
        "python": platform.python_version(),
        "config": cfg.to_dict(),
        "status": status,
        "wall_time_s": wall,
        "steps": len(iters),
        "newton_iterations": {
            "total": int(sum(iters)),
            "max": int(max(iters)) if iters else 0,
            "mean": float(np.mean(iters)) if iters else 0.0,
        },
        "report_negative_density_clamp": {
            "threshold_fraction_of_max": DUST_FRACTION,
            "applies_to": "report tables only; data files hold raw values",
        },
    }
    if final is not None:
        meta["final"] = {k: v for k, v in zip(DIAG_COLUMNS, (
            final.time, final.total_mass, final.barycenter, final.energy,
            final.f_left, final.f_right, final.mass_left, final.mass_right))}
    if extra:
        meta.update(extra)
    (cfg.run_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def execute(cfg: RunConfig) -> Diagnostics:
    """Run one configuration and write its artifacts; returns the final diagnostics.

    Solver failures propagate as :class:`NewtonError` / :class:`SubproblemError`
    after the metadata (with the Newton report) has been written.
    """
    solver = cfg.solver()
    n_steps = int(round(cfg.t_end / cfg.tau))
    start = time.perf_counter()
    if cfg.problem == "positive_initial":
        spec = cfg.problem_spec()
        state = init_state(spec)
        fld = recover_density(state, cfg.eps0)
        last = (state, fld, compute_diagnostics(fld, state, spec))
        emitter = _Emitter(cfg, float(np.sum(state.m0)))
        steps = run_steps(spec, solver, n_steps, state)
    else:
        selection = cfg.problem == "semi_selection"
        sub_runs = iter_delta(cfg.delta_spec(), cfg.N, solver, cfg.t_end, cfg.s, cfg.Ne, selection)
        w, g, fld, diag = next(sub_runs)
        last = (w, fld, diag)
        emitter = _Emitter(cfg, float(np.sum(w.m0) - np.sum(g.m0)))
        # f = W - G lives on the w particles
        steps = ((w, fld, d) for w, _, fld, d in sub_runs)
    emitter.record(0, last[0].x, last[1], last[2])

    try:
        for last in steps:
            state, fld, diag = last
            emitter.record(state.step_count, state.x, fld, diag)
    except (NewtonError, SubproblemError) as exc:
        emitter.close()
        _metadata(cfg, emitter, time.perf_counter() - start, "solver_failure", None,
                  {"error": str(exc), "newton_report": exc.report.as_dict()})
        raise
    state, fld, diag = last
    emitter.record(state.step_count, state.x, fld, diag, final=True)
    emitter.close()
    _metadata(cfg, emitter, time.perf_counter() - start, "ok", diag)
    return diag


# -- report -----------------------------------------------------------------

def clamp_dust(values: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Zero negative entries no larger than ``DUST_FRACTION * max|values|``."""
    values = np.asarray(values, dtype=float)
    scale = float(np.max(np.abs(values))) if scale is None else scale
    out = values.copy()
    out[(out < 0) & (out >= -DUST_FRACTION * scale)] = 0.0
    return out


def read_final_row(cfg: RunConfig) -> dict | None:
    path = cfg.run_dir / "diagnostics.csv"
    if not path.is_file():
        return None
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    return rows[-1] if rows else None


def report_table(configs: list[RunConfig], run_missing: bool = False, jobs: int = 1) -> list[dict]:
    """One row per configuration with the final boundary quantities.

    Configurations whose artifacts are missing are skipped with a warning
    unless ``run_missing`` is set, in which case they are run first.
    """
    if run_missing:
        todo = [c for c in configs if read_final_row(c) is None]
        if jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(execute, todo))
        else:
            for c in todo:
                execute(c)
    table = []
    for cfg in configs:
        row = read_final_row(cfg)
        if row is None:
            log.warning("missing run artifacts for '%s' in %s; skipped", cfg.name, cfg.run_dir)
            continue
        f_l, f_r = clamp_dust(np.array([float(row["f_l"]), float(row["f_r"])]), max(abs(float(row["f_l"])), abs(float(row["f_r"]))))
        table.append({
            "h": 1.0 / cfg.N,
            "tau": cfg.tau,
            "M_total": float(row["total_mass"]),
            "Barycenter": float(row["barycenter"]),
            "f_l": float(f_l),
            "f_r": float(f_r),
            "M_l": float(row["M_l"]),
            "M_r": float(row["M_r"]),
        })
    return table


def format_table(table: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in table:
        writer.writerow([
            _g(row["h"]), _g(row["tau"]), f"{row['M_total']:.4f}", f"{row['Barycenter']:.4f}",
            f"{row['f_l']:.4e}", f"{row['f_r']:.4e}", f"{row['M_l']:.4f}", f"{row['M_r']:.4f}",
        ])
    return buf.getvalue()


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override output_dir from the config")

    p = sub.add_parser("report", help="tabulate final diagnostics of finished runs")
    p.add_argument("configs", nargs="*")
    p.add_argument("--run-missing", action="store_true", help="run configurations without artifacts first")
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.add_argument("-o", "--out", help="write the table here instead of stdout")

    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")

    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"{args.config}: ok ({cfg.problem}, N={cfg.N}, tau={cfg.tau:g}, t_end={cfg.t_end:g})")
            return EXIT_OK
        if args.command == "run":
            cfg = load_config(args.config)
            if args.output_dir:
                cfg.output_dir = args.output_dir
            final = execute(cfg)
            log.info("finished %s: t=%g M_l=%.4f M_r=%.4f", cfg.name, final.time, final.mass_left, final.mass_right)
            print(cfg.run_dir)
            return EXIT_OK
        configs = [load_config(c) for c in args.configs]
        text = format_table(report_table(configs, args.run_missing, args.jobs))
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonError, SubproblemError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        print(json.dumps(exc.report.as_dict(), indent=2, default=_json_default), file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
