"""TOML run configuration: schema, defaults and validation.

Every key has a documented default (see :data:`SCHEMA`), so a document with
only ``[run] experiment = "..."`` is valid.  Parsing reports every violation
at once through :class:`~epzero.errors.ConfigurationError`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .euler_poisson_solver import SolverConfig
from .incompressible_limit import SweepConfig, check_epsilon_list
from .plasma_model import ModelParams
from .spectral_core import TorusGrid


class Experiment(str, enum.Enum):
    UNIT_SUITE = "unit-suite"
    DECAY = "decay"
    DISPERSIVE = "dispersive"
    STRICHARTZ = "strichartz"
    LIMIT_SWEEP = "limit-sweep"
    SINGLE_RUN = "single-run"


@dataclass(frozen=True)
class Key:
    default: Any
    kind: str  # float, int, bool, str, floats, ints, exponents
    doc: str = ""
    required: bool = False


REQUIRED = object()

SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "experiment": Key(REQUIRED, "str", "one of " + ", ".join(e.value for e in Experiment), required=True),
        "output_dir": Key("epzero-out", "str", "directory for every artifact of the run"),
        "seed": Key(0, "int", "seed for random-field corpora"),
        "jobs": Key(None, "int", "worker processes; falls back to EPZERO_JOBS, then 1"),
    },
    "model": {
        "gamma": Key(2.0, "float", "adiabatic exponent, >= 1"),
        "A": Key(1.0, "float", "pressure constant, > 0"),
        "n_bar": Key(1.0, "float", "background density, > 0"),
        "epsilon": Key(0.1, "float", "scaled electron mass for single runs, in (0, 1]"),
    },
    "grid": {
        "dimension": Key(2, "int", "spatial dimension"),
        "points": Key(128, "int", "grid points per axis, power of two"),
        "side_length": Key(2 * math.pi * 16, "float", "torus side length"),
    },
    "solver": {
        "dt": Key(0.01, "float", "time step, <= 0.1"),
        "t_end": Key(5.0, "float", "final time"),
        "dealias": Key(True, "bool", "2/3-rule dealiasing of products"),
        "poisson_tol": Key(1e-10, "float", "Poisson residual tolerance"),
        "record_every": Key(10, "int", "steps between recorded diagnostics"),
        "vacuum_fraction": Key(0.25, "float", "abort when the sound-speed margin falls below this fraction"),
        "energy_C": Key(5.0, "float", "coupling constant of the energy functional"),
    },
    "data": {
        "amplitude": Key(0.02, "float", "peak of the initial density and velocity"),
        "width": Key(4.0, "float", "length scale of the periodic bump"),
    },
    "sweep": {
        "epsilons": Key([0.2, 0.1, 0.05, 0.025], "floats", "strictly decreasing, in (0, 1]"),
        "t_end": Key(4.0, "float", "final time of every sweep run"),
        "record_interval": Key(0.05, "float", "common sampling interval"),
        "dt_max": Key(0.05, "float", "largest run step"),
        "dt_per_epsilon": Key(0.05, "float", "run step is min(dt_max, dt_per_epsilon * eps)"),
        "limit_dt": Key(0.005, "float", "step of the limit solve"),
        "besov_p": Key([2.0, math.inf], "exponents", "Besov integrability exponents (numbers or \"inf\")"),
        "delta0": Key(0.05, "float", "smallness threshold on the limit data; negative disables"),
    },
    "decay": {
        "epsilons": Key([1.0, 0.1, 0.01], "floats", "strictly decreasing, in (0, 1]"),
        "t_end": Key(20.0, "float", "final time"),
        "dt": Key(0.02, "float", "time step"),
        "record_every": Key(10, "int", "steps between samples of the Besov norm"),
        "amplitude": Key(0.02, "float", "peak of the initial density and velocity"),
        "max_spread": Key(3.0, "float", "largest allowed ratio between fitted rates"),
        "min_r2": Key(0.95, "float", "smallest allowed r^2 of each fit"),
    },
    "dispersive": {
        "epsilon": Key(0.1, "float", "scaled electron mass"),
        "j": Key([1, 2, 3, 4, 5], "ints", "integral indices"),
        "k": Key([0, 1, 2], "ints", "frequency shells"),
        "tau": Key([1.0, 4.0, 16.0, 64.0], "floats", "fast times"),
        "t": Key([0.0, 1.0, 2.0], "floats", "slow times"),
        "rtol": Key(1e-6, "float", "quadrature relative tolerance"),
        "max_spread": Key(3.0, "float", "largest allowed spread of the fitted constants"),
        "min_tau_ratio": Key(1.4, "float", "smallest allowed |I(tau)|/|I(4 tau)| for tau >= 4"),
    },
    "strichartz": {
        "epsilons": Key([0.1, 0.05, 0.025, 0.0125], "floats", "strictly decreasing, in (0, 1]"),
        "t_end": Key(20.0, "float", "time horizon of the L^1 norm"),
        "dt": Key(0.002, "float", "sampling step"),
        "shell": Key(0, "int", "dyadic shell of the band-limited data"),
        "max_spread": Key(2.0, "float", "largest allowed spread of the scaled norms"),
    },
    "unit": {
        "fields": Key(20, "int", "random fields per check"),
        "frequencies": Key(10_000, "int", "random frequencies per symbol check"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one ``epzero`` invocation.

    ``sections`` holds every resolved value (defaults filled in) and is what
    the manifest echoes.
    """

    experiment: Experiment
    model: ModelParams
    grid: TorusGrid
    solver: SolverConfig
    sweep: tuple
    output_dir: Path
    seed: int
    jobs: Optional[int]
    sections: dict = field(default_factory=dict, compare=False)

    def section(self, name: str) -> dict:
        return dict(self.sections[name])

    def sweep_config(self, jobs: int = 1) -> SweepConfig:
        s = self.sections["sweep"]
        delta0 = s["delta0"] if s["delta0"] >= 0 else None
        return SweepConfig(grid=self.grid, gamma=self.model.gamma, A=self.model.A, n_bar=self.model.n_bar,
                           t_end=s["t_end"], record_interval=s["record_interval"], dt_max=s["dt_max"],
                           dt_per_epsilon=s["dt_per_epsilon"], limit_dt=s["limit_dt"],
                           besov_p=tuple(s["besov_p"]), delta0=delta0, jobs=jobs)

    def with_overrides(self, output_dir=None, seed=None, jobs=None) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        changes = {}
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
            sections["run"]["output_dir"] = str(output_dir)
        if seed is not None:
            changes["seed"] = int(seed)
            sections["run"]["seed"] = int(seed)
        if jobs is not None:
            changes["jobs"] = int(jobs)
            sections["run"]["jobs"] = int(jobs)
        return replace(self, sections=sections, **changes)

    def echo(self) -> dict:
        """JSON-safe copy of the resolved values (infinity as ``"inf"``)."""
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        return {sec: {k: clean(v) for k, v in vals.items()} for sec, vals in self.sections.items()}


def _coerce(value, kind: str):
    """Return ``(converted, error)``."""
    def number(x, integral):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            return None
        if integral:
            return int(x) if isinstance(x, int) or float(x).is_integer() else None
        return float(x)

    if kind in ("float", "int"):
        out = number(value, kind == "int")
        return (out, None) if out is not None else (None, f"expected {'an integer' if kind == 'int' else 'a number'}")
    if kind == "bool":
        return (value, None) if isinstance(value, bool) else (None, "expected true or false")
    if kind == "str":
        return (value, None) if isinstance(value, str) else (None, "expected a string")
    if not isinstance(value, list):
        return None, "expected a list"
    out = []
    for x in value:
        if kind == "exponents" and isinstance(x, str) and x.strip().lower() in ("inf", "infinity"):
            out.append(math.inf)
            continue
        y = number(x, kind == "ints")
        if y is None:
            return None, "list entries must be " + ("integers" if kind == "ints" else "numbers")
        out.append(y)
    return out, None


def _resolve(doc: dict, experiment: Optional[str]) -> tuple[dict, list]:
    problems = []
    for name, value in doc.items():
        if name not in SCHEMA:
            problems.append(f"unknown section [{name}]")
        elif not isinstance(value, dict):
            problems.append(f"[{name}] must be a table")
    sections = {}
    for sec, keys in SCHEMA.items():
        given = doc.get(sec, {})
        given = given if isinstance(given, dict) else {}
        for key in given:
            if key not in keys:
                problems.append(f"unknown key '{sec}.{key}'")
        vals = {}
        for key, spec in keys.items():
            if key in given:
                converted, err = _coerce(given[key], spec.kind)
                if err:
                    problems.append(f"{sec}.{key}: {err}")
                    converted = None if spec.default is REQUIRED else spec.default
                vals[key] = converted
            elif spec.required:
                vals[key] = None
            else:
                vals[key] = list(spec.default) if isinstance(spec.default, list) else spec.default
        sections[sec] = vals
    run = sections["run"]
    if experiment is not None:
        run["experiment"] = experiment
    if run["experiment"] is None:
        if "experiment" not in (doc.get("run") or {}):
            problems.append("missing required key 'run.experiment'")
    elif run["experiment"] not in {e.value for e in Experiment}:
        problems.append(f"run.experiment: unknown experiment '{run['experiment']}'")
    return sections, problems


def _collect(problems: list, prefix: str, build):
    try:
        return build()
    except ConfigurationError as exc:
        problems.extend(f"{prefix}: {p}" for p in exc.problems)
    except (TypeError, ValueError) as exc:
        problems.append(f"{prefix}: {exc}")
    return None


def parse_config(text: str, experiment: Optional[str] = None) -> RunConfig:
    """Parse and validate a TOML document.

    ``experiment`` overrides ``[run] experiment`` (the CLI passes it
    positionally).  Raises :class:`ConfigurationError` listing every problem.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"not a valid TOML document: {exc}") from None
    sections, problems = _resolve(doc, experiment)

    m, g, s, run = sections["model"], sections["grid"], sections["solver"], sections["run"]
    model = _collect(problems, "model", lambda: ModelParams(m["gamma"], m["A"], m["n_bar"], m["epsilon"]))
    grid = _collect(problems, "grid", lambda: TorusGrid(g["dimension"], g["points"], g["side_length"]))
    solver = None
    if model is not None and grid is not None:
        solver = _collect(problems, "solver", lambda: SolverConfig(
            params=model, grid=grid, dt=s["dt"], t_end=s["t_end"], dealias=s["dealias"],
            poisson_tol=s["poisson_tol"], record_every=s["record_every"],
            vacuum_fraction=s["vacuum_fraction"], energy_C=s["energy_C"]))
    for sec in ("sweep", "decay", "strichartz"):
        _collect(problems, f"{sec}.epsilons", lambda sec=sec: check_epsilon_list(sections[sec]["epsilons"]))
    if model is not None and grid is not None:
        # validate the shared sweep controls once, before any run starts
        sw = sections["sweep"]
        _collect(problems, "sweep", lambda: SweepConfig(
            grid=grid, gamma=model.gamma, A=model.A, n_bar=model.n_bar, t_end=sw["t_end"],
            record_interval=sw["record_interval"], dt_max=sw["dt_max"], dt_per_epsilon=sw["dt_per_epsilon"],
            limit_dt=sw["limit_dt"], besov_p=tuple(sw["besov_p"])))
    problems.extend(_range_checks(sections))
    if run["jobs"] is not None and run["jobs"] < 1:
        problems.append("run.jobs must be a positive integer")

    if problems:
        raise ConfigurationError(problems)
    return RunConfig(experiment=Experiment(run["experiment"]), model=model, grid=grid, solver=solver,
                     sweep=tuple(sections["sweep"]["epsilons"]), output_dir=Path(run["output_dir"]),
                     seed=run["seed"], jobs=run["jobs"], sections=sections)


def _range_checks(sections: dict) -> list:
    problems = []
    d, dec, dis, st, unit = (sections[k] for k in ("data", "decay", "dispersive", "strichartz", "unit"))
    if not d["amplitude"] > 0:
        problems.append("data.amplitude must be positive")
    if not d["width"] > 0:
        problems.append("data.width must be positive")
    for name in ("t_end", "dt", "amplitude"):
        if not dec[name] > 0:
            problems.append(f"decay.{name} must be positive")
    if dec["dt"] > 0.1:
        problems.append("decay.dt must be <= 0.1")
    if dec["record_every"] < 1:
        problems.append("decay.record_every must be a positive integer")
    if not 0 < dis["epsilon"] <= 1:
        problems.append("dispersive.epsilon must lie in (0, 1]")
    if any(j not in range(1, 6) for j in dis["j"]):
        problems.append("dispersive.j entries must lie in 1..5")
    if any(k < 0 for k in dis["k"]):
        problems.append("dispersive.k entries must be >= 0")
    if any(not x > 0 for x in dis["tau"]):
        problems.append("dispersive.tau entries must be positive")
    if any(x < 0 for x in dis["t"]):
        problems.append("dispersive.t entries must be >= 0")
    if not 0 < dis["rtol"] < 1:
        problems.append("dispersive.rtol must lie in (0, 1)")
    for name in ("t_end", "dt"):
        if not st[name] > 0:
            problems.append(f"strichartz.{name} must be positive")
    if st["shell"] < 0:
        problems.append("strichartz.shell must be >= 0")
    for sec in ("decay", "dispersive", "strichartz"):
        if not sections[sec]["max_spread"] >= 1:
            problems.append(f"{sec}.max_spread must be >= 1")
    for name in ("fields", "frequencies"):
        if unit[name] < 1:
            problems.append(f"unit.{name} must be a positive integer")
    return problems


def load_config(path, experiment: Optional[str] = None) -> RunConfig:
    text = Path(path).read_bytes().decode("utf-8")
    return parse_config(text, experiment)


def defaults_table() -> str:
    """Markdown table of every key, its default and meaning."""
    rows = ["| key | default | meaning |", "| --- | --- | --- |"]
    for sec, keys in SCHEMA.items():
        for key, spec in keys.items():
            default = "required" if spec.default is REQUIRED else spec.default
            if isinstance(default, float):
                default = f"{default:.6g}"
            if isinstance(default, list):
                default = "[" + ", ".join('"inf"' if x == math.inf else f"{x:g}" for x in default) + "]"
            rows.append(f"| `{sec}.{key}` | {default} | {spec.doc} |")
    return "\n".join(rows)
