"""Experiment configuration files.

Configurations are INI files read with :mod:`configparser`.  Sections:

``[lattice]``
    ``d``, ``T``, ``m``; ``labels`` (``T**d`` integers, row-major);
    ``range0 .. rangeN`` offset lists (``;``-separated offsets, each a
    ``,``-separated integer vector; in ``d = 1`` plain whitespace lists work).
``[energy]``
    ``p``; ``strong``, ``weak`` density names with ``strong_coef``,
    ``strong_p``, ``strong_A``, ``strong_shift`` (same for ``weak``);
    ``site = none`` or a density name with ``site_coef``, ``site_target``
    (``const``/``sin``/``cos``), ``site_target_amp``, ``site_target_freq``,
    ``site_target_offset`` and optional ``site_weights``.
``[task]``
    ``name`` plus the parameters of that task (see :data:`TASK_KEYS`).
``[output]``
    ``dir``.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import EnergyModel, Profile, SitePotential, make_density
from .lattice import LatticeError, PeriodicLatticeModel

TASKS = ("analyze", "phi", "fhom", "islands", "gamma-check", "flow-micro", "flow-macro", "flow-compare")

TASK_KEYS = {
    "analyze": set(),
    "phi": {"z", "ms", "variant", "boundary", "r"},
    "fhom": {"xi", "ks", "boundary", "phases"},
    "islands": set(),
    "gamma-check": {"eps", "n_macro"},
    "flow-micro": {"eps", "tau", "t_max", "initial", "save_every"},
    "flow-macro": {"tau", "t_max", "n_macro", "initial", "save_every"},
    "flow-compare": {"eps", "tau", "t_max", "n_macro", "initial"},
}
_COMMON_TASK_KEYS = {"name", "tol", "initial_amp", "initial_freq", "initial_offset"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry as ``section.key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentConfig:
    model: PeriodicLatticeModel
    energy: EnergyModel
    task: str
    params: dict
    out_dir: Path | None
    source: str
    path: Path | None = None
    raw: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        """Hash of the normalized configuration contents."""
        return hashlib.sha256(self.source.encode()).hexdigest()[:16]


def bundled_configs() -> list:
    return sorted(p.name for p in resources.files("latticehom").joinpath("data").iterdir()
                  if p.name.endswith(".cfg"))


def resolve_path(name: str | Path) -> Path:
    """A path on disk, or else the name of a bundled example."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name if p.name.endswith(".cfg") else p.name + ".cfg"
    bundled = resources.files("latticehom").joinpath("data", stem)
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError("config", f"no such file {str(name)!r}")


# ------------------------------------------------------------ value parsing

def _number(key: str, text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(key, f"expected a number, got {text!r}") from None


def _integer(key: str, text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None


def _numbers(key: str, text: str) -> list:
    vals = [_number(key, t) for t in text.replace(",", " ").split()]
    if not vals:
        raise ConfigError(key, "list must be nonempty")
    return vals


def _vectors(key: str, text: str) -> np.ndarray:
    """``"1, 0; 0, 1"`` -> rows; whitespace-only text is a list of scalars."""
    if ";" in text:
        rows = [_numbers(key, part) for part in text.split(";") if part.strip()]
    else:
        rows = [[v] for v in _numbers(key, text)]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(key, "all vectors must have the same length")
    return np.array(rows, dtype=float)


def _offsets(key: str, text: str, d: int) -> np.ndarray:
    if d == 1 and ";" not in text:
        rows = [[int(v)] for v in _numbers(key, text)]
    else:
        rows = [[int(v) for v in _numbers(key, part)] for part in text.split(";") if part.strip()]
    arr = np.array(rows, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ConfigError(key, f"offsets must have {d} components")
    return arr


# ------------------------------------------------------------------ builders

def _section(cp: configparser.ConfigParser, name: str) -> configparser.SectionProxy:
    if not cp.has_section(name):
        raise ConfigError(name, "missing section")
    return cp[name]


def _density(sec, prefix: str, d: int, m: int):
    kind = sec.get(prefix, "quadratic").strip().lower()
    params = {}
    if f"{prefix}_coef" in sec:
        params["coef"] = _number(f"energy.{prefix}_coef", sec[f"{prefix}_coef"])
    if f"{prefix}_p" in sec:
        params["p"] = _number(f"energy.{prefix}_p", sec[f"{prefix}_p"])
    if f"{prefix}_a" in sec:
        params["A"] = _vectors(f"energy.{prefix}_A", sec[f"{prefix}_a"])
    if f"{prefix}_shift" in sec:
        params["shift"] = _numbers(f"energy.{prefix}_shift", sec[f"{prefix}_shift"])
    if kind == "anisotropic" and "A" not in params:
        raise ConfigError(f"energy.{prefix}_A", "anisotropic density needs a matrix")
    if kind == "shifted" and "shift" not in params:
        raise ConfigError(f"energy.{prefix}_shift", "shifted density needs a shift")
    try:
        return make_density(kind, **params)
    except ValueError as exc:
        raise ConfigError(f"energy.{prefix}", str(exc)) from None


def _profile(sec, prefix: str, key_prefix: str) -> Profile:
    kind = sec.get(prefix, "const").strip().lower()
    if kind not in ("const", "sin", "cos"):
        raise ConfigError(f"{key_prefix}{prefix}", f"unknown profile {kind!r}")
    get = lambda k, dflt: _number(f"{key_prefix}{prefix}_{k}", sec[f"{prefix}_{k}"]) if f"{prefix}_{k}" in sec else dflt
    return Profile(kind, get("amp", 1.0 if kind != "const" else 0.0), get("freq", 1.0), get("offset", 0.0))


def build_model(sec) -> PeriodicLatticeModel:
    d = _integer("lattice.d", sec.get("d", "1"))
    if d < 1:
        raise ConfigError("lattice.d", "dimension must be positive")
    if "t" not in sec:
        raise ConfigError("lattice.T", "period is required")
    T = _integer("lattice.T", sec["t"])
    if T < 1:
        raise ConfigError("lattice.T", f"period must be a positive integer, got {T}")
    m = _integer("lattice.m", sec.get("m", "1"))
    if m < 1:
        raise ConfigError("lattice.m", "codomain dimension must be positive")
    if "labels" not in sec:
        raise ConfigError("lattice.labels", "labels are required")
    labels = [_integer("lattice.labels", t) for t in sec["labels"].replace(",", " ").split()]
    if len(labels) != T ** d:
        raise ConfigError("lattice.labels", f"expected {T ** d} labels, got {len(labels)}")
    N = max(labels)
    ranges = []
    for j in range(N + 1):
        key = f"range{j}"
        if key not in sec:
            raise ConfigError(f"lattice.{key}", f"range of label {j} is required")
        ranges.append(_offsets(f"lattice.{key}", sec[key], d))
    try:
        return PeriodicLatticeModel(np.array(labels).reshape((T,) * d), ranges, m=m)
    except LatticeError as exc:
        raise ConfigError("lattice.labels", str(exc)) from None


def build_energy(sec, model: PeriodicLatticeModel) -> EnergyModel:
    p = _number("energy.p", sec.get("p", "2"))
    strong = _density(sec, "strong", model.d, model.m)
    weak = _density(sec, "weak", model.d, model.m)
    site = None
    skind = sec.get("site", "none").strip().lower()
    if skind != "none":
        dens = _density(sec, "site", model.d, model.m)
        target = _profile(sec, "site_target", "energy.")
        weights = None
        if "site_weights" in sec:
            w = _numbers("energy.site_weights", sec["site_weights"])
            if len(w) != model.T ** model.d:
                raise ConfigError("energy.site_weights", f"expected {model.T ** model.d} weights")
            weights = np.array(w).reshape((model.T,) * model.d)
        site = SitePotential(dens, target, weights)
    try:
        return EnergyModel(p, strong, weak, site)
    except ValueError as exc:
        raise ConfigError("energy.weak", str(exc)) from None


def _task_params(sec, task: str, model: PeriodicLatticeModel, strict: bool = True) -> dict:
    allowed = TASK_KEYS[task] | _COMMON_TASK_KEYS
    extra = set(sec.keys()) - allowed
    if not strict:
        # block written for another task: keep only what applies here
        sec = {k: v for k, v in sec.items() if k in allowed}
    elif extra:
        raise ConfigError(f"task.{sorted(extra)[0]}", f"not a parameter of task {task!r}")
    out: dict = {}
    if "tol" in sec:
        out["tol"] = _number("task.tol", sec["tol"])
    if "z" in sec:
        z = _vectors("task.z", sec["z"])
        if z.shape[1] != model.N * model.m:
            raise ConfigError("task.z", f"samples need {model.N * model.m} components")
        out["z"] = z
    if "xi" in sec:
        xi = _vectors("task.xi", sec["xi"])
        if xi.shape[1] != model.m * model.d:
            raise ConfigError("task.xi", f"directions need {model.m * model.d} components")
        out["xi"] = xi
    for key in ("ms", "ks"):
        if key in sec:
            vals = [_integer(f"task.{key}", t) for t in sec[key].replace(",", " ").split()]
            if not vals or min(vals) < 1:
                raise ConfigError(f"task.{key}", "sizes must be a nonempty list of positive integers")
            out[key] = vals
    if "phases" in sec:
        ph = [_integer("task.phases", t) for t in sec["phases"].split()]
        if not ph or any(j < 1 or j > model.N for j in ph):
            raise ConfigError("task.phases", f"phases must lie in 1..{model.N}")
        out["phases"] = ph
    if "eps" in sec:
        eps = _numbers("task.eps", sec["eps"])
        for e in eps:
            n = round(1.0 / e) if e > 0 else 0
            if e <= 0 or abs(n * e - 1.0) > 1e-12 or n % model.T:
                raise ConfigError("task.eps", f"1/eps must be a positive multiple of the period, got {e}")
        out["eps"] = eps
    for key in ("tau", "t_max", "r"):
        if key in sec:
            v = _number(f"task.{key}", sec[key])
            if v <= 0:
                raise ConfigError(f"task.{key}", "must be positive")
            out[key] = v
    for key in ("n_macro", "save_every"):
        if key in sec:
            v = _integer(f"task.{key}", sec[key])
            if v < 1:
                raise ConfigError(f"task.{key}", "must be positive")
            out[key] = v
    if "variant" in sec:
        v = sec["variant"].strip()
        if v not in ("free", "tilde"):
            raise ConfigError("task.variant", "must be free or tilde")
        out["variant"] = v
    if "boundary" in sec:
        out["boundary"] = sec["boundary"].strip()
    if "initial" in sec:
        out["initial"] = _profile(sec, "initial", "task.")
    return out


_DEFAULTS = {
    "phi": {"ms": [2, 4, 8], "variant": "free", "boundary": "periodic"},
    "fhom": {"ks": [8, 16, 32], "boundary": "periodic"},
    "gamma-check": {"eps": [1 / 16, 1 / 32, 1 / 64, 1 / 128], "n_macro": 2048},
    "flow-micro": {"eps": [1 / 32], "tau": 1e-3, "t_max": 0.1, "save_every": 10},
    "flow-macro": {"tau": 1e-3, "t_max": 1.0, "n_macro": 256, "save_every": 10},
    "flow-compare": {"eps": [1 / 16, 1 / 32, 1 / 64], "tau": 1e-3, "t_max": 0.1, "n_macro": 256},
}


def parse_config(text: str, path: Path | None = None, task: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", f"unreadable: {exc}") from None
    model = build_model(_section(cp, "lattice"))
    energy = build_energy(_section(cp, "energy"), model)
    tsec = cp["task"] if cp.has_section("task") else {}
    name = task or (tsec.get("name", "").strip() if tsec else "")
    if name not in TASKS:
        raise ConfigError("task.name", f"unknown task {name!r}; expected one of {', '.join(TASKS)}")
    params = dict(_DEFAULTS.get(name, {}))
    if tsec:
        strict = task is None or tsec.get("name", "").strip() == task
        params.update(_task_params(tsec, name, model, strict))
    if name == "phi" and "z" not in params:
        axes = [np.array([-1.0, 0.0, 1.0])] * (model.N * model.m)
        params["z"] = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    if name == "fhom" and "xi" not in params:
        k = model.m * model.d
        params["xi"] = np.array([[1.0], [2.0], [-1.0]]) if k == 1 else np.vstack([np.eye(k), -np.eye(k)])
    if name.startswith("flow") and "initial" not in params:
        params["initial"] = Profile("sin")
    out_dir = None
    if cp.has_section("output") and "dir" in cp["output"]:
        out_dir = Path(cp["output"]["dir"])
    norm = {s: dict(cp[s]) for s in cp.sections()}
    if task:
        norm.setdefault("task", {})["name"] = task
    source = "\n".join(f"[{s}]\n" + "\n".join(f"{k}={v}" for k, v in sorted(kv.items()))
                       for s, kv in sorted(norm.items()))
    return ExperimentConfig(model, energy, name, params, out_dir, source, path, norm)


def load_config(path: str | Path, task: str | None = None) -> ExperimentConfig:
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, p, task)
