"""Command-line entry point: run configured experiments and summarize their results."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cell import MonotonicityViolation, aggregate_m, fhom_table, phi_limit, solve_cell
from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import (ConnectivityViolation, macro_flow, micro_macro_compare,
                       minimizing_movement_micro)
from .gamma import ExtrapolationError, MacroGrid, minima_convergence_experiment
from .lattice import Box, DiscreteField, LatticeError
from .solver import SolverError

COMMANDS = {
    ("lattice", "analyze"): "analyze",
    ("cell", "phi"): "phi",
    ("cell", "fhom"): "fhom",
    ("cell", "islands"): "islands",
    ("gamma", "check"): "gamma-check",
    ("flow", "micro"): "flow-micro",
    ("flow", "macro"): "flow-macro",
    ("flow", "compare"): "flow-compare",
}


def _tol(cfg: ExperimentConfig, tol):
    return tol if tol is not None else cfg.params.get("tol")


# ------------------------------------------------------------------ tasks
# each returns (header, rows, summary)

def task_analyze(cfg, workers, tol):
    model = cfg.model
    dec = model.phases
    header = [f"y{a}" for a in range(model.d)] + ["label", "role"]
    rows = [[*map(int, y), int(model.label(y[None])[0]), int(dec.role[tuple(y)])] for y in model.cell_sites()]
    summary = {
        "phases": dec.as_dict(),
        "fractions": {str(j): dec.volume_fraction(j) for j in range(model.N + 1)},
        "islands": {str(j): len(v) for j, v in dec.islands.items()},
    }
    return header, rows, summary


def task_phi(cfg, workers, tol):
    model, energy, p = cfg.model, cfg.energy, cfg.params
    table = phi_limit(p["z"], p["ms"], model, energy, variant=p["variant"], boundary=p["boundary"],
                      R=p.get("r"), tol=_tol(cfg, tol), workers=workers)
    header = [f"z{a}" for a in range(table.samples.shape[1])] + ["M", "value"]
    rows = [[*z, int(M), float(v)] for *z, M, v in table.rows()]
    Mlast = table.Ms[-1]
    soft = []
    if p["variant"] == "free":
        soft = [solve_cell(z, Mlast, model, energy, boundary=p["boundary"], tol=_tol(cfg, tol)).soft_only
                for z in table.samples]
    summary = {
        "variant": table.variant,
        "Ms": table.Ms,
        "extrapolated": table.extrapolated.tolist(),
        "soft_only": soft,
        "monotone": table.monotone(),
        "max_increment": float(table.increments.max()) if table.increments.size else 0.0,
    }
    return header, rows, summary


def task_fhom(cfg, workers, tol):
    model, energy, p = cfg.model, cfg.energy, cfg.params
    phases = p.get("phases", list(range(1, model.N + 1)))
    dirs = p["xi"]
    header = ["phase"] + [f"xi{a}" for a in range(dirs.shape[1])] + ["K", "value"]
    rows, mats = [], {}
    for j in phases:
        tab = fhom_table(j, dirs, p["ks"], model, energy, p["boundary"])
        for i, xi in enumerate(tab.directions):
            for k, K in enumerate(tab.Ks):
                rows.append([j, *xi, int(K), float(tab.values[i, k])])
        mats[str(j)] = None if tab.matrix is None else tab.matrix.tolist()
    return header, rows, {"matrices": mats, "Ks": p["ks"]}


def task_islands(cfg, workers, tol):
    isl = aggregate_m(cfg.model, cfg.energy)
    header = ["phase", "island", "value"]
    rows = [[j, l, float(v)] for (j, l), v in sorted(isl.values.items())]
    return header, rows, {"m": isl.m, "count": len(rows)}


def task_gamma(cfg, workers, tol):
    p = cfg.params
    rep = minima_convergence_experiment(cfg.model, cfg.energy, p["eps"], n_macro=p["n_macro"])
    header = ["eps", "micro", "macro", "gap", "relative_gap"]
    rows = [[e, mi, ma, g, r] for (e, mi, ma, g), r in zip(rep.rows(), rep.relative_gaps)]
    return header, rows, {"macro": rep.macro, "gaps": rep.gaps, "decreasing": rep.decreasing()}


def _flow_energy(cfg):
    if cfg.energy.site is not None:
        return cfg.energy.without_site()
    return cfg.energy


def task_flow_micro(cfg, workers, tol):
    p = cfg.params
    eps = p["eps"][0]
    n = int(round(1.0 / eps))
    box = Box.cube(0, n, cfg.model.d)
    u0 = DiscreteField.from_function(box, p["initial"], eps, cfg.model.m)
    steps = int(round(p["t_max"] / p["tau"]))
    traj = minimizing_movement_micro(cfg.model, _flow_energy(cfg), u0, p["tau"], steps, tol=_tol(cfg, tol))
    every = p["save_every"]
    header = ["t", "energy"] + [f"v{i}" for i in range(traj.fields.shape[1] * cfg.model.m)]
    rows = [[float(traj.times[s]), float(traj.energies[s]), *traj.fields[s].ravel()]
            for s in range(0, len(traj.times), every)]
    dissipation = float(np.max(np.diff(traj.energies))) if len(traj.energies) > 1 else 0.0
    return header, rows, {"eps": eps, "tau": p["tau"], "steps": steps,
                          "energy_start": float(traj.energies[0]), "energy_end": float(traj.energies[-1]),
                          "max_energy_increase": dissipation}


def task_flow_macro(cfg, workers, tol):
    p = cfg.params
    grid = MacroGrid.interval(p["n_macro"])
    traj = macro_flow(cfg.model, _flow_energy(cfg), p["initial"], p["tau"], p["t_max"], grid, tol=_tol(cfg, tol))
    every = p["save_every"]
    header = ["t", "group"] + [f"v{i}" for i in range(grid.size * cfg.model.m)]
    rows = []
    for s in range(0, len(traj.times), every):
        for g in range(traj.groups.size):
            rows.append([float(traj.times[s]), g, *traj.values[s, g].ravel()])
    mass = traj.mass()
    return header, rows, {"groups": [list(k) for k in traj.groups.kinds],
                          "weights": traj.groups.weights.tolist(),
                          "energy_start": float(traj.energies[0]), "energy_end": float(traj.energies[-1]),
                          "mass_drift": float(np.abs(mass - mass[0]).max())}


def task_flow_compare(cfg, workers, tol):
    p = cfg.params
    rep = micro_macro_compare(cfg.model, _flow_energy(cfg), p["initial"], p["eps"], p["tau"], p["t_max"],
                              n_macro=p["n_macro"])
    return ["eps", "error"], [[e, v] for e, v in rep.rows()], {"errors": rep.errors, "decreasing": rep.decreasing()}


TASKS = {
    "analyze": task_analyze,
    "phi": task_phi,
    "fhom": task_fhom,
    "islands": task_islands,
    "gamma-check": task_gamma,
    "flow-micro": task_flow_micro,
    "flow-macro": task_flow_macro,
    "flow-compare": task_flow_compare,
}


# ------------------------------------------------------------ persistence

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v)) if isinstance(v, (np.integer, bool)) else str(v)


def write_result(cfg: ExperimentConfig, out: Path, header, rows, summary) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.path.stem if cfg.path else 'config'}-{cfg.task}"
    csv_path = out / f"{stem}.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    record = {
        "config_hash": cfg.digest,
        "task": cfg.task,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "payload": {"csv": csv_path.name, "summary": _jsonable(summary)},
    }
    (out / f"{stem}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def run(config: str | Path, task: str | None = None, out: str | Path | None = None, workers: int = 1,
        tol: float | None = None) -> tuple:
    """Load, execute and persist one experiment; returns ``(exit code, record or None)``."""
    try:
        cfg = load_config(config, task)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1, None
    out_dir = Path(out) if out is not None else (cfg.out_dir or Path("results"))
    try:
        header, rows, summary = TASKS[cfg.task](cfg, workers, tol)
    except (ConfigError, ConnectivityViolation, LatticeError, ExtrapolationError) as exc:
        key = getattr(exc, "key", "lattice.labels" if not isinstance(exc, ExtrapolationError) else "task")
        print(f"error: {key}: {exc}", file=sys.stderr)
        return 1, None
    except (SolverError, MonotonicityViolation) as exc:
        print(f"solver failure in task.{cfg.task}: {exc}", file=sys.stderr)
        return 2, None
    record = write_result(cfg, out_dir, header, rows, summary)
    print(f"{cfg.task}: wrote {out_dir / record['payload']['csv']}")
    return 0, record


# ---------------------------------------------------------------- report

def _read_csv(path: Path):
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, rows


def _table(title: str, header: list, rows: list) -> str:
    cells = [[f"{v:.6g}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max([len(h)] + [len(c[i]) for c in cells]) for i, h in enumerate(header)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))
    return "\n".join([title, line(header), line(["-" * w for w in widths])] + [line(c) for c in cells])


def _summarize(task: str, header, rows, summary, fig_path: Path | None):
    from . import plotting

    col = lambda name: [r[header.index(name)] for r in rows]
    if task == "phi":
        zc = [h for h in header if h.startswith("z")]
        Mmax = max(col("M")) if rows else 0
        last = [r for r in rows if r[header.index("M")] == Mmax]
        soft = summary.get("soft_only") or [None] * len(last)
        trows = [[*(r[header.index(z)] for z in zc), r[-1], s if s is not None else "-"] for r, s in zip(last, soft)]
        out = _table(f"cell values at M={int(Mmax)} (monotone: {summary.get('monotone')})",
                     zc + ["value", "soft_only"], trows)
        if fig_path:
            plotting.plot_phi(header, rows, fig_path)
    elif task == "fhom":
        Kmax = max(col("K")) if rows else 0
        trows = [[int(r[0]), *r[1:-2], r[-1]] for r in rows if r[header.index("K")] == Kmax]
        out = _table(f"homogenized densities at K={int(Kmax)}", [header[0], *header[1:-2], "value"], trows)
        if fig_path:
            plotting.plot_fhom(header, rows, fig_path)
    elif task == "gamma-check":
        out = _table(f"minimum gaps (decreasing: {summary.get('decreasing')})",
                     ["eps", "micro", "macro", "gap"], [r[:4] for r in rows])
        if fig_path and rows:
            plotting.plot_errors(col("eps"), col("gap"), "|micro - macro| minimum", fig_path)
    elif task == "flow-compare":
        out = _table(f"sup-L2 flow errors (decreasing: {summary.get('decreasing')})", ["eps", "error"], rows)
        if fig_path and rows:
            plotting.plot_errors(col("eps"), col("error"), "sup-in-time L2 error", fig_path)
    elif task == "islands":
        out = _table(f"island minima (m = {summary.get('m')})", header,
                     [[int(r[0]), int(r[1]), r[2]] for r in rows])
        if fig_path and rows:
            plotting.plot_bars([f"{int(r[0])}.{int(r[1])}" for r in rows], col("value"), "island minimum", fig_path)
    elif task == "analyze":
        out = _table("residues", header, [[int(v) for v in r] for r in rows])
        if fig_path and rows:
            d = len(header) - 2
            T = int(round(len(rows) ** (1 / d)))
            plotting.plot_roles(np.array(col("role")).reshape((T,) * d), fig_path)
    elif task in ("flow-micro", "flow-macro"):
        keys = ["energy_start", "energy_end", "max_energy_increase", "mass_drift"]
        out = _table(f"{task} summary", ["quantity", "value"],
                     [[k, float(summary[k])] for k in keys if k in summary])
        if fig_path and rows:
            plotting.plot_profiles(header, rows, fig_path, "group" if task == "flow-macro" else None)
    else:
        out = f"{task}: no summary available"
    return out


def report(result_dir: str | Path, figures: bool = True, stream=None) -> int:
    stream = stream or sys.stdout
    d = Path(result_dir)
    if not d.is_dir():
        print(f"error: {d} is not a directory", file=sys.stderr)
        return 1
    records = sorted(d.glob("*.json"))
    if not records:
        print(_table("results", ["record", "task"], []), file=stream)
        return 0
    for rec_path in records:
        try:
            rec = json.loads(rec_path.read_text())
            task = rec["task"]
            header, rows = _read_csv(d / rec["payload"]["csv"])
            summary = rec["payload"].get("summary", {})
        except (OSError, ValueError, KeyError, StopIteration) as exc:
            print(f"{rec_path.name}: unreadable record ({exc.__class__.__name__}: {exc})", file=sys.stderr)
            continue
        fig = d / f"{rec_path.stem}.png" if figures else None
        print(f"== {rec_path.stem} [{rec.get('config_hash', '?')}]", file=stream)
        print(_summarize(task, header, rows, summary, fig), file=stream)
        print(file=stream)
    return 0


# ---------------------------------------------------------------- parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="configuration file or bundled example name")
    p.add_argument("--out", help="output directory (default: the config's [output] dir)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--tol", type=float, help="solver tolerance override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticehom", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="group", required=True)
    groups: dict = {}
    for (group, action), task in COMMANDS.items():
        if group not in groups:
            groups[group] = sub.add_parser(group).add_subparsers(dest="action", required=True)
        sp = groups[group].add_parser(action, help=f"run the {task} task")
        _common(sp)
        sp.set_defaults(task=task)
    rp = sub.add_parser("run", help="run the task named in the configuration")
    _common(rp)
    rp.set_defaults(task=None)
    rep = sub.add_parser("report", help="summarize a result directory")
    rep.add_argument("directory")
    rep.add_argument("--no-figures", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.group == "report":
        return report(args.directory, figures=not args.no_figures)
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return 1
    code, _ = run(args.config, args.task, args.out, args.workers, args.tol)
    return code


if __name__ == "__main__":
    sys.exit(main())
