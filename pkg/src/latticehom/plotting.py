"""Figures for the report command, drawn from saved CSV tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _columns(header: list, rows: list) -> dict:
    arr = np.array(rows, dtype=float) if rows else np.zeros((0, len(header)))
    return {h: arr[:, i] for i, h in enumerate(header)}


def plot_phi(header, rows, path: Path) -> Path:
    c = _columns(header, rows)
    zkeys = [h for h in header if h.startswith("z")]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    keys = np.stack([c[k] for k in zkeys], axis=1) if zkeys else np.zeros((len(c["M"]), 0))
    for z in np.unique(keys, axis=0):
        sel = np.all(keys == z, axis=1)
        ax.plot(c["M"][sel], c["value"][sel], "o-", label=",".join(f"{v:g}" for v in z))
    ax.set_xscale("log", base=2)
    ax.set_xlabel("M")
    ax.set_ylabel("cell value")
    if len(keys) <= 12:
        ax.legend(fontsize=7, title="z")
    return _save(fig, path)


def plot_fhom(header, rows, path: Path) -> Path:
    c = _columns(header, rows)
    xkeys = [h for h in header if h.startswith("xi")]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    keys = np.stack([c["phase"]] + [c[k] for k in xkeys], axis=1)
    for key in np.unique(keys, axis=0):
        sel = np.all(keys == key, axis=1)
        ax.plot(c["K"][sel], c["value"][sel], "s-", label=f"phase {int(key[0])}, xi={key[1:]}")
    ax.set_xlabel("K")
    ax.set_ylabel("f_hom estimate")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_errors(eps, values, ylabel: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(eps, values, "o-")
    ax.set_xscale("log")
    if np.any(np.asarray(values) > 0):
        ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel(ylabel)
    ax.invert_xaxis()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_profiles(header, rows, path: Path, label_col: str | None = None) -> Path:
    """Curves stored row-wise: leading metadata columns, then values ``v0, v1, ...``."""
    vcols = [i for i, h in enumerate(header) if h.startswith("v")]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if rows:
        arr = np.array(rows, dtype=float)
        t_idx = header.index("t")
        times = np.unique(arr[:, t_idx])
        picks = times[np.linspace(0, len(times) - 1, min(5, len(times))).astype(int)]
        cmap = plt.get_cmap("viridis")
        for k, t in enumerate(picks):
            for row in arr[arr[:, t_idx] == t]:
                y = row[vcols]
                x = (np.arange(len(y)) + 0.5) / len(y)
                tag = f"t={t:.3g}" if label_col is None else f"t={t:.3g}, {label_col}={int(row[header.index(label_col)])}"
                ax.plot(x, y, color=cmap(k / max(len(picks) - 1, 1)), lw=1, label=tag)
        if len(picks) * max(1, len(arr) // len(times)) <= 10:
            ax.legend(fontsize=6)
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    return _save(fig, path)


def plot_roles(roles: np.ndarray, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3.5))
    r = np.atleast_2d(roles)
    im = ax.imshow(r, cmap="coolwarm", vmin=-abs(r).max() - 0.5, vmax=abs(r).max() + 0.5)
    fig.colorbar(im, ax=ax, label="role")
    ax.set_title("phase roles in one period")
    return _save(fig, path)


def plot_bars(labels, values, ylabel: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([str(l) for l in labels], values)
    ax.set_ylabel(ylabel)
    return _save(fig, path)
