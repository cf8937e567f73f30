"""Quick-look figures from harness tables. Needs the optional ``plot`` extra."""

from __future__ import annotations

from pathlib import Path

from .errors import ValidationError


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ValidationError("plotting needs matplotlib (pip install isac-crb[plot])", "plot") from None
    return plt


def plot_beampattern(rows: list[dict], path: str | Path, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([r["angle_deg"] for r in rows], [r["power_db_normalized"] for r in rows])
    ax.set_xlabel("angle (deg)")
    ax.set_ylabel("normalized power (dB)")
    ax.set_ylim(bottom=-60)
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_sweep(rows: list[dict], variable: str, column: str, path: str | Path, log: bool = True) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for scheme in dict.fromkeys(r["scheme"] for r in rows):
        pts = [(r[variable], r[column]) for r in rows if r["scheme"] == scheme and isinstance(r.get(column), float)]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=scheme)
    ax.set_xlabel(variable)
    ax.set_ylabel(column)
    if log:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
