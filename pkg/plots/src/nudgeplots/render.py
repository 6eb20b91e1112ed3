"""Render figures from the simulator's CSV artifacts.

Three figure kinds are supported, each reading one documented schema:

- free-evolution: a trajectory CSV (t,node,x,y,u,imitation_flag) becomes a
  2x2 grid: hidden inclinations, manifested choices, and their running
  averages over time.
- tradeoff: the sweep's aggregate.csv becomes one panel per imitation
  probability, plotting mean control cost against mean social cost per
  policy across the effort grid, with +-1 std shading and the no-control
  reference.
- topology: topology.csv becomes per-connectivity box plots of the relative
  improvement with the raw points scattered on top, one panel per
  imitation probability.

Rendering depends only on the CSV contents and the spec: no clock, no
network, no simulator imports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("free-evolution", "tradeoff", "topology")

POLICY_ORDER = ("none", "mfccp", "mbccp", "mpc")
POLICY_COLORS = {
    "none": "tab:blue",
    "mfccp": "m",
    "mbccp": "purple",
    "mpc": "gold",
}
POLICY_LABELS = {
    "none": "no control",
    "mfccp": "uniform split",
    "mbccp": "constant optimal",
    "mpc": "receding horizon",
}


class SchemaError(ValueError):
    """The input CSV does not carry the columns a figure kind needs."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    shading: bool = True
    dpi: int = 150
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("need at least one input CSV")


def _read_csv(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [col for col in required if col not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _column(rows, name, dtype=float):
    return np.array([dtype(row[name]) for row in rows])


def house_style():
    """Shared rc settings for every figure."""
    return {
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.labelsize": 10,
        "legend.fontsize": 8,
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
        "lines.linewidth": 1.2,
    }


def build_figure(spec):
    """Build (but do not save) the matplotlib figure for a spec."""
    with plt.rc_context(house_style()):
        if spec.kind == "free-evolution":
            return _free_evolution(spec)
        if spec.kind == "tradeoff":
            return _tradeoff(spec)
        return _topology(spec)


def render(spec):
    """Render the figure to spec.output; returns the output path."""
    fig = build_figure(spec)
    fig.savefig(spec.output, dpi=spec.dpi, bbox_inches="tight")
    plt.close(fig)
    return spec.output


def _running_average(series):
    return np.cumsum(series) / np.arange(1, series.size + 1)


def _free_evolution(spec):
    rows = _read_csv(spec.inputs[0], ("t", "node", "x", "y"))
    t = _column(rows, "t", int)
    node = _column(rows, "node", int)
    x = _column(rows, "x")
    y = _column(rows, "y")
    nodes = np.unique(node)
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    (ax_x, ax_y), (ax_xb, ax_yb) = axes
    for v in nodes:
        mask = node == v
        order = np.argsort(t[mask])
        tv = t[mask][order]
        ax_x.plot(tv, x[mask][order], alpha=0.5)
        ax_y.plot(tv, y[mask][order], alpha=0.35)
        ax_xb.plot(tv, _running_average(x[mask][order]), alpha=0.5)
        ax_yb.plot(tv, _running_average(y[mask][order]), alpha=0.5)
    ax_x.set_ylabel("hidden inclination")
    ax_y.set_ylabel("manifested choice")
    ax_xb.set_ylabel("running average (hidden)")
    ax_yb.set_ylabel("running average (manifested)")
    for ax in (ax_xb, ax_yb):
        ax.set_xlabel("t")
    fig.suptitle("Free evolution: states, observations and time averages")
    fig.tight_layout()
    return fig


def _tradeoff(spec):
    rows = _read_csv(
        spec.inputs[0],
        ("policy", "alpha", "r", "gamma_mean", "gamma_std", "du_mean"),
    )
    alphas = sorted({float(r["alpha"]) for r in rows})
    ncols = 2 if len(alphas) > 1 else 1
    nrows = int(np.ceil(len(alphas) / ncols))
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(5 * ncols, 3.6 * nrows), squeeze=False
    )
    for idx, alpha in enumerate(alphas):
        ax = axes[idx // ncols][idx % ncols]
        sub = [r for r in rows if float(r["alpha"]) == alpha]
        du_span = _column(sub, "du_mean")
        span = (du_span.min(), max(du_span.max(), 1e-9))
        for policy in POLICY_ORDER:
            prows = sorted(
                (r for r in sub if r["policy"] == policy),
                key=lambda r: float(r["r"]),
            )
            if not prows:
                continue
            gamma = _column(prows, "gamma_mean")
            gstd = _column(prows, "gamma_std")
            du = _column(prows, "du_mean")
            color = POLICY_COLORS[policy]
            label = POLICY_LABELS[policy]
            if policy == "none":
                # reference: no effort, so a horizontal level
                level = gamma.mean()
                band = gstd.mean()
                ax.axhline(level, color=color, ls=":", label=label)
                if spec.shading:
                    ax.fill_between(
                        span, level - band, level + band,
                        color=color, alpha=0.15,
                    )
                continue
            order = np.argsort(du)
            ax.plot(du[order], gamma[order], ls=":", marker="o",
                    color=color, label=label)
            if spec.shading:
                ax.fill_between(
                    du[order],
                    (gamma - gstd)[order],
                    (gamma + gstd)[order],
                    color=color,
                    alpha=0.2,
                )
        ax.set_title(f"imitation probability {alpha:g}")
        ax.set_xlabel("control cost")
        ax.set_ylabel("social cost")
        ax.legend()
    for idx in range(len(alphas), nrows * ncols):
        axes[idx // ncols][idx % ncols].axis("off")
    fig.tight_layout()
    return fig


def _topology(spec):
    rows = _read_csv(spec.inputs[0], ("gamma", "alpha", "delta_gamma"))
    alphas = sorted({float(r["alpha"]) for r in rows})
    fig, axes = plt.subplots(
        1, len(alphas), figsize=(4.5 * len(alphas), 3.8), squeeze=False
    )
    rng = np.random.default_rng(0)  # jitter only; data untouched
    for idx, alpha in enumerate(alphas):
        ax = axes[0][idx]
        sub = [r for r in rows if float(r["alpha"]) == alpha]
        gammas = sorted({float(r["gamma"]) for r in sub})
        data = [
            [
                float(r["delta_gamma"])
                for r in sub
                if float(r["gamma"]) == g
            ]
            for g in gammas
        ]
        positions = np.arange(1, len(gammas) + 1)
        ax.boxplot(data, positions=positions, widths=0.5, showfliers=False)
        for pos, vals in zip(positions, data):
            jitter = rng.uniform(-0.12, 0.12, len(vals))
            ax.scatter(pos + jitter, vals, s=12, alpha=0.5, color="tab:blue")
        ax.set_xticks(positions)
        ax.set_xticklabels([f"{g:g}" for g in gammas])
        ax.set_xlabel("inter-cluster connectivity")
        ax.set_ylabel("relative improvement")
        ax.set_title(f"imitation probability {alpha:g}")
    fig.tight_layout()
    return fig
