"""Figures from simulation output files; no computation beyond plotting transforms.

Input schemas (columns are checked and named in errors):

    trajectory.csv  replica, t, type, density
    ode.csv         t, type, x
    meeting.csv     sample, pair, value
    survival.csv    t, pair, survival
    kappa.json      tgrid, values, s_used, ...
    fluct.csv       t, sigma, sigma2, emp_cov, ref_cov, n_reps
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGURE_KINDS = ("trajectory", "survival", "kappa", "fluct")


class SchemaError(Exception):
    """An input file does not carry the columns a figure kind needs."""


@dataclass
class FigureSpec:
    kind: str
    inputs: dict = field(default_factory=dict)   # role -> path
    style: dict = field(default_factory=dict)
    output: str | Path = "figure.png"

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")


def _read_csv(path, required: tuple[str, ...]) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{Path(path).name}: missing column {col!r}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise SchemaError(f"{Path(path).name}: no data rows")
    return rows


def _trajectory_arrays(path):
    rows = _read_csv(path, ("replica", "t", "type", "density"))
    reps = sorted({int(r["replica"]) for r in rows})
    ts = sorted({float(r["t"]) for r in rows})
    types = sorted({int(r["type"]) for r in rows})
    dens = np.full((len(reps), len(ts), len(types)), np.nan)
    ri = {r: i for i, r in enumerate(reps)}
    ti = {t: i for i, t in enumerate(ts)}
    for row in rows:
        dens[ri[int(row["replica"])], ti[float(row["t"])], int(row["type"])] = float(row["density"])
    return np.array(ts), types, dens


def render(spec: FigureSpec):
    """Render one figure and write it to spec.output; returns the Figure."""
    plt.rcParams.update({"figure.dpi": 110, "svg.hashsalt": "plotkit"})
    if spec.kind == "trajectory":
        fig = _render_trajectory(spec)
    elif spec.kind == "survival":
        fig = _render_survival(spec)
    elif spec.kind == "kappa":
        fig = _render_kappa(spec)
    else:
        fig = _render_fluct(spec)
    fig.savefig(spec.output, metadata={"Software": None})
    return fig


def _render_trajectory(spec: FigureSpec):
    ts, types, dens = _trajectory_arrays(spec.inputs["trajectory"])
    theta = float(spec.style.get("theta", 1.0))
    mean = np.nanmean(dens, axis=0)
    se = np.nanstd(dens, axis=0, ddof=1) / np.sqrt(dens.shape[0])
    fig, axes = plt.subplots(1, len(types), figsize=(5.0 * len(types), 3.6),
                             squeeze=False)
    ode = None
    if spec.inputs.get("ode"):
        rows = _read_csv(spec.inputs["ode"], ("t", "type", "x"))
        ode_ts = sorted({float(r["t"]) for r in rows})
        oi = {t: i for i, t in enumerate(ode_ts)}
        ode = np.full((len(ode_ts), len(types)), np.nan)
        for row in rows:
            sig = int(row["type"])
            if sig < len(types):
                ode[oi[float(row["t"])], sig] = float(row["x"])
        ode_ts = np.array(ode_ts)
    for j, sig in enumerate(types):
        ax = axes[0, j]
        tt = ts / theta
        ax.fill_between(tt, mean[:, j] - 2 * se[:, j], mean[:, j] + 2 * se[:, j],
                        alpha=0.3, color="C0", label="ensemble mean ± 2 SE")
        ax.plot(tt, mean[:, j], color="C0", lw=1.0)
        if ode is not None:
            ax.plot(ode_ts, ode[:, j], "k--", lw=1.4, label="ODE")
        ax.set_xlabel(r"$\theta$-time" if theta != 1.0 else "t")
        ax.set_ylabel(f"density of type {sig}")
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def _render_survival(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    plotted = False
    if spec.inputs.get("survival"):
        rows = _read_csv(spec.inputs["survival"], ("t", "pair", "survival"))
        pairs = sorted({r["pair"] for r in rows})
        for pair in pairs:
            pts = sorted((float(r["t"]), float(r["survival"]))
                         for r in rows if r["pair"] == pair)
            ax.semilogy([p[0] for p in pts], [max(p[1], 1e-300) for p in pts],
                        "-", label=f"exact {pair}")
        plotted = True
    if spec.inputs.get("meeting"):
        rows = _read_csv(spec.inputs["meeting"], ("sample", "pair", "value"))
        pairs = sorted({r["pair"] for r in rows})
        for pair in pairs:
            vals = np.array([float(r["value"]) for r in rows if r["pair"] == pair])
            finite = np.sort(vals[np.isfinite(vals)])
            if len(finite) == 0:
                continue
            surv = 1.0 - np.arange(1, len(finite) + 1) / len(vals)
            ax.semilogy(finite, np.maximum(surv, 1.0 / len(vals) / 10), ".",
                        ms=2, label=f"MC {pair}")
        plotted = True
    if not plotted:
        raise SchemaError("survival figure needs a survival.csv or meeting.csv input")
    ax.set_xlabel("t")
    ax.set_ylabel("P(M > t)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def _render_kappa(spec: FigureSpec):
    doc = json.loads(Path(spec.inputs["kappa"]).read_text())
    for key in ("tgrid", "values", "s_used"):
        if key not in doc:
            raise SchemaError(f"kappa.json: missing field {key!r}")
    tgrid = np.asarray(doc["tgrid"], dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    names = spec.style.get("names") or sorted(doc["values"])
    for name in names:
        if name not in doc["values"]:
            raise SchemaError(f"kappa.json: no entry {name!r}")
        ax.plot(tgrid, doc["values"][name], "o-", label=name)
    ax.axhline(1.0, color="k", lw=0.8, ls=":", label="flat-profile reference 1")
    ax.set_xlabel(f"t  (scale s = {doc['s_used']:.3g})")
    ax.set_ylabel("rescaled tail")
    ax.legend(loc="best", fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def _render_fluct(spec: FigureSpec):
    rows = _read_csv(spec.inputs["fluct"], ("t", "sigma", "sigma2", "emp_cov",
                                            "ref_cov", "n_reps"))
    pairs = sorted({(int(r["sigma"]), int(r["sigma2"])) for r in rows})
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for a, b in pairs:
        pts = sorted((float(r["t"]), float(r["emp_cov"]), float(r["ref_cov"]))
                     for r in rows if int(r["sigma"]) == a and int(r["sigma2"]) == b)
        ts = [p[0] for p in pts]
        ax.plot(ts, [p[1] for p in pts], "o-", label=f"emp ({a},{b})")
        ax.plot(ts, [p[2] for p in pts], "--", color=ax.lines[-1].get_color(),
                label=f"ref ({a},{b})")
    ax.set_xlabel(r"$\theta$-time")
    ax.set_ylabel("covariance of scaled fluctuations")
    ax.legend(loc="best", fontsize=7, ncol=2)
    fig.tight_layout()
    return fig
