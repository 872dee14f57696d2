"""Batch figure renderer for the analytics CLI's emitted artifacts.

Reads only the published file contracts (curve CSV, fit JSON, subject
scatter JSON) and writes deterministic images: fixed style, pinned
fonts, no timestamps, so re-rendering the same inputs is byte-identical.

    iafm-render --kind curve --input curve.csv --output fig1.png
    iafm-render --kind theta_hist --input fit.json --output fig2a.png
    iafm-render --kind delta_hist --input fit.json --output fig2b.png
    iafm-render --kind subject_scatter --input subject_scatter.json \
                --output fig3.png
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Optional

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

KINDS = ("curve", "theta_hist", "delta_hist", "subject_scatter")

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "iafm-plots",
}


class SchemaError(ValueError):
    """Input file does not match the expected artifact schema."""


@dataclass(frozen=True)
class PlotJob:
    kind: str
    input_path: str
    output_path: str
    title: Optional[str] = None
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(
                f"unknown kind {self.kind!r}; expected one of {KINDS}"
            )


def load_curve(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        lines = [ln for ln in handle.read().splitlines() if ln.strip()]
    if not lines or lines[0] != "opportunity,empirical,predicted,n":
        raise SchemaError(
            f"{path}: expected curve CSV header "
            "'opportunity,empirical,predicted,n'"
        )
    points = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise SchemaError(f"{path}: malformed curve row {ln!r}")
        opportunity, empirical, predicted, n_rows = parts
        points.append({
            "opportunity": int(opportunity),
            "empirical": float(empirical) if empirical else None,
            "predicted": float(predicted) if predicted else None,
            "n": int(n_rows),
        })
    if not points:
        raise SchemaError(f"{path}: curve CSV has no data rows")
    return points


def load_effects(path: str, field: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    if "blups" not in doc:
        raise SchemaError(f"{path}: fit JSON has no 'blups' list")
    values = [b[field] for b in doc["blups"] if field in b]
    if not values:
        raise SchemaError(f"{path}: no per-student {field!r} values")
    return np.asarray(values, dtype=float)


def load_population(path: str, key: str):
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    return doc.get("fixed_effects", {}).get(key)


def load_scatter(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: expected a JSON list of subject rows")
    if not doc:
        raise SchemaError(f"{path}: no subject effects to plot")
    for row in doc:
        if not {"subject", "mean_theta", "mean_delta"} <= set(row):
            raise SchemaError(
                f"{path}: subject rows need subject/mean_theta/mean_delta"
            )
    return doc


def _figure() -> Figure:
    fig = Figure(figsize=(6.4, 4.2), dpi=120)
    return fig


def build_curve_figure(points, job: PlotJob) -> Figure:
    fig = _figure()
    ax = fig.add_subplot(111)
    emp = [(p["opportunity"], p["empirical"]) for p in points
           if p["empirical"] is not None]
    pred = [(p["opportunity"], p["predicted"]) for p in points
            if p["predicted"] is not None]
    if emp:
        ax.plot(*zip(*emp), color="#e6762b", linestyle="-", marker="o",
                markersize=3.5, label="observed accuracy")
    if pred:
        ax.plot(*zip(*pred), color="#2b6ce6", linestyle="--",
                label="model prediction")
    ax.set_xlabel(job.xlabel or "practice opportunity")
    ax.set_ylabel(job.ylabel or "fraction correct")
    ax.set_title(job.title or "Learning curve")
    ax.legend(loc="lower right")
    return fig


def build_hist_figure(values: np.ndarray, job: PlotJob,
                      population: Optional[float], slope: bool) -> Figure:
    fig = _figure()
    ax = fig.add_subplot(111)
    ax.hist(values, bins=40, color="#7db07d", edgecolor="white")
    q1, q3 = np.quantile(values, [0.25, 0.75])
    lo, hi = np.quantile(values, [0.025, 0.975])
    ax.axvspan(lo, hi, color="#d3eed3", alpha=0.5, zorder=0,
               label="95% coverage")
    ax.axvline(q1, color="#3f6f3f", linestyle="--", label="Q1 / Q3")
    ax.axvline(q3, color="#3f6f3f", linestyle="--")
    if population is not None:
        ax.axvline(population, color="#333333", linestyle="-",
                   label="population effect")
    unit = "log odds per opportunity" if slope else "log odds"
    ax.set_xlabel(job.xlabel or unit)
    ax.set_ylabel(job.ylabel or "students")
    default_title = (
        "Per-student learning rates" if slope
        else "Per-student initial knowledge"
    )
    ax.set_title(job.title or default_title)
    ax.legend(loc="upper right")
    return fig


def build_scatter_figure(rows, job: PlotJob) -> Figure:
    fig = _figure()
    ax = fig.add_subplot(111)
    xs = [r["mean_theta"] for r in rows]
    ys = [r["mean_delta"] for r in rows]
    ax.scatter(xs, ys, color="#2b6ce6", s=28, zorder=3)
    for r in rows:
        ax.annotate(r["subject"], (r["mean_theta"], r["mean_delta"]),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.axhline(0.0, color="#999999", linewidth=0.8)
    ax.axvline(0.0, color="#999999", linewidth=0.8)
    ax.set_xlabel(job.xlabel or "initial-knowledge effect (log odds)")
    ax.set_ylabel(job.ylabel or "learning-rate effect (log odds/opp)")
    ax.set_title(job.title or "Subject effects")
    return fig


def build_figure(job: PlotJob) -> Figure:
    with matplotlib.rc_context(STYLE):
        if job.kind == "curve":
            return build_curve_figure(load_curve(job.input_path), job)
        if job.kind == "theta_hist":
            values = load_effects(job.input_path, "theta_s")
            population = load_population(job.input_path, "theta_pop")
            return build_hist_figure(values, job, population, slope=False)
        if job.kind == "delta_hist":
            values = load_effects(job.input_path, "delta_s")
            population = load_population(job.input_path, "delta_pop")
            return build_hist_figure(values, job, population, slope=True)
        return build_scatter_figure(load_scatter(job.input_path), job)


def render(job: PlotJob) -> str:
    """Build the figure and write it; returns the output path."""
    fig = build_figure(job)
    out = job.output_path
    with matplotlib.rc_context(STYLE):
        if out.lower().endswith(".svg"):
            FigureCanvasSVG(fig)
            fig.savefig(out, format="svg", metadata={"Date": None})
        else:
            FigureCanvasAgg(fig)
            fig.savefig(out, format="png")
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="iafm-render",
        description="Render figures from analytics CLI artifacts.",
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--input", required=True)
    parser.add_argument("--output", required=True)
    parser.add_argument("--title")
    parser.add_argument("--xlabel")
    parser.add_argument("--ylabel")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        job = PlotJob(
            kind=args.kind,
            input_path=args.input,
            output_path=args.output,
            title=args.title,
            xlabel=args.xlabel,
            ylabel=args.ylabel,
        )
        render(job)
    except (SchemaError, OSError, json.JSONDecodeError, KeyError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
