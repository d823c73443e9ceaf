"""Figure builders: log-log convergence plots, heatmaps, contour overlays,
eps-sweep curves.  Deterministic output: fixed styles, no timestamps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .readers import (
    read_convergence_csv,
    read_eps_sweep_csv,
    read_vtk_structured_points,
)

SERIES_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")
_SAVE_KW = {"dpi": 130, "metadata": {"Software": "haptoplot"}}


@dataclass
class FigureResult:
    path: Path
    annotations: dict


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def plot_convergence(csv_paths, out_path, slopes=(1.0, 2.0),
                     xlabel="grid points per axis",
                     ylabel="L2 error") -> FigureResult:
    """Log-log error-vs-points plot with dashed reference slopes.

    Each CSV becomes one series; its least-squares order is annotated in the
    legend and returned for verification.
    """
    tables = [read_convergence_csv(p) for p in csv_paths]
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    fitted = {}
    for k, table in enumerate(tables):
        slope = table.least_squares_slope()
        fitted[table.label] = slope
        ax.loglog(table.points, table.errors, "o-",
                  color=SERIES_COLORS[k % len(SERIES_COLORS)],
                  label=f"{table.label} (order {slope:.2f})")
    anchor = tables[0]
    x_ref = np.array([anchor.points[0], anchor.points[-1]], dtype=float)
    for slope in slopes:
        y_ref = anchor.errors[0] * (x_ref / x_ref[0]) ** (-slope)
        ax.loglog(x_ref, y_ref, "k--", linewidth=0.8)
        ax.annotate(f"slope {slope:g}", (x_ref[-1], y_ref[-1]),
                    textcoords="offset points", xytext=(4, 0), fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    path = _finish(fig, out_path)
    return FigureResult(path=path, annotations={"fitted_orders": fitted})


def plot_eps_sweep(csv_paths, out_path) -> FigureResult:
    """L2 error over the scaling parameter, one series per CSV."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    plateaus = {}
    for k, p in enumerate(csv_paths):
        eps, errors = read_eps_sweep_csv(p)
        order = np.argsort(eps)[::-1]
        label = Path(p).stem
        ax.loglog(eps[order], errors[order], "o-",
                  color=SERIES_COLORS[k % len(SERIES_COLORS)], label=label)
        plateaus[label] = float(errors[np.argmin(eps)])
    ax.set_xlabel("scaling parameter")
    ax.set_ylabel("L2 error")
    ax.invert_xaxis()
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    path = _finish(fig, out_path)
    return FigureResult(path=path, annotations={"plateau_errors": plateaus})


def signed_truncated_log(values: np.ndarray, floor: float) -> np.ndarray:
    """sign(f) * (log|f| - log floor), clipped at the floor."""
    mag = np.maximum(np.abs(values), floor)
    return np.sign(values) * (np.log10(mag) - np.log10(floor))


def plot_heatmap(vtk_path, out_path, field: str | None = None,
                 signed_log_floor: float | None = None) -> FigureResult:
    """Raster heatmap of one scalar field; optional signed-log transform."""
    data = read_vtk_structured_points(vtk_path)
    name = field or next(iter(data.fields))
    if name not in data.fields:
        raise ValueError(f"field {name!r} not in {sorted(data.fields)}")
    values = data.fields[name]
    cmap = "viridis"
    if signed_log_floor is not None:
        values = signed_truncated_log(values, signed_log_floor)
        cmap = "RdBu_r"
    x, y = data.axes()
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    mesh = ax.pcolormesh(x, y, values.T, shading="nearest", cmap=cmap)
    if signed_log_floor is not None:
        lim = float(np.max(np.abs(values))) or 1.0
        mesh.set_clim(-lim, lim)
    fig.colorbar(mesh, ax=ax, label=name)
    ax.set_aspect("equal")
    ax.set_xlabel("xi")
    ax.set_ylabel("eta")
    path = _finish(fig, out_path)
    return FigureResult(path=path, annotations={
        "field": name,
        "range": (float(values.min()), float(values.max())),
    })


def plot_contours(vtk_paths, out_path, levels=(1.0, 0.1, 0.01),
                  field: str | None = None) -> FigureResult:
    """Contour overlay at the requested fractions of each field's maximum."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    drawn = {}
    for k, p in enumerate(vtk_paths):
        data = read_vtk_structured_points(p)
        name = field or next(iter(data.fields))
        if name not in data.fields:
            raise ValueError(f"field {name!r} not in {sorted(data.fields)}")
        values = data.fields[name]
        peak = float(values.max())
        if peak <= 0.0:
            raise ValueError(f"{p}: field {name!r} has no positive values to contour")
        cut_levels = sorted(lv * peak for lv in levels if 0.0 < lv * peak < peak)
        if not cut_levels:
            raise ValueError(f"{p}: no contour levels inside the data range")
        x, y = data.axes()
        color = SERIES_COLORS[k % len(SERIES_COLORS)]
        cs = ax.contour(x, y, values.T, levels=cut_levels,
                        colors=[color], linewidths=1.2)
        n_paths = sum(len(cs.allsegs[j]) for j in range(len(cut_levels)))
        label = Path(p).stem
        while label in drawn:
            label += "'"
        drawn[label] = {"levels": cut_levels, "segments": int(n_paths)}
        ax.plot([], [], color=color, label=label)
    ax.set_aspect("equal")
    ax.set_xlabel("xi")
    ax.set_ylabel("eta")
    ax.legend(fontsize=8)
    path = _finish(fig, out_path)
    return FigureResult(path=path, annotations={"contours": drawn})
