"""Parsers for the solver's file artifacts.

These are intentionally independent of the solver package: the CSV and
legacy-VTK layouts are the interface contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CONVERGENCE_HEADER = "level,points,dx,l2_error,rate"
EPS_SWEEP_HEADER = "eps,l2_error"


@dataclass
class ConvergenceTable:
    label: str
    points: np.ndarray
    dx: np.ndarray
    errors: np.ndarray
    rates: np.ndarray          # one fewer entry than levels

    def least_squares_slope(self) -> float:
        """Slope of log(error) against log(dx) over all levels."""
        return float(np.polyfit(np.log(self.dx), np.log(self.errors), 1)[0])


def read_convergence_csv(path) -> ConvergenceTable:
    path = Path(path)
    lines = path.read_text(encoding="ascii").strip().splitlines()
    if not lines or lines[0] != CONVERGENCE_HEADER:
        raise ValueError(f"{path}: expected header {CONVERGENCE_HEADER!r}")
    if len(lines) < 2:
        raise ValueError(f"{path}: convergence table has no data rows")
    points, dx, errors, rates = [], [], [], []
    for line in lines[1:]:
        cols = line.split(",")
        if len(cols) != 5:
            raise ValueError(f"{path}: malformed row {line!r}")
        points.append(int(cols[1]))
        dx.append(float(cols[2]))
        errors.append(float(cols[3]))
        if cols[4] != "":
            rates.append(float(cols[4]))
    return ConvergenceTable(
        label=path.stem,
        points=np.asarray(points),
        dx=np.asarray(dx),
        errors=np.asarray(errors),
        rates=np.asarray(rates),
    )


def read_eps_sweep_csv(path):
    path = Path(path)
    lines = path.read_text(encoding="ascii").strip().splitlines()
    if not lines or lines[0] != EPS_SWEEP_HEADER:
        raise ValueError(f"{path}: expected header {EPS_SWEEP_HEADER!r}")
    eps, errors = [], []
    for line in lines[1:]:
        cols = line.split(",")
        eps.append(float(cols[0]))
        errors.append(float(cols[1]))
    if not eps:
        raise ValueError(f"{path}: sweep table has no data rows")
    return np.asarray(eps), np.asarray(errors)


@dataclass
class StructuredPoints:
    dims: tuple
    origin: tuple
    spacing: tuple
    fields: dict

    def axes(self):
        return [
            self.origin[d] + self.spacing[d] * np.arange(self.dims[d])
            for d in range(2)
        ]


def read_vtk_structured_points(path) -> StructuredPoints:
    """Legacy ASCII STRUCTURED_POINTS reader (POINT_DATA scalars only)."""
    path = Path(path)
    lines = path.read_text(encoding="ascii").splitlines()
    if len(lines) < 5 or "STRUCTURED_POINTS" not in "".join(lines[:5]):
        raise ValueError(f"{path}: not a legacy structured-points file")
    dims = origin = spacing = None
    fields = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:4])
        elif line.startswith("ORIGIN"):
            origin = tuple(float(v) for v in line.split()[1:4])
        elif line.startswith("SPACING"):
            spacing = tuple(float(v) for v in line.split()[1:4])
        elif line.startswith("SCALARS"):
            if dims is None:
                raise ValueError(f"{path}: SCALARS before DIMENSIONS")
            name = line.split()[1]
            n = int(np.prod(dims))
            vals = []
            j = i + 1
            if j < len(lines) and lines[j].strip().startswith("LOOKUP_TABLE"):
                j += 1
            while j < len(lines) and len(vals) < n:
                vals.extend(float(v) for v in lines[j].split())
                j += 1
            if len(vals) != n:
                raise ValueError(f"{path}: field {name!r} has {len(vals)} of {n} values")
            arr = np.array(vals).reshape(dims, order="F")
            while arr.ndim > 2 and arr.shape[-1] == 1:
                arr = arr[..., 0]
            fields[name] = arr
            i = j - 1
        i += 1
    if dims is None or not fields:
        raise ValueError(f"{path}: no structured point data found")
    return StructuredPoints(dims=dims, origin=origin or (0.0,) * 3,
                            spacing=spacing or (1.0,) * 3, fields=fields)
