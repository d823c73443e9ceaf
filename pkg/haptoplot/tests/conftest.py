"""Fixtures writing synthetic solver artifacts in the documented formats."""

import numpy as np
import pytest


def write_convergence_csv(path, points, errors):
    rows = ["level,points,dx,l2_error,rate"]
    dx = [1.0 / m for m in points]
    for k, (m, e) in enumerate(zip(points, errors)):
        if k == 0:
            rate = ""
        else:
            rate = "{:.17g}".format(
                (np.log(errors[k - 1]) - np.log(e)) / (np.log(dx[k - 1]) - np.log(dx[k]))
            )
        rows.append(f"{k},{m},{dx[k]:.17g},{e:.17g},{rate}")
    path.write_text("\n".join(rows) + "\n")
    return path


def write_vtk(path, field_name, values, origin=(0.0, 0.0), spacing=(1.0, 1.0)):
    nx, ny = values.shape
    lines = [
        "# vtk DataFile Version 3.0",
        "synthetic",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {origin[0]:.17g} {origin[1]:.17g} 0",
        f"SPACING {spacing[0]:.17g} {spacing[1]:.17g} 1",
        f"POINT_DATA {nx * ny}",
        f"SCALARS {field_name} double 1",
        "LOOKUP_TABLE default",
    ]
    lines.extend("{:.17g}".format(v) for v in values.flatten(order="F"))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def quadratic_csv(tmp_path):
    points = [10, 15, 22, 33]
    errors = [2.0 * (1.0 / m) ** 2 for m in points]
    return write_convergence_csv(tmp_path / "order2.csv", points, errors)


@pytest.fixture
def gaussian_vtk(tmp_path):
    x = np.linspace(-1, 1, 41)
    X, Y = np.meshgrid(x, x, indexing="ij")
    values = np.exp(-8 * (X**2 + Y**2))
    return write_vtk(tmp_path / "gauss.vtk", "rho", values, origin=(-1.0, -1.0),
                     spacing=(0.05, 0.05))
