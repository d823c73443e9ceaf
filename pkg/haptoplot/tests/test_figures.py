"""Figure builders: slope annotations, contours, determinism."""

import numpy as np
import pytest

from haptoplot.figures import (
    plot_contours,
    plot_convergence,
    plot_eps_sweep,
    plot_heatmap,
    signed_truncated_log,
)
from haptoplot.readers import read_convergence_csv

from conftest import write_convergence_csv, write_vtk


def test_convergence_slope_annotation_matches_rates(quadratic_csv, tmp_path):
    out = tmp_path / "conv.png"
    result = plot_convergence([quadratic_csv], out)
    assert out.exists() and out.stat().st_size > 0
    table = read_convergence_csv(quadratic_csv)
    fitted = result.annotations["fitted_orders"][table.label]
    assert abs(fitted - np.mean(table.rates)) < 0.05


def test_convergence_two_series_legend(tmp_path):
    c1 = write_convergence_csv(tmp_path / "a.csv", [10, 20, 40],
                               [1e-1, 5e-2, 2.5e-2])
    c2 = write_convergence_csv(tmp_path / "b.csv", [10, 20, 40],
                               [1e-1, 2.5e-2, 6.25e-3])
    result = plot_convergence([c1, c2], tmp_path / "two.png")
    orders = result.annotations["fitted_orders"]
    assert set(orders) == {"a", "b"}
    assert orders["a"] == pytest.approx(1.0, abs=0.05)
    assert orders["b"] == pytest.approx(2.0, abs=0.05)


def test_convergence_rejects_empty_csv(tmp_path):
    bad = tmp_path / "empty.csv"
    bad.write_text("level,points,dx,l2_error,rate\n")
    with pytest.raises(ValueError):
        plot_convergence([bad], tmp_path / "never.png")
    assert not (tmp_path / "never.png").exists()


def test_heatmap_constant_field(gaussian_vtk, tmp_path):
    values = np.full((11, 11), 3.0)
    vtk = write_vtk(tmp_path / "const.vtk", "rho", values)
    result = plot_heatmap(vtk, tmp_path / "const.png")
    assert result.annotations["range"] == (3.0, 3.0)
    assert (tmp_path / "const.png").exists()


def test_heatmap_signed_log_transform():
    vals = np.array([1.0, -1.0, 1e-12, 0.0, 100.0])
    out = signed_truncated_log(vals, 1e-6)
    assert out[0] == pytest.approx(6.0)
    assert out[1] == pytest.approx(-6.0)
    assert out[2] == 0.0 and out[3] == 0.0
    assert out[4] == pytest.approx(8.0)


def test_contours_single_closed_loop(gaussian_vtk, tmp_path):
    result = plot_contours([gaussian_vtk], tmp_path / "c.png", levels=(0.5,))
    info = result.annotations["contours"]["gauss"]
    assert info["segments"] == 1  # one closed loop at half maximum


def test_contour_overlay_two_inputs(gaussian_vtk, tmp_path):
    x = np.linspace(-1, 1, 41)
    X, Y = np.meshgrid(x, x, indexing="ij")
    wider = np.exp(-4 * (X**2 + Y**2))
    vtk2 = write_vtk(tmp_path / "wide.vtk", "rho", wider, origin=(-1.0, -1.0),
                     spacing=(0.05, 0.05))
    result = plot_contours([gaussian_vtk, vtk2], tmp_path / "overlay.png",
                           levels=(0.1,))
    drawn = result.annotations["contours"]
    assert set(drawn) == {"gauss", "wide"}
    assert all(d["segments"] >= 1 for d in drawn.values())


def test_contours_reject_flat_field(tmp_path):
    vtk = write_vtk(tmp_path / "flat.vtk", "rho", np.zeros((5, 5)))
    with pytest.raises(ValueError):
        plot_contours([vtk], tmp_path / "no.png")


def test_eps_sweep_plot(tmp_path):
    csv = tmp_path / "sweep.csv"
    eps = [10.0**-k for k in range(1, 8)]
    errors = [3e-3 + 2e-2 * e**0.5 for e in eps]
    rows = ["eps,l2_error"] + [f"{e:.17g},{err:.17g}" for e, err in zip(eps, errors)]
    csv.write_text("\n".join(rows) + "\n")
    result = plot_eps_sweep([csv], tmp_path / "sweep.png")
    assert result.annotations["plateau_errors"]["sweep"] == pytest.approx(errors[-1])


def test_figures_are_deterministic(quadratic_csv, tmp_path):
    out1, out2 = tmp_path / "one.png", tmp_path / "two.png"
    plot_convergence([quadratic_csv], out1)
    plot_convergence([quadratic_csv], out2)
    assert out1.read_bytes() == out2.read_bytes()
