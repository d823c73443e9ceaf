"""Primal-dual grid geometry, subcell weights, upwind trace points."""

import numpy as np
import pytest

from haptoflow.grid import (
    State,
    build_grid,
    corner_mean,
    primal_avg_density,
    upwind_trace_point,
    upwind_weights_field,
    zero_state,
)


def test_3x3_unit_square_volumes():
    grid = build_grid((3, 3), (1.0, 1.0))
    assert grid.cell_counts == (2, 2)
    assert grid.cell_volume == pytest.approx(0.25)
    vols = grid.dual_volumes
    assert vols[1, 1] == pytest.approx(0.25)
    for idx in [(0, 1), (1, 0), (2, 1), (1, 2)]:
        assert vols[idx] == pytest.approx(0.125)
    for idx in [(0, 0), (0, 2), (2, 0), (2, 2)]:
        assert vols[idx] == pytest.approx(0.0625)


def test_dual_volumes_partition_domain():
    for counts, extents in [((3, 3), (1.0, 1.0)), ((5, 7), (2.0, 3.0)), ((4, 4, 5), (1.0, 2.0, 1.5))]:
        grid = build_grid(counts, extents)
        assert grid.dual_volumes.sum() == pytest.approx(grid.domain_volume, rel=1e-14)
        assert grid.n_cells * grid.cell_volume == pytest.approx(grid.domain_volume, rel=1e-14)


def test_degenerate_axis_rejected():
    with pytest.raises(ValueError):
        build_grid((2, 3), (1.0, 1.0))
    with pytest.raises(ValueError):
        build_grid((3, 3), (0.0, 1.0))
    with pytest.raises(ValueError):
        build_grid((3,), (1.0,))


def test_primal_avg_density_constant_and_mean():
    grid = build_grid((3, 3), (1.0, 1.0))
    state = zero_state(grid, 3)
    state.rho[:] = 1.0
    assert primal_avg_density(state, grid, (0, 0)) == pytest.approx(1.0)
    state.rho[:] = 0.0
    state.rho[1, 1] = 4.0
    assert primal_avg_density(state, grid, (0, 0)) == pytest.approx(1.0)


def test_primal_avg_density_3d_interior():
    grid = build_grid((4, 4, 4), (1.0, 1.0, 1.0))
    rng = np.random.default_rng(5)
    rho = rng.normal(size=grid.counts)
    state = State(rho=rho, u=np.zeros(grid.cell_counts + (1, 3)))
    j = (1, 2, 0)
    expected = np.mean(
        [rho[j[0] + a, j[1] + b, j[2] + c] for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    )
    assert primal_avg_density(state, grid, j) == pytest.approx(expected, rel=1e-14)
    assert np.allclose(corner_mean(rho, grid)[j], expected)


def test_primal_avg_density_rejects_bad_index():
    grid = build_grid((3, 3), (1.0, 1.0))
    state = zero_state(grid, 3)
    with pytest.raises(IndexError):
        primal_avg_density(state, grid, (2, 0))


def test_upwind_trace_axis_aligned():
    grid = build_grid((3, 3), (2.0, 2.0))  # unit cells
    w = upwind_trace_point(grid, (0, 0), (1.0, 0.0, 0.0))
    # corners ordered (0,0),(0,1),(1,0),(1,1): weight 1/2 on the two left ones
    assert np.allclose(w, [0.5, 0.5, 0.0, 0.0])
    assert w.sum() == pytest.approx(1.0)


def test_upwind_trace_diagonal_hits_corner():
    grid = build_grid((3, 3), (2.0, 2.0))
    w = upwind_trace_point(grid, (0, 0), np.array([1.0, 1.0, 0.0]) / np.sqrt(2))
    assert np.allclose(w, [1.0, 0.0, 0.0, 0.0])


def test_upwind_trace_zero_drift_fallback():
    grid = build_grid((3, 3), (2.0, 2.0))
    w = upwind_trace_point(grid, (0, 0), (0.0, 0.0, 0.0))
    assert np.allclose(w, 0.25)


def test_upwind_trace_weights_nonnegative_and_normalized():
    grid = build_grid((3, 3), (1.0, 2.0))
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=3)
        a[2] = 0.0
        w = upwind_trace_point(grid, (1, 1), a)
        assert np.all(w >= -1e-15)
        assert w.sum() == pytest.approx(1.0, abs=1e-13)


def test_upwind_weights_field_matches_pointwise():
    grid = build_grid((4, 5), (1.0, 1.3))
    rng = np.random.default_rng(2)
    a = rng.normal(size=grid.cell_counts + (3,))
    a[0, 0] = 0.0
    field = upwind_weights_field(grid, a)
    for j in [(0, 0), (1, 2), (2, 3)]:
        assert np.allclose(field[j], upwind_trace_point(grid, j, a[j]), atol=1e-14)
