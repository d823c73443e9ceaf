"""Tensor-product primal-dual grid in 2 or 3 space dimensions.

Vertices carry the density (each vertex owns a dual cell, clipped to a
half/quarter/eighth box at the boundary); primal cells between vertices carry
the perturbation moments.  Geometry is uniform per axis, so volumes, facet
areas and subcell weights are simple products.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np


@dataclass(frozen=True)
class Grid:
    dim: int
    counts: tuple[int, ...]        # vertices per axis
    extents: tuple[float, ...]
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    dual_volumes: np.ndarray = field(repr=False, default=None)   # vertex-shaped
    boundary_vertex: np.ndarray = field(repr=False, default=None)  # bool, vertex-shaped

    @property
    def cell_counts(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.counts)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def domain_volume(self) -> float:
        return float(np.prod(self.extents))

    def vertex_axes(self) -> list[np.ndarray]:
        return [
            self.origin[d] + self.spacing[d] * np.arange(self.counts[d])
            for d in range(self.dim)
        ]

    def vertex_coords(self) -> list[np.ndarray]:
        """Meshgrid ('ij') of vertex coordinates, one array per axis."""
        return list(np.meshgrid(*self.vertex_axes(), indexing="ij"))

    def cell_center_axes(self) -> list[np.ndarray]:
        return [
            self.origin[d] + self.spacing[d] * (np.arange(self.counts[d] - 1) + 0.5)
            for d in range(self.dim)
        ]

    def cell_centers(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.cell_center_axes(), indexing="ij"))

    def corner_slices(self):
        """Slices picking each of the 2^dim vertex corners of all cells.

        Ordered lexicographically over corner offsets, last axis fastest:
        2D -> (0,0), (0,1), (1,0), (1,1).
        """
        out = []
        for offs in product((0, 1), repeat=self.dim):
            out.append(tuple(slice(1, None) if o else slice(None, -1) for o in offs))
        return out

    def facet_area(self, axis: int) -> float:
        """Area of one dual facet with normal along ``axis``."""
        area = 1.0
        for d in range(self.dim):
            if d != axis:
                area *= 0.5 * self.spacing[d]
        return area


def build_grid(counts, extents, origin=None) -> Grid:
    """Uniform tensor-product grid with the given vertex counts per axis."""
    counts = tuple(int(c) for c in counts)
    extents = tuple(float(e) for e in extents)
    dim = len(counts)
    if dim not in (2, 3):
        raise ValueError("only 2 or 3 space dimensions are supported")
    if len(extents) != dim:
        raise ValueError("counts and extents must have the same length")
    if any(c < 3 for c in counts):
        raise ValueError(f"need at least 3 vertices per axis, got {counts}")
    if any(e <= 0 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if origin is None:
        origin = (0.0,) * dim
    origin = tuple(float(o) for o in origin)
    spacing = tuple(extents[d] / (counts[d] - 1) for d in range(dim))

    axis_weights = []
    for d in range(dim):
        w = np.full(counts[d], spacing[d])
        w[0] = w[-1] = 0.5 * spacing[d]
        axis_weights.append(w)
    dual_vol = axis_weights[0]
    for w in axis_weights[1:]:
        dual_vol = np.multiply.outer(dual_vol, w)

    boundary = np.zeros(counts, dtype=bool)
    for d in range(dim):
        sl0 = [slice(None)] * dim
        sl0[d] = 0
        boundary[tuple(sl0)] = True
        sl0[d] = -1
        boundary[tuple(sl0)] = True

    return Grid(
        dim=dim,
        counts=counts,
        extents=extents,
        origin=origin,
        spacing=spacing,
        dual_volumes=dual_vol,
        boundary_vertex=boundary,
    )


@dataclass
class State:
    """Density on dual cells plus perturbation moments on primal cells.

    ``u`` has shape ``(*cell_counts, n_variants, n_restricted)``; the variant
    axis has length 1 for the plain scheme and one entry per flux variant of
    the improved stencil (see ``operators.variant_list``).
    """

    rho: np.ndarray
    u: np.ndarray
    time: float = 0.0

    def copy(self) -> "State":
        return State(self.rho.copy(), self.u.copy(), self.time)

    def check_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.u)))


def zero_state(grid: Grid, n_restricted: int, n_variants: int = 1) -> State:
    return State(
        rho=np.zeros(grid.counts),
        u=np.zeros(grid.cell_counts + (n_variants, n_restricted)),
        time=0.0,
    )


def corner_mean(rho: np.ndarray, grid: Grid) -> np.ndarray:
    """Subcell-volume weighted density average per primal cell.

    All subcells |C_j ∩ C_r| equal |C_j| / 2^dim on a uniform grid, so this is
    the plain mean over the cell's corner vertices.
    """
    acc = None
    for sl in grid.corner_slices():
        acc = rho[sl].copy() if acc is None else acc + rho[sl]
    return acc / (2**grid.dim)


def primal_avg_density(state: State, grid: Grid, j) -> float:
    """Average density on primal cell ``j`` (multi-index over cells)."""
    j = tuple(int(i) for i in j)
    for d in range(grid.dim):
        if not 0 <= j[d] < grid.counts[d] - 1:
            raise IndexError(f"primal cell index {j} out of range")
    total = 0.0
    for offs in product((0, 1), repeat=grid.dim):
        total += state.rho[tuple(j[d] + offs[d] for d in range(grid.dim))]
    return total / (2**grid.dim)


def upwind_trace_point(grid: Grid, j, a) -> np.ndarray:
    """Hat-function corner weights of the upwind trace point of cell ``j``.

    The point is where the ray {center - tau*a, tau > 0} first meets the cell
    boundary; for a = 0 the volume-weighted (equal) corner weights are
    returned.  Weights are ordered like :meth:`Grid.corner_slices`.
    """
    a = np.asarray(a, dtype=float)[: grid.dim]
    h = np.asarray(grid.spacing)
    if np.all(a == 0.0):
        s = np.full(grid.dim, 0.5)
    else:
        with np.errstate(divide="ignore"):
            tau = np.where(a != 0.0, (0.5 * h) / np.abs(a), np.inf)
        t = tau.min()
        # local coordinate of the trace point in [0, 1] per axis
        s = 0.5 - t * a / h
        s = np.clip(s, 0.0, 1.0)
    weights = []
    for offs in product((0, 1), repeat=grid.dim):
        w = 1.0
        for d in range(grid.dim):
            w *= s[d] if offs[d] else 1.0 - s[d]
        weights.append(w)
    return np.asarray(weights)


def upwind_weights_field(grid: Grid, a_field: np.ndarray) -> np.ndarray:
    """Vectorized upwind corner weights, a_field shaped (*cells, >=dim)."""
    dim = grid.dim
    a = a_field[..., :dim]
    h = np.asarray(grid.spacing)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(a != 0.0, (0.5 * h) / np.abs(a), np.inf)
    t = tau.min(axis=-1)
    zero_drift = np.isinf(t)
    t = np.where(zero_drift, 0.0, t)
    s = np.where(
        zero_drift[..., None], 0.5, np.clip(0.5 - t[..., None] * a / h, 0.0, 1.0)
    )
    n_corners = 2**dim
    out = np.empty(a.shape[:-1] + (n_corners,))
    for k, offs in enumerate(product((0, 1), repeat=dim)):
        w = np.ones(a.shape[:-1])
        for d in range(dim):
            w = w * (s[..., d] if offs[d] else 1.0 - s[..., d])
        out[..., k] = w
    return out
