"""Haptotaxis model coefficients: peanut equilibrium, tumor tensor and drift,
volume fraction, turning activation, growth, and the nondimensional bridge.

All coefficients are piecewise constant per primal cell (matching voxel data);
the global scaling numbers (eps, delta, nu, theta) are shared by the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import FOUR_PI, MomentBasis
from .grid import Grid, corner_mean


@dataclass(frozen=True)
class ScalingNumbers:
    eps: float
    delta: float
    nu: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.eps, self.delta, self.nu, self.theta)
        if not all(np.isfinite(vals)):
            raise ValueError(f"scaling numbers must be finite, got {vals}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def peanut_equilibrium(d_water: np.ndarray, basis: MomentBasis):
    """Quadratic-form fiber distribution from a water tensor.

    Returns the matrix representation A with E(v) = v^T A v and the restricted
    moment vector e_i = <E a_i>.  Works on a single 3x3 tensor or a stacked
    (..., 3, 3) field.
    """
    d_water = np.asarray(d_water, dtype=float)
    _require_spd(d_water)
    tr = np.trace(d_water, axis1=-2, axis2=-1)
    A = 3.0 * d_water / (FOUR_PI * tr[..., None, None])
    v = basis.quad_nodes
    e_nodes = np.einsum("qi,...ij,qj->...q", v, A, v)
    e_vec = np.einsum(
        "...q,qi->...i", e_nodes, basis.quad_weights[:, None] * basis.basis_values[:, 1:]
    )
    return A, e_vec


def tumor_diffusion(d_water: np.ndarray) -> np.ndarray:
    """D_T = (1/5)(I + 2 D_W / tr D_W); always has unit trace."""
    d_water = np.asarray(d_water, dtype=float)
    _require_spd(d_water)
    tr = np.trace(d_water, axis1=-2, axis2=-1)
    eye = np.broadcast_to(np.eye(3), d_water.shape)
    return 0.2 * (eye + 2.0 * d_water / tr[..., None, None])


def tumor_drift(d_water: np.ndarray, grad_q: np.ndarray, lam_h) -> np.ndarray:
    """a_T = lambda_H * D_T grad Q (D_T symmetric, so row/column contraction agree)."""
    d_t = tumor_diffusion(d_water)
    a = np.einsum("...ij,...j->...i", d_t, np.asarray(grad_q, dtype=float))
    return np.asarray(lam_h)[..., None] * a if np.ndim(lam_h) else lam_h * a


def volume_fraction(d_water: np.ndarray) -> np.ndarray:
    """Fiber volume fraction Q = 1 - (tr D_W / (4 lambda_max))^(3/2)."""
    d_water = np.asarray(d_water, dtype=float)
    _require_spd(d_water)
    tr = np.trace(d_water, axis1=-2, axis2=-1)
    lam_max = np.linalg.eigvalsh(d_water)[..., -1]
    q = 1.0 - (tr / (4.0 * lam_max)) ** 1.5
    return q if q.ndim else float(q)


def activation(q, lam0: float, k_plus: float, k_minus: float):
    """Haptic activation lambda_H^hat = h'(Q) / (1 + alpha(Q)/lam0).

    With alpha = k+ Q + k-, h = k+ Q / alpha, so h'(Q) = k+ k- / alpha^2.
    """
    if k_plus <= 0 or k_minus <= 0:
        raise ValueError("attachment/detachment rates must be positive")
    q = np.asarray(q, dtype=float)
    alpha = k_plus * q + k_minus
    hprime = k_plus * k_minus / alpha**2
    out = hprime / (1.0 + alpha / lam0)
    return out if out.ndim else float(out)


def nondimensionalize(c: float, lam0: float, lam1: float, m_rate: float,
                      x_scale: float, t_scale: float) -> ScalingNumbers:
    """Characteristic numbers from the microscopic physical parameters."""
    for name, v in [("c", c), ("lam0", lam0), ("X", x_scale), ("T", t_scale)]:
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if lam1 < 0 or m_rate < 0:
        raise ValueError("lam1 and M must be nonnegative")
    return ScalingNumbers(
        eps=c / (x_scale * lam0),
        delta=c**2 * t_scale / (lam0 * x_scale**2),
        nu=lam1 / lam0,
        theta=m_rate * t_scale,
    )


def dimensionalize(eps: float, d0: float, a0: float, x_scale: float,
                   t_scale: float) -> tuple[float, float, float]:
    """Microscopic (c, lam0, lam1) from macroscopic speeds and the scaling."""
    for name, v in [("eps", eps), ("D0", d0), ("X", x_scale), ("T", t_scale)]:
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if a0 < 0:
        raise ValueError("a0 must be nonnegative")
    c = d0 / (x_scale * eps)
    lam0 = d0 / (x_scale**2 * eps**2)
    lam1 = a0 / (x_scale * eps**2)
    return c, lam0, lam1


def growth_rate(rho, m_rate: float, rho_cc: float):
    """Physical logistic growth rate mu = M (1 - rho/rho_cc)."""
    if rho_cc <= 0:
        raise ValueError("carrying capacity must be positive")
    return m_rate * (1.0 - np.asarray(rho, dtype=float) / rho_cc)


def _require_spd(d_water: np.ndarray, tol: float = 1e-12) -> None:
    sym_err = np.max(np.abs(d_water - np.swapaxes(d_water, -1, -2)))
    if sym_err > 1e-10:
        raise ValueError(f"water tensor not symmetric (max asymmetry {sym_err:.2e})")
    evs = np.linalg.eigvalsh(d_water)
    if np.min(evs) <= tol:
        raise ValueError(f"water tensor not positive definite (min eigenvalue {np.min(evs):.3e})")


class ModelField:
    """Per-cell coefficient tables for a run, frozen before time stepping.

    Parameters
    ----------
    grid, basis : discretization objects
    d_water : (*cells, 3, 3) SPD water tensors, constant per primal cell
    scaling : global ScalingNumbers
    k_diff : per-cell dimensionless turning-rate factor (default 1)
    lam_grad_q : per-cell drift coefficient vector lambda_H^hat * grad Q,
        (*cells, 3).  If None it is derived from the volume fraction of
        ``d_water`` (central differences, one-sided at the boundary) and the
        activation constants.
    rho_cc, mu_hat : carrying capacity and normalized growth law; the source
        enters the equations as theta * mu_hat(rho) with mu_hat(0) = 1.
    """

    def __init__(self, grid: Grid, basis: MomentBasis, d_water: np.ndarray,
                 scaling: ScalingNumbers, k_diff=None, lam_grad_q=None,
                 rho_cc: float = 1.0, k_plus: float = 0.1, k_minus: float = 0.1,
                 lam0_phys: float = 0.8):
        cells = grid.cell_counts
        d_water = np.broadcast_to(np.asarray(d_water, dtype=float), cells + (3, 3)).copy()
        self.grid = grid
        self.basis = basis
        self.scaling = scaling
        self.d_water = d_water
        self.rho_cc = float(rho_cc)

        self.equilibrium_matrix, self.e_moments = peanut_equilibrium(d_water, basis)
        self.d_tumor = tumor_diffusion(d_water)
        self.k_diff = (
            np.ones(cells) if k_diff is None
            else np.broadcast_to(np.asarray(k_diff, dtype=float), cells).copy()
        )

        self.volume_fraction = volume_fraction(d_water)
        if lam_grad_q is None:
            lam_h = activation(self.volume_fraction, lam0_phys, k_plus, k_minus)
            grad_q = cellwise_gradient(self.volume_fraction, grid)
            lam_grad_q = lam_h[..., None] * grad_q
        self.lam_grad_q = np.broadcast_to(
            np.asarray(lam_grad_q, dtype=float), cells + (3,)
        ).copy()
        self.drift_vector = np.einsum("...ij,...j->...i", self.d_tumor, self.lam_grad_q)

        # velocity-weighted equilibrium moments e_d = <v_d E a>, (cells, 3, n_r)
        v = basis.quad_nodes
        e_nodes = np.einsum(
            "qi,...ij,qj->...q", v, self.equilibrium_matrix, v
        )
        wa = basis.quad_weights[:, None] * basis.basis_values[:, 1:]
        self.ev_moments = np.einsum("...q,qd,qi->...di", e_nodes, v, wa)
        self._equilibrium_nodes = e_nodes

    # --- derived quantities -------------------------------------------------
    def mu_hat(self, rho: np.ndarray) -> np.ndarray:
        """Normalized logistic growth factor, mu_hat(0) = 1."""
        return 1.0 - np.asarray(rho) / self.rho_cc

    def rho_tilde(self, rho: np.ndarray) -> np.ndarray:
        return corner_mean(rho, self.grid)

    def equilibrium_at_nodes(self, cell_index) -> np.ndarray:
        return self._equilibrium_nodes[tuple(cell_index)]

    def limit_diffusion(self) -> np.ndarray:
        """Effective diffusion tensors delta * D_T / K_D of the parabolic limit."""
        return self.scaling.delta * self.d_tumor / self.k_diff[..., None, None]

    def limit_velocity(self) -> np.ndarray:
        """Effective advection velocity delta * nu * a_T / K_D of the limit."""
        s = self.scaling
        return s.delta * s.nu * self.drift_vector / self.k_diff[..., None]


def cellwise_gradient(q: np.ndarray, grid: Grid) -> np.ndarray:
    """Central-difference gradient of a cell-constant field, one-sided at the
    boundary; returns (*cells, 3) with zeros on unused axes."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape + (3,))
    for d in range(grid.dim):
        h = grid.spacing[d]
        g = np.gradient(q, h, axis=d) if q.shape[d] > 1 else np.zeros_like(q)
        out[..., d] = g
    return out
