"""Real spherical-harmonics moment basis on the unit sphere.

The velocity space S^2 is discretized by a linear spectral Galerkin method.
This module builds the orthonormal real harmonics up to order N, a product
quadrature that integrates all polynomials of degree <= 2N+5 exactly, and the
dense velocity-flux matrices that couple the moment equations.

Conventions (fixed here, everything else derives from this):
  * components ordered (l, m) lexicographically, m running from -l to l;
  * no Condon-Shortley phase, so the order-1 block is exactly
    sqrt(3/(4 pi)) * (v_eta, v_zeta, v_xi);
  * axes are indexed 0=xi, 1=eta, 2=zeta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import lpmv

MAX_ORDER = 15
FOUR_PI = 4.0 * math.pi

AXIS_NAMES = ("xi", "eta", "zeta")


@dataclass(frozen=True)
class MomentBasis:
    """Quadrature and moment tables for harmonics up to order N.

    ``flux_matrices[d] = <v_d m m^T>`` over the full basis; the matrices for
    the restricted basis (constraint <g> = 0) are the same with row/column 0
    removed.  ``order1_index[d]`` locates the harmonic proportional to v_d in
    the full basis, and ``vel_coeff`` is the factor in
    ``<v_d g> = vel_coeff * u[order1_index[d] - 1]``.
    """

    order: int
    n_full: int
    n_restricted: int
    quad_nodes: np.ndarray        # (nq, 3) unit vectors
    quad_weights: np.ndarray      # (nq,) positive, sums to 4 pi
    basis_values: np.ndarray      # (nq, n_full)
    flux_matrices: np.ndarray     # (3, n_full, n_full)
    parity_signs: np.ndarray      # (n_full,) = (-1)^l per component
    degrees: np.ndarray           # (n_full,) harmonic order l per component
    order1_index: tuple[int, int, int]
    vel_coeff: float
    # symmetric eigensplit of the full flux matrices, used for upwinding
    flux_plus: np.ndarray = field(repr=False, default=None)   # (3, nf, nf)
    flux_minus: np.ndarray = field(repr=False, default=None)  # (3, nf, nf)

    @property
    def restricted_flux(self) -> np.ndarray:
        return self.flux_matrices[:, 1:, 1:]


def sphere_quadrature(n_polar: int, n_azimuth: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in cos(polar) x uniform rule in azimuth.

    Exact for all spherical polynomials of degree <= min(2 n_polar - 1,
    n_azimuth - 1).
    """
    mu, w_mu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * math.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    w_phi = 2.0 * math.pi / n_azimuth
    sin_th = np.sqrt(1.0 - mu**2)
    nodes = np.empty((n_polar * n_azimuth, 3))
    nodes[:, 0] = np.outer(sin_th, np.cos(phi)).ravel()
    nodes[:, 1] = np.outer(sin_th, np.sin(phi)).ravel()
    nodes[:, 2] = np.outer(mu, np.ones(n_azimuth)).ravel()
    weights = np.outer(w_mu * w_phi, np.ones(n_azimuth)).ravel()
    return nodes, weights


def real_harmonics(nodes: np.ndarray, order: int) -> np.ndarray:
    """Evaluate the orthonormal real harmonics at unit vectors, (nq, (N+1)^2)."""
    v = np.asarray(nodes, dtype=float)
    mu = np.clip(v[:, 2], -1.0, 1.0)
    phi = np.arctan2(v[:, 1], v[:, 0])
    cols = []
    for l in range(order + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            # lpmv carries the Condon-Shortley phase; cancel it with (-1)^m
            plm = (-1.0) ** am * lpmv(am, l, mu)
            norm = math.sqrt(
                (2 * l + 1)
                / FOUR_PI
                * (math.factorial(l - am) / math.factorial(l + am))
            )
            if m == 0:
                cols.append(norm * plm)
            elif m > 0:
                cols.append(math.sqrt(2.0) * norm * np.cos(m * phi) * plm)
            else:
                cols.append(math.sqrt(2.0) * norm * np.sin(am * phi) * plm)
    return np.stack(cols, axis=1)


def build_basis(order: int) -> MomentBasis:
    """Construct the moment basis of order N with all tables filled in."""
    if order < 0:
        raise ValueError("moment order must be >= 0")
    if order > MAX_ORDER:
        raise ValueError(f"moment order {order} exceeds the supported limit {MAX_ORDER}")
    nodes, weights = sphere_quadrature(order + 3, 2 * order + 6)
    values = real_harmonics(nodes, order)
    n_full = (order + 1) ** 2

    wv = values * weights[:, None]
    flux = np.empty((3, n_full, n_full))
    for d in range(3):
        flux[d] = wv.T @ (nodes[:, d : d + 1] * values)
        flux[d] = 0.5 * (flux[d] + flux[d].T)  # symmetric up to round-off

    degrees = np.concatenate([np.full(2 * l + 1, l, dtype=int) for l in range(order + 1)])
    parity = (-1.0) ** degrees

    # locate the order-1 harmonics per axis from the quadrature itself
    order1 = [0, 0, 0]
    coeff = math.sqrt(FOUR_PI / 3.0)
    if order >= 1:
        for d in range(3):
            proj = wv.T @ nodes[:, d]  # <v_d m_i>
            i = int(np.argmax(np.abs(proj)))
            if abs(proj[i] - coeff) > 1e-10:
                raise AssertionError(
                    f"order-1 convention violated on axis {AXIS_NAMES[d]}: <v m_{i}> = {proj[i]}"
                )
            order1[d] = i

    evals, evecs = np.linalg.eigh(flux)
    plus = np.einsum("dij,dj,dkj->dik", evecs, np.maximum(evals, 0.0), evecs)
    minus = np.einsum("dij,dj,dkj->dik", evecs, np.minimum(evals, 0.0), evecs)

    basis = MomentBasis(
        order=order,
        n_full=n_full,
        n_restricted=n_full - 1,
        quad_nodes=nodes,
        quad_weights=weights,
        basis_values=values,
        flux_matrices=flux,
        parity_signs=parity,
        degrees=degrees,
        order1_index=(order1[0], order1[1], order1[2]),
        vel_coeff=coeff,
        flux_plus=plus,
        flux_minus=minus,
    )
    _check_tables(basis)
    return basis


def _check_tables(basis: MomentBasis, tol: float = 1e-11) -> None:
    gram = (basis.basis_values * basis.quad_weights[:, None]).T @ basis.basis_values
    err = np.max(np.abs(gram - np.eye(basis.n_full)))
    if err > tol:
        raise AssertionError(f"basis Gram matrix deviates from identity by {err:.2e}")
    if abs(basis.quad_weights.sum() - FOUR_PI) > 1e-11:
        raise AssertionError("quadrature weights do not sum to 4 pi")


def quad_sphere(f, basis: MomentBasis) -> float:
    """Integrate ``f`` over the unit sphere with the basis quadrature.

    ``f`` may be vectorized over an (nq, 3) array of unit vectors or accept a
    single 3-vector.
    """
    nodes = basis.quad_nodes
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape != (nodes.shape[0],):
            raise TypeError
    except TypeError:
        vals = np.array([float(f(v)) for v in nodes])
    return float(basis.quad_weights @ vals)


def flux_matrix_entry(basis: MomentBasis, d: int, i: int, j: int) -> float:
    """Entry <v_d m_i m_j> of the full-basis flux matrix along axis d."""
    if not 0 <= i < basis.n_full or not 0 <= j < basis.n_full:
        raise IndexError("basis component index out of range")
    return float(basis.flux_matrices[d, i, j])


def parity_reflect(u: np.ndarray, basis: MomentBasis) -> np.ndarray:
    """Apply v -> -v to a restricted moment vector (order-l block gets (-1)^l)."""
    u = np.asarray(u)
    if u.shape[-1] != basis.n_restricted:
        raise ValueError(
            f"expected restricted moment vector of length {basis.n_restricted}, got {u.shape[-1]}"
        )
    return u * basis.parity_signs[1:]


def project(basis: MomentBasis, values_at_nodes: np.ndarray) -> np.ndarray:
    """Moments <f a_i> of a function sampled at the quadrature nodes (restricted)."""
    return (basis.basis_values[:, 1:] * basis.quad_weights[:, None]).T @ values_at_nodes


def reconstruct(basis: MomentBasis, u: np.ndarray) -> np.ndarray:
    """Point values of g = u . a at the quadrature nodes."""
    return basis.basis_values[:, 1:] @ u
