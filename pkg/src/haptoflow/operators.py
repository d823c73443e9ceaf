"""Discrete right-hand sides of the micro-macro system on the staggered grid.

The macro density rho lives on dual cells (vertices), the perturbation
moments u on primal cells.  Assembly is fully vectorized; every facet flux is
single-valued, so the macro update is conservative to round-off.

Improved-stencil mode carries one copy of u per flux variant: the stiff
density flux of variant (d, signs) evaluates its d-normal faces at the single
corner selected by the transverse signs instead of the face midpoint, and the
macro flux picks, on every dual facet, the variant whose evaluation line runs
through the facet's own vertex pair.  In the stiff limit this turns the
diagonal five-point stencil into the standard one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .basis import FOUR_PI, MomentBasis
from .grid import Grid, State, corner_mean, upwind_weights_field
from .model import ModelField

VARIANTS_MI = ("mi1", "mi2")
VARIANTS_IV = ("iv1", "iv2")
SECOND_ORDER = ("mi2", "iv2")
SECOND_ORDER_CFL = 0.2


@dataclass(frozen=True)
class SchemeConfig:
    variant: str = "mi1"            # mi1 | mi2 | iv1 | iv2
    stencil: str = "improved"       # plain | improved
    drift: str = "centered"         # centered | upwind
    bc: str = "u_turn"              # u_turn | thermal | dirichlet
    cfl_safety: float = 0.9

    def __post_init__(self):
        if self.variant not in VARIANTS_MI + VARIANTS_IV:
            raise ValueError(f"unknown scheme variant {self.variant!r}")
        if self.stencil not in ("plain", "improved"):
            raise ValueError(f"unknown stencil mode {self.stencil!r}")
        if self.drift not in ("centered", "upwind"):
            raise ValueError(f"unknown drift mode {self.drift!r}")
        if self.bc not in ("u_turn", "thermal", "dirichlet"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError("cfl_safety must be in (0, 1]")

    @property
    def second_order(self) -> bool:
        return self.variant in SECOND_ORDER

    @property
    def effective_cfl(self) -> float:
        if self.second_order:
            return min(self.cfl_safety, SECOND_ORDER_CFL)
        return self.cfl_safety

    @property
    def implicit_volume_terms(self) -> bool:
        return self.variant in VARIANTS_IV


@dataclass
class Rhs:
    d_rho: np.ndarray
    d_u: np.ndarray

    def check_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.d_rho)) and np.all(np.isfinite(self.d_u)))


def variant_list(dim: int, stencil: str):
    """Flux-variant tags: [None] for plain, else (axis, transverse sign bits).

    Sign bit 1 means the d-normal faces are evaluated at the transverse-upper
    corner; that variant serves the dual facets whose vertex sits above the
    cell in that transverse axis.
    """
    if stencil == "plain":
        return [None]
    tags = []
    for d in range(dim):
        for signs in product((1, 0), repeat=dim - 1):
            tags.append((d, signs))
    return tags


def _axslice(ndim: int, axis: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (np.sign(a) + np.sign(b)) * np.minimum(np.abs(a), np.abs(b))


class Scheme:
    """Assembled spatial operators for one (grid, model, basis, config)."""

    def __init__(self, grid: Grid, model: ModelField, basis: MomentBasis,
                 config: SchemeConfig, rho_bc=None, source_rho=None, source_u=None,
                 pin_axes=None):
        if config.bc == "dirichlet" and rho_bc is None:
            raise ValueError("dirichlet boundary condition requires rho_bc")
        self.grid = grid
        self.model = model
        self.basis = basis
        self.config = config
        self.rho_bc = rho_bc
        self.source_rho = source_rho
        self.source_u = source_u
        # axes whose walls carry the density constraint; the remaining walls
        # keep the native zero-mass-flux reflective closure
        self.pin_axes = tuple(range(grid.dim)) if pin_axes is None else tuple(pin_axes)

        self.variants = variant_list(grid.dim, config.stencil)
        self.n_variants = len(self.variants)
        self._variant_index = {tag: k for k, tag in enumerate(self.variants)}

        dim = grid.dim
        self._corner_slices = {}
        for offs in product((0, 1), repeat=dim):
            self._corner_slices[offs] = tuple(
                slice(1, None) if o else slice(None, -1) for o in offs
            )

        s = model.scaling
        self.stiff_rate = s.delta * model.k_diff / s.eps**2  # delta*K_D/eps^2 per cell

        if config.drift == "upwind":
            self._drift_weights = upwind_weights_field(grid, model.drift_vector)
        else:
            self._drift_weights = None

        # order-1 bookkeeping (restricted indices)
        self._idx1 = np.array([i - 1 for i in basis.order1_index])
        self._vel = basis.vel_coeff

        if config.bc in ("thermal", "dirichlet"):
            self._thermal_ops = {
                (d, side): self._build_thermal_op(d, side)
                for d in range(dim) for side in (0, 1)
            }
        else:
            self._thermal_ops = None

        if config.bc == "dirichlet":
            self._vertex_coords = grid.vertex_coords()
            mask = np.zeros(grid.counts, dtype=bool)
            for d in self.pin_axes:
                sl = [slice(None)] * grid.dim
                sl[d] = 0
                mask[tuple(sl)] = True
                sl[d] = -1
                mask[tuple(sl)] = True
            self._wall_mask = mask

    # ------------------------------------------------------------------
    # boundary handling
    # ------------------------------------------------------------------
    def _build_thermal_op(self, axis: int, side: int) -> np.ndarray:
        """Per-cell linear map u -> ghost u realizing the thermal reflection.

        The wall distribution keeps the outgoing half of f and replaces the
        incoming half by alpha*E with alpha balancing the mass flux; for the
        symmetric peanut the equilibrium part passes through exactly
        (alpha = rho_tilde + eps*alpha_1), so the ghost is independent of rho.
        """
        basis, model, grid = self.basis, self.model, self.grid
        normal = np.zeros(3)
        normal[axis] = 1.0 if side == 1 else -1.0
        vn = basis.quad_nodes @ normal
        out_mask = vn > 0.0
        w = basis.quad_weights
        a_vals = basis.basis_values[:, 1:]

        P = np.einsum("q,qi,qk->ik", w * out_mask, a_vals, a_vals)
        s_vec = np.einsum("q,qk->k", w * out_mask, a_vals)
        w_vec = np.einsum("q,qk->k", w * out_mask * vn, a_vals)

        bslice = _axslice(grid.dim, axis, -1 if side == 1 else 0)
        e_nodes = model._equilibrium_nodes[bslice]          # (bcells..., nq)
        e_mom = model.e_moments[bslice]                     # (bcells..., n_r)
        in_mask = ~out_mask
        q_vec = np.einsum("...q,q,qi->...i", e_nodes, w * in_mask, a_vals)
        e_in = np.einsum("...q,q->...", e_nodes, w * in_mask)
        vn_e_in = np.einsum("...q,q->...", e_nodes, w * in_mask * vn)

        T = (
            P
            - np.einsum("...i,k->...ik", e_mom, s_vec)
            - np.einsum(
                "...i,k->...ik",
                (q_vec - e_in[..., None] * e_mom) / vn_e_in[..., None],
                w_vec,
            )
        )
        return T

    def fill_ghosts(self, state: State, include_rho: bool = False):
        """Ghost moment slabs per (axis, side); with ``include_rho`` also the
        dirichlet ghost densities (mirror rule 2 rho_b - rho_interior)."""
        grid, basis = self.grid, self.basis
        cfg = self.config
        ghosts = {}
        parity = basis.parity_signs[1:]
        for d in range(grid.dim):
            for side in (0, 1):
                bslice = _axslice(state.u.ndim, d, slice(-1, None) if side else slice(0, 1))
                u_b = state.u[bslice]
                if cfg.bc == "u_turn":
                    ghosts[(d, side)] = u_b * parity
                else:
                    T = self._thermal_ops[(d, side)]
                    # T has the boundary-cell shape without the kept axis
                    Tk = np.expand_dims(T, d)
                    ghosts[(d, side)] = np.einsum("...ik,...vk->...vi", Tk, u_b)
        if include_rho and cfg.bc == "dirichlet":
            ghosts["rho"] = self._dirichlet_ghost_rho(state)
        return ghosts

    def _dirichlet_ghost_rho(self, state: State):
        out = {}
        rho = state.rho
        for d in range(self.grid.dim):
            for side in (0, 1):
                wall = _axslice(rho.ndim, d, slice(-1, None) if side else slice(0, 1))
                mirror = _axslice(rho.ndim, d, slice(-2, -1) if side else slice(1, 2))
                wall_vals = self._boundary_values(state.time)[wall]
                out[(d, side)] = 2.0 * wall_vals - rho[mirror]
        return out

    def _boundary_values(self, t: float) -> np.ndarray:
        return self.rho_bc(t, self._vertex_coords)

    def pin_dirichlet(self, rho: np.ndarray, t: float) -> np.ndarray:
        """Impose the prescribed density on all boundary dual cells."""
        if self.config.bc != "dirichlet":
            return rho
        vals = self._boundary_values(t)
        return np.where(self._wall_mask, vals, rho)

    # ------------------------------------------------------------------
    # stiff density flux (Phi^g_FD), all variants at once
    # ------------------------------------------------------------------
    def fd_rhs(self, rho: np.ndarray) -> np.ndarray:
        grid, model = self.grid, self.model
        s = model.scaling
        dim = grid.dim
        corners = {offs: rho[sl] for offs, sl in self._corner_slices.items()}

        plain = []
        for d in range(dim):
            trans = [t for t in range(dim) if t != d]
            acc = 0.0
            for combo in product((0, 1), repeat=dim - 1):
                hi = [0] * dim
                lo = [0] * dim
                hi[d] = 1
                for t, b in zip(trans, combo):
                    hi[t] = b
                    lo[t] = b
                acc = acc + (corners[tuple(hi)] - corners[tuple(lo)])
            plain.append(acc / (2 ** (dim - 1) * grid.spacing[d]))

        cells = grid.cell_counts
        out = np.empty(cells + (self.n_variants, self.basis.n_restricted))
        coef = -s.delta / s.eps**2
        for k, tag in enumerate(self.variants):
            diffs = list(plain)
            if tag is not None:
                d, signs = tag
                trans = [t for t in range(dim) if t != d]
                hi = [0] * dim
                lo = [0] * dim
                hi[d] = 1
                for t, b in zip(trans, signs):
                    hi[t] = b
                    lo[t] = b
                diffs[d] = (corners[tuple(hi)] - corners[tuple(lo)]) / grid.spacing[d]
            grad = np.stack(diffs, axis=-1)  # (cells, dim)
            out[..., k, :] = coef * np.einsum(
                "...d,...di->...i", grad, model.ev_moments[..., : dim, :]
            )
        return out

    # ------------------------------------------------------------------
    # micro transport (Phi^g): upwind moment flux and projection correction
    # ------------------------------------------------------------------
    def transport_rhs(self, u: np.ndarray, ghosts) -> np.ndarray:
        grid, basis, model = self.grid, self.basis, self.model
        s = model.scaling
        dim = grid.dim
        nf = basis.n_full
        out = np.zeros_like(u)
        e_mom = model.e_moments  # (cells, n_r)
        reconstruct = self.config.second_order
        for d in range(dim):
            u_pad = np.concatenate([ghosts[(d, 0)], u, ghosts[(d, 1)]], axis=d)
            W = np.zeros(u_pad.shape[:-1] + (nf,))
            W[..., 1:] = u_pad
            n_d = u.shape[d]
            if reconstruct:
                dW = np.diff(W, axis=d)
                lo = _axslice(W.ndim, d, slice(0, n_d))
                hi = _axslice(W.ndim, d, slice(1, n_d + 1))
                slope = np.zeros_like(W)
                slope[_axslice(W.ndim, d, slice(1, n_d + 1))] = _minmod(dW[lo], dW[hi])
                left = (W + 0.5 * slope)[_axslice(W.ndim, d, slice(0, n_d + 1))]
                right = (W - 0.5 * slope)[_axslice(W.ndim, d, slice(1, n_d + 2))]
            else:
                left = W[_axslice(W.ndim, d, slice(0, n_d + 1))]
                right = W[_axslice(W.ndim, d, slice(1, n_d + 2))]
            F = np.einsum("ab,...b->...a", basis.flux_plus[d], left)
            F += np.einsum("ab,...b->...a", basis.flux_minus[d], right)
            h = grid.spacing[d]
            lo = _axslice(F.ndim, d, slice(0, n_d))
            hi = _axslice(F.ndim, d, slice(1, n_d + 1))
            div = (F[hi] - F[lo]) / h
            out -= (s.delta / s.eps) * div[..., 1:]
            corr = math.sqrt(FOUR_PI) * div[..., 0]
            out += (s.delta / s.eps) * corr[..., None] * e_mom[..., None, :]
        return out

    # ------------------------------------------------------------------
    # turning perturbation and proliferation moments
    # ------------------------------------------------------------------
    def collision_rhs(self, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
        """(delta nu / eps^2) <Lambda_a f a> with f = rho_tilde E + eps g."""
        model = self.model
        s = model.scaling
        if s.nu == 0.0:
            return np.zeros_like(u)
        rho_drift = self._drift_density(rho)
        lam = model.lam_grad_q  # (cells, 3)
        mr = self.basis.restricted_flux
        term = np.einsum("...d,...di->...i", lam, model.ev_moments)
        col = rho_drift[..., None, None] * term[..., None, :]
        col = col + s.eps * np.einsum("...d,dij,...vj->...vi", lam, mr, u)
        sel = self._vel * u[..., self._idx1]          # (cells, n_var, 3) order-1 moments
        lam_sel = np.einsum("...d,...vd->...v", lam, sel)
        col -= s.eps * lam_sel[..., None] * model.e_moments[..., None, :]
        return (s.delta * s.nu / s.eps**2) * col

    def growth_rhs_u(self, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
        """(theta mu / eps) <(I - Pi) S f a> = theta mu(rho_tilde) u for S f = f."""
        s = self.model.scaling
        if s.theta == 0.0:
            return np.zeros_like(u)
        mu = self.model.mu_hat(corner_mean(rho, self.grid))
        return s.theta * mu[..., None, None] * u

    def _drift_density(self, rho: np.ndarray) -> np.ndarray:
        if self._drift_weights is None:
            return corner_mean(rho, self.grid)
        acc = 0.0
        for k, sl in enumerate(self._corner_slices.values()):
            acc = acc + self._drift_weights[..., k] * rho[sl]
        return acc

    # ------------------------------------------------------------------
    # macro flux (Phi^rho)
    # ------------------------------------------------------------------
    def macro_flux_divergence(self, u: np.ndarray) -> np.ndarray:
        """(1/|C_r|) sum of outgoing <v.n g> facet fluxes per dual cell."""
        grid = self.grid
        dim = grid.dim
        net = np.zeros(grid.counts)
        for d in range(dim):
            area = grid.facet_area(d)
            trans = [t for t in range(dim) if t != d]
            for tb in product((0, 1), repeat=dim - 1):
                if self.config.stencil == "plain":
                    k = 0
                else:
                    k = self._variant_index[(d, tb)]
                F = self._vel * u[..., k, self._idx1[d]] * area
                lo = [0] * dim
                hi = [0] * dim
                hi[d] = 1
                for t, b in zip(trans, tb):
                    lo[t] = b
                    hi[t] = b
                net[self._corner_slices[tuple(lo)]] += F
                net[self._corner_slices[tuple(hi)]] -= F
        return net / grid.dual_volumes

    def macro_rhs(self, rho: np.ndarray, u: np.ndarray, t: float = 0.0,
                  include_growth: bool = True) -> np.ndarray:
        s = self.model.scaling
        d_rho = -s.delta * self.macro_flux_divergence(u)
        if include_growth and s.theta != 0.0:
            d_rho = d_rho + s.theta * self.model.mu_hat(rho) * rho
        if self.source_rho is not None:
            d_rho = d_rho + self.source_rho(t, self.grid)
        return d_rho

    # ------------------------------------------------------------------
    # explicit/implicit split per scheme variant
    # ------------------------------------------------------------------
    def explicit_micro_rhs(self, rho: np.ndarray, u: np.ndarray, ghosts,
                           t: float = 0.0) -> np.ndarray:
        d_u = self.fd_rhs(rho) + self.transport_rhs(u, ghosts)
        if not self.config.implicit_volume_terms:
            d_u += self.collision_rhs(rho, u)
            d_u += self.growth_rhs_u(rho, u)
        if self.source_u is not None:
            d_u = d_u + self.source_u(t, self.grid)[..., None, :]
        return d_u

    def gamma_micro(self, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Implicitly treated micro terms, evaluated explicitly."""
        out = -self.stiff_rate[..., None, None] * u
        if self.config.implicit_volume_terms:
            out = out + self.collision_rhs(rho, u) + self.growth_rhs_u(rho, u)
        return out

    def gamma_macro(self, rho: np.ndarray) -> np.ndarray:
        s = self.model.scaling
        if self.config.implicit_volume_terms and s.theta != 0.0:
            return s.theta * self.model.mu_hat(rho) * rho
        return np.zeros_like(rho)

    def implicit_update(self, u_star: np.ndarray, rho_star: np.ndarray,
                        dt_eff: float) -> tuple[np.ndarray, np.ndarray]:
        """Solve the per-cell implicit stage u = u* + dt Gamma^g(rho*, u),
        rho = rho* + dt Gamma^rho(rho)."""
        u_next = self.implicit_micro(u_star, rho_star, dt_eff)
        rho_next = self.implicit_macro(rho_star, dt_eff)
        return u_next, rho_next

    def implicit_macro(self, rho_star: np.ndarray, dt_eff: float) -> np.ndarray:
        if not self.config.implicit_volume_terms:
            return rho_star
        return self._implicit_logistic(rho_star, dt_eff)

    def implicit_micro(self, u_star: np.ndarray, rho_forcing: np.ndarray,
                       dt_eff: float) -> np.ndarray:
        """Per-cell solve of u = u* + dt Gamma^g(rho_forcing, u)."""
        if dt_eff <= 0.0:
            raise ValueError("implicit step size must be positive")
        model = self.model
        s = model.scaling
        if not self.config.implicit_volume_terms:
            denom = 1.0 + dt_eff * self.stiff_rate
            return u_star / denom[..., None, None]

        rho_star = rho_forcing
        n_r = self.basis.n_restricted
        rho_t = corner_mean(rho_star, self.grid)
        A = np.zeros(self.grid.cell_counts + (n_r, n_r))
        A -= self.stiff_rate[..., None, None] * np.eye(n_r)
        b = np.zeros(self.grid.cell_counts + (n_r,))
        if s.nu != 0.0:
            lam = model.lam_grad_q
            mr = self.basis.restricted_flux
            A += (s.delta * s.nu / s.eps) * np.einsum("...d,dij->...ij", lam, mr)
            w_row = np.zeros(self.grid.cell_counts + (n_r,))
            for d in range(3):
                w_row[..., self._idx1[d]] += self._vel * lam[..., d]
            A -= (s.delta * s.nu / s.eps) * np.einsum(
                "...i,...j->...ij", model.e_moments, w_row
            )
            rho_drift = self._drift_density(rho_star)
            b += (s.delta * s.nu / s.eps**2) * rho_drift[..., None] * np.einsum(
                "...d,...di->...i", lam, model.ev_moments
            )
        if s.theta != 0.0:
            A += (s.theta * model.mu_hat(rho_t))[..., None, None] * np.eye(n_r)

        lhs = np.eye(n_r) - dt_eff * A
        rhs = u_star + dt_eff * b[..., None, :]
        try:
            u_next = np.linalg.solve(lhs[..., None, :, :], rhs[..., None]).squeeze(-1)
        except np.linalg.LinAlgError as exc:
            bad = self._first_singular_cell(lhs)
            raise np.linalg.LinAlgError(
                f"singular implicit system on primal cell {bad}"
            ) from exc
        return u_next

    def _implicit_logistic(self, rho_star: np.ndarray, dt_eff: float) -> np.ndarray:
        """Exact solve of rho = rho* + dt theta rho (1 - rho/rho_cc)."""
        s = self.model.scaling
        if s.theta == 0.0:
            return rho_star
        a = dt_eff * s.theta / self.model.rho_cc
        bq = 1.0 - dt_eff * s.theta
        disc = bq**2 + 4.0 * a * rho_star
        if np.any(disc < 0.0):
            raise FloatingPointError("implicit logistic update has no real root")
        if bq > 0.0:
            # cancellation-free form of the root that tends to rho_star as dt -> 0
            return 2.0 * rho_star / (bq + np.sqrt(disc))
        return (-bq + np.sqrt(disc)) / (2.0 * a)

    @staticmethod
    def _first_singular_cell(lhs: np.ndarray):
        flat = lhs.reshape(-1, lhs.shape[-2], lhs.shape[-1])
        for k in range(flat.shape[0]):
            if abs(np.linalg.det(flat[k])) < 1e-300:
                return np.unravel_index(k, lhs.shape[:-2])
        return "unknown"

    # ------------------------------------------------------------------
    def assemble(self, state: State, t: float | None = None) -> Rhs:
        """Full explicit right-hand side (diagnostic / convenience entry)."""
        t = state.time if t is None else t
        ghosts = self.fill_ghosts(state)
        d_u = self.explicit_micro_rhs(state.rho, state.u, ghosts, t)
        d_rho = self.macro_rhs(state.rho, state.u, t,
                               include_growth=not self.config.implicit_volume_terms)
        return Rhs(d_rho=d_rho, d_u=d_u)


def collision_perturbation(u: np.ndarray, rho_tilde: float, ev_moments_cell: np.ndarray,
                           e_moments_cell: np.ndarray, lam_grad_q_cell: np.ndarray,
                           basis: MomentBasis, eps: float) -> np.ndarray:
    """Moments <Lambda_a f a> of the turning perturbation on one cell.

    Lambda_a(f) = lambda_H grad Q . (v f - E <v f>) applied to
    f = rho_tilde E + eps g; the moment form uses the flux matrices and the
    order-1 coupling coefficient.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (basis.n_restricted,):
        raise ValueError("moment vector has the wrong length")
    idx1 = np.array([i - 1 for i in basis.order1_index])
    mr = basis.restricted_flux
    out = np.zeros_like(u)
    for d in range(3):
        lam_d = lam_grad_q_cell[d]
        if lam_d == 0.0:
            continue
        out += lam_d * (rho_tilde * ev_moments_cell[d] + eps * (mr[d] @ u))
        out -= lam_d * eps * basis.vel_coeff * u[idx1[d]] * e_moments_cell
    return out


def fill_ghosts(state: State, grid: Grid, model: ModelField, basis: MomentBasis,
                config: SchemeConfig, rho_bc=None):
    """Functional wrapper over :meth:`Scheme.fill_ghosts` (all ghost data)."""
    scheme = Scheme(grid, model, basis, config, rho_bc=rho_bc)
    return scheme.fill_ghosts(state, include_rho=True)
