"""IMEX time stepping (orders 1 and 2), step-size control, run loop.

The first-order scheme updates the perturbation first (explicit transport and
stiff flux, then the per-cell implicit relaxation) and inserts the fresh
moments into the density flux; that ordering is what makes one step of the
stiff limit act like the limiting diffusion stencil.  The second-order scheme
is the stiffly accurate two-stage IMEX method with tau = (2 - sqrt(2))/2,
sigma = 1 - 1/(2 tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import State
from .operators import Scheme

IMEX2_TAU = (2.0 - math.sqrt(2.0)) / 2.0
IMEX2_SIGMA = 1.0 - 1.0 / (2.0 * IMEX2_TAU)


@dataclass
class StepControl:
    t_end: float
    dt: float | None = None
    steady_tol: float | None = None
    max_steps: int = 10**7
    min_steps: int = 1   # steps before steady detection may fire

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")


def stable_dt(scheme: Scheme) -> float:
    """Stability-based step size cfl * (dt_micro + dt_macro)/2.

    dt_micro is the kinetic CFL bound (transport speed delta/eps), dt_macro
    the smaller of the diffusion and advection bounds of the limit equation;
    a reaction bound 1/(2 theta) caps the step when growth is active.
    """
    grid = scheme.grid
    model = scheme.model
    s = model.scaling
    h_min = min(grid.spacing[: grid.dim])

    dt_micro = s.eps * h_min / (2.0 * s.delta) if s.delta > 0 else math.inf

    diff_norm = float(np.max(np.linalg.eigvalsh(model.limit_diffusion())))
    bounds = []
    if diff_norm > 0.0:
        bounds.append(h_min**2 / (2.0 * diff_norm))
    if s.nu != 0.0:
        adv_norm = float(np.max(np.linalg.norm(model.limit_velocity(), axis=-1)))
        if adv_norm > 0.0:
            bounds.append(h_min / (2.0 * adv_norm))
    dt_macro = min(bounds) if bounds else math.inf

    if math.isinf(dt_macro) and math.isinf(dt_micro):
        raise ValueError("no finite step-size bound (all speeds vanish)")
    if math.isinf(dt_macro):
        dt = dt_micro
    elif math.isinf(dt_micro):
        dt = 0.5 * dt_macro
    else:
        dt = 0.5 * (dt_micro + dt_macro)

    if s.theta > 0.0:
        dt = min(dt, 1.0 / (2.0 * s.theta))
    return scheme.config.effective_cfl * dt


def step_imex1(state: State, scheme: Scheme, dt: float) -> State:
    """Forward-backward Euler: micro update first, then the density flux with
    the relaxed moments."""
    t = state.time
    ghosts = scheme.fill_ghosts(state)
    d_u = scheme.explicit_micro_rhs(state.rho, state.u, ghosts, t)
    u_star = state.u + dt * d_u
    u_next = scheme.implicit_micro(u_star, state.rho, dt)

    implicit_growth = scheme.config.implicit_volume_terms
    d_rho = scheme.macro_rhs(state.rho, u_next, t, include_growth=not implicit_growth)
    rho_next = state.rho + dt * d_rho
    if implicit_growth:
        rho_next = scheme.implicit_macro(rho_next, dt)
    rho_next = scheme.pin_dirichlet(rho_next, t + dt)
    return State(rho=rho_next, u=u_next, time=t + dt)


def _explicit_rhs(scheme: Scheme, rho, u, t):
    ghosts_state = State(rho=rho, u=u, time=t)
    ghosts = scheme.fill_ghosts(ghosts_state)
    d_u = scheme.explicit_micro_rhs(rho, u, ghosts, t)
    d_rho = scheme.macro_rhs(
        rho, u, t, include_growth=not scheme.config.implicit_volume_terms
    )
    return d_rho, d_u


def step_imex2(state: State, scheme: Scheme, dt: float) -> State:
    """Stiffly accurate two-stage IMEX scheme of order 2."""
    tau, sigma = IMEX2_TAU, IMEX2_SIGMA
    t = state.time
    rho_n, u_n = state.rho, state.u

    p_rho_1, p_u_1 = _explicit_rhs(scheme, rho_n, u_n, t)

    rho_s = rho_n + tau * dt * p_rho_1
    u_s = u_n + tau * dt * p_u_1
    rho_s = scheme.pin_dirichlet(rho_s, t + tau * dt)
    u_1, rho_1 = scheme.implicit_update(u_s, rho_s, tau * dt)
    rho_1 = scheme.pin_dirichlet(rho_1, t + tau * dt)

    p_rho_2, p_u_2 = _explicit_rhs(scheme, rho_1, u_1, t + tau * dt)
    g_u_2 = scheme.gamma_micro(rho_1, u_1)
    g_rho_2 = scheme.gamma_macro(rho_1)

    rho_ss = rho_n + dt * (sigma * p_rho_1 + (1.0 - sigma) * p_rho_2) \
        + (1.0 - tau) * dt * g_rho_2
    u_ss = u_n + dt * (sigma * p_u_1 + (1.0 - sigma) * p_u_2) \
        + (1.0 - tau) * dt * g_u_2
    rho_ss = scheme.pin_dirichlet(rho_ss, t + dt)

    u_next, rho_next = scheme.implicit_update(u_ss, rho_ss, tau * dt)
    rho_next = scheme.pin_dirichlet(rho_next, t + dt)
    return State(rho=rho_next, u=u_next, time=t + dt)


def step(state: State, scheme: Scheme, dt: float) -> State:
    if scheme.config.second_order:
        return step_imex2(state, scheme, dt)
    return step_imex1(state, scheme, dt)


@dataclass
class RunSummary:
    steps: int
    time: float
    reason: str            # "t_end" | "steady" | "max_steps" | "callback"
    final_residual: float | None = None


def run(state: State, scheme: Scheme, control: StepControl,
        callback=None, diag_every: int = 1) -> tuple[State, RunSummary]:
    """Advance to t_end, steady state, or max_steps.

    ``callback(step, time, diagnostics) -> bool`` may abort by returning
    False.  Diagnostics carry mass, density bounds and the steady residual
    ||rho^i - rho^(i-1)|| / (||rho^i|| dt).
    """
    dt_base = control.dt if control.dt is not None else stable_dt(scheme)
    vol = scheme.grid.dual_volumes
    residual = None
    n = 0
    reason = "max_steps"
    while n < control.max_steps:
        if state.time >= control.t_end - 1e-14:
            reason = "t_end"
            break
        dt = min(dt_base, control.t_end - state.time)
        new_state = step(state, scheme, dt)
        if not new_state.check_finite():
            raise FloatingPointError(
                f"non-finite state after step {n + 1} (t = {new_state.time:.6g})"
            )
        num = math.sqrt(float(np.sum(vol * (new_state.rho - state.rho) ** 2)))
        den = math.sqrt(float(np.sum(vol * new_state.rho**2)))
        if num == 0.0:
            residual = 0.0
        elif den == 0.0:
            residual = math.inf
        else:
            residual = num / (den * dt)
        state = new_state
        n += 1
        if callback is not None and n % diag_every == 0:
            diagnostics = {
                "mass": float(np.sum(vol * state.rho)),
                "rho_min": float(state.rho.min()),
                "rho_max": float(state.rho.max()),
                "residual": residual,
                "dt": dt,
                "state": state,
            }
            if callback(n, state.time, diagnostics) is False:
                reason = "callback"
                break
        if (control.steady_tol is not None and math.isfinite(control.steady_tol)
                and n >= control.min_steps and residual < control.steady_tol):
            reason = "steady"
            break
    if reason == "max_steps" and state.time >= control.t_end - 1e-14:
        reason = "t_end"
    return state, RunSummary(steps=n, time=state.time, reason=reason,
                             final_residual=residual)
