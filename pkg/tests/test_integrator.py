"""Time stepping: step-size rule, IMEX orders, limit stencils, run loop."""

import math

import numpy as np
import pytest

from haptoflow.basis import build_basis
from haptoflow.grid import State, build_grid, zero_state
from haptoflow.integrator import (
    IMEX2_SIGMA,
    IMEX2_TAU,
    StepControl,
    run,
    stable_dt,
    step_imex1,
    step_imex2,
)
from haptoflow.model import ModelField, ScalingNumbers
from haptoflow.operators import Scheme, SchemeConfig

from test_operators import make_scheme


@pytest.fixture(scope="module")
def basis():
    return build_basis(1)


# ---------------------------------------------------------------------------
# step size
# ---------------------------------------------------------------------------
def test_stable_dt_hand_formula(basis):
    h = 0.01
    scheme = make_scheme(basis, counts=(101, 101), eps=1e-4, delta=0.1)
    dt_micro = 1e-4 * h / (2 * 0.1)
    dt_macro = h**2 * 3.0 / (2 * 0.1)  # |delta D_T / K_D| = delta/3
    expected = 0.9 * 0.5 * (dt_micro + dt_macro)
    assert stable_dt(scheme) == pytest.approx(expected, rel=1e-12)


def test_stable_dt_uniform_in_eps(basis):
    dts = [
        stable_dt(make_scheme(basis, counts=(51, 51), eps=eps, delta=0.1))
        for eps in (1e-2, 1e-10)
    ]
    assert dts[1] > 0
    assert max(dts) / min(dts) < 2.0


def test_stable_dt_parabolic_scaling(basis):
    d1 = stable_dt(make_scheme(basis, counts=(41, 41), eps=1e-9))
    d2 = stable_dt(make_scheme(basis, counts=(21, 21), eps=1e-9))
    assert d2 / d1 == pytest.approx(4.0, rel=1e-6)


def test_stable_dt_advection_bound_is_min(basis):
    """The tighter of the diffusion/advection bounds must win."""
    lam = np.array([50.0, 0.0, 0.0])  # strong drift
    scheme = make_scheme(basis, counts=(41, 41), eps=1e-8, delta=0.1, nu=10.0,
                         lam_grad_q=lam)
    h = scheme.grid.spacing[0]
    adv = float(np.max(np.linalg.norm(scheme.model.limit_velocity(), axis=-1)))
    dt_adv = h / (2 * adv)
    diff_norm = float(np.max(np.linalg.eigvalsh(scheme.model.limit_diffusion())))
    dt_diff = h**2 / (2 * diff_norm)
    assert dt_adv < dt_diff
    assert stable_dt(scheme) == pytest.approx(0.9 * 0.5 * (scheme.model.scaling.eps * h / (2 * 0.1) + dt_adv), rel=1e-12)


def test_stable_dt_second_order_cfl_clamp(basis):
    s1 = make_scheme(basis, counts=(21, 21), eps=1e-6)
    s2 = make_scheme(basis, counts=(21, 21), eps=1e-6, variant="mi2")
    assert stable_dt(s2) == pytest.approx(stable_dt(s1) * 0.2 / 0.9, rel=1e-12)


def test_stable_dt_reaction_cap(basis):
    scheme = make_scheme(basis, counts=(5, 5), eps=1e-6, theta=50.0)
    assert stable_dt(scheme) <= 0.9 / (2 * 50.0) + 1e-15


# ---------------------------------------------------------------------------
# IMEX structure
# ---------------------------------------------------------------------------
def test_imex2_coefficients():
    assert IMEX2_TAU == pytest.approx(0.2928932188134524, abs=1e-12)
    assert IMEX2_SIGMA == pytest.approx(-0.7071067811865476, abs=1e-12)


def test_imex1_backward_euler_relaxation(basis):
    """Pure relaxation u' = -lambda u with lambda dt = 1 halves u."""
    scheme = make_scheme(basis, counts=(5, 5), eps=0.1, delta=0.1)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    state.u[:] = 1.0
    lam = scheme.stiff_rate[0, 0]  # = delta/eps^2, uniform
    new = step_imex1(state, scheme, 1.0 / lam)
    # interior cells: transport between equal moments cancels, only relaxation
    assert np.allclose(new.u[1:-1, 1:-1], 0.5, atol=1e-12)


def smooth_test_state(scheme):
    x, y = scheme.grid.vertex_coords()
    rho = 1.0 + 0.3 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    state = zero_state(scheme.grid, scheme.basis.n_restricted, scheme.n_variants)
    state.rho = rho
    return state


def time_convergence_order(stepper, scheme, t_end, dts):
    errs = []
    ref_dt = dts[-1] / 8
    ref = advance(stepper, scheme, t_end, ref_dt)
    for dt in dts:
        sol = advance(stepper, scheme, t_end, dt)
        errs.append(np.max(np.abs(sol.rho - ref.rho)))
    return np.log(errs[0] / errs[1]) / np.log(dts[0] / dts[1])


def advance(stepper, scheme, t_end, dt):
    state = smooth_test_state(scheme)
    n = round(t_end / dt)
    for _ in range(n):
        state = stepper(state, scheme, t_end / n)
    return state


def test_imex1_first_order_in_time(basis):
    scheme = make_scheme(basis, counts=(9, 9), eps=0.5, delta=0.5, theta=0.4)
    order = time_convergence_order(step_imex1, scheme, 0.04, [0.004, 0.002])
    assert 0.8 < order < 1.3


def test_imex2_second_order_in_time(basis):
    scheme = make_scheme(basis, counts=(9, 9), eps=0.5, delta=0.5, theta=0.4,
                         nu=0.5, lam_grad_q=np.array([0.4, -0.2, 0.0]),
                         variant="mi2")
    order = time_convergence_order(step_imex2, scheme, 0.04, [0.004, 0.002])
    assert 1.7 < order < 2.4


def test_imex2_iv_second_order_in_time(basis):
    scheme = make_scheme(basis, counts=(9, 9), eps=0.5, delta=0.5, theta=0.4,
                         nu=0.5, lam_grad_q=np.array([0.4, -0.2, 0.0]),
                         variant="iv2")
    order = time_convergence_order(step_imex2, scheme, 0.04, [0.004, 0.002])
    assert 1.7 < order < 2.4


def test_imex2_reduces_to_explicit_rk_without_gamma(basis):
    """With the relaxation switched off, the scheme is the plain 2-stage RK."""
    scheme = make_scheme(basis, counts=(7, 7), eps=0.5, delta=0.5)
    scheme.stiff_rate = np.zeros_like(scheme.stiff_rate)
    state = smooth_test_state(scheme)
    dt = 1e-3
    got = step_imex2(state, scheme, dt)

    def rhs(rho, u, t):
        ghosts = scheme.fill_ghosts(State(rho=rho, u=u, time=t))
        return (
            scheme.macro_rhs(rho, u, t),
            scheme.explicit_micro_rhs(rho, u, ghosts, t),
        )

    tau, sigma = IMEX2_TAU, IMEX2_SIGMA
    k1_rho, k1_u = rhs(state.rho, state.u, 0.0)
    rho_s = state.rho + tau * dt * k1_rho
    u_s = state.u + tau * dt * k1_u
    k2_rho, k2_u = rhs(rho_s, u_s, tau * dt)
    rho_rk = state.rho + dt * (sigma * k1_rho + (1 - sigma) * k2_rho)
    u_rk = state.u + dt * (sigma * k1_u + (1 - sigma) * k2_u)
    assert np.allclose(got.rho, rho_rk, atol=1e-14)
    assert np.allclose(got.u, u_rk, atol=1e-14)


def test_imex2_final_stage_is_output(basis):
    """Stiff accuracy: the returned state satisfies the final implicit relation."""
    scheme = make_scheme(basis, counts=(7, 7), eps=0.2, delta=0.3)
    state = smooth_test_state(scheme)
    dt = 1e-3
    out = step_imex2(state, scheme, dt)
    # reconstruct u** from the output: u** = u_out * (1 + tau dt rate)
    rate = scheme.stiff_rate[..., None, None]
    u_ss = out.u * (1.0 + IMEX2_TAU * dt * rate)
    back = scheme.implicit_micro(u_ss, out.rho, IMEX2_TAU * dt)
    assert np.allclose(back, out.u, rtol=1e-13)


# ---------------------------------------------------------------------------
# limit stencils (asymptotic-preserving structure at eps -> 0)
# ---------------------------------------------------------------------------
def impulse_response(basis, stencil, eps=1e-10, nu=0.0, lam=None, drift="centered"):
    scheme = make_scheme(
        basis, counts=(9, 9), eps=eps, delta=1.0, nu=nu, stencil=stencil,
        drift=drift, lam_grad_q=lam,
    )
    state = zero_state(scheme.grid, basis.n_restricted, scheme.n_variants)
    state.rho[4, 4] = 1.0
    dt = stable_dt(scheme)
    new = step_imex1(state, scheme, dt)
    return new.rho - state.rho


def test_limit_stencil_plain_is_diagonal(basis):
    delta = impulse_response(basis, "plain")
    peak = np.max(np.abs(delta))
    # diagonal neighbors and center move
    for idx in [(3, 3), (5, 5), (3, 5), (5, 3), (4, 4)]:
        assert abs(delta[idx]) > 1e-3 * peak
    # axis neighbors must not
    for idx in [(3, 4), (5, 4), (4, 3), (4, 5)]:
        assert abs(delta[idx]) < 1e-12 * peak


def test_limit_stencil_improved_is_five_point(basis):
    delta = impulse_response(basis, "improved")
    peak = np.max(np.abs(delta))
    for idx in [(3, 4), (5, 4), (4, 3), (4, 5), (4, 4)]:
        assert abs(delta[idx]) > 1e-3 * peak
    for idx in [(3, 3), (5, 5), (3, 5), (5, 3)]:
        assert abs(delta[idx]) < 1e-12 * peak


def test_limit_upwind_drift_downwind_support(basis):
    """The drift contribution (nu on minus nu off) only feeds center+downwind."""
    lam = np.array([1.0, 0.0, 0.0])  # drift along +xi
    with_drift = impulse_response(basis, "improved", nu=1.0, lam=lam, drift="upwind")
    without = impulse_response(basis, "improved", nu=0.0, lam=None, drift="upwind")
    drift_part = with_drift - without
    peak = np.max(np.abs(drift_part))
    assert peak > 0
    assert np.max(np.abs(drift_part[:4, :])) < 1e-12 * peak  # upwind side clean
    assert np.max(np.abs(drift_part[5:, :])) > 1e-3 * peak   # downwind side moves


def test_limit_centered_drift_touches_both_sides(basis):
    lam = np.array([1.0, 0.0, 0.0])
    with_drift = impulse_response(basis, "improved", nu=1.0, lam=lam, drift="centered")
    without = impulse_response(basis, "improved", nu=0.0, lam=None, drift="centered")
    drift_part = with_drift - without
    peak = np.max(np.abs(drift_part))
    assert np.max(np.abs(drift_part[:4, :])) > 1e-3 * peak


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------
def test_run_zero_data_steady_after_one_step(basis):
    scheme = make_scheme(basis, counts=(5, 5), eps=0.1)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    final, summary = run(state, scheme, StepControl(t_end=1.0, steady_tol=1e-12))
    assert summary.reason == "steady"
    assert summary.steps == 1


def test_run_infinite_tol_runs_to_t_end(basis):
    scheme = make_scheme(basis, counts=(5, 5), eps=0.1)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    final, summary = run(state, scheme, StepControl(t_end=0.01, steady_tol=math.inf))
    assert summary.reason == "t_end"
    assert final.time == pytest.approx(0.01, abs=1e-13)


def test_run_callback_abort_and_diagnostics(basis):
    scheme = make_scheme(basis, counts=(5, 5), eps=0.1)
    state = smooth_test_state(scheme)
    seen = []

    def cb(step, t, diag):
        seen.append(diag)
        return step < 3

    final, summary = run(state, scheme, StepControl(t_end=1.0), callback=cb)
    assert summary.reason == "callback"
    assert summary.steps == 3
    assert {"mass", "rho_min", "rho_max", "residual", "dt"} <= set(seen[0])


def test_run_aborts_on_nonfinite(basis):
    scheme = make_scheme(basis, counts=(5, 5), eps=0.1)
    state = smooth_test_state(scheme)
    state.rho[2, 2] = np.inf
    with pytest.raises(FloatingPointError, match="step 1"):
        run(state, scheme, StepControl(t_end=1.0))


def test_runs_are_bitwise_reproducible(basis):
    """Same configuration twice: identical bits (deterministic reductions)."""
    results = []
    for _ in range(2):
        scheme = make_scheme(basis, counts=(9, 9), eps=1e-4, theta=0.3,
                             nu=1.0, lam_grad_q=np.array([0.2, -0.1, 0.0]),
                             stencil="improved", drift="upwind")
        state = smooth_test_state(scheme)
        final, _ = run(state, scheme, StepControl(t_end=0.05))
        results.append(final)
    assert np.array_equal(results[0].rho, results[1].rho)
    assert np.array_equal(results[0].u, results[1].u)
