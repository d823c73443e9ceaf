"""Spatial operators: flux telescoping, limit stencils, boundary kernels,
collision moments, implicit solves."""

import numpy as np
import pytest

from haptoflow.basis import build_basis
from haptoflow.grid import State, build_grid, corner_mean, zero_state
from haptoflow.model import ModelField, ScalingNumbers
from haptoflow.operators import (
    Scheme,
    SchemeConfig,
    collision_perturbation,
    variant_list,
)
from haptoflow.integrator import step_imex1


@pytest.fixture(scope="module")
def basis():
    return build_basis(1)


def make_scheme(basis, counts=(7, 7), eps=1e-3, delta=0.1, nu=0.0, theta=0.0,
                d_water=None, stencil="plain", drift="centered", bc="u_turn",
                variant="mi1", lam_grad_q=None, k_diff=None, rho_bc=None,
                extents=None, origin=None):
    grid = build_grid(counts, extents or tuple(1.0 for _ in counts), origin=origin)
    scaling = ScalingNumbers(eps=eps, delta=delta, nu=nu, theta=theta)
    dw = np.eye(3) if d_water is None else d_water
    model = ModelField(grid, basis, dw, scaling, lam_grad_q=lam_grad_q, k_diff=k_diff)
    config = SchemeConfig(variant=variant, stencil=stencil, drift=drift, bc=bc)
    return Scheme(grid, model, basis, config, rho_bc=rho_bc)


def test_variant_list_sizes():
    assert variant_list(2, "plain") == [None]
    assert len(variant_list(2, "improved")) == 4
    assert len(variant_list(3, "improved")) == 12


def test_fd_rhs_vanishes_on_constant_density(basis):
    scheme = make_scheme(basis)
    rho = np.full(scheme.grid.counts, 2.5)
    assert np.max(np.abs(scheme.fd_rhs(rho))) < 1e-12


def test_fd_rhs_linear_density_anisotropic(basis):
    """Linear rho = xi: every cell must see -(delta/eps^2) <v_xi E a>."""
    rng = np.random.default_rng(4)
    A = rng.normal(size=(3, 3))
    dw = A @ A.T + 3 * np.eye(3)
    scheme = make_scheme(basis, d_water=dw)
    x, _ = scheme.grid.vertex_coords()
    out = scheme.fd_rhs(x)
    s = scheme.model.scaling
    expected = -(s.delta / s.eps**2) * scheme.model.ev_moments[..., 0, :]
    assert np.allclose(out[..., 0, :], expected, rtol=1e-12, atol=1e-12)


def test_fd_variants_exact_on_linear_fields(basis):
    """The shifted Gauss-Radau evaluations reproduce linear fields exactly."""
    scheme = make_scheme(basis, stencil="improved")
    x, y = scheme.grid.vertex_coords()
    rho = 0.7 * x - 1.3 * y + 0.5
    out = scheme.fd_rhs(rho)
    for k in range(1, scheme.n_variants):
        assert np.allclose(out[..., k, :], out[..., 0, :], atol=1e-11)


def test_fd_variant_difference_antisymmetric(basis):
    """(xi,+) minus (xi,-) is the mixed second difference: nonzero on rho =
    xi*eta and antisymmetric under eta-reflection of the input field."""
    scheme = make_scheme(basis, stencil="improved")
    x, y = scheme.grid.vertex_coords()
    rho = x * y
    kp = scheme._variant_index[(0, (1,))]
    km = scheme._variant_index[(0, (0,))]

    def variant_diff(field):
        out = scheme.fd_rhs(field)
        return out[..., kp, :] - out[..., km, :]

    diff = variant_diff(rho)
    assert np.max(np.abs(diff)) > 1e-6
    diff_reflected = variant_diff(rho[:, ::-1])
    assert np.allclose(diff_reflected, -diff[:, ::-1, :], atol=1e-11)


def test_macro_flux_telescopes_on_constant_moments(basis):
    """Constant u: interior dual cells see zero net flux (discrete divergence)."""
    for stencil in ("plain", "improved"):
        scheme = make_scheme(basis, stencil=stencil)
        state = zero_state(scheme.grid, basis.n_restricted, scheme.n_variants)
        rng = np.random.default_rng(0)
        state.u[:] = rng.normal(size=basis.n_restricted)
        div = scheme.macro_flux_divergence(state.u)
        interior = div[1:-1, 1:-1]
        assert np.max(np.abs(interior)) < 1e-12


def test_macro_rhs_pure_reaction(basis):
    scheme = make_scheme(basis, theta=2.0)
    rho = np.full(scheme.grid.counts, 0.25)
    u = np.zeros(scheme.grid.cell_counts + (1, basis.n_restricted))
    d_rho = scheme.macro_rhs(rho, u)
    expected = 2.0 * scheme.model.mu_hat(0.25) * 0.25
    assert np.allclose(d_rho, expected, rtol=1e-13)


def test_mass_conservation_reflective(basis):
    """theta = 0, reflective walls: total dual-cell mass is invariant."""
    for bc in ("u_turn", "thermal"):
        for stencil in ("plain", "improved"):
            scheme = make_scheme(basis, counts=(9, 8), eps=0.05, stencil=stencil, bc=bc)
            grid = scheme.grid
            state = zero_state(grid, basis.n_restricted, scheme.n_variants)
            x, y = grid.vertex_coords()
            state.rho = np.exp(-30 * ((x - 0.4) ** 2 + (y - 0.6) ** 2))
            mass0 = float(np.sum(grid.dual_volumes * state.rho))
            for _ in range(40):
                state = step_imex1(state, scheme, 2e-4)
            mass1 = float(np.sum(grid.dual_volumes * state.rho))
            assert abs(mass1 - mass0) < 1e-12 * abs(mass0), (bc, stencil)


def test_equilibrium_is_stationary_all_kernels(basis):
    """u = 0, rho constant: one step changes nothing (no boundary layer)."""
    rng = np.random.default_rng(12)
    A = rng.normal(size=(3, 3))
    dw = A @ A.T + 3 * np.eye(3)
    for bc in ("u_turn", "thermal", "dirichlet"):
        rho_bc = (lambda t, coords: np.full_like(coords[0], 1.7)) if bc == "dirichlet" else None
        scheme = make_scheme(basis, d_water=dw, bc=bc, rho_bc=rho_bc)
        state = zero_state(scheme.grid, basis.n_restricted, scheme.n_variants)
        state.rho[:] = 1.7
        new = step_imex1(state, scheme, 1e-4)
        assert np.max(np.abs(new.rho - 1.7)) < 1e-12, bc
        assert np.max(np.abs(new.u)) < 1e-12, bc


def test_uturn_ghost_parity(basis):
    scheme = make_scheme(basis)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    rng = np.random.default_rng(3)
    state.u[:] = rng.normal(size=state.u.shape)
    ghosts = scheme.fill_ghosts(state)
    # N=1: all restricted components are odd under v -> -v
    assert np.allclose(ghosts[(0, 0)], -state.u[:1])
    assert np.allclose(ghosts[(1, 1)], -state.u[:, -1:])


def test_thermal_alpha_is_one_at_equilibrium(basis):
    """Wall balance: for f = rho E the thermal factor alpha equals rho exactly."""
    rng = np.random.default_rng(8)
    A = rng.normal(size=(3, 3))
    dw = A @ A.T + 3 * np.eye(3)
    scheme = make_scheme(basis, d_water=dw, bc="thermal")
    b = scheme.basis
    n = np.array([1.0, 0.0, 0.0])
    vn = b.quad_nodes @ n
    e_nodes = scheme.model.equilibrium_at_nodes((0, 0))
    rho_t = 1.3
    alpha = -rho_t * float(np.sum(b.quad_weights * (vn > 0) * vn * e_nodes)) / float(
        np.sum(b.quad_weights * (vn < 0) * vn * e_nodes)
    )
    assert alpha == pytest.approx(rho_t, rel=1e-12)


def test_thermal_ghost_zero_on_zero_perturbation(basis):
    scheme = make_scheme(basis, bc="thermal")
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    ghosts = scheme.fill_ghosts(state)
    for d in range(2):
        for side in (0, 1):
            assert np.max(np.abs(ghosts[(d, side)])) < 1e-14


def test_dirichlet_ghost_rho_rule(basis):
    rho_bc = lambda t, coords: coords[0] + 2 * coords[1]
    scheme = make_scheme(basis, bc="dirichlet", rho_bc=rho_bc)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    rng = np.random.default_rng(1)
    state.rho = rng.normal(size=scheme.grid.counts)
    ghosts = scheme.fill_ghosts(state, include_rho=True)
    x, y = scheme.grid.vertex_coords()
    wall = (x + 2 * y)[:1]
    assert np.allclose(ghosts["rho"][(0, 0)], 2 * wall - state.rho[1:2])


def test_collision_perturbation_against_quadrature(basis):
    """Moment-form turning perturbation equals direct node quadrature."""
    rng = np.random.default_rng(5)
    A = rng.normal(size=(3, 3))
    dw = A @ A.T + 3 * np.eye(3)
    scheme = make_scheme(basis, d_water=dw, nu=1.0,
                         lam_grad_q=np.array([0.3, -1.1, 0.7]))
    model, b = scheme.model, scheme.basis
    cell = (2, 3)
    eps = 0.01
    u = rng.normal(size=b.n_restricted)
    rho_t = 0.8
    got = collision_perturbation(
        u, rho_t, model.ev_moments[cell], model.e_moments[cell],
        model.lam_grad_q[cell], b, eps,
    )
    # oracle: evaluate Lambda_a(f) at the quadrature nodes and project
    e_nodes = model.equilibrium_at_nodes(cell)
    f_nodes = rho_t * e_nodes + eps * (b.basis_values[:, 1:] @ u)
    lam = model.lam_grad_q[cell]
    vf_mean = np.einsum("q,qd->d", b.quad_weights * f_nodes, b.quad_nodes)
    la_nodes = (b.quad_nodes @ lam) * f_nodes - (lam @ vf_mean) * e_nodes
    oracle = np.einsum("q,qi->i", b.quad_weights * la_nodes, b.basis_values[:, 1:])
    assert np.allclose(got, oracle, atol=1e-12)
    # mass conservation of the kernel: <Lambda_a f> = 0
    assert abs(np.sum(b.quad_weights * la_nodes)) < 1e-12
    # gradient-free medium: no perturbation
    assert np.allclose(
        collision_perturbation(u, rho_t, model.ev_moments[cell],
                               model.e_moments[cell], np.zeros(3), b, eps),
        0.0,
    )


def test_implicit_mi_closed_form(basis):
    scheme = make_scheme(basis, eps=0.1, delta=0.1)
    u_star = np.ones(scheme.grid.cell_counts + (1, basis.n_restricted))
    rho = np.zeros(scheme.grid.counts)
    dt = 0.1 * scheme.model.scaling.eps**2 / scheme.model.scaling.delta  # rate*dt = 0.1
    u_next = scheme.implicit_micro(u_star, rho, dt)
    assert np.allclose(u_next, 1.0 / 1.1)
    # rate * dt = 1 halves the moments
    dt = scheme.model.scaling.eps**2 / scheme.model.scaling.delta
    assert np.allclose(scheme.implicit_micro(u_star, rho, dt), 0.5)


def test_implicit_iv_reduces_to_mi(basis):
    """nu = 0, theta = 0: the per-cell solve equals the closed form."""
    mi = make_scheme(basis, eps=0.05)
    iv = make_scheme(basis, eps=0.05, variant="iv1")
    rng = np.random.default_rng(2)
    u_star = rng.normal(size=mi.grid.cell_counts + (1, basis.n_restricted))
    rho = rng.normal(size=mi.grid.counts)
    dt = 3e-4
    assert np.allclose(
        iv.implicit_micro(u_star, rho, dt),
        mi.implicit_micro(u_star, rho, dt),
        rtol=1e-13, atol=1e-15,
    )


def test_implicit_dt_zero_limit(basis):
    scheme = make_scheme(basis, variant="iv1", nu=1.0, theta=0.5,
                         lam_grad_q=np.array([0.2, 0.1, 0.0]))
    rng = np.random.default_rng(6)
    u_star = rng.normal(size=scheme.grid.cell_counts + (1, basis.n_restricted))
    rho = rng.uniform(0.1, 0.9, size=scheme.grid.counts)
    # identity up to dt * (stiff rate ~ delta/eps^2 = 1e5)
    u1 = scheme.implicit_micro(u_star, rho, 1e-12)
    r1 = scheme.implicit_macro(rho, 1e-12)
    assert np.allclose(u1, u_star, rtol=1e-6, atol=1e-6)
    assert np.allclose(r1, rho, rtol=1e-10)
    with pytest.raises(ValueError):
        scheme.implicit_micro(u_star, rho, 0.0)


def test_transport_upwind_split_consistency(basis):
    """For equal left/right states the numerical flux equals M_d u."""
    b = basis
    w = np.zeros(b.n_full)
    w[1:] = np.array([0.3, -0.2, 0.9])
    for d in range(3):
        f = b.flux_plus[d] @ w + b.flux_minus[d] @ w
        assert np.allclose(f, b.flux_matrices[d] @ w, atol=1e-13)


def test_transport_zero_for_uniform_u_interior(basis):
    """Uniform moments: interior transport residual vanishes; only walls act."""
    scheme = make_scheme(basis, counts=(8, 8), eps=0.1)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    state.u[:] = np.array([0.4, -0.1, 0.2])
    ghosts = scheme.fill_ghosts(state)
    out = scheme.transport_rhs(state.u, ghosts)
    assert np.max(np.abs(out[1:-1, 1:-1])) < 1e-12


def test_improved_and_plain_agree_to_first_order(basis):
    """|improved - plain| macro rhs is O(dx) on smooth fields."""
    errs = []
    for n in (9, 17):
        sp = make_scheme(basis, counts=(n, n), stencil="plain")
        si = make_scheme(basis, counts=(n, n), stencil="improved")
        x, y = sp.grid.vertex_coords()
        rho = np.sin(2 * np.pi * x) * np.cos(np.pi * y)
        up = sp.fd_rhs(rho)
        ui = si.fd_rhs(rho)
        # compare the induced macro flux of the relaxed moments
        scale = sp.model.scaling.eps**2 / sp.model.scaling.delta
        dp = sp.macro_flux_divergence(up * scale)
        di = si.macro_flux_divergence(ui * scale)
        errs.append(np.max(np.abs(dp - di)) / max(1.0, np.max(np.abs(dp))))
    assert errs[1] < 0.7 * errs[0]


def test_growth_source_moment_identity(basis):
    """<(I - Pi) S f a> = eps u for the identity proliferation kernel."""
    rng = np.random.default_rng(21)
    A = rng.normal(size=(3, 3))
    dw = A @ A.T + 3 * np.eye(3)
    scheme = make_scheme(basis, d_water=dw, theta=0.7, eps=0.2)
    b, model = scheme.basis, scheme.model
    cell = (1, 2)
    eps = model.scaling.eps
    for _ in range(5):
        u = rng.normal(size=b.n_restricted)
        rho_t = float(rng.uniform(0.2, 2.0))
        e_nodes = model.equilibrium_at_nodes(cell)
        f_nodes = rho_t * e_nodes + eps * (b.basis_values[:, 1:] @ u)
        f_mean = float(np.sum(b.quad_weights * f_nodes))
        proj_rest = f_nodes - f_mean * e_nodes
        moments = np.einsum("q,qi->i", b.quad_weights * proj_rest, b.basis_values[:, 1:])
        assert np.allclose(moments, eps * u, atol=1e-12)
    # hence the explicit micro growth term is theta*mu(rho_tilde)*u
    state = zero_state(scheme.grid, b.n_restricted, 1)
    state.rho[:] = 0.5
    state.u[:] = rng.normal(size=b.n_restricted)
    out = scheme.growth_rhs_u(state.rho, state.u)
    expected = 0.7 * model.mu_hat(0.5) * state.u
    assert np.allclose(out, expected, atol=1e-13)


def test_fill_ghosts_functional_wrapper(basis):
    from haptoflow.operators import fill_ghosts

    scheme = make_scheme(basis)
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    rng = np.random.default_rng(4)
    state.u[:] = rng.normal(size=state.u.shape)
    got = fill_ghosts(state, scheme.grid, scheme.model, basis, scheme.config)
    want = scheme.fill_ghosts(state)
    for key in want:
        assert np.allclose(got[key], want[key])


def test_assemble_returns_finite_rhs(basis):
    scheme = make_scheme(basis, theta=0.3, nu=1.0,
                         lam_grad_q=np.array([0.1, -0.2, 0.0]))
    state = zero_state(scheme.grid, basis.n_restricted, 1)
    x, y = scheme.grid.vertex_coords()
    state.rho = 1.0 + 0.2 * np.sin(2 * np.pi * x) * np.cos(np.pi * y)
    rhs = scheme.assemble(state)
    assert rhs.check_finite()
    assert rhs.d_rho.shape == scheme.grid.counts
    assert rhs.d_u.shape == state.u.shape
