import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rgl import geometry as geo
from rgl.errors import DomainError, NumericalError, ValidationError
from rgl.states import DensityState, chart, diagonal_chart, random_state, random_tangent

seeds = st.integers(0, 2**32 - 1)
t_grid = np.geomspace(1e-3, 1e3, 50)


def test_kernel_named_members():
    assert np.allclose(geo.KernelFamily(2.0)(t_grid), (1 + t_grid) / 2, rtol=1e-12)
    assert np.allclose(geo.KernelFamily(-1.0)(t_grid), 2 * t_grid / (1 + t_grid), rtol=1e-12)
    assert np.allclose(geo.KernelFamily(1.0)(t_grid), (t_grid - 1) / np.log(t_grid), rtol=1e-12)


@given(st.floats(-3, 4), st.floats(1e-4, 1e4))
def test_kernel_normalization_and_symmetry(beta, t):
    f = geo.KernelFamily(beta)
    assert abs(f(1.0) - 1) < 1e-15
    assert math.isclose(f(t), t * f(1 / t), rel_tol=1e-12)


@given(st.floats(-3, 4))
def test_kernel_continuous_across_one(beta):
    f = geo.KernelFamily(beta)
    for t in (1 - 1e-7, 1 + 1e-7, 1 - 3e-4, 1 + 3e-4):
        ref = ((beta - 1) / beta) * (t**beta - 1) / (t ** (beta - 1) - 1) if min(abs(beta), abs(beta - 1)) > 0.05 else None
        if ref is not None and abs(t - 1) > 1e-4:
            assert math.isclose(f(t), ref, rel_tol=1e-9)
        assert abs(f(t) - 1) < 2 * abs(t - 1) * (1 + abs(beta))


def test_kernel_reflection_identity():
    for delta in (0.1, 0.8, 1.7):
        prod = geo.KernelFamily(0.5 - delta)(t_grid) * geo.KernelFamily(0.5 + delta)(t_grid)
        assert np.allclose(prod, t_grid, rtol=1e-12)


@given(st.floats(-1, 2))
def test_monotone_kernels_sit_between_petz_bounds(beta):
    lo, hi = geo.petz_bounds(t_grid)
    f = geo.KernelFamily(beta)(t_grid)
    assert np.all(f >= lo * (1 - 1e-12)) and np.all(f <= hi * (1 + 1e-12))


def test_kernel_domain():
    with pytest.raises(DomainError):
        geo.KernelFamily(2.0)(0.0)
    with pytest.raises(DomainError):
        geo.KernelFamily.from_alpha(0.0)


@given(seeds, st.integers(2, 3), st.sampled_from([-2.0, -1.0, 0.5, 0.7, 1.0, 2.0]))
def test_metric_closed_form_matches_eguchi(seed, n, alpha):
    rng = np.random.default_rng(seed)
    rho = random_state(n, rng, floor=0.05)
    ch = chart(n)
    x, y = random_tangent(ch, rng, 0.1), random_tangent(ch, rng, 0.1)
    closed = geo.metric(rho, x, y, alpha)
    fd = geo.metric_eguchi_directional(rho, x, y, alpha)
    scale = math.sqrt(geo.metric(rho, x, x, alpha) * geo.metric(rho, y, y, alpha))
    assert abs(closed - fd) <= 1e-4 * scale


@given(seeds, st.integers(2, 4), st.sampled_from([-2.0, 0.3, 1.0, 2.0]))
def test_metric_on_commuting_directions_is_fisher(seed, n, alpha):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n
    rho = DensityState.from_eigen(p)
    ch = diagonal_chart(n)
    assert np.allclose(geo.metric_matrix(rho, ch, alpha), geo.classical_fisher(p, ch), rtol=1e-10, atol=0)


def test_sld_metric_at_one_half():
    rho = random_state(3, 4)
    x = random_tangent(chart(3), 5).mrep
    # SLD L solves (rho L + L rho)/2 = X and g = Tr(X L)
    p, u = rho.spectral
    xt = u.conj().T @ x @ u
    lt = 2 * xt / (p[:, None] + p[None, :])
    assert math.isclose(geo.metric(rho, x, x, 0.5), np.real(np.sum(xt.conj() * lt)), rel_tol=1e-12)


def test_metric_is_symmetric_positive():
    rho = random_state(3, 8)
    g = geo.metric_matrix(rho, chart(3), -0.5)
    assert np.allclose(g, g.T)
    assert np.linalg.eigvalsh(g)[0] > 0


@pytest.mark.parametrize("alpha", [-2.0, -0.5, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("seed", [0, 1])
def test_connections_closed_form_match_eguchi(alpha, seed):
    rho = random_state(2, seed, floor=0.05)
    ch = chart(2)
    prim, dual = geo.connections_closed_form(rho, ch, alpha)
    prim_fd, dual_fd = geo.connections_eguchi(rho, ch, alpha)
    assert np.abs(prim.gamma - prim_fd.gamma).max() <= 1e-3
    assert np.abs(dual.gamma - dual_fd.gamma).max() <= 1e-3
    assert prim.torsion() < 1e-10 and dual.torsion() < 1e-10


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("alpha", [-1.0, 0.5, 0.7, 1.0, 3.0])
def test_duality_full_sweep(n, alpha):
    rho = random_state(n, 10 + n, floor=0.05)
    assert geo.duality_residuals(rho, chart(n), alpha).max() <= 1e-4


@pytest.mark.parametrize("alpha", [-1.5, 0.3, 0.5, 1.0, 2.0])
def test_commutative_restriction_matches_classical_connections(alpha):
    p = np.array([0.2, 0.3, 0.5])
    rho = DensityState.from_eigen(p)
    ch = diagonal_chart(3)
    prim, dual = geo.connections_closed_form(rho, ch, alpha)
    assert np.abs(prim.gamma - geo.classical_connection(p, ch, 2 * alpha - 1)).max() <= 1e-10
    assert np.abs(dual.gamma - geo.classical_connection(p, ch, 1 - 2 * alpha)).max() <= 1e-10
    prim_fd, dual_fd = geo.connections_eguchi(rho, ch, alpha)
    assert np.abs(prim_fd.gamma - geo.classical_connection(p, ch, 2 * alpha - 1)).max() <= 1e-3


def test_classical_curvature_oracle_is_constant_curvature():
    # independent check: curvature of the classical a-connection by differencing its own Christoffels
    a = 0.4
    ch = diagonal_chart(3)
    p0 = np.array([0.2, 0.3, 0.5])
    d = np.real(np.array([np.diag(b) for b in ch.basis]))

    def chris(p):
        g = geo.classical_fisher(p, ch)
        return np.einsum("lm,ijm->lij", np.linalg.inv(g), geo.classical_connection(p, ch, a))

    h = 1e-4
    c0 = chris(p0)
    dc = np.array([(chris(p0 + h * d[i]) - chris(p0 - h * d[i])) / (2 * h) for i in range(2)])
    r = (
        np.einsum("iljk->lkij", dc)
        - np.einsum("jlik->lkij", dc)
        + np.einsum("lim,mjk->lkij", c0, c0)
        - np.einsum("ljm,mik->lkij", c0, c0)
    )
    assert np.allclose(r, geo.classical_curvature(p0, ch, a), atol=1e-6)


@pytest.mark.parametrize("alpha", [0.3, 2.0, -0.7])
def test_simplex_curvature_matches_oracle(alpha):
    p = np.array([0.25, 0.35, 0.4])
    rho = DensityState.from_eigen(p)
    ch = diagonal_chart(3)
    r, _, _ = geo.riemann_tensor(rho, ch, alpha, "primal")
    assert np.allclose(r, geo.classical_curvature(p, ch, 2 * alpha - 1), atol=1e-5)


def test_alpha_one_is_flat_and_others_are_not():
    ch = chart(2)
    rho = random_state(2, 3, floor=0.05)
    flat = max(geo.curvature(rho, ch, 1.0, w).max_abs_riemann for w in ("primal", "dual"))
    assert flat <= 5e-3
    for alpha in (0.5, 2.0):
        assert geo.curvature(rho, ch, alpha, "primal").max_abs_riemann >= 10 * max(flat, 1e-6)


def test_curvature_rejects_unknown_connection():
    with pytest.raises(ValidationError):
        geo.curvature(random_state(2, 1), chart(2), 0.5, "mixed")


def test_ill_conditioned_metric_is_reported():
    g = np.diag([1.0, 1e-12])
    cc = geo.ConnectionCoefficients(np.zeros((2, 2, 2)), g, "primal", 0.5)
    with pytest.raises(NumericalError):
        cc.second_kind()


def test_connection_and_curvature_json():
    rho = random_state(2, 2, floor=0.05)
    prim, _ = geo.connections_closed_form(rho, chart(2), 2.0)
    back = geo.ConnectionCoefficients.from_json(prim.to_json())
    assert np.array_equal(back.gamma, prim.gamma) and back.which == "primal"
    rep = geo.curvature(rho, chart(2), 2.0, keep_tensor=True)
    doc = rep.to_json()
    assert doc["max_abs_riemann"] == rep.max_abs_riemann and len(doc["riemann"]["data"]) == 81


def test_eguchi_step_adapts_near_boundary():
    # the nominal step would leave the state space; the capped stencil stays inside and converges
    rho = DensityState.from_eigen([0.9985, 0.0015])
    g = geo.metric_eguchi(rho, chart(2), 2, 2, 0.5)
    assert math.isclose(g, geo.metric_matrix(rho, chart(2), 0.5)[2, 2], rel_tol=1e-6)
