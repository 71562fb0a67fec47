import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rgl.errors import RangeError, ValidationError
from rgl.matrix import majorizes
from rgl.states import (
    DensityState,
    QuantumChannel,
    TangentVector,
    apply_channel,
    channel_from_json,
    channel_to_json,
    chart,
    diagonal_chart,
    make_rng,
    matrix_from_json,
    matrix_to_json,
    measure_prepare_channel,
    pinching,
    pinching_channel,
    pinching_fixed_point_check,
    random_channel,
    random_hermitian,
    random_state,
    state_from_coordinates,
    state_from_json,
    state_to_json,
    tangent,
    to_coordinates,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 4)


def test_rejects_wrong_trace():
    with pytest.raises(ValidationError):
        DensityState(np.eye(2))


def test_rejects_non_faithful():
    with pytest.raises(RangeError):
        DensityState(np.diag([1.0, 0.0]))


def test_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        DensityState(np.array([[0.5, 0.1], [0.0, 0.5]]))


def test_tangent_must_be_traceless():
    with pytest.raises(ValidationError):
        TangentVector(np.eye(2))


def test_keyed_streams_are_reproducible_and_distinct():
    a = make_rng(7, 1, 2).standard_normal(4)
    b = make_rng(7, 1, 2).standard_normal(4)
    c = make_rng(7, 2, 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_chart_is_trace_orthonormal_and_traceless(n):
    ch = chart(n)
    assert ch.size == n * n - 1
    gram = np.einsum("aij,bji->ab", ch.basis, ch.basis)
    assert np.allclose(gram, np.eye(ch.size))
    assert np.allclose(np.einsum("aii->a", ch.basis), 0)
    d = diagonal_chart(n)
    assert d.size == n - 1
    assert all(np.allclose(b, np.diag(np.diag(b))) for b in d.basis)


@given(seeds, dims)
def test_coordinates_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    center = random_state(n, rng, floor=0.05)
    ch = chart(n)
    theta = 0.01 * rng.standard_normal(ch.size)
    s = state_from_coordinates(ch, center, theta)
    assert np.allclose(to_coordinates(ch, center, s), theta, atol=1e-13)


def test_coordinates_outside_state_space():
    ch = chart(2)
    with pytest.raises(RangeError):
        state_from_coordinates(ch, DensityState.maximally_mixed(2), np.array([0.0, 0.0, 5.0]))


@given(seeds, dims, st.sampled_from([None, 1, 2]))
def test_random_channel_is_cptp(seed, n, rank):
    gamma = random_channel(n, rank=rank, seed=seed)
    assert gamma.completeness_residual() < 1e-12
    rho = random_state(n, seed)
    out = apply_channel(gamma, rho.op)
    assert abs(np.trace(out) - 1) < 1e-12
    assert np.linalg.eigvalsh(out)[0] > -1e-14


def test_channel_with_unequal_dimensions():
    gamma = random_channel(3, rank=2, seed=4, output_dim=2)
    assert (gamma.input_dim, gamma.output_dim) == (3, 2)
    out = apply_channel(gamma, random_state(3, 1))
    assert out.dim == 2
    assert abs(np.trace(out.op) - 1) < 1e-12


def test_channel_rejects_incomplete_kraus():
    with pytest.raises(ValidationError):
        QuantumChannel((0.5 * np.eye(2),))


def test_channel_pushes_tangents_forward():
    gamma = random_channel(2, seed=3)
    x = tangent(chart(2), [0.1, -0.2, 0.3])
    gx = apply_channel(gamma, x)
    assert isinstance(gx, TangentVector)
    assert abs(np.trace(gx.mrep)) < 1e-12


def test_identity_channel_and_mixing():
    rho = random_state(3, 2)
    assert np.allclose(apply_channel(QuantumChannel.identity(3), rho).op, rho.op)
    gamma = random_channel(3, seed=1)
    half = gamma.mix_with_identity(0.5)
    assert np.allclose(half(rho).op, 0.5 * rho.op + 0.5 * gamma(rho).op)


def test_measurement_channel_outputs_diagonal():
    u = np.linalg.qr(random_hermitian(3, 1))[0]
    gamma = measure_prepare_channel(u, [np.diag(np.eye(3)[i]) for i in range(3)])
    out = gamma(random_state(3, 5)).op
    assert np.allclose(out, np.diag(np.diag(out)))


@given(seeds, dims)
def test_pinching_commutes_and_majorization(seed, n):
    rng = np.random.default_rng(seed)
    sigma = random_state(n, rng)
    a = random_hermitian(n, rng)
    pa = pinching(sigma, a)
    assert np.allclose(pa @ sigma.op, sigma.op @ pa, atol=1e-12)
    assert np.isclose(np.trace(pa), np.trace(a))
    assert majorizes(np.linalg.eigvalsh(a), np.linalg.eigvalsh(pa))
    assert np.allclose(pinching_channel(sigma)(a), pa)


def test_pinching_with_degenerate_sigma_keeps_blocks():
    sigma = DensityState(np.diag([0.25, 0.25, 0.5]).astype(complex))
    a = random_hermitian(3, 9)
    pa = pinching(sigma, a)
    assert np.allclose(pa[:2, :2], a[:2, :2])
    assert np.allclose(pa[:2, 2], 0)


def test_pinching_fixed_point_check():
    sigma = DensityState(np.diag([0.2, 0.8]).astype(complex))
    fixed = pinching_fixed_point_check(sigma, np.diag([1.0, 3.0]))
    assert fixed.spectra_equal and fixed.operator_equal and not fixed.lemma_violation
    moved = pinching_fixed_point_check(sigma, np.array([[1.0, 0.5], [0.5, 3.0]]))
    assert not moved.spectra_equal and not moved.lemma_violation


def test_json_round_trips():
    rho = random_state(3, 11)
    doc = json.loads(json.dumps(state_to_json(rho)))
    assert np.array_equal(state_from_json(doc).op, rho.op)
    gamma = random_channel(2, rank=3, seed=2, output_dim=3)
    back = channel_from_json(json.loads(json.dumps(channel_to_json(gamma))))
    assert all(np.array_equal(a, b) for a, b in zip(back.kraus, gamma.kraus))


def test_matrix_json_rejects_malformed():
    with pytest.raises(ValidationError):
        matrix_from_json({"re": [[1.0]], "im": [[0.0, 1.0]]})
    with pytest.raises(ValidationError):
        matrix_from_json({"dim": 3, "re": [[1.0, 0.0], [0.0, 1.0]]})
    assert matrix_to_json(np.eye(2))["dim"] == 2
