"""Faithful density operators, tangent vectors, charts and quantum channels.

Also hosts pinching, the seeded random generators and the JSON matrix schema
``{"dim": n, "re": [[...]], "im": [[...]]}`` used by fixtures and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from rgl.errors import RangeError, ValidationError
from rgl.matrix import SpectralDecomposition, as_hermitian, hermitize, spectral

TRACE_ATOL = 1e-10
FAITHFUL_FLOOR = 1e-12
RANDOM_STATE_FLOOR = 1e-6
PINCHING_RTOL = 1e-10
KRAUS_ATOL = 1e-10


# ---------------------------------------------------------------------------
# random number generation


def make_rng(seed=None, *spawn_key: int) -> np.random.Generator:
    """Philox generator for `seed`, optionally keyed by a sub-stream index.

    ``make_rng(master, cell, trial)`` gives every trial its own reproducible
    stream, independent of the order in which trials are executed.
    """
    if isinstance(seed, np.random.Generator):
        if spawn_key:
            raise ValidationError("cannot derive keyed sub-streams from a Generator")
        return seed
    ss = np.random.SeedSequence(entropy=0 if seed is None else seed, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# states and tangent vectors


@dataclass(frozen=True, eq=False)
class DensityState:
    """A faithful (strictly positive, unit trace) density operator."""

    op: np.ndarray

    def __post_init__(self):
        op = as_hermitian(self.op, "density operator", atol=1e-10)
        op = hermitize(op)
        object.__setattr__(self, "op", op)
        tr = np.trace(op).real
        if abs(tr - 1.0) > TRACE_ATOL:
            raise ValidationError(f"trace of density operator is {tr!r}, expected 1")
        lmin = self.spectral.eigenvalues[0]
        if lmin <= FAITHFUL_FLOOR:
            raise RangeError(f"state is not faithful: minimum eigenvalue {lmin:.3e}", lmin)

    @cached_property
    def spectral(self) -> SpectralDecomposition:
        return spectral(self.op, check=False)

    @property
    def dim(self) -> int:
        return self.op.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectral.eigenvalues

    @classmethod
    def from_eigen(cls, eigenvalues, unitary=None) -> "DensityState":
        p = np.asarray(eigenvalues, dtype=float)
        if unitary is None:
            return cls(np.diag(p).astype(complex))
        u = np.asarray(unitary, dtype=complex)
        return cls((u * p) @ u.conj().T)

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityState":
        return cls(np.eye(n, dtype=complex) / n)

    def __repr__(self):
        return f"DensityState(dim={self.dim}, eigenvalues={np.round(self.eigenvalues, 6)})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector stored through its m-representation (a traceless Hermitian matrix)."""

    mrep: np.ndarray

    def __post_init__(self):
        m = hermitize(as_hermitian(self.mrep, "m-representation", atol=1e-10))
        tr = abs(np.trace(m))
        if tr > TRACE_ATOL * max(1.0, np.linalg.norm(m)):
            raise ValidationError(f"tangent vector must be traceless, trace = {tr:.3e}")
        object.__setattr__(self, "mrep", m)

    @property
    def base_dim(self) -> int:
        return self.mrep.shape[0]


def _as_op(x) -> np.ndarray:
    if isinstance(x, DensityState):
        return x.op
    if isinstance(x, TangentVector):
        return x.mrep
    return np.asarray(x, dtype=complex)


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True, eq=False)
class StateChart:
    """Affine coordinates ``rho(theta) = center + sum_a theta_a basis[a]``.

    `basis` is trace-orthonormal and traceless.  The full chart from
    :func:`chart` has ``n^2 - 1`` elements; :func:`diagonal_chart` spans the
    commutative (classical) directions only.
    """

    basis: np.ndarray  # shape (m, n, n)

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    @property
    def size(self) -> int:
        return self.basis.shape[0]

    def combine(self, theta) -> np.ndarray:
        return np.tensordot(np.asarray(theta, dtype=float), self.basis, axes=1)

    def coordinates(self, a) -> np.ndarray:
        a = _as_op(a)
        return np.real(np.einsum("aij,ji->a", self.basis, a))


def _gell_mann(n: int):
    sym, asym, diag = [], [], []
    for j in range(n):
        for k in range(j + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[j, k] = e[k, j] = 1 / np.sqrt(2)
            sym.append(e)
            e = np.zeros((n, n), dtype=complex)
            e[j, k] = -1j / np.sqrt(2)
            e[k, j] = 1j / np.sqrt(2)
            asym.append(e)
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -l
        diag.append(np.diag(d / np.sqrt(l * (l + 1))).astype(complex))
    return sym, asym, diag


def chart(n: int) -> StateChart:
    """Generalized Gell-Mann basis, trace-normalized, ordered (sym, antisym, diagonal)."""
    if n < 2:
        raise ValidationError(f"chart needs n >= 2, got {n}")
    sym, asym, diag = _gell_mann(n)
    ordered = []
    for s, a in zip(sym, asym):
        ordered += [s, a]
    return StateChart(np.array(ordered + diag))


def diagonal_chart(n: int) -> StateChart:
    if n < 2:
        raise ValidationError(f"chart needs n >= 2, got {n}")
    return StateChart(np.array(_gell_mann(n)[2]))


def state_from_coordinates(ch: StateChart, center: DensityState, theta) -> DensityState:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ch.size,):
        raise ValidationError(f"expected {ch.size} coordinates, got shape {theta.shape}")
    op = center.op + ch.combine(theta)
    lmin = np.linalg.eigvalsh(hermitize(op))[0]
    if lmin <= FAITHFUL_FLOOR:
        raise RangeError(f"coordinates leave the state space: minimum eigenvalue {lmin:.3e}", lmin)
    return DensityState(op)


def to_coordinates(ch: StateChart, center: DensityState, state: DensityState) -> np.ndarray:
    return ch.coordinates(state.op - center.op)


def tangent(ch: StateChart, theta) -> TangentVector:
    return TangentVector(ch.combine(theta))


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """CPTP map in Kraus form; each operator has shape (output_dim, input_dim)."""

    kraus: tuple

    def __post_init__(self):
        ks = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ks:
            raise ValidationError("channel needs at least one Kraus operator")
        shape = ks[0].shape
        if any(k.shape != shape or k.ndim != 2 for k in ks):
            raise ValidationError("Kraus operators must share one 2-D shape")
        object.__setattr__(self, "kraus", ks)
        res = self.completeness_residual()
        if res > KRAUS_ATOL:
            raise ValidationError(f"Kraus completeness violated: |sum K^H K - I| = {res:.3e}")

    @property
    def input_dim(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.kraus[0].shape[0]

    def completeness_residual(self) -> float:
        s = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(s - np.eye(self.input_dim))))

    def __call__(self, a):
        return apply_channel(self, a)

    @classmethod
    def identity(cls, n: int) -> "QuantumChannel":
        return cls((np.eye(n, dtype=complex),))

    def mix_with_identity(self, weight: float) -> "QuantumChannel":
        """``(1 - weight) id + weight * self``; requires equal input and output dims."""
        if self.input_dim != self.output_dim:
            raise ValidationError("mixing with identity needs a square channel")
        ks = [np.sqrt(1.0 - weight) * np.eye(self.input_dim)] + [np.sqrt(weight) * k for k in self.kraus]
        return QuantumChannel(tuple(ks))


def measure_prepare_channel(basis: np.ndarray, outputs) -> QuantumChannel:
    """``A -> sum_i <u_i|A|u_i> tau_i`` for the orthonormal columns ``u_i`` of `basis`.

    With ``tau_i = |i><i|`` this is a projective measurement with classical output.
    """
    basis = np.asarray(basis, dtype=complex)
    ks = []
    for i, tau in enumerate(outputs):
        w, v = np.linalg.eigh(_as_op(tau))
        for lam, vec in zip(w, v.T):
            if lam > 0:
                ks.append(np.sqrt(lam) * np.outer(vec, basis[:, i].conj()))
    return QuantumChannel(tuple(ks))


def apply_channel(gamma: QuantumChannel, a):
    """Apply `gamma` to a matrix, a :class:`DensityState` or a :class:`TangentVector`.

    The return type follows the input: states map to states and tangent
    vectors (m-representations) to their pushforward.
    """
    m = _as_op(a)
    if m.shape != (gamma.input_dim, gamma.input_dim):
        raise ValidationError(f"channel input dim {gamma.input_dim} does not match {m.shape}")
    out = hermitize(sum(k @ m @ k.conj().T for k in gamma.kraus))
    if isinstance(a, DensityState):
        return DensityState(out)
    if isinstance(a, TangentVector):
        return TangentVector(out)
    return out


# ---------------------------------------------------------------------------
# pinching


def spectral_projectors(sigma: DensityState, rtol: float = PINCHING_RTOL) -> list:
    """Projectors onto the eigenspaces of `sigma`, eigenvalues grouped within `rtol`."""
    lam, u = sigma.spectral
    groups = [[0]]
    for i in range(1, lam.size):
        if abs(lam[i] - lam[groups[-1][0]]) <= rtol * max(abs(lam[i]), 1e-300):
            groups[-1].append(i)
        else:
            groups.append([i])
    return [u[:, g] @ u[:, g].conj().T for g in groups]


def pinching(sigma: DensityState, a) -> np.ndarray:
    a = as_hermitian(_as_op(a), "A", atol=1e-10)
    if a.shape != sigma.op.shape:
        raise ValidationError(f"dimension mismatch: sigma {sigma.op.shape}, A {a.shape}")
    return hermitize(sum(e @ a @ e for e in spectral_projectors(sigma)))


def pinching_channel(sigma: DensityState) -> QuantumChannel:
    return QuantumChannel(tuple(spectral_projectors(sigma)))


@dataclass(frozen=True)
class PinchingCheck:
    spectra_equal: bool
    operator_equal: bool
    spectral_residual: float
    operator_residual: float

    @property
    def lemma_violation(self) -> bool:
        return self.spectra_equal and not self.operator_equal


def pinching_fixed_point_check(sigma: DensityState, a, atol: float = 1e-8) -> PinchingCheck:
    """Compare A with its pinching: equal spectra should force equal operators."""
    a = as_hermitian(_as_op(a), "A", atol=1e-10)
    pa = pinching(sigma, a)
    spec_res = float(np.max(np.abs(np.linalg.eigvalsh(a) - np.linalg.eigvalsh(pa))))
    op_res = float(np.linalg.norm(a - pa))
    return PinchingCheck(spec_res <= atol, op_res <= atol, spec_res, op_res)


# ---------------------------------------------------------------------------
# random generators


def _ginibre(rng, rows, cols):
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)


def random_state(n: int, seed=None, floor: float = RANDOM_STATE_FLOOR) -> DensityState:
    """Hilbert-Schmidt random state ``G G^H / Tr``, mixed toward I/n if needed so that
    the minimum eigenvalue is at least `floor`."""
    if n < 2:
        raise ValidationError(f"random_state needs n >= 2, got {n}")
    if not 0 <= floor < 1.0 / n:
        raise ValidationError(f"floor must lie in [0, 1/n), got {floor}")
    rng = make_rng(seed)
    g = _ginibre(rng, n, n)
    rho = g @ g.conj().T
    rho = hermitize(rho / np.trace(rho).real)
    lmin = np.linalg.eigvalsh(rho)[0]
    if lmin < floor:
        w = (floor - lmin) / (1.0 / n - lmin)
        rho = (1.0 - w) * rho + w * np.eye(n) / n
    return DensityState(rho)


def haar_unitary(n: int, seed=None) -> np.ndarray:
    rng = make_rng(seed)
    q, r = np.linalg.qr(_ginibre(rng, n, n))
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_channel(n: int, rank: Optional[int] = None, seed=None, output_dim: Optional[int] = None) -> QuantumChannel:
    """Channel from a Haar-random isometry ``C^n -> C^(rank*m)`` cut into `rank` Kraus blocks."""
    m = n if output_dim is None else output_dim
    rank = n * n if rank is None else rank
    if n < 2 or rank < 1 or m < 1:
        raise ValidationError(f"invalid channel parameters n={n}, rank={rank}, output_dim={m}")
    rng = make_rng(seed)
    q, r = np.linalg.qr(_ginibre(rng, rank * m, n))
    d = np.diag(r)
    v = q * (d / np.abs(d))
    return QuantumChannel(tuple(v[i * m:(i + 1) * m, :] for i in range(rank)))


def random_tangent(ch: StateChart, seed=None, scale: float = 1.0) -> TangentVector:
    rng = make_rng(seed)
    return tangent(ch, scale * rng.standard_normal(ch.size))


def random_hermitian(n: int, seed=None) -> np.ndarray:
    g = _ginibre(make_rng(seed), n, n)
    return hermitize(g)


def random_positive(n: int, seed=None, spread: float = 2.0) -> np.ndarray:
    """Strictly positive matrix with log10-eigenvalues uniform in [-spread/2, spread/2]."""
    rng = make_rng(seed)
    lam = 10.0 ** rng.uniform(-spread / 2, spread / 2, size=n)
    u = haar_unitary(n, rng)
    return hermitize((u * lam) @ u.conj().T)


# ---------------------------------------------------------------------------
# JSON schema


def matrix_to_json(a) -> dict:
    a = np.asarray(_as_op(a), dtype=complex)
    doc = {"dim": int(a.shape[0]), "re": a.real.tolist(), "im": a.imag.tolist()}
    if a.shape[0] != a.shape[1]:
        doc["shape"] = list(a.shape)
    return doc


def matrix_from_json(doc: dict) -> np.ndarray:
    try:
        re = np.asarray(doc["re"], dtype=float)
        im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed matrix document: {exc}") from exc
    if re.shape != im.shape or re.ndim != 2:
        raise ValidationError("'re' and 'im' must be equal-shape 2-D arrays")
    if "dim" in doc and int(doc["dim"]) != re.shape[0]:
        raise ValidationError(f"'dim' = {doc['dim']} disagrees with matrix shape {re.shape}")
    return re + 1j * im


def state_to_json(state: DensityState) -> dict:
    return matrix_to_json(state.op)


def state_from_json(doc: dict) -> DensityState:
    return DensityState(matrix_from_json(doc))


def channel_to_json(gamma: QuantumChannel) -> dict:
    return {"kraus": [matrix_to_json(k) for k in gamma.kraus]}


def channel_from_json(doc: dict) -> QuantumChannel:
    try:
        ks = doc["kraus"]
    except (KeyError, TypeError) as exc:
        raise ValidationError("channel document needs a 'kraus' list") from exc
    return QuantumChannel(tuple(matrix_from_json(k) for k in ks))
