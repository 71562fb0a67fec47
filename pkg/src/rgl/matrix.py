"""Spectral calculus on Hermitian matrices.

Matrix functions, first- and second-order Frechet derivatives (divided
differences and Gauss-Legendre quadrature of the integral representations)
and majorization utilities.  Hermitian operators are plain ``numpy`` arrays;
the helpers here validate them on entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from rgl.errors import DomainError, NumericalError, ValidationError

# module-level tolerances; every check that uses one reports its residual
HERMITIAN_ATOL = 1e-12
DEGENERACY_RTOL = 1e-10
MAJORIZATION_ATOL = 1e-10
QUADRATURE_T_NODES = 64
QUADRATURE_S_NODES = 128
QUADRATURE_RTOL = 1e-8


class SpectralDecomposition(NamedTuple):
    """Eigenvalues (ascending) and the unitary of column eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def as_hermitian(a, name: str = "matrix", atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Return `a` as a complex square array, raising if it is not Hermitian."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValidationError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    residual = np.max(np.abs(a - a.conj().T))
    if residual > atol:
        raise ValidationError(f"{name} is not Hermitian (max |A - A^H| = {residual:.3e})")
    return a


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def spectral(a, check: bool = True) -> SpectralDecomposition:
    if check:
        a = as_hermitian(a)
    w, u = np.linalg.eigh(hermitize(np.asarray(a, dtype=complex)))
    return SpectralDecomposition(w, u)


# ---------------------------------------------------------------------------
# scalar functions


@dataclass(frozen=True)
class ScalarFunctionSpec:
    """A real scalar function together with its first two derivatives.

    Use the factories :func:`power`, :func:`exp_function`, :func:`log_function`
    and :func:`custom` rather than building instances by hand.
    """

    kind: str
    exponent: float = 1.0
    func: Optional[Callable] = None
    deriv: Optional[Callable] = None
    deriv2: Optional[Callable] = None
    positive_domain: bool = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            return x**self.exponent
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "log":
            return np.log(x)
        return np.asarray(self.func(x), dtype=float)

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            lam = self.exponent
            return lam * x ** (lam - 1.0) if lam != 0 else np.zeros_like(x)
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "log":
            return 1.0 / x
        return np.asarray(self.deriv(x), dtype=float)

    def d2(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            lam = self.exponent
            return lam * (lam - 1.0) * x ** (lam - 2.0) if lam not in (0.0, 1.0) else np.zeros_like(x)
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "log":
            return -1.0 / x**2
        if self.deriv2 is None:
            raise NotImplementedError("custom function has no second derivative")
        return np.asarray(self.deriv2(x), dtype=float)

    def check_domain(self, eigenvalues: np.ndarray) -> None:
        if not self.positive_domain:
            return
        bad = eigenvalues[eigenvalues <= 0]
        if bad.size:
            raise DomainError(
                f"{self.kind} requires a strictly positive spectrum; offending eigenvalue {bad[0]:.6g}"
            )


def power(exponent: float) -> ScalarFunctionSpec:
    return ScalarFunctionSpec("power", exponent=float(exponent), positive_domain=True)


def exp_function() -> ScalarFunctionSpec:
    return ScalarFunctionSpec("exp")


def log_function() -> ScalarFunctionSpec:
    return ScalarFunctionSpec("log", positive_domain=True)


def custom(func, deriv, deriv2=None, positive_domain: bool = False) -> ScalarFunctionSpec:
    return ScalarFunctionSpec(
        "custom", func=func, deriv=deriv, deriv2=deriv2, positive_domain=positive_domain
    )


# ---------------------------------------------------------------------------
# divided differences


def _close(x, y):
    return np.abs(x - y) < DEGENERACY_RTOL * np.maximum(1.0, np.abs(x))


def first_divided_differences(f: ScalarFunctionSpec, lam: np.ndarray) -> np.ndarray:
    """Matrix ``L[i, j] = f[lam_i, lam_j]`` with ``f'`` on (near-)coincident pairs."""
    x = lam[:, None]
    y = lam[None, :]
    fx = f(lam)
    close = _close(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = (fx[:, None] - fx[None, :]) / np.where(close, 1.0, x - y)
    mid = 0.5 * (x + y)
    return np.where(close, f.d1(np.broadcast_to(mid, close.shape)), dd)


def _dd1_scalar(f, a, b):
    if _close(a, b):
        return float(f.d1(0.5 * (a + b)))
    return float((f(a) - f(b)) / (a - b))


def _dd2_scalar(f, a, b, c):
    a, b, c = sorted((a, b, c))
    if _close(a, c):
        return 0.5 * float(f.d2((a + b + c) / 3.0))
    return (_dd1_scalar(f, b, c) - _dd1_scalar(f, a, b)) / (c - a)


def second_divided_differences(f: ScalarFunctionSpec, lam: np.ndarray) -> np.ndarray:
    """Tensor ``T[i, k, j] = f[lam_i, lam_k, lam_j]``."""
    n = lam.size
    out = np.empty((n, n, n))
    for i in range(n):
        for k in range(i, n):
            for j in range(k, n):
                v = _dd2_scalar(f, lam[i], lam[k], lam[j])
                for p in {(i, k, j), (i, j, k), (k, i, j), (k, j, i), (j, i, k), (j, k, i)}:
                    out[p] = v
    return out


# ---------------------------------------------------------------------------
# matrix functions and derivatives


def matrix_function(a, f: ScalarFunctionSpec, spec: Optional[SpectralDecomposition] = None) -> np.ndarray:
    if spec is None:
        spec = spectral(a)
    f.check_domain(spec.eigenvalues)
    u = spec.eigenvectors
    return hermitize((u * f(spec.eigenvalues)) @ u.conj().T)


def frechet_derivative(a, b, f: ScalarFunctionSpec, spec: Optional[SpectralDecomposition] = None) -> np.ndarray:
    """Directional derivative ``Df(A)[B]`` via the first divided-difference kernel."""
    if spec is None:
        spec = spectral(a)
    b = as_hermitian(b, "B", atol=1e-9)
    f.check_domain(spec.eigenvalues)
    u = spec.eigenvectors
    bt = u.conj().T @ b @ u
    kernel = first_divided_differences(f, spec.eigenvalues)
    return hermitize(u @ (kernel * bt) @ u.conj().T)


def second_frechet_derivative(a, b, c, f: ScalarFunctionSpec, spec: Optional[SpectralDecomposition] = None) -> np.ndarray:
    """Symmetric bilinear second derivative ``D^2 f(A)[B, C]``.

    In the eigenbasis of A the ``(i, j)`` entry is
    ``sum_k f[l_i, l_k, l_j] (B_ik C_kj + C_ik B_kj)``.
    """
    if spec is None:
        spec = spectral(a)
    f.check_domain(spec.eigenvalues)
    u = spec.eigenvectors
    bt = u.conj().T @ np.asarray(b, dtype=complex) @ u
    ct = u.conj().T @ np.asarray(c, dtype=complex) @ u
    t = second_divided_differences(f, spec.eigenvalues)
    out = np.einsum("ikj,ik,kj->ij", t, bt, ct) + np.einsum("ikj,ik,kj->ij", t, ct, bt)
    return hermitize(u @ out @ u.conj().T)


def trace_power_derivative(a, b, lam: float) -> float:
    """``D(Tr A^lam)[B] = lam Tr(A^(lam-1) B)``."""
    spec = spectral(a)
    pw = power(lam - 1.0)
    pw.check_domain(spec.eigenvalues)
    b = as_hermitian(b, "B", atol=1e-9)
    return float(lam * np.real(np.trace(matrix_function(a, pw, spec) @ b)))


# ---------------------------------------------------------------------------
# quadrature forms


def _gauss_legendre_01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _dyson(spec: SpectralDecomposition, b: np.ndarray, n_t: int) -> np.ndarray:
    # int_0^1 e^{(1-t)H} B e^{tH} dt, with H given by its spectral decomposition
    t, w = _gauss_legendre_01(n_t)
    u, lam = spec.eigenvectors, spec.eigenvalues
    out = np.zeros_like(b, dtype=complex)
    for tk, wk in zip(t, w):
        left = (u * np.exp((1.0 - tk) * lam)) @ u.conj().T
        right = (u * np.exp(tk * lam)) @ u.conj().T
        out += wk * (left @ b @ right)
    return out


def _resolvent_integral(a: np.ndarray, b: np.ndarray, n_s: int, scale: float) -> np.ndarray:
    # int_0^inf (sI+A)^{-1} B (sI+A)^{-1} ds with s = scale * u / (1 - u)
    u_nodes, w = _gauss_legendre_01(n_s)
    eye = np.eye(a.shape[0])
    out = np.zeros_like(b, dtype=complex)
    for uk, wk in zip(u_nodes, w):
        s = scale * uk / (1.0 - uk)
        ds = scale / (1.0 - uk) ** 2
        r = np.linalg.inv(s * eye + a)
        out += (wk * ds) * (r @ b @ r)
    return out


def _quadrature_once(a, b, kind, lam, n_t, n_s):
    if kind == "exp":
        return _dyson(spectral(a, check=False), b, n_t)
    spec = spectral(a, check=False)
    log_function().check_domain(spec.eigenvalues)
    scale = float(np.sqrt(spec.eigenvalues[0] * spec.eigenvalues[-1]))
    dlog = _resolvent_integral(a, b, n_s, scale)
    if kind == "log":
        return dlog
    # A^lam = exp(lam log A): chain rule through the Dyson integral
    gen = SpectralDecomposition(lam * np.log(spec.eigenvalues), spec.eigenvectors)
    return _dyson(gen, lam * dlog, n_t)


def frechet_quadrature(
    a,
    b,
    kind: str,
    lam: float = 1.0,
    n_t: int = QUADRATURE_T_NODES,
    n_s: int = QUADRATURE_S_NODES,
    rtol: float = QUADRATURE_RTOL,
) -> np.ndarray:
    """Frechet derivative from its integral representation.

    ``kind`` is ``"exp"``, ``"log"`` or ``"power"`` (with exponent `lam`).
    The result is compared with the same rule at half the node counts and
    :class:`NumericalError` is raised if the two disagree by more than
    ``rtol * (1 + ||B||)``.
    """
    a = as_hermitian(a, "A")
    b = as_hermitian(b, "B", atol=1e-9)
    if kind not in ("exp", "log", "power"):
        raise ValidationError(f"unknown quadrature kind {kind!r}")
    full = _quadrature_once(a, b, kind, lam, n_t, n_s)
    half = _quadrature_once(a, b, kind, lam, n_t // 2, n_s // 2)
    residual = float(np.linalg.norm(full - half))
    if residual > rtol * (1.0 + np.linalg.norm(b)):
        raise NumericalError(
            f"{kind} quadrature not converged: |Q(n) - Q(n/2)| = {residual:.3e}", residual=residual
        )
    return hermitize(full)


# ---------------------------------------------------------------------------
# majorization


def majorizes(x, y, atol: float = MAJORIZATION_ATOL) -> bool:
    """True if `x` majorizes `y`: descending partial sums of x dominate those of y."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    cx = np.cumsum(np.sort(x)[::-1])
    cy = np.cumsum(np.sort(y)[::-1])
    if x.size == 0:
        return True
    if abs(cx[-1] - cy[-1]) > atol:
        return False
    return bool(np.all(cx[:-1] >= cy[:-1] - atol))
