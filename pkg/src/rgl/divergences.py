"""Scalar divergence functionals on faithful states.

``psi(alpha) = log Tr (sigma^c rho sigma^c)^alpha`` with ``c = (1 - alpha) / (2 alpha)``
underlies everything here: the sandwiched Renyi relative entropy is
``psi / (alpha - 1)`` and the rescaled alpha-divergence ``psi / (alpha (alpha - 1))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from rgl.errors import DomainError, NumericalError, ValidationError
from rgl.matrix import log_function, matrix_function, power
from rgl.states import DensityState, pinching

# generic evaluation is refused this close to the removable/essential points
SINGULAR_GUARD = 1e-8
# above this estimated condition number the log-domain eigen-solver is used
DIRECT_COND_LIMIT = 1e3


def _check_pair(rho: DensityState, sigma: DensityState):
    if not isinstance(rho, DensityState) or not isinstance(sigma, DensityState):
        raise ValidationError("rho and sigma must be DensityState instances")
    if rho.dim != sigma.dim:
        raise ValidationError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")


def sandwich_exponent(alpha: float) -> float:
    return (1.0 - alpha) / (2.0 * alpha)


def sandwiched_operator(rho: DensityState, sigma: DensityState, alpha: float) -> np.ndarray:
    """``A = sigma^c rho sigma^c`` as an explicit matrix (may under/overflow for tiny alpha)."""
    _check_pair(rho, sigma)
    if alpha == 0:
        raise DomainError("alpha = 0 has no sandwiched operator")
    s = matrix_function(sigma.op, power(sandwich_exponent(alpha)), sigma.spectral)
    return s @ rho.op @ s


def _graded_log_eigenvalues(log_scale: np.ndarray, rows: np.ndarray, tol=1e-15, max_sweeps=60) -> np.ndarray:
    """Log-eigenvalues of ``G G^H`` where row i of G is ``exp(log_scale[i]) * rows[i]``.

    One-sided Jacobi on the rows, carried out with per-row log-scales so that
    row norms spanning far beyond the double exponent range stay exact.  Rows
    are kept unit-norm; a rotation between rows x = e^a u and y = e^b w with
    a >= b only ever needs q = e^(b - a) <= 1.
    """
    v = np.array(rows, dtype=complex)
    e = np.array(log_scale, dtype=float)
    norms = np.linalg.norm(v, axis=1)
    v /= norms[:, None]
    e += np.log(norms)
    n = v.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                hi, lo = (i, j) if e[i] >= e[j] else (j, i)
                g = np.vdot(v[lo], v[hi])  # <u, w> with u = v[hi], w = v[lo]: sum u_k conj(w_k)
                ag = abs(g)
                off = max(off, ag)
                if ag < tol:
                    continue
                q = np.exp(e[lo] - e[hi])
                phase = g / ag
                d = 1.0 - q * q
                that = 2.0 * ag / (d + np.sqrt(d * d + 4.0 * q * q * ag * ag))
                c = 1.0 / np.sqrt(1.0 + (q * that) ** 2)
                u_old = v[hi].copy()
                v[hi] = c * (u_old + q * q * that * phase * v[lo])
                v[lo] = c * (v[lo] - that * np.conj(phase) * u_old)
                for k in (hi, lo):
                    nk = np.linalg.norm(v[k])
                    v[k] /= nk
                    e[k] += np.log(nk)
        if off < tol:
            break
    else:
        raise NumericalError(f"graded Jacobi did not converge (off-diagonal {off:.2e})", residual=off)
    return np.sort(2.0 * e)


def sandwiched_log_eigenvalues(rho: DensityState, sigma: DensityState, alpha: float, method: str = "auto") -> np.ndarray:
    """Natural logs of the eigenvalues of ``sigma^c rho sigma^c``, ascending.

    ``method="direct"`` diagonalizes the explicit product; ``"graded"`` writes
    ``sigma^c rho sigma^c = G G^H`` with ``G = sigma^c L`` (``rho = L L^H``) and
    keeps the row scales ``s_i^c`` in log form, which is accurate even when
    ``sigma^c`` is not representable.  ``"auto"`` picks direct unless the
    product is badly conditioned.
    """
    _check_pair(rho, sigma)
    if alpha == 0:
        raise DomainError("alpha = 0 has no sandwiched operator")
    c = sandwich_exponent(alpha)
    s_lam, s_vec = sigma.spectral
    log_s = np.log(s_lam)
    if method == "auto":
        grading = 2.0 * abs(c) * (log_s[-1] - log_s[0])
        cond_rho = rho.eigenvalues[-1] / rho.eigenvalues[0]
        method = "direct" if grading + np.log(cond_rho) < np.log(DIRECT_COND_LIMIT) else "graded"
    if method == "direct":
        w = np.linalg.eigvalsh(sandwiched_operator(rho, sigma, alpha))
        if w[0] <= 0 or not np.all(np.isfinite(w)):
            raise NumericalError(f"sandwiched operator lost positivity (min eigenvalue {w[0]:.3e})")
        return np.log(w)
    if method != "graded":
        raise ValidationError(f"unknown method {method!r}")
    rho_sb = s_vec.conj().T @ rho.op @ s_vec
    chol = np.linalg.cholesky(0.5 * (rho_sb + rho_sb.conj().T))
    return _graded_log_eigenvalues(c * log_s, chol)


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def psi(rho: DensityState, sigma: DensityState, alpha: float, method: str = "auto") -> float:
    """``log Tr (sigma^c rho sigma^c)^alpha``; reduces to ``log sum p^a q^(1-a)`` for commuting inputs."""
    if alpha == 0:
        raise DomainError("psi is undefined at alpha = 0")
    if alpha == 1:
        return float(np.log(np.trace(rho.op).real))
    val = _logsumexp(alpha * sandwiched_log_eigenvalues(rho, sigma, alpha, method))
    if not np.isfinite(val):
        raise NumericalError(f"psi is not finite at alpha={alpha}")
    return val


def _check_generic(alpha: float):
    if abs(alpha) < SINGULAR_GUARD:
        raise DomainError(
            f"alpha={alpha!r} is within {SINGULAR_GUARD} of 0, where the divergence does not "
            "extend continuously; use limit_at_zero for one-sided limits"
        )
    if alpha != 1 and abs(alpha - 1) < SINGULAR_GUARD:
        raise DomainError(f"alpha={alpha!r} is within {SINGULAR_GUARD} of 1; use alpha=1 (Umegaki branch)")


def sandwiched_renyi(rho: DensityState, sigma: DensityState, alpha: float, method: str = "auto") -> float:
    """Sandwiched Renyi relative entropy ``psi(alpha) / (alpha - 1)``."""
    _check_pair(rho, sigma)
    if alpha in (0, 1):
        raise DomainError("sandwiched_renyi needs alpha outside {0, 1}")
    _check_generic(alpha)
    return psi(rho, sigma, alpha, method) / (alpha - 1.0)


def umegaki(rho: DensityState, sigma: DensityState) -> float:
    """``Tr rho (log rho - log sigma)``."""
    _check_pair(rho, sigma)
    log_r = matrix_function(rho.op, log_function(), rho.spectral)
    log_s = matrix_function(sigma.op, log_function(), sigma.spectral)
    return float(np.real(np.trace(rho.op @ (log_r - log_s))))


def alpha_divergence(rho: DensityState, sigma: DensityState, alpha: float, method: str = "auto") -> float:
    """Rescaled divergence ``D_alpha = psi / (alpha (alpha - 1))``; ``alpha == 1`` is the Umegaki branch."""
    _check_pair(rho, sigma)
    alpha = float(alpha)
    if alpha == 0:
        raise DomainError(
            "D_alpha cannot be extended to alpha = 0 on non-commuting states: the one-sided "
            "limits differ in general; use limit_at_zero(rho, sigma, side)"
        )
    if alpha == 1:
        return umegaki(rho, sigma)
    _check_generic(alpha)
    return psi(rho, sigma, alpha, method) / (alpha * (alpha - 1.0))


def classical_alpha_divergence(p, q, alpha: float) -> float:
    """``(1 - sum p^a q^(1-a)) / (a (1 - a))`` for strictly positive probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValidationError("p and q must be 1-D arrays of equal length")
    if np.any(p <= 0) or np.any(q <= 0):
        raise DomainError("classical alpha-divergence needs strictly positive entries")
    if abs(p.sum() - 1) > 1e-10 or abs(q.sum() - 1) > 1e-10:
        raise ValidationError("p and q must sum to 1")
    if alpha in (0, 1):
        raise DomainError("classical alpha-divergence needs alpha outside {0, 1}")
    return float((1.0 - np.sum(p**alpha * q ** (1.0 - alpha))) / (alpha * (1.0 - alpha)))


def classical_psi(p, q, alpha: float) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.log(np.sum(p**alpha * q ** (1.0 - alpha))))


def von_neumann_entropy(state: DensityState) -> float:
    p = state.eigenvalues
    return float(-np.sum(p * np.log(p)))


def zero_limit_bounds(rho: DensityState, sigma: DensityState) -> tuple:
    """``(-log mu - H(sigma), -log lam - H(sigma))`` with lam, mu the extreme eigenvalues of rho.

    Every accumulation point of ``D_alpha`` as alpha -> 0 lies in this interval.
    """
    lam, mu = rho.eigenvalues[0], rho.eigenvalues[-1]
    h = von_neumann_entropy(sigma)
    return (-np.log(mu) - h, -np.log(lam) - h)


@dataclass(frozen=True)
class LimitEstimate:
    value: float
    error: float
    alphas: tuple
    sequence: tuple


def limit_at_zero(
    rho: DensityState,
    sigma: DensityState,
    side: str,
    k_min: int = 6,
    k_max: int = 16,
    max_error: float = 1e-6,
) -> LimitEstimate:
    """One-sided limit of ``D_alpha`` as alpha -> 0 from `side` ("above" or "below").

    Evaluates ``D_alpha`` on ``alpha_k = +-2^-k`` and applies two rounds of
    Richardson extrapolation (3-term stencils, ratio 2).  The error estimate
    is the spread of the last two extrapolants.
    """
    _check_pair(rho, sigma)
    if side not in ("above", "below"):
        raise ValidationError(f"side must be 'above' or 'below', got {side!r}")
    if k_max - k_min < 3:
        raise ValidationError("need at least four points for the extrapolation")
    sign = 1.0 if side == "above" else -1.0
    alphas = tuple(sign * 2.0 ** (-k) for k in range(k_min, k_max + 1))
    d = np.array([alpha_divergence(rho, sigma, a) for a in alphas])
    r1 = 2.0 * d[1:] - d[:-1]
    r2 = (4.0 * r1[1:] - r1[:-1]) / 3.0
    value = float(r2[-1])
    error = float(abs(r2[-1] - r2[-2]))
    if not np.isfinite(value) or error > max_error * (1.0 + abs(value)):
        raise NumericalError(
            f"extrapolation did not settle (estimate {value!r}, spread {error:.3e})",
            residual=error,
            sequence=tuple(d),
        )
    return LimitEstimate(value, error, alphas, tuple(float(x) for x in d))


def appendix_a_pair() -> tuple:
    """The qubit pair whose one-sided limits at alpha = 0 differ."""
    rho = DensityState(np.array([[0.5, 0.25], [0.25, 0.5]], dtype=complex))
    sigma = DensityState(np.diag([0.75, 0.25]).astype(complex))
    return rho, sigma


def appendix_a_eigenvalues(alpha: float) -> np.ndarray:
    """Closed-form eigenvalues of the sandwiched operator for :func:`appendix_a_pair`, ascending."""
    r = 3.0 ** (1.0 / alpha)
    root = np.sqrt(9.0 - 3.0 * r + r * r)
    pref = 1.0 / (3.0 * 4.0 ** (1.0 / alpha))
    return np.array([pref * (3.0 + r - root), pref * (3.0 + r + root)])


def pinched_divergence(rho: DensityState, sigma: DensityState, alpha: float) -> float:
    """``D_alpha(E_sigma(rho) || sigma)``, the classical lower bound used for positivity."""
    return alpha_divergence(DensityState(pinching(sigma, rho.op)), sigma, alpha)
