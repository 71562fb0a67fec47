"""Metric, dual connections and curvature induced by the rescaled divergence.

Two independent routes are kept side by side:

* closed forms built from spectral kernels and Frechet derivatives
  (:func:`metric`, :func:`metric_matrix`, :func:`connections_closed_form`);
* Eguchi's construction, i.e. mixed finite differences of the scalar
  divergence with the two slots perturbed independently
  (:func:`metric_eguchi`, :func:`connections_eguchi`).

Coordinates are the affine charts of :mod:`rgl.states`, so coordinate vector
fields have constant m-representations (the chart basis matrices).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from rgl.divergences import alpha_divergence
from rgl.errors import DomainError, NumericalError, RangeError, ValidationError
from rgl.matrix import first_divided_differences, power, second_divided_differences, log_function
from rgl.states import DensityState, StateChart, TangentVector, FAITHFUL_FLOOR

SERIES_CUTOFF = 1e-4
METRIC_STEP = 1e-3
CONNECTION_STEP = 5e-3
CURVATURE_STEP = 5e-3
MAX_CONDITION = 1e8
STEP_TO_EIGENVALUE = 1.0 / 20.0


# ---------------------------------------------------------------------------
# kernel family


def _log_e(y):
    """log of E(y) = (e^y - 1) / y, E(0) = 1, stable for all real y."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    small = np.abs(y) < SERIES_CUTOFF
    ys = y[small]
    out[small] = np.log1p(ys / 2 + ys**2 / 6 + ys**3 / 24)
    pos = (~small) & (y > 0)
    yp = y[pos]
    out[pos] = yp + np.log(-np.expm1(-yp)) - np.log(yp)
    neg = (~small) & (y < 0)
    yn = y[neg]
    out[neg] = np.log(-np.expm1(yn)) - np.log(-yn)
    return out


@dataclass(frozen=True)
class KernelFamily:
    """The kernel ``f_beta(t) = ((beta-1)/beta) (t^beta - 1) / (t^(beta-1) - 1)``.

    The metric of ``D_alpha`` uses ``beta = 1 / alpha``.  Written as
    ``E(beta log t) / E((beta - 1) log t)`` with ``E(y) = (e^y - 1)/y`` the
    formula is continuous in beta and t, so ``beta in {0, 1}`` and ``t = 1``
    need no special casing.
    """

    beta: float

    @classmethod
    def from_alpha(cls, alpha: float) -> "KernelFamily":
        if alpha == 0:
            raise DomainError("alpha = 0 has no kernel function")
        if np.isinf(alpha):
            return cls(0.0)
        return cls(1.0 / alpha)

    @property
    def alpha(self) -> float:
        return np.inf if self.beta == 0 else 1.0 / self.beta

    def __call__(self, t):
        return kernel_eval(self, t)


def kernel_eval(family: KernelFamily, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError("kernel functions are defined for t > 0 only")
    x = np.log(t_arr)
    b = family.beta
    val = np.exp(_log_e(b * x) - _log_e((b - 1.0) * x))
    if np.ndim(t) == 0:
        return float(val)
    return val


def kernel_mean(family: KernelFamily, p: np.ndarray) -> np.ndarray:
    """Matrix ``M[i, j] = p_j f(p_i / p_j)`` (symmetric because ``f(t) = t f(1/t)``)."""
    p = np.asarray(p, dtype=float)
    t = p[:, None] / p[None, :]
    return p[None, :] * kernel_eval(family, t)


def petz_bounds(t):
    """Lower and upper envelopes ``2t/(1+t)`` and ``(1+t)/2`` of operator monotone kernels."""
    t = np.asarray(t, dtype=float)
    return 2 * t / (1 + t), (1 + t) / 2


# ---------------------------------------------------------------------------
# metric


def _mrep(x) -> np.ndarray:
    return x.mrep if isinstance(x, TangentVector) else np.asarray(x, dtype=complex)


def e_representation(rho: DensityState, x, family: KernelFamily) -> np.ndarray:
    """e-representation: divide the m-representation entrywise by ``p_j f(p_i/p_j)`` in rho's eigenbasis."""
    p, u = rho.spectral
    m = kernel_mean(family, p)
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise NumericalError("kernel produced a non-finite or non-positive mean")
    xt = u.conj().T @ _mrep(x) @ u
    out = u @ (xt / m) @ u.conj().T
    herm = float(np.max(np.abs(out - out.conj().T)))
    if herm > 1e-8 * (1 + np.max(np.abs(out))):
        raise NumericalError(f"e-representation is not Hermitian (residual {herm:.2e})", residual=herm)
    return 0.5 * (out + out.conj().T)


def metric(rho: DensityState, x, y, alpha: float) -> float:
    """``g_rho(X, Y) = Tr(X^(e) Y^(m))`` with the kernel of ``D_alpha``."""
    fam = KernelFamily.from_alpha(alpha)
    xe = e_representation(rho, x, fam)
    return float(np.real(np.trace(xe @ _mrep(y))))


def metric_matrix(rho: DensityState, ch: StateChart, alpha: float) -> np.ndarray:
    fam = KernelFamily.from_alpha(alpha)
    p, u = rho.spectral
    k = 1.0 / kernel_mean(fam, p)
    bt = np.einsum("ab,ibc,cd->iad", u.conj().T, ch.basis, u)
    g = np.real(np.einsum("iab,ab,jba->ij", bt, k, bt))
    return 0.5 * (g + g.T)


# ---------------------------------------------------------------------------
# Eguchi finite differences


def _perturbed(rho: DensityState, ch: StateChart, theta: np.ndarray) -> DensityState:
    op = rho.op + ch.combine(theta)
    lmin = np.linalg.eigvalsh(op)[0]
    if lmin <= FAITHFUL_FLOOR:
        raise RangeError(f"finite-difference stencil leaves the state space (min eigenvalue {lmin:.2e})", lmin)
    return DensityState(op)


_STENCILS = {
    1: ((1.0, 0.5), (-1.0, -0.5)),  # (offset / h, weight * h^order)
    2: ((1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)),
}


def _mixed_partial(func, m: int, orders: dict, h: float) -> float:
    """Central-difference mixed partial of ``func(vector)`` at 0.

    `orders` maps a variable index to its derivative order (1 or 2); the
    stencil is the tensor product of one-dimensional central stencils.
    """
    items = list(orders.items())
    total_order = sum(o for _, o in items)
    acc = 0.0
    grids = [[]]
    for var, order in items:
        grids = [g + [(var, off, w)] for g in grids for off, w in _STENCILS[order]]
    for g in grids:
        x = np.zeros(m)
        weight = 1.0
        for var, off, w in g:
            x[var] += off * h
            weight *= w
        if weight != 0.0:
            acc += weight * func(x)
    return acc / h**total_order


def _richardson(est, h: float, order: int = 2):
    """One Richardson halving for an O(h^2) central scheme; returns (value, spread)."""
    coarse = est(h)
    fine = est(h / 2)
    value = fine + (fine - coarse) / (2**order - 1)
    return value, np.max(np.abs(np.asarray(fine) - np.asarray(coarse)))


def _step(rho: DensityState, h: float) -> float:
    """Nominal step capped at a fixed fraction of the smallest eigenvalue,
    since the stencil's truncation error grows like ``(h / lambda_min)^4``."""
    return min(h, STEP_TO_EIGENVALUE * float(rho.eigenvalues[0]))


def _with_shrink(est, h):
    try:
        return _richardson(est, h)
    except RangeError:
        return _richardson(est, h / 4)


def _two_slot(rho: DensityState, ch: StateChart, alpha: float):
    m = ch.size

    def f(z):
        return alpha_divergence(_perturbed(rho, ch, z[:m]), _perturbed(rho, ch, z[m:]), alpha)

    return f


def metric_eguchi(rho: DensityState, ch: StateChart, i: int, j: int, alpha: float, h: float = METRIC_STEP) -> float:
    """``d_i d_j D_alpha(rho_theta || rho)`` at theta = 0, both derivatives on the first slot."""
    f = _two_slot(rho, ch, alpha)
    orders = {i: 2} if i == j else {i: 1, j: 1}
    value, _ = _with_shrink(lambda hh: _mixed_partial(f, 2 * ch.size, orders, hh), _step(rho, h))
    return float(value)


def metric_eguchi_directional(rho: DensityState, x, y, alpha: float, h: float = METRIC_STEP) -> float:
    """Eguchi metric along arbitrary traceless directions X, Y (two-element chart)."""
    basis = np.array([_mrep(x), _mrep(y)])
    ch = StateChart(basis)
    f = _two_slot(rho, ch, alpha)
    value, _ = _with_shrink(lambda hh: _mixed_partial(f, 4, {0: 1, 1: 1}, hh), _step(rho, h))
    return float(value)


def metric_matrix_eguchi(rho: DensityState, ch: StateChart, alpha: float, h: float = METRIC_STEP) -> np.ndarray:
    m = ch.size
    g = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            g[i, j] = g[j, i] = metric_eguchi(rho, ch, i, j, alpha, h)
    return g


# ---------------------------------------------------------------------------
# connections


@dataclass(frozen=True, eq=False)
class ConnectionCoefficients:
    """``gamma[i, j, k] = g(nabla_{d_i} d_j, d_k)`` in a chart, with the metric in the same chart."""

    gamma: np.ndarray
    metric: np.ndarray
    which: str
    alpha: float
    method: str = "closed"

    def second_kind(self) -> np.ndarray:
        """``C[l, i, j] = Gamma^l_{ij}``."""
        cond = np.linalg.cond(self.metric)
        if cond > MAX_CONDITION:
            raise NumericalError(f"metric matrix ill-conditioned (cond = {cond:.2e})", residual=cond)
        return np.einsum("lm,ijm->lij", np.linalg.inv(self.metric), self.gamma)

    def torsion(self) -> float:
        return float(np.max(np.abs(self.gamma - self.gamma.transpose(1, 0, 2))))

    def to_json(self) -> dict:
        return {
            "which": self.which,
            "alpha": self.alpha,
            "method": self.method,
            "gamma": {"shape": list(self.gamma.shape), "data": self.gamma.ravel().tolist()},
            "metric": {"shape": list(self.metric.shape), "data": self.metric.ravel().tolist()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConnectionCoefficients":
        def arr(d):
            return np.asarray(d["data"], dtype=float).reshape(d["shape"])

        return cls(arr(doc["gamma"]), arr(doc["metric"]), doc["which"], float(doc["alpha"]), doc.get("method", "closed"))


def connections_eguchi(rho: DensityState, ch: StateChart, alpha: float, h: float = CONNECTION_STEP):
    """Primal and dual coefficients from third mixed differences of ``D_alpha``.

    ``Gamma_{ij,k} = -d_i d_j (slot 1) d_k (slot 2) D``, ``Gamma*_{ij,k} = -d_k (slot 1) d_i d_j (slot 2) D``.
    """
    m = ch.size
    f = _two_slot(rho, ch, alpha)

    def est(hh):
        prim = np.empty((m, m, m))
        dual = np.empty((m, m, m))
        for i in range(m):
            for j in range(i, m):
                ij = {i: 2} if i == j else {i: 1, j: 1}
                for k in range(m):
                    o1 = dict(ij)
                    o1[m + k] = 1
                    prim[i, j, k] = prim[j, i, k] = -_mixed_partial(f, 2 * m, o1, hh)
                    o2 = {m + a: o for a, o in ij.items()}
                    o2[k] = 1
                    dual[i, j, k] = dual[j, i, k] = -_mixed_partial(f, 2 * m, o2, hh)
        return np.stack([prim, dual])

    (prim, dual), _ = _with_shrink(est, _step(rho, h))
    g = metric_matrix(rho, ch, alpha)
    return (
        ConnectionCoefficients(prim, g, "primal", alpha, "eguchi"),
        ConnectionCoefficients(dual, g, "dual", alpha, "eguchi"),
    )


def _second_frechet_eig(t2, x, y):
    return np.einsum("ikj,ik,kj->ij", t2, x, y) + np.einsum("ikj,ik,kj->ij", t2, y, x)


def _closed_form_tensors(rho: DensityState, ch: StateChart, alpha: float):
    """Return ``(T, dg)`` with ``T[i,j,k] = D_alpha((ijk)_rho || sigma)|_{sigma=rho}`` and
    ``dg[k,i,j] = d_k g_ij``; both connections follow from these."""
    p, u = rho.spectral
    m = ch.size
    b = np.einsum("ab,ibc,cd->iad", u.conj().T, ch.basis, u)
    if alpha == 1:
        f = log_function()
        l1 = first_divided_differences(f, p)
        t2 = second_divided_differences(f, p)
        d2 = np.array([[_second_frechet_eig(t2, b[i], b[j]) for j in range(m)] for i in range(m)])
        # dg[k,i,j] = Tr(b_i D^2 log(rho)[b_j, b_k]); T = Tr(b_k D^2 log[b_i, b_j])
        t = np.real(np.einsum("kab,ijba->ijk", b, d2))
        return t, t.transpose(2, 0, 1).copy()
    c = (1.0 - alpha) / (2.0 * alpha)
    f = power(alpha - 1.0)
    a = p ** (1.0 / alpha)
    l1 = first_divided_differences(f, a)
    t2 = second_divided_differences(f, a)
    lc = first_divided_differences(power(c), p)
    la = first_divided_differences(power(1.0 / alpha), p)
    pc = p**c
    outer_c = np.outer(pc, pc)
    bb = outer_c[None] * b  # B_X = rho^c b_X rho^c
    mm = l1[None] * bb  # M_X = Df(A)[B_X]

    t = np.empty((m, m, m))
    for i in range(m):
        for k in range(i, m):
            d2 = _second_frechet_eig(t2, bb[i], bb[k])
            row = np.real(np.einsum("ab,jba->j", d2, bb))
            for j in range(m):
                t[i, j, k] = t[k, j, i] = row[j]

    dg = np.empty((m, m, m))
    for k in range(m):
        drc = lc * b[k]  # D rho^c [b_k]
        za = la * b[k]  # D A [b_k]
        for i in range(m):
            zb = drc @ (b[i] * pc[None, :]) + (pc[:, None] * b[i]) @ drc
            zm = _second_frechet_eig(t2, bb[i], za) + l1 * zb
            zf = drc @ (mm[i] * pc[None, :]) + (pc[:, None] * mm[i]) @ drc + outer_c * zm
            dg[k, i, :] = np.real(np.einsum("ab,jba->j", zf, b)) / (alpha - 1.0)
    return t / (alpha - 1.0), dg


def connections_closed_form(rho: DensityState, ch: StateChart, alpha: float):
    """Primal and dual coefficients from the Frechet-derivative closed forms at ``sigma = rho``.

    With the divergence third derivative ``T_ijk`` and metric derivative ``d_k g_ij``:
    ``Gamma_{ij,k} = T_ijk - d_k g_ij`` and ``Gamma*_{ij,k} = d_i g_jk + d_j g_ik - T_ijk``.
    """
    if alpha == 0:
        raise DomainError("alpha = 0 is excluded")
    t, dg = _closed_form_tensors(rho, ch, alpha)
    prim = t - dg.transpose(1, 2, 0)
    dual = dg + dg.transpose(1, 0, 2) - t
    g = metric_matrix(rho, ch, alpha)
    return (
        ConnectionCoefficients(prim, g, "primal", alpha, "closed"),
        ConnectionCoefficients(dual, g, "dual", alpha, "closed"),
    )


def metric_derivative_fd(rho: DensityState, ch: StateChart, alpha: float, h: float = METRIC_STEP) -> np.ndarray:
    """``dg[k, i, j] = d_k g_ij`` by central differences of the closed-form metric."""
    m = ch.size

    def est(hh):
        out = np.empty((m, m, m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = hh
            gp = metric_matrix(_perturbed(rho, ch, e), ch, alpha)
            gm = metric_matrix(_perturbed(rho, ch, -e), ch, alpha)
            out[k] = (gp - gm) / (2 * hh)
        return out

    value, _ = _with_shrink(est, _step(rho, h))
    return value


def duality_residuals(rho: DensityState, ch: StateChart, alpha: float, connections=None, h: float = METRIC_STEP) -> np.ndarray:
    """``|d_i g_jk - Gamma_{ij,k} - Gamma*_{ik,j}|`` for every index triple."""
    if connections is None:
        connections = connections_closed_form(rho, ch, alpha)
    prim, dual = connections
    dg = metric_derivative_fd(rho, ch, alpha, h)
    return np.abs(dg - prim.gamma - dual.gamma.transpose(0, 2, 1))


def duality_residual(rho: DensityState, ch: StateChart, alpha: float, i: int, j: int, k: int, **kw) -> float:
    return float(duality_residuals(rho, ch, alpha, **kw)[i, j, k])


# ---------------------------------------------------------------------------
# curvature


@dataclass
class CurvatureReport:
    alpha: float
    which: str
    max_abs_riemann: float
    step: float
    richardson_spread: float
    riemann: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> dict:
        doc = {
            "alpha": self.alpha,
            "which": self.which,
            "max_abs_riemann": self.max_abs_riemann,
            "step": self.step,
            "richardson_spread": self.richardson_spread,
        }
        if self.riemann is not None:
            doc["riemann"] = {"shape": list(self.riemann.shape), "data": self.riemann.ravel().tolist()}
        return doc


def _christoffel(rho, ch, alpha, which):
    prim, dual = connections_closed_form(rho, ch, alpha)
    return (prim if which == "primal" else dual).second_kind()


def riemann_tensor(rho: DensityState, ch: StateChart, alpha: float, which: str = "primal", h: float = CURVATURE_STEP):
    """``R[l, k, i, j] = R^l_{kij}`` from closed-form Christoffel symbols and one central-difference layer."""
    if which not in ("primal", "dual"):
        raise ValidationError(f"which must be 'primal' or 'dual', got {which!r}")
    m = ch.size
    c0 = _christoffel(rho, ch, alpha, which)

    def est(hh):
        dc = np.empty((m,) + c0.shape)  # dc[i, l, j, k] = d_i Gamma^l_{jk}
        for i in range(m):
            e = np.zeros(m)
            e[i] = hh
            cp = _christoffel(_perturbed(rho, ch, e), ch, alpha, which)
            cm = _christoffel(_perturbed(rho, ch, -e), ch, alpha, which)
            dc[i] = (cp - cm) / (2 * hh)
        return dc

    h = _step(rho, h)
    dc, spread = _with_shrink(est, h)
    r = (
        np.einsum("iljk->lkij", dc)
        - np.einsum("jlik->lkij", dc)
        + np.einsum("lim,mjk->lkij", c0, c0)
        - np.einsum("ljm,mik->lkij", c0, c0)
    )
    return r, float(spread), h


def curvature(rho: DensityState, ch: StateChart, alpha: float, which: str = "primal", h: float = CURVATURE_STEP, keep_tensor: bool = False) -> CurvatureReport:
    r, spread, used = riemann_tensor(rho, ch, alpha, which, h)
    return CurvatureReport(alpha, which, float(np.max(np.abs(r))), used, spread, r if keep_tensor else None)


# ---------------------------------------------------------------------------
# classical (commutative) oracles


def _diag_directions(ch: StateChart) -> np.ndarray:
    d = np.real(np.array([np.diag(b) for b in ch.basis]))
    if not np.allclose(ch.basis, np.array([np.diag(x) for x in d]), atol=1e-14):
        raise ValidationError("classical oracles need a chart of diagonal directions")
    return d


def classical_fisher(p, ch: StateChart) -> np.ndarray:
    d = _diag_directions(ch)
    return np.einsum("ia,ja,a->ij", d, d, 1.0 / np.asarray(p, dtype=float))


def classical_connection(p, ch: StateChart, a: float) -> np.ndarray:
    """Coefficients ``((a - 1)/2) sum d_i d_j d_k / p^2`` of the classical a-connection in mixture coordinates.

    The labeling makes the primal connection of ``D_alpha`` the ``(2 alpha - 1)``-connection,
    so ``a = 1`` is the (flat) mixture connection here.
    """
    d = _diag_directions(ch)
    p = np.asarray(p, dtype=float)
    return 0.5 * (a - 1.0) * np.einsum("ia,ja,ka,a->ijk", d, d, d, 1.0 / p**2)


def classical_curvature(p, ch: StateChart, a: float) -> np.ndarray:
    """``R^l_{kij} = ((1 - a^2)/4) (g_jk delta^l_i - g_ik delta^l_j)`` on the probability simplex."""
    g = classical_fisher(p, ch)
    m = g.shape[0]
    eye = np.eye(m)
    return 0.25 * (1.0 - a * a) * (np.einsum("jk,li->lkij", g, eye) - np.einsum("ik,lj->lkij", g, eye))
