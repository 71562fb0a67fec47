"""Monte-Carlo experiments and counterexample searches.

Every experiment is a list of cells (one per parameter combination) and a
number of independent trials per cell.  A trial draws its inputs from a
Philox stream keyed by ``(master seed, cell index, trial index)``, evaluates
a pure function of those inputs and records a :class:`TrialOutcome`.
Positive ``margin`` always means the claimed inequality is violated, with
the tolerance already subtracted.

Counterexamples are stored with fully serialized inputs so they can be
re-verified from JSON alone (:meth:`ExperimentReport.reverify`).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from rgl.divergences import alpha_divergence, sandwiched_renyi
from rgl.errors import DomainError, NumericalError, RangeError, ValidationError
from rgl.geometry import KernelFamily, metric
from rgl.matrix import ScalarFunctionSpec, exp_function, log_function, majorizes, power
from rgl.states import (
    DensityState,
    QuantumChannel,
    apply_channel,
    channel_from_json,
    channel_to_json,
    haar_unitary,
    make_rng,
    matrix_from_json,
    matrix_to_json,
    measure_prepare_channel,
    pinching,
    pinching_fixed_point_check,
    random_channel,
    random_hermitian,
    random_positive,
    random_state,
)

MONOTONE_ATOL = 1e-9
METRIC_RTOL = 1e-8
DIVERGENCE_RTOL = 1e-8
DIVERGENCE_ATOL = 1e-14
POSITIVITY_ATOL = 1e-10
SPECTRA_ATOL = 1e-8
CONVEXITY_PREMISE = 1e-10
OUTPUT_FLOOR = 1e-9
MAX_RESAMPLES = 20
MAX_COUNTEREXAMPLES = 3
BLOCK = 256
REFINE_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# report types


@dataclass
class TrialOutcome:
    seed: list
    digest: str
    lhs: float
    rhs: float
    margin: float
    flags: dict = field(default_factory=dict)
    inputs: Optional[dict] = None

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.lhs, self.rhs, self.margin)):
            raise NumericalError(f"non-finite trial outcome ({self.lhs}, {self.rhs}, {self.margin})")

    @property
    def violated(self) -> bool:
        return self.margin > 0


def input_digest(inputs: dict) -> str:
    blob = json.dumps(inputs, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class CellSummary:
    params: dict
    trials: int
    violations: int = 0
    worst_margin: float = -np.inf
    worst_trial: Optional[int] = None
    degenerate: int = 0
    errors: int = 0
    lanes: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    claim: str
    master_seed: int
    trials: int
    cells: list
    counterexamples: list
    report_only: bool = False

    @property
    def grid(self) -> list:
        return [c.params for c in self.cells]

    @property
    def total_violations(self) -> int:
        return sum(c.violations for c in self.cells)

    def cell(self, **params) -> CellSummary:
        for c in self.cells:
            if all(c.params.get(k) == v for k, v in params.items()):
                return c
        raise KeyError(params)

    def to_json(self) -> dict:
        cells = []
        for c in self.cells:
            d = asdict(c)
            d["worst_margin"] = None if not np.isfinite(c.worst_margin) else c.worst_margin
            cells.append(d)
        return {
            "claim": self.claim,
            "master_seed": self.master_seed,
            "trials": self.trials,
            "report_only": self.report_only,
            "cells": cells,
            "counterexamples": self.counterexamples,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentReport":
        cells = []
        for d in doc["cells"]:
            d = dict(d)
            if d.get("worst_margin") is None:
                d["worst_margin"] = -np.inf
            cells.append(CellSummary(**d))
        rep = cls(doc["claim"], doc["master_seed"], doc["trials"], cells, list(doc["counterexamples"]), doc.get("report_only", False))
        return rep

    def reverify(self) -> float:
        """Re-evaluate every counterexample from its serialized inputs.

        Returns the largest deviation from the recorded margin and raises
        :class:`NumericalError` if a stored counterexample no longer violates.
        """
        worst = 0.0
        for cx in self.counterexamples:
            outcome = evaluate(self.claim, cx["params"], cx["inputs"])
            if outcome[2] <= 0:
                raise NumericalError(f"counterexample {cx['digest'][:12]} does not re-verify", residual=outcome[2])
            if input_digest(cx["inputs"]) != cx["digest"]:
                raise NumericalError("counterexample digest mismatch")
            worst = max(worst, abs(outcome[2] - cx["margin"]))
        return worst


# ---------------------------------------------------------------------------
# serialization helpers


def _mat(a) -> dict:
    return matrix_to_json(a)


def _unmat(doc) -> np.ndarray:
    return matrix_from_json(doc)


def _function_params(f) -> dict:
    if isinstance(f, KernelFamily):
        return {"beta": f.beta}
    if isinstance(f, ScalarFunctionSpec) and f.kind in ("power", "exp", "log"):
        d = {"function": f.kind}
        if f.kind == "power":
            d["exponent"] = f.exponent
        return d
    raise ValidationError("operator_monotone_test needs a KernelFamily or a power/exp/log function")


def _function_from_params(params: dict):
    if "beta" in params:
        return KernelFamily(params["beta"])
    kind = params["function"]
    if kind == "power":
        return power(params["exponent"])
    return exp_function() if kind == "exp" else log_function()


def _apply_scalar(f, a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    if isinstance(f, KernelFamily):
        fw = f(w)
    else:
        f.check_domain(w)
        fw = f(w)
    return (v * fw) @ v.conj().T


# ---------------------------------------------------------------------------
# evaluators: pure functions of (params, serialized inputs) -> (lhs, rhs, margin)


def _eval_operator_monotone(params, inputs):
    f = _function_from_params(params)
    a = _unmat(inputs["A"])
    b = a + _unmat(inputs["P"])
    diff = _apply_scalar(f, b) - _apply_scalar(f, a)
    lam = float(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))[0])
    return lam, 0.0, -lam - MONOTONE_ATOL


def _eval_metric(params, inputs):
    alpha = params["alpha"]
    rho = DensityState(_unmat(inputs["rho"]))
    x = _unmat(inputs["X"])
    gamma = channel_from_json(inputs["channel"])
    out = apply_channel(gamma, rho)
    if out.eigenvalues[0] < OUTPUT_FLOOR:
        raise RangeError("channel output below faithfulness floor", out.eigenvalues[0])
    gx = apply_channel(gamma, x)
    lhs = metric(rho, x, x, alpha)
    rhs = metric(out, gx, gx, alpha)
    return lhs, rhs, rhs - lhs - METRIC_RTOL * abs(lhs)


def _divergence_fn(which: str):
    if which == "rescaled":
        return alpha_divergence
    if which == "sandwiched":
        return lambda r, s, a: sandwiched_renyi(r, s, a) if a != 1 else alpha_divergence(r, s, 1.0)
    raise ValidationError(f"which must be 'rescaled' or 'sandwiched', got {which!r}")


def _eval_divergence(params, inputs):
    alpha = params["alpha"]
    fn = _divergence_fn(params["which"])
    rho = DensityState(_unmat(inputs["rho"]))
    sigma = DensityState(_unmat(inputs["sigma"]))
    gamma = channel_from_json(inputs["channel"])
    r_out, s_out = apply_channel(gamma, rho), apply_channel(gamma, sigma)
    if min(r_out.eigenvalues[0], s_out.eigenvalues[0]) < OUTPUT_FLOOR:
        raise RangeError("channel output below faithfulness floor")
    lhs = fn(rho, sigma, alpha)
    rhs = fn(r_out, s_out, alpha)
    return lhs, rhs, rhs - lhs - DIVERGENCE_RTOL * abs(lhs) - DIVERGENCE_ATOL


def _eval_positivity(params, inputs):
    alpha = params["alpha"]
    rho = DensityState(_unmat(inputs["rho"]))
    sigma = DensityState(_unmat(inputs["sigma"]))
    d = alpha_divergence(rho, sigma, alpha)
    pinched = alpha_divergence(DensityState(pinching(sigma, rho.op)), sigma, alpha)
    margins = [-d - POSITIVITY_ATOL, pinched - d - DIVERGENCE_RTOL * abs(d) - POSITIVITY_ATOL]
    if abs(d) < POSITIVITY_ATOL:
        # near-zero divergence must come from (near-)equal states
        gap = float(np.max(np.abs(rho.op - sigma.op)))
        margins.append(gap - 1e-4)
    return d, pinched, max(margins)


def _eval_convexity(params, inputs):
    """Strict convexity of ``t -> 1/t`` along the pinching, in quantitative form.

    With ``m = min f''`` on the spectral range of A, strong convexity gives
    ``Tr f(A) - Tr f(E(A)) >= (m/2) ||A - E(A)||_F^2`` (the linear term
    vanishes because ``f'(E(A))`` is block diagonal).  Hence a vanishing gap
    forces ``A = E(A)`` and equal spectra, with tolerances that scale as the
    square root of the gap.
    """
    sigma = DensityState(_unmat(inputs["sigma"]))
    a = _unmat(inputs["A"])
    b = pinching(sigma, a)
    la = np.linalg.eigvalsh(a)
    lb = np.linalg.eigvalsh(b)
    tra, trb = float(np.sum(1.0 / la)), float(np.sum(1.0 / lb))
    scale = max(1.0, abs(tra))
    gap = tra - trb
    margins = [-gap - CONVEXITY_PREMISE * scale]  # Tr f(E(A)) <= Tr f(A)
    m = 2.0 / la[-1] ** 3
    bound = np.sqrt(2.0 * (max(gap, 0.0) + 1e-14 * scale) / m) + SPECTRA_ATOL
    check = pinching_fixed_point_check(sigma, a, atol=SPECTRA_ATOL)
    margins.append(check.spectral_residual - bound)
    margins.append(check.operator_residual - bound)
    return tra, trb, max(margins)


def _eval_pinching(params, inputs):
    sigma = DensityState(_unmat(inputs["sigma"]))
    a = _unmat(inputs["A"])
    b = pinching(sigma, a)
    la, lb = np.linalg.eigvalsh(a), np.linalg.eigvalsh(b)
    margin = -1.0
    if not majorizes(la, lb):
        margin = 1.0
    check = pinching_fixed_point_check(sigma, a)
    if check.lemma_violation:
        margin = max(margin, check.operator_residual)
    return float(np.max(np.abs(np.sort(la) - np.sort(lb)))), check.operator_residual, margin


_EVALUATORS: dict = {
    "operator-monotone": _eval_operator_monotone,
    "metric-monotonicity": _eval_metric,
    "divergence-monotonicity": _eval_divergence,
    "divergence-monotonicity-conjecture": _eval_divergence,
    "positivity": _eval_positivity,
    "strict-convexity-spectra": _eval_convexity,
    "pinching-lemmas": _eval_pinching,
}


def evaluate(claim: str, params: dict, inputs: dict):
    try:
        fn = _EVALUATORS[claim]
    except KeyError:
        raise ValidationError(f"unknown claim {claim!r}") from None
    return fn(params, inputs)


# ---------------------------------------------------------------------------
# samplers: (rng, params, trial index) -> (inputs, flags)


def _traceless(x: np.ndarray) -> np.ndarray:
    return x - np.trace(x) / x.shape[0] * np.eye(x.shape[0])


def _sample_operator_monotone(rng, params, idx):
    n = params["dim"]
    a = random_positive(n, rng, spread=rng.uniform(1.0, 8.0))
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    scale = np.linalg.norm(a, 2) * 10.0 ** rng.uniform(-4, 0)
    if idx % 2:
        p = scale * np.outer(v, v.conj()) / np.vdot(v, v).real
    else:
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        p = g @ g.conj().T
        p *= scale / np.linalg.norm(p, 2)
    return {"A": _mat(a), "P": _mat(p)}, {"rank1": bool(idx % 2)}


CHANNEL_LANES = ("random", "rank2", "measure", "prepare")


def _lane_channel(rng, n: int, lane: str):
    """Draw a channel; for the prepare lane also returns the measured basis
    so the input can be chosen diagonal in it."""
    if lane == "random":
        return random_channel(n, seed=rng), None
    if lane == "rank2":
        return random_channel(n, rank=2, seed=rng), None
    u = haar_unitary(n, rng)
    if lane == "measure":
        return measure_prepare_channel(u, [np.diag(np.eye(n)[i]).astype(complex) for i in range(n)]), None
    floor = 10.0 ** rng.uniform(-8, -3)
    taus = [random_state(n, rng, floor=min(floor, 0.5 / n)).op for _ in range(n)]
    return measure_prepare_channel(u, taus), u


def _commuting_pair(rng, n, u):
    q = rng.dirichlet(np.ones(n))
    q = 0.9 * q + 0.1 / n
    d = _traceless(np.diag(rng.standard_normal(n)).astype(complex))
    return u @ np.diag(q) @ u.conj().T, u @ d @ u.conj().T


def _sample_metric(rng, params, idx):
    n = params["dim"]
    lane = CHANNEL_LANES[idx % len(CHANNEL_LANES)]
    gamma, u = _lane_channel(rng, n, lane)
    if u is None:
        rho = random_state(n, rng, floor=10.0 ** rng.uniform(-6, -1.5)).op
        x = _traceless(random_hermitian(n, rng))
    else:
        rho, x = _commuting_pair(rng, n, u)
    return {"rho": _mat(rho), "X": _mat(x), "channel": channel_to_json(gamma)}, {"lane": lane}


def _sample_divergence(rng, params, idx):
    n = params["dim"]
    lane = CHANNEL_LANES[idx % len(CHANNEL_LANES)]
    gamma, u = _lane_channel(rng, n, lane)
    if u is None:
        sigma = random_state(n, rng, floor=10.0 ** rng.uniform(-6, -1.5)).op
        x = _traceless(random_hermitian(n, rng))
    else:
        sigma, x = _commuting_pair(rng, n, u)
    if (idx // len(CHANNEL_LANES)) % 4 == 3:
        rho = random_state(n, rng, floor=1e-3).op if u is None else _commuting_pair(rng, n, u)[0]
        near = False
    else:
        # near pair: rho = sigma + eps X inside the state space
        lmin = np.linalg.eigvalsh(sigma)[0]
        eps = 0.5 * lmin / np.linalg.norm(x, 2) * 10.0 ** rng.uniform(-3, 0)
        rho = sigma + eps * x
        near = True
    return {"rho": _mat(rho), "sigma": _mat(sigma), "channel": channel_to_json(gamma)}, {"lane": lane, "near": near}


def _sample_positivity(rng, params, idx):
    n = params["dim"]
    sigma = random_state(n, rng, floor=1e-4).op
    kind = idx % 10
    if kind == 0:
        rho = sigma.copy()
    elif kind == 1:
        # commuting with sigma, exercises the classical branch
        w, v = np.linalg.eigh(sigma)
        q = rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n
        rho = (v * q) @ v.conj().T
    else:
        rho = random_state(n, rng, floor=1e-4).op
    return {"rho": _mat(rho), "sigma": _mat(sigma)}, {"kind": int(kind)}


def _degenerate_state(rng, n):
    """Random state with a repeated eigenvalue (non-trivial pinching blocks)."""
    u = haar_unitary(n, rng)
    k = int(rng.integers(1, n))
    lam = np.concatenate([np.full(k, rng.uniform(0.2, 1.0)), rng.uniform(0.2, 1.0, n - k)])
    lam /= lam.sum()
    return (u * lam) @ u.conj().T


def _sample_spectral_lemma(rng, params, idx):
    n = params["dim"]
    sigma = _degenerate_state(rng, n) if idx % 3 == 2 else random_state(n, rng, floor=1e-3).op
    if idx % 4 == 0:
        # A commuting with sigma: premise holds and so must the conclusion
        w, v = np.linalg.eigh(sigma)
        a = (v * 10.0 ** rng.uniform(-1, 1, n)) @ v.conj().T
        commuting = True
    else:
        a = random_positive(n, rng, spread=2.0)
        commuting = False
    return {"sigma": _mat(sigma), "A": _mat(a)}, {"commuting": commuting}


_SAMPLERS: dict = {
    "operator-monotone": _sample_operator_monotone,
    "metric-monotonicity": _sample_metric,
    "divergence-monotonicity": _sample_divergence,
    "divergence-monotonicity-conjecture": _sample_divergence,
    "positivity": _sample_positivity,
    "strict-convexity-spectra": _sample_spectral_lemma,
    "pinching-lemmas": _sample_spectral_lemma,
}


# ---------------------------------------------------------------------------
# refinement


def _refine(claim, params, inputs, margin, steps: int = 12):
    """Shrink the witness while it still violates: halve P, or mix the channel toward the identity."""
    best = (inputs, margin)
    for _ in range(steps):
        cur = dict(best[0])
        if claim == "operator-monotone":
            cur["P"] = _mat(0.5 * _unmat(cur["P"]))
        elif "channel" in cur:
            gamma = channel_from_json(cur["channel"])
            if gamma.input_dim != gamma.output_dim:
                break
            cur["channel"] = channel_to_json(gamma.mix_with_identity(0.5))
        else:
            break
        try:
            _, _, m = evaluate(claim, params, cur)
        except (RangeError, DomainError, NumericalError, ValidationError):
            break
        if m < max(REFINE_FLOOR, 1e-3 * margin):
            break
        best = (cur, m)
    return best


# ---------------------------------------------------------------------------
# runner


def _run_trial(claim, params, master, cell, idx):
    rng = make_rng(master, cell, idx)
    sampler = _SAMPLERS[claim]
    resamples = 0
    while True:
        inputs, flags = sampler(rng, params, idx)
        try:
            lhs, rhs, margin = evaluate(claim, params, inputs)
            break
        except RangeError:
            resamples += 1
            if resamples > MAX_RESAMPLES:
                return None, "degenerate"
        except (DomainError, NumericalError):
            return None, "error"
    if resamples:
        flags = dict(flags, resampled=resamples)
    outcome = TrialOutcome([master, cell, idx], input_digest(inputs), lhs, rhs, margin, flags)
    if outcome.violated:
        outcome.inputs = inputs
    return outcome, None


def run_experiment(
    claim: str,
    grid: list,
    trials: int,
    seed: int = 0,
    threads: int = 1,
    stop_after: Optional[int] = None,
    refine: bool = True,
    report_only: bool = False,
) -> ExperimentReport:
    """Run `trials` trials for every parameter dict in `grid`.

    With `stop_after`, a cell stops at the end of the first block of trials in
    which it has collected that many violations; blocks are fixed-size, so the
    result does not depend on `threads`.
    """
    if claim not in _EVALUATORS:
        raise ValidationError(f"unknown claim {claim!r}")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    seed = int(seed)
    cells, cxs = [], []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for ci, params in enumerate(grid):
            summary = CellSummary(dict(params), 0)
            found = []
            for start in range(0, trials, BLOCK):
                idxs = range(start, min(trials, start + BLOCK))
                call = lambda i: _run_trial(claim, params, seed, ci, i)  # noqa: E731
                results = list(pool.map(call, idxs)) if pool else [call(i) for i in idxs]
                for i, (out, status) in zip(idxs, results):
                    summary.trials += 1
                    if out is None:
                        if status == "degenerate":
                            summary.degenerate += 1
                        else:
                            summary.errors += 1
                        continue
                    lane = out.flags.get("lane")
                    if lane is not None:
                        summary.lanes[lane] = summary.lanes.get(lane, 0) + 1
                    if out.margin > summary.worst_margin:
                        summary.worst_margin, summary.worst_trial = out.margin, i
                    if out.violated:
                        summary.violations += 1
                        if len(found) < MAX_COUNTEREXAMPLES:
                            found.append(out)
                if stop_after is not None and summary.violations >= stop_after:
                    break
            for out in found:
                inputs, margin = _refine(claim, params, out.inputs, out.margin) if refine else (out.inputs, out.margin)
                lhs, rhs, margin = evaluate(claim, params, inputs)
                cxs.append(
                    {
                        "params": dict(params),
                        "seed": out.seed,
                        "digest": input_digest(inputs),
                        "lhs": lhs,
                        "rhs": rhs,
                        "margin": margin,
                        "flags": out.flags,
                        "inputs": inputs,
                    }
                )
            cells.append(summary)
    finally:
        if pool:
            pool.shutdown()
    return ExperimentReport(claim, seed, trials, cells, cxs, report_only)


# ---------------------------------------------------------------------------
# named experiments


def operator_monotone_test(family, dims, trials: int, seed: int = 0, **kw) -> ExperimentReport:
    """Sample ``A > 0``, ``P >= 0`` and check ``f(A + P) - f(A) >= -1e-9``."""
    fp = _function_params(family)
    grid = [dict(fp, dim=int(n)) for n in dims]
    return run_experiment("operator-monotone", grid, trials, seed, **kw)


def metric_monotonicity_experiment(alpha_grid, dim: int, trials: int, seed: int = 0, **kw) -> ExperimentReport:
    """Check ``g_rho(X, X) >= g_{gamma(rho)}(gamma X, gamma X)`` over random (rho, X, gamma)."""
    grid = []
    for a in alpha_grid:
        if a == 0:
            raise DomainError("alpha = 0 is excluded")
        grid.append({"alpha": float(a), "dim": int(dim)})
    return run_experiment("metric-monotonicity", grid, trials, seed, **kw)


def divergence_monotonicity_experiment(alpha_grid, dim: int, trials: int, seed: int = 0, which: str = "rescaled", **kw) -> ExperimentReport:
    """Check ``D(rho||sigma) >= D(gamma(rho)||gamma(sigma))`` for the rescaled or sandwiched family."""
    _divergence_fn(which)
    grid = []
    for a in alpha_grid:
        if a == 0:
            raise DomainError("alpha = 0 is excluded")
        grid.append({"alpha": float(a), "dim": int(dim), "which": which})
    return run_experiment("divergence-monotonicity", grid, trials, seed, **kw)


def negative_alpha_conjecture_experiment(alpha_grid, dim: int, trials: int, seed: int = 0, **kw) -> ExperimentReport:
    """Report-only probe of data processing for the rescaled divergence at ``alpha <= -1``.

    The outcome is informational: the question is open and nothing is asserted.
    """
    grid = [{"alpha": float(a), "dim": int(dim), "which": "rescaled"} for a in alpha_grid]
    return run_experiment("divergence-monotonicity-conjecture", grid, trials, seed, report_only=True, **kw)


def positivity_experiment(alpha_grid, dim: int, trials: int, seed: int = 0, **kw) -> ExperimentReport:
    """``D_alpha >= 0``, zero only at equality, and the pinching step ``D(E(rho)||sigma) <= D(rho||sigma)``."""
    grid = []
    for a in alpha_grid:
        if a == 0:
            raise DomainError("alpha = 0 is excluded")
        grid.append({"alpha": float(a), "dim": int(dim)})
    return run_experiment("positivity", grid, trials, seed, **kw)


def strict_convexity_spectra_oracle(trials: int, seed: int = 0, dims=(2, 3), **kw) -> ExperimentReport:
    """With ``f(t) = 1/t``: ``Tr f(E_sigma(A)) <= Tr f(A)``, and equality forces equal spectra and ``A = E_sigma(A)``."""
    grid = [{"dim": int(n), "function": "inverse"} for n in dims]
    return run_experiment("strict-convexity-spectra", grid, trials, seed, **kw)


def pinching_lemma_experiment(trials: int, seed: int = 0, dims=(2, 3), **kw) -> ExperimentReport:
    """``lambda(A)`` majorizes ``lambda(E_sigma(A))``; equal spectra imply ``A = E_sigma(A)``."""
    grid = [{"dim": int(n)} for n in dims]
    return run_experiment("pinching-lemmas", grid, trials, seed, **kw)
