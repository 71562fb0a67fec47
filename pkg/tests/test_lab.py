import glob
import json
import os

import numpy as np
import pytest

from rgl import lab
from rgl.errors import DomainError, NumericalError, ValidationError
from rgl.geometry import KernelFamily
from rgl.matrix import power
from rgl.states import QuantumChannel, channel_to_json, chart, matrix_to_json, random_state, random_tangent

from conftest import FIXTURES


def test_same_seed_gives_identical_report_across_thread_counts():
    a = lab.metric_monotonicity_experiment([0.3, 2.0], 2, 300, seed=5, threads=1)
    b = lab.metric_monotonicity_experiment([0.3, 2.0], 2, 300, seed=5, threads=4)
    ja = json.dumps(a.to_json(), sort_keys=True)
    assert ja == json.dumps(b.to_json(), sort_keys=True)
    c = lab.metric_monotonicity_experiment([0.3, 2.0], 2, 300, seed=6)
    assert ja != json.dumps(c.to_json(), sort_keys=True)


def test_report_json_round_trip_and_reverify():
    rep = lab.operator_monotone_test(KernelFamily(2.2), [2], 300, seed=1)
    assert rep.counterexamples
    doc = json.loads(json.dumps(rep.to_json()))
    back = lab.ExperimentReport.from_json(doc)
    assert back.to_json() == rep.to_json()
    assert back.reverify() <= 1e-12


def test_identity_channel_has_equal_sides():
    rho = random_state(2, 3)
    x = random_tangent(chart(2), 4).mrep
    inputs = {"rho": matrix_to_json(rho.op), "X": matrix_to_json(x), "channel": channel_to_json(QuantumChannel.identity(2))}
    for alpha in (0.3, 0.5, -2.0):
        lhs, rhs, margin = lab.evaluate("metric-monotonicity", {"alpha": alpha, "dim": 2}, inputs)
        assert lhs == rhs
        assert margin <= 0


def test_identity_function_is_operator_monotone():
    assert lab.operator_monotone_test(power(1.0), [2, 3], 200, seed=2).total_violations == 0


def test_non_monotone_power_is_caught():
    rep = lab.operator_monotone_test(power(2.0), [2], 500, seed=2, stop_after=1)
    assert rep.total_violations > 0


def test_boundary_of_the_monotone_region():
    rep = lab.metric_monotonicity_experiment([-1.0, 0.5], 2, 400, seed=9)
    assert rep.total_violations == 0


def test_refined_counterexample_still_violates():
    rep = lab.metric_monotonicity_experiment([0.3], 2, 2000, seed=3, stop_after=1)
    cx = rep.counterexamples[0]
    assert cx["margin"] > 0
    assert lab.evaluate(rep.claim, cx["params"], cx["inputs"])[2] == cx["margin"]


def test_alpha_zero_rejected():
    with pytest.raises(DomainError):
        lab.metric_monotonicity_experiment([0.0], 2, 10)
    with pytest.raises(DomainError):
        lab.divergence_monotonicity_experiment([0.0], 2, 10)


def test_invalid_arguments():
    with pytest.raises(ValidationError):
        lab.run_experiment("metric-monotonicity", [{"alpha": 1.0, "dim": 2}], 0)
    with pytest.raises(ValidationError):
        lab.divergence_monotonicity_experiment([1.0], 2, 10, which="petz")
    with pytest.raises(ValidationError):
        lab.evaluate("nonsense", {}, {})


def test_non_finite_outcome_rejected():
    with pytest.raises(NumericalError):
        lab.TrialOutcome([0, 0, 0], "x", float("nan"), 0.0, 0.0)


def test_digest_identifies_inputs():
    a = {"A": matrix_to_json(np.eye(2))}
    b = {"A": matrix_to_json(2 * np.eye(2))}
    assert lab.input_digest(a) == lab.input_digest(json.loads(json.dumps(a)))
    assert lab.input_digest(a) != lab.input_digest(b)


def test_tampered_counterexample_fails_reverification():
    rep = lab.operator_monotone_test(KernelFamily(2.2), [2], 300, seed=1)
    doc = rep.to_json()
    doc["counterexamples"][0]["inputs"]["P"] = matrix_to_json(np.zeros((2, 2)))
    with pytest.raises(NumericalError):
        lab.ExperimentReport.from_json(doc).reverify()


def test_conjecture_experiment_is_report_only():
    rep = lab.negative_alpha_conjecture_experiment([-2.0], 2, 50, seed=1)
    assert rep.report_only


def test_sandwiched_variant_at_negative_alpha():
    # D~ = alpha D flips sign for alpha < 0, so data processing fails for every non-trivial pair
    rep = lab.divergence_monotonicity_experiment([-2.0], 2, 50, seed=1, which="sandwiched")
    assert rep.cells[0].violations > 40


def test_positivity_includes_equal_states():
    rep = lab.positivity_experiment([-3.0, 0.5, 2.0], 2, 100, seed=4)
    assert rep.total_violations == 0


def test_spectral_lemmas_small_run():
    assert lab.pinching_lemma_experiment(300, seed=1, dims=(2, 3, 4)).total_violations == 0
    assert lab.strict_convexity_spectra_oracle(300, seed=1, dims=(2, 3, 4)).total_violations == 0


def test_strict_convexity_commuting_case_meets_premise():
    sigma = random_state(3, 1)
    w, v = np.linalg.eigh(sigma.op)
    a = (v * np.array([0.5, 1.0, 2.0])) @ v.conj().T
    inputs = {"sigma": matrix_to_json(sigma.op), "A": matrix_to_json(a)}
    lhs, rhs, margin = lab.evaluate("strict-convexity-spectra", {"dim": 3}, inputs)
    assert abs(lhs - rhs) < 1e-10 and margin <= 0


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(FIXTURES, "*.json"))), ids=os.path.basename)
def test_archived_counterexamples_reverify(path):
    with open(path) as fh:
        rep = lab.ExperimentReport.from_json(json.load(fh))
    assert rep.counterexamples
    assert rep.reverify() <= 1e-12
