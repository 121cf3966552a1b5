"""Tests of the invariant-suite plumbing (the suites themselves run in the
acceptance module, where their runtime budgets are asserted)."""

import json

from plurisym.verify import CheckResult, pointwise_suite


def test_pointwise_suite_passes_on_a_small_draw():
    results = pointwise_suite(seed=1, samples=5)
    assert results, "suite must report at least one check"
    for res in results:
        assert res.passed, f"{res.name}: {res.worst_error:.3e} > {res.tolerance:.1e}"


def test_sign_flip_control_fails_exactly_the_star_trace_checks():
    results = pointwise_suite(seed=1, samples=5, sign_flip=True)
    failing = {res.name for res in results if not res.passed}
    assert failing == {f"star-trace contraction n={n}" for n in (2, 3, 4)}


def test_check_result_rows_serialize_cleanly():
    for res in pointwise_suite(seed=1, samples=2):
        row = res.row()
        assert set(row) == {"name", "worst_error", "tolerance", "passed"}
        assert isinstance(row["passed"], bool)
        json.dumps(row)  # plain Python types only


def test_check_result_pass_boundary():
    assert CheckResult("edge", 1e-12, 1e-12).passed
    assert not CheckResult("edge", 1.0000001e-12, 1e-12).passed
