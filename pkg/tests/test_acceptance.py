"""Acceptance suite: one test per criterion, each printing a single verdict line.

The lines are also collected and repeated in the pytest terminal summary.
"""
import pytest

from taililc import acceptance
from taililc.config import builtin_config
from taililc.pipeline import Pipeline

VERDICTS = {}


def report(res, extra=""):
    line = res.line() + extra
    VERDICTS[res.number] = line
    print(line)
    return line


@pytest.fixture(scope="module")
def desk_pipe(desk_runs):
    return Pipeline(builtin_config("desk"), out_dir=desk_runs["root"])


def test_criterion_1_deadbeat_oracle():
    res = acceptance.check_deadbeat(builtin_config("desk"), n_traj=10)
    report(res)
    assert res.ok, res.detail


def test_criterion_2_fixed_point_equivalence():
    res = acceptance.check_fixed_point()
    report(res)
    assert res.ok, res.detail


def test_criterion_3_dpca_identities():
    res = acceptance.check_dpca(n_sets=20)
    report(res)
    assert res.ok, res.detail


def test_criterion_4_gradient_check():
    res = acceptance.check_gradients(n_random=8)
    report(res)
    assert res.ok, res.detail


def test_criterion_5_eta_bound(desk_pipe):
    res = acceptance.check_eta_bound(desk_pipe)
    report(res)
    assert res.ok, res.detail


def test_criterion_6_desk_experiment(desk_pipe, desk_runs):
    res = acceptance.check_desk(desk_pipe)
    budget_ok = desk_runs["seconds"] < 900.0
    report(res, f" [whole desk repro {desk_runs['seconds']:.0f} s, budget 900 s]")
    assert res.ok and budget_ok, res.detail


def test_criterion_7_timing_direction(desk_pipe):
    res = acceptance.check_timing(desk_pipe, repeats=5)
    report(res)
    assert res.ok, res.detail


def test_criterion_8_determinism(desk_runs):
    res = acceptance.check_determinism(desk_runs["root"], desk_runs["root_b"])
    report(res)
    assert res.ok, res.detail
