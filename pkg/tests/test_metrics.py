import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dercfr.data import Dataset
from dercfr.errors import ContractViolation, DegenerateInputError
from dercfr.metrics import ate_error, att_error, evaluate, identification_report, pehe, policy_risk
from dercfr.model import ContributionProfile

finite = st.floats(-10, 10)


def test_pehe_examples():
    assert pehe([1, 2], [0, 0], [1, 2], [0, 0]) == 0.0
    assert pehe([0, 0], [0, 0], [1, -1], [0, 0]) == 1.0
    with pytest.raises(ContractViolation):
        pehe([1, 2], [0], [1, 2], [0, 0])


def test_ate_examples():
    assert ate_error([1, 2], [0, 0], [1, 2], [0, 0]) == 0.0
    assert ate_error([1 + 0.3, 2 + 0.3], [0, 0], [1, 2], [0, 0]) == pytest.approx(0.3, abs=1e-15)
    assert ate_error([2, 0], [0, 0], [1, 1], [0, 0]) == 0.0


def test_policy_risk_examples():
    # (t, y, pi): (1, 1, 1) and (0, 1, 0)
    assert policy_risk([1, 0], [0, 1], [1, 1], [1, 0]) == 0.0
    assert policy_risk([1, 0], [0, 1], [0, 0], [1, 0]) == 1.0
    assert policy_risk([1], [0], [1], [1]) == 0.0


def test_policy_risk_tie_means_no_treatment():
    # zero predicted effect maps to the control policy
    assert policy_risk([0.5], [0.5], [1], [0]) == 0.0


def test_policy_risk_rct_subset():
    assert policy_risk([1, 1], [0, 0], [1, 0], [1, 1], rct=[1, 0]) == 0.0
    with pytest.raises(DegenerateInputError):
        policy_risk([1], [0], [1], [1], rct=[0])


def test_att_examples():
    yf = np.array([1.0, 0.4, 0.5, 0.3])
    t = np.array([1, 1, 0, 0])
    true_att = 0.7 - 0.4
    assert att_error([true_att] * 4, [0] * 4, yf, t) == pytest.approx(0.0, abs=1e-15)
    yf = np.array([0.7, 0.7, 0.5])
    t = np.array([1, 1, 0])
    assert att_error([0.5] * 3, [0] * 3, yf, t, [1, 1, 1]) == pytest.approx(0.3, abs=1e-15)
    yf = np.array([1.0, 1.0])
    assert att_error([-0.3, -0.3], [0, 0], yf, [1, 0]) == pytest.approx(0.3, abs=1e-15)


def test_att_errors():
    with pytest.raises(DegenerateInputError):
        att_error([0], [0], [1], [0])
    with pytest.raises(DegenerateInputError):
        att_error([0, 0], [0, 0], [1, 1], [1, 0], rct=[1, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(*[arrays(np.float64, n, elements=finite)] * 4)))
def test_property_ate_bounded_by_pehe(vals):
    y1h, y0h, y1, y0 = vals
    assert ate_error(y1h, y0h, y1, y0) <= pehe(y1h, y0h, y1, y0) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(*[arrays(np.float64, n, elements=finite)] * 2)),
       st.randoms())
def test_property_pehe_zero_and_permutation(vals, rnd):
    a, b = vals
    assert pehe(a, b, a, b) == 0.0
    perm = list(range(len(a)))
    rnd.shuffle(perm)
    c, d = a[::-1], b[::-1]
    assert pehe(a, b, c, d) == pytest.approx(pehe(a[perm], b[perm], c[perm], d[perm]), rel=1e-12)


def test_policy_risk_bounded_random_fixtures():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        t = rng.integers(0, 2, n)
        yf = rng.integers(0, 2, n).astype(float)
        rct = rng.integers(0, 2, n)
        rct[rng.integers(n)] = 1
        r = policy_risk(rng.normal(size=n), rng.normal(size=n), yf, t, rct)
        assert 0.0 <= r <= 1.0


def test_evaluate_scopes():
    ds = Dataset(np.zeros((4, 1)), [1, 0, 1, 0], [1, 0, 1, 1], [0, 0, 0, 1], [1, 1, 1, 1], rct=[1, 1, 1, 1])
    rep = evaluate(np.array([0, 0, 0, 1.0]), np.array([1, 1, 1, 1.0]), ds, "within-sample")
    assert rep.pehe == 0.0 and rep.ate_error == 0.0
    assert rep.policy_risk is not None and rep.att_error is not None
    assert rep.scope == "within-sample" and rep.n == 4


# ----------------------------------------------------------------- identification

def _profile(wi, wc, wa):
    return ContributionProfile(np.asarray(wi, float), np.asarray(wc, float), np.asarray(wa, float), 2)


def test_identification_exclusive_concentration():
    roles = ["I", "I", "C", "A"]
    rows, summary = identification_report(_profile([1, 2, 0, 0], [0, 0, 1, 0], [0, 0, 0, 3]), roles)
    assert math.isinf(summary["I"].ratio) and summary["I"].ratio > 0
    assert summary["I"].true_mean == 1.5 and summary["I"].other_mean == 0.0
    assert rows[0] == {"variable": "x1", "role": "I", "wI": 1.0, "wC": 0.0, "wA": 0.0}


def test_identification_uniform_ratio_one():
    _, summary = identification_report(_profile([0.5] * 4, [0.5] * 4, [0.5] * 4), ["I", "C", "A", "noise"])
    assert all(s.ratio == 1.0 for s in summary.values())


def test_identification_without_roles():
    rows, summary = identification_report(_profile([1, 2], [3, 4], [5, 6]))
    assert len(rows) == 2 and summary == {}
    with pytest.raises(ContractViolation):
        identification_report(_profile([1, 2], [3, 4], [5, 6]), ["I"])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_property_summary_weighted_average(seed):
    rng = np.random.default_rng(seed)
    roles = ["I", "C", "A"] + list(rng.choice(["I", "C", "A", "noise"], size=6))
    prof = _profile(*np.abs(rng.normal(size=(3, 9))))
    _, summary = identification_report(prof, roles)
    for f, vec in zip("ICA", (prof.w_I, prof.w_C, prof.w_A)):
        s = summary[f]
        if s.n_other == 0:
            continue
        combined = (s.true_mean * s.n_true + s.other_mean * s.n_other) / 9
        assert combined == pytest.approx(vec.mean(), rel=1e-12)
