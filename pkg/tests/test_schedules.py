import math

import pytest
from hypothesis import given, settings, strategies as st

from phi4lab.errors import InputError
from phi4lab.schedules import PRESETS, RenormSchedule, classify_case, get_schedule, parse_expression, schedule_eval
from phi4lab.spectral import variance


def test_parse_expression():
    f = parse_expression("n**2 * log(n) + 1/c^2 - sqrt(4)")
    assert f(3.0, 2.0) == pytest.approx(9 * math.log(3) + 0.25 - 2)
    for bad in ("__import__('os')", "n.real", "x + 1", "lambda: 1", "n if c else 1", "[n]"):
        with pytest.raises(InputError):
            parse_expression(bad)
    with pytest.raises(InputError):
        parse_expression("n +")


def test_values_reject_negative_coupling_and_undefined():
    with pytest.raises(InputError):
        RenormSchedule("neg", 4, g="-1").values(4, 1.0)
    with pytest.raises(InputError):
        RenormSchedule("log0", 4, g="log(n - 4)").values(4, 1.0)
    with pytest.raises(InputError):
        RenormSchedule("bad", 7)
    with pytest.raises(InputError):
        RenormSchedule("bad", 4, case="C")


def test_schedule_eval_unit_dominant_term():
    c = variance(6, 4)
    cs = schedule_eval(PRESETS["A1-d4"], 6, c)
    assert cs.lambda_n == 1.0 and cs.alpha_n == 0.0 and cs.beta_n == 0.0
    assert cs.A_n == pytest.approx(c**2)
    cs = schedule_eval(PRESETS["A2-d4"], 6, c)
    assert cs.alpha_n == 1.0 and cs.A_n == pytest.approx(36 * c)
    assert cs.lambda_n == pytest.approx(c / 36)
    cs = schedule_eval(PRESETS["A3-d4"], 6, c)
    assert cs.beta_n == 1.0 and cs.A_n == pytest.approx(36 * c)
    cs = schedule_eval(PRESETS["B-d4"], 6, c)
    assert cs.A_n == pytest.approx(1.0) and cs.lambda_n == pytest.approx(1.0)


def test_schedule_eval_errors():
    with pytest.raises(InputError):
        schedule_eval(RenormSchedule("null", 4), 4, 1.0)
    with pytest.raises(InputError):
        schedule_eval(PRESETS["A1-d4"], 0, 1.0)
    with pytest.raises(InputError):
        schedule_eval(PRESETS["A1-d4"], 4, -1.0)


@given(st.floats(0.01, 100), st.integers(2, 64), st.floats(0.1, 10))
def test_scaled_schedule_multiplies_terms(k, n, c):
    s = PRESETS["A2-d4"]
    assert s.scaled(k).values(n, c) == pytest.approx(tuple(k * v for v in s.values(n, c)))


@given(st.floats(0.0, 10), st.floats(0.0, 10), st.floats(0.0, 10), st.integers(2, 64))
def test_dominant_term_gets_unit_weight(g, m, a, n):
    s = RenormSchedule("x", 4, g=repr(g), m=repr(m), a=repr(a))
    c = 0.5
    if g == m == a == 0:
        with pytest.raises(InputError):
            schedule_eval(s, n, c)
        return
    cs = schedule_eval(s, n, c)
    weights = (cs.lambda_n, cs.alpha_n, cs.beta_n)
    assert max(weights) == 1.0
    assert all(0 <= w <= 1.0 + 1e-12 for w in weights)


@pytest.mark.parametrize("name,branch", [("B-d4", "1"), ("A1-d4", "2"), ("A2-d4", "2"), ("A3-d4", "2"),
                                         ("B-d3", "1"), ("d3-standard", "n/a")])
def test_preset_classification(name, branch):
    rep = classify_case(PRESETS[name], n_range=[4, 6, 8])
    assert rep.branch == branch
    if name == "A2-d4":
        assert rep.mass_condition
    if name == "A3-d4":
        assert rep.strength_condition
    if name == "A1-d4":
        assert rep.coupling_nonvanishing


def test_classification_flags_unstable_terms():
    s = RenormSchedule("switch", 4, g="1", m="(n - 6)**2")  # mass term vanishes at n = 6 only
    rep = classify_case(s, n_range=[4, 6, 8])
    assert rep.branch == "undetermined"
    assert rep.notes
    with pytest.raises(InputError):
        classify_case(PRESETS["B-d4"], n_range=[4, 8])


def test_get_schedule():
    assert get_schedule("B-d4") is PRESETS["B-d4"]
    s = get_schedule({"d": 4, "g": "1", "m": "n"})
    assert s.values(2, 1.0) == (1.0, 2.0, 0.0)
    with pytest.raises(InputError):
        get_schedule("nope")
    with pytest.raises(InputError):
        get_schedule(3)
