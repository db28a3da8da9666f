import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from survexplain.core import SurvivalDataset, TimeGrid
from survexplain.interactions import eval_rows, h_total, h_two_way
from survexplain.models import FunctionModel

TIMES = TimeGrid([1.0, 2.0])


def dataset(**cols):
    n = len(next(iter(cols.values())))
    return SurvivalDataset(pd.DataFrame(cols), np.arange(1, n + 1, dtype=float), np.ones(n, int))


def mock(fn):
    return FunctionModel(lambda f, t: fn(f)[:, None] * np.asarray(t)[None, :])


def test_hand_three_rows():
    # f = a*b + a on rows (0,1), (1,2), (2,0):
    # centred f = (-5/3, 4/3, 1/3), centred PD_a = (-2, 0, 2), centred PD_b = (0, 1, -1)
    # residual (1/3, 1/3, -2/3): H2 = (6/9) / (42/9) = 1/7
    d = dataset(a=[0.0, 1, 2], b=[1.0, 2, 0], c=[5.0, -1, 3])
    model = mock(lambda f: f["a"].to_numpy() * f["b"].to_numpy() + f["a"].to_numpy())
    two = h_two_way(model, d, "a", "b", TIMES)
    np.testing.assert_allclose(two.values, 1 / 7, atol=1e-12)
    tot = h_total(model, d, "a", TIMES)
    np.testing.assert_allclose(tot.values, 1 / 7, atol=1e-12)
    assert tot.marginal == pytest.approx(1 / 7)


def test_pure_interaction_is_one():
    d = dataset(a=[-1.0, 0, 1, -1, 1, 0], b=[1.0, -1, 0, 0, -1, 1])
    model = mock(lambda f: f["a"].to_numpy() * f["b"].to_numpy())
    np.testing.assert_allclose(h_two_way(model, d, "a", "b", TIMES).values, 1.0, atol=1e-10)


def test_single_feature_model_total_is_zero():
    d = dataset(a=[0.3, 1.0, 2.5, -1.0])
    model = mock(lambda f: np.exp(f["a"].to_numpy()))
    assert np.all(h_total(model, d, "a", TIMES).values <= 1e-10)


def test_zero_denominator_is_missing():
    d = dataset(a=[0.0, 1, 2], b=[1.0, 2, 0])
    model = mock(lambda f: np.zeros(len(f)))
    res = h_two_way(model, d, "a", "b", TIMES)
    assert np.all(np.isnan(res.values)) and np.isnan(res.marginal)


def test_errors_and_frame():
    d = dataset(a=[0.0, 1, 2], b=[1.0, 2, 0])
    model = mock(lambda f: f["a"].to_numpy())
    with pytest.raises(ValueError):
        h_two_way(model, d, "a", "a", TIMES)
    frame = h_two_way(model, d, "a", "b", TIMES).to_frame()
    assert list(frame.columns) == ["kind", "features", "t", "H2", "flag_gt1"]


def test_cox_additive_on_log_chf_scale(cox_data, cox_model):
    times = cox_model.baseline_chf.grid.points[::40]
    res = h_two_way(cox_model, cox_data, "x1", "x2", times, rows=np.arange(40), output="log_chf")
    assert np.nanmax(res.values) <= 1e-10
    res = h_total(cox_model, cox_data, "x5", times, rows=np.arange(40), output="log_chf")
    assert np.nanmax(res.values) <= 1e-10


def test_eval_rows_seeded(cox_data):
    a = eval_rows(cox_data, 50, seed=1)
    assert np.array_equal(a, eval_rows(cox_data, 50, seed=1)) and len(a) == 50
    assert len(eval_rows(cox_data, 10_000)) == cox_data.n


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=12),
       st.floats(-2, 2), st.floats(-2, 2))
def test_additive_models_have_no_interaction(rows, ca, cb):
    d = dataset(a=[r[0] for r in rows], b=[r[1] for r in rows], c=[r[2] for r in rows])
    model = mock(lambda f: ca * np.sin(f["a"].to_numpy()) + cb * f["b"].to_numpy() ** 2 + f["c"].to_numpy())
    two = h_two_way(model, d, "a", "b", TIMES)
    tot = h_total(model, d, "a", TIMES)
    for res in (two, tot):
        vals = res.values[~np.isnan(res.values)]
        assert np.all(vals <= 1e-10)
        assert np.all(vals >= 0)
