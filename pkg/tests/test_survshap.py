from itertools import permutations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from survexplain.core import TimeGrid, default_eval_grid, thin_grid
from survexplain.survshap import (CoalitionValues, aggregate_global, background_rows, explain_instances,
                                  survshap_kernel, survshap_sampling)


class Table:
    """Black box defined by a small formula; output repeated over time with
    a time multiplier so that every time point differs."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, features, times, output="survival"):
        t = np.asarray(TimeGrid(times).points if not isinstance(times, TimeGrid) else times.points)
        return self.fn(features)[:, None] * (1.0 + t)[None, :]


def brute_force(model, background, x, times):
    # average marginal contribution over every ordering of the features
    names = list(background.columns)
    vf = CoalitionValues(model, background, x, TimeGrid(times), "survival")
    phi = np.zeros((len(names), len(times)))
    orders = list(permutations(range(len(names))))
    for order in orders:
        m = 0
        for j in order:
            before = vf.evaluate([m])[0]
            m |= 1 << j
            phi[j] += vf.evaluate([m])[0] - before
    return phi / len(orders)


TIMES = [0.0, 1.0, 2.5]


def frame(**cols):
    return pd.DataFrame({k: np.asarray(v, float) for k, v in cols.items()})


@pytest.fixture
def interacting():
    model = Table(lambda f: f["a"].to_numpy() * f["b"].to_numpy() + 2 * f["c"].to_numpy() - f["a"].to_numpy() ** 2)
    bg = frame(a=[0, 1, 2, -1], b=[1, 0, 3, 2], c=[0.5, 0, 1, 2])
    x = frame(a=[1.5], b=[-1], c=[3])
    return model, bg, x


def test_exact_matches_permutation_oracle(interacting):
    model, bg, x = interacting
    res = survshap_sampling(model, bg, x, "exact", TIMES, output="chf")
    np.testing.assert_allclose(res.phi, brute_force(model, bg, x, TIMES), atol=1e-12)


def test_efficiency(interacting):
    model, bg, x = interacting
    res = survshap_sampling(model, bg, x, "exact", TIMES, output="chf")
    np.testing.assert_allclose(res.phi.sum(axis=0), res.prediction - res.baseline.values, atol=1e-12)


def test_symmetry_and_missingness():
    model = Table(lambda f: f["a"].to_numpy() + f["b"].to_numpy())
    bg = frame(a=[0, 1, 2], b=[0, 1, 2], c=[5, 6, 7])
    x = frame(a=[3], b=[3], c=[0])
    res = survshap_sampling(model, bg, x, "exact", TIMES, output="chf")
    np.testing.assert_allclose(res.phi[0], res.phi[1], atol=1e-12)
    np.testing.assert_allclose(res.phi[2], 0.0, atol=1e-12)


def test_single_feature_gets_everything():
    model = Table(lambda f: np.exp(f["a"].to_numpy()))
    bg = frame(a=[0, 1])
    x = frame(a=[2])
    for res in (survshap_sampling(model, bg, x, "exact", TIMES, output="chf"), survshap_kernel(model, bg, x, "all", TIMES, output="chf")):
        np.testing.assert_allclose(res.phi[0], res.prediction - res.baseline.values, atol=1e-12)


def test_instance_as_own_background_is_zero(interacting):
    model, _, x = interacting
    res = survshap_sampling(model, x, x, "exact", TIMES, output="chf")
    assert np.all(res.phi == 0.0)


def test_kernel_all_equals_exact(cox_data, cox_model):
    times = thin_grid(default_eval_grid(cox_data), 8)
    bg = background_rows(cox_data, 30, seed=1)
    x = cox_data.features.iloc[[7]]
    exact = survshap_sampling(cox_model, bg, x, "exact", times)
    kern = survshap_kernel(cox_model, bg, x, "all", times)
    np.testing.assert_allclose(kern.phi, exact.phi, atol=1e-8)


def test_sampled_kernel_keeps_efficiency(interacting):
    model, bg, x = interacting
    res = survshap_kernel(model, bg, x, 5, TIMES, seed=3, output="chf")
    np.testing.assert_allclose(res.phi.sum(axis=0), res.prediction - res.baseline.values, atol=1e-10)


def test_sampling_is_close_to_exact(cox_data, cox_model):
    times = thin_grid(default_eval_grid(cox_data), 5)
    bg = background_rows(cox_data, 25, seed=2)
    x = cox_data.features.iloc[[3]]
    exact = survshap_sampling(cox_model, bg, x, "exact", times).phi
    est = survshap_sampling(cox_model, bg, x, 400, times, seed=5)
    z = np.abs(est.phi - exact) / np.maximum(est.sigma, 1e-12)
    assert np.mean(z < 3) >= 0.95
    # chain telescoping makes every sampled estimate efficient
    np.testing.assert_allclose(est.phi.sum(axis=0), est.prediction - est.baseline.values, atol=1e-12)


def test_sampling_deterministic(interacting):
    model, bg, x = interacting
    a = survshap_sampling(model, bg, x, 10, TIMES, seed=9, output="chf")
    b = survshap_sampling(model, bg, x, 10, TIMES, seed=9, output="chf")
    np.testing.assert_array_equal(a.phi, b.phi)


def test_invalid_arguments(interacting):
    model, bg, x = interacting
    with pytest.raises(ValueError):
        survshap_sampling(model, bg, x, 0, TIMES, output="chf")
    with pytest.raises(ValueError):
        survshap_kernel(model, bg, x, 0, TIMES, output="chf")
    with pytest.raises(ValueError):
        survshap_sampling(model, bg.iloc[:0], x, "exact", TIMES, output="chf")


def test_aggregate_global(cox_data, cox_model):
    times = thin_grid(default_eval_grid(cox_data), 6)
    bg = background_rows(cox_data, 20, seed=0)
    res = explain_instances(cox_model, cox_data, range(6), times, bg, "kernel")
    g = aggregate_global(res, cox_data.features)
    manual = np.mean([np.abs(r.phi) for r in res], axis=0)
    np.testing.assert_allclose(g.importance, manual)
    assert g.ranking()[0] == "x1" and g.ranking()[-1] == "x4"
    assert len(g.beeswarm) == 6 * cox_data.p
    assert len(g.curves_frame()) == cox_data.p * len(times)
    other = explain_instances(cox_model, cox_data, [0], thin_grid(default_eval_grid(cox_data), 4), bg, "kernel")
    with pytest.raises(ValueError):
        aggregate_global(res + other)
    with pytest.raises(ValueError):
        aggregate_global([])


@settings(max_examples=25)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_efficiency_property(bg_vals, x_vals):
    model = Table(lambda f: f["a"].to_numpy() * f["b"].to_numpy() * f["c"].to_numpy() + f["c"].to_numpy())
    bg = frame(a=bg_vals[:2], b=bg_vals[2:4], c=bg_vals[4:])
    x = frame(a=[x_vals[0]], b=[x_vals[1]], c=[x_vals[2]])
    for res in (survshap_sampling(model, bg, x, "exact", TIMES, output="chf"), survshap_kernel(model, bg, x, "all", TIMES, output="chf")):
        np.testing.assert_allclose(res.phi.sum(axis=0), res.prediction - res.baseline.values, atol=1e-9)
