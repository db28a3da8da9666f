import numpy as np
import pytest

from survexplain.core import nelson_aalen
from survexplain.dataio import SyntheticSpec, generate_synthetic
from survexplain.metrics import concordance_from_scores
from survexplain.models import RSFConfig, fit_rsf, load_model, save_model
from survexplain.models.rsf import logrank_statistics


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(SyntheticSpec(n=200, p=4, coefficients=(1.0, -0.7, 0.0, 0.3), n_categorical=1, seed=3))


@pytest.fixture(scope="module")
def forest(data):
    return fit_rsf(data, RSFConfig(n_trees=25, min_node_size=10, seed=4))


def test_root_only_tree_is_nelson_aalen(data):
    model = fit_rsf(data, RSFConfig(n_trees=1, min_node_size=data.n, bootstrap=False))
    na = nelson_aalen(data)
    chf = model.predict(data.features.iloc[:5], na.grid.points, "chf")
    np.testing.assert_allclose(chf, np.tile(na.values, (5, 1)), atol=1e-12)


def test_logrank_hand():
    # node: deaths at t=1 (2 at risk) and t=2 (1 at risk); the left child holds the t=1 row.
    # observed - expected = 1 - 1/2; variance 1/2 * 1/2 * (2-1)/(2-1) * 1 = 1/4 -> statistic 1
    stat = logrank_statistics(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]),
                              np.array([2.0, 1.0]), np.array([1.0, 1.0]))
    assert stat[0] == pytest.approx(1.0, abs=1e-12)


def test_predictions_are_valid_curves(forest, data):
    surv = forest.predict(data.features, [0.5, 1, 2, 5, 10], "survival")
    assert np.all((surv >= 0) & (surv <= 1))
    assert np.all(np.diff(surv, axis=1) <= 1e-12)


def test_determinism_and_threads(data):
    t = [1.0, 4.0]
    a = fit_rsf(data, RSFConfig(n_trees=8, seed=9, threads=1)).predict(data.features, t)
    b = fit_rsf(data, RSFConfig(n_trees=8, seed=9, threads=3)).predict(data.features, t)
    np.testing.assert_array_equal(a, b)


def test_row_order_invariance(data):
    perm = np.random.default_rng(0).permutation(data.n)
    t = [1.0, 4.0]
    a = fit_rsf(data, RSFConfig(n_trees=5, seed=2)).predict(data.features, t)
    b = fit_rsf(data.subset(perm), RSFConfig(n_trees=5, seed=2)).predict(data.features, t)
    np.testing.assert_array_equal(a, b)


def test_round_trip(tmp_path, forest, data):
    save_model(forest, tmp_path / "f.json")
    back = load_model(tmp_path / "f.json")
    t = [0.5, 2.0, 6.0]
    np.testing.assert_array_equal(back.predict(data.features, t), forest.predict(data.features, t))


def test_oob_signal_and_noise():
    signal = generate_synthetic(SyntheticSpec(n=300, p=3, coefficients=(np.log(4), 0.0, 0.0), seed=21))
    model = fit_rsf(signal, RSFConfig(n_trees=40, seed=1))
    times = np.unique(signal.time[signal.event == 1])
    risk = -model.oob_predict(signal, times).sum(axis=1)
    assert concordance_from_scores(signal.time, signal.event, risk) >= 0.7

    noise = generate_synthetic(SyntheticSpec(n=300, p=3, coefficients=(0.0, 0.0, 0.0), seed=22))
    model = fit_rsf(noise, RSFConfig(n_trees=40, seed=1))
    times = np.unique(noise.time[noise.event == 1])
    risk = -model.oob_predict(noise, times).sum(axis=1)
    assert 0.40 <= concordance_from_scores(noise.time, noise.event, risk) <= 0.60


def test_invalid_config(data):
    with pytest.raises(ValueError):
        fit_rsf(data, RSFConfig(min_node_size=0))
