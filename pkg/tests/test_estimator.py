from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nextpoi import DGATRecommender, build_artifacts
from nextpoi.baselines import TopRecommender
from nextpoi.graphs import GraphConfig
from nextpoi.validation import check_dataset, check_pairs

SMALL = dict(variant="stp-udgat", dim=6, epochs=2, dropout_rate=0.0, random_state=3)


@pytest.fixture
def fitted(toy_dataset):
    return DGATRecommender(**SMALL).fit(toy_dataset)


def test_params_round_trip():
    est = DGATRecommender(**SMALL, options=("A",))
    params = est.get_params()
    assert params["dim"] == 6 and params["options"] == ("A",)
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(dim=8)
    assert est.hyperparams().delta == 8


def test_preset_overrides():
    hp = DGATRecommender(variant="pp-dgat-skip", dim=4, user_module="raw_embedding").hyperparams()
    assert hp.skip_connection and not hp.explore_enabled and hp.user_module == "raw_embedding"
    assert DGATRecommender(dim=4, epochs=3).train_config().decay_epoch == 3


def test_predict_shapes(fitted, toy_dataset):
    X = np.array([[0, 1], [2, 3], [4, 0]])
    proba = fitted.predict_proba(X)
    assert proba.shape == (3, toy_dataset.n_pois)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    top = fitted.recommend(X, k=4)
    assert top.shape == (3, 4)
    assert np.array_equal(fitted.predict(X), top[:, 0])
    for row, ranked in zip(proba, top):
        assert row[ranked[0]] == row.max()
    assert 0.0 <= fitted.score(X, [1, 3, 0]) <= 1.0


def test_evaluate_report(fitted, toy_dataset):
    rep = fitted.evaluate()
    assert rep.n_samples == len(toy_dataset.test_samples())
    assert len(fitted.loss_curve_) == 2


def test_reuses_artifacts(toy_dataset, fitted):
    art = build_artifacts(toy_dataset, fitted.hp_, GraphConfig(), 3)
    again = DGATRecommender(**SMALL).fit(toy_dataset, artifacts=art)
    for k in fitted.params_:
        assert np.array_equal(again.params_[k], fitted.params_[k])


def test_not_fitted_and_bad_input(toy_dataset, fitted):
    with pytest.raises(NotFittedError):
        DGATRecommender().predict(np.array([[0, 0]]))
    with pytest.raises(NotFittedError):
        TopRecommender().rank(0)
    with pytest.raises(ValueError):
        fitted.predict(np.array([[0, 10]]))
    with pytest.raises(ValueError):
        fitted.predict(np.array([0, 1, 2]))
    with pytest.raises(TypeError):
        DGATRecommender().fit([[0, 1]])


def test_check_dataset_rejects_inconsistent(toy_dataset):
    with pytest.raises(ValueError):
        check_dataset(replace(toy_dataset, poi_coords=np.zeros((3, 2))))
    bad = replace(toy_dataset, train_seqs=[[99], *toy_dataset.train_seqs[1:]],
                  train_times=[[0], *toy_dataset.train_times[1:]])
    with pytest.raises(ValueError):
        check_dataset(bad)
    assert check_pairs([[0, 1]], 1, 2).dtype == np.int64
