import numpy as np
import pytest
from sklearn.base import clone

from ctrcoreset import CTRClassifier, FacilityLocationSelector, NoiseAwareCoresetSelector


@pytest.mark.parametrize("est", [CTRClassifier(embed_dim=3), FacilityLocationSelector(n_select=4),
                                 NoiseAwareCoresetSelector(budget=0.1)])
def test_params_roundtrip_through_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(random_state=7)
    assert twin.get_params()["random_state"] == 7 and est.get_params()["random_state"] != 7


def test_unfitted_estimators_raise():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        CTRClassifier().predict(np.zeros((1, 2), int))
    with pytest.raises(NotFittedError):
        FacilityLocationSelector().transform(np.zeros((1, 2)))
    with pytest.raises(NotFittedError):
        NoiseAwareCoresetSelector().get_support()


def test_classifier_rejects_bad_labels():
    with pytest.raises(ValueError):
        CTRClassifier().fit(np.zeros((3, 2), int), np.array([0, 2, 1]))


def test_selector_rejects_bad_labels():
    with pytest.raises(ValueError):
        NoiseAwareCoresetSelector().fit(np.zeros((3, 2), int), np.array([0, 0.5, 1]))


def test_selector_fit_transform():
    X = np.random.default_rng(0).standard_normal((25, 3))
    out = FacilityLocationSelector(n_select=6, random_state=1).fit_transform(X)
    assert out.shape == (6, 3)
