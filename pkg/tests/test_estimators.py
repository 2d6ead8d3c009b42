import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from genlaplace.datasets import GeneratorSpec, generate
from genlaplace.estimators import LaplaceMLPClassifier, LaplaceMLPRegressor


def test_get_params_and_clone():
    est = LaplaceMLPClassifier(hidden_layer_sizes=(4,), curvature="diag", temperature=2.0)
    params = est.get_params()
    assert params["curvature"] == "diag" and params["temperature"] == 2.0
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


@pytest.mark.filterwarnings("ignore:training loss")
def test_classifier_in_pipeline():
    data = generate(GeneratorSpec("two_moons", 120, seed=0, params={"noise": 0.1}))
    labels = np.where(data.y == 1, "b", "a")
    pipe = make_pipeline(
        StandardScaler(),
        LaplaceMLPClassifier(hidden_layer_sizes=(8,), activation="relu", learning_rate=0.05, epochs=800, n_samples=20),
    )
    pipe.fit(data.X, labels)
    proba = pipe.predict_proba(data.X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    assert set(pipe.predict(data.X)) <= {"a", "b"}
    assert pipe.score(data.X, labels) > 0.8


def test_regressor_std_and_retemper():
    data = generate(GeneratorSpec("cubic_toy", 60, seed=1))
    est = LaplaceMLPRegressor(hidden_layer_sizes=(5,), epochs=500, n_samples=30, curvature="kfac")
    est.fit(data.X, data.y[:, 0])
    mean, std = est.predict(data.X, return_std=True)
    assert mean.shape == (60,) and np.all(std >= 1.0)
    wide = std.mean()
    est.retemper(50.0)
    assert est.predict(data.X, return_std=True)[1].mean() < wide
    assert est.predict_map(data.X).shape == (60,)


def test_unfitted_and_wrong_width():
    est = LaplaceMLPRegressor(epochs=10)
    with pytest.raises(NotFittedError):
        est.predict([[0.0]])
    est.fit([[0.0], [1.0]], [0.0, 1.0])
    with pytest.raises(ValueError):
        est.predict([[0.0, 1.0]])
