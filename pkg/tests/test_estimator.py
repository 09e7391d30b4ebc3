from pathlib import Path

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cohslam.config import load
from cohslam.dataset import generate_dataset
from cohslam.estimator import SlamEstimator, check_observations, check_scenario

TINY = Path(__file__).resolve().parents[1] / "configs" / "tiny.cfg"


@pytest.fixture(scope="module")
def data():
    scn = load(TINY)
    return scn, generate_dataset(scn, 0)


def test_params_roundtrip():
    est = SlamEstimator(str(TINY), variant="zm", n_particles=100, seed=3)
    p = est.get_params()
    assert p == {"scenario": str(TINY), "variant": "zm", "n_particles": 100, "seed": 3}
    assert clone(est).get_params() == p
    est.set_params(seed=4)
    assert est.seed == 4


def test_fit_predict_shapes(data):
    scn, ds = data
    est = SlamEstimator(scn, n_particles=150, seed=1).fit(ds.z[:3])
    assert est.trajectory_.shape == (3, 6) and est.noise_variance_.shape == (4,)
    pos = est.predict(ds.z[3:])
    assert pos.shape == (2, 3) and est.n_steps_ == 5
    assert np.all(np.linalg.norm(pos - ds.x[3:, :3], axis=1) < 0.5)


def test_score_is_negative_rmse(data):
    scn, ds = data
    est = SlamEstimator(scn, n_particles=150, seed=1).fit(ds.z[:3])
    assert est.score(ds.z[3:], ds.x[3:]) <= 0


def test_predict_before_fit(data):
    scn, ds = data
    with pytest.raises(NotFittedError):
        SlamEstimator(scn).predict(ds.z)


def test_validation_errors(data):
    scn, ds = data
    with pytest.raises(ValueError):
        check_observations(np.zeros((2, 3, 20)), 4, 20)
    with pytest.raises(ValueError):
        check_observations(np.zeros(5), 4, 20)
    bad = ds.z.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        check_observations(bad, 4, 20)
    assert check_observations(ds.z[0], 4, 20).shape == (1, 4, 20)
    with pytest.raises(TypeError):
        check_scenario(42)
    with pytest.raises(ValueError):
        SlamEstimator(scn, variant="nope").fit(ds.z)
