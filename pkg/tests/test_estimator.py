import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from olatinv.estimator import OLATReconstructor


def tiny_estimator(**kw):
    base = dict(steps=4, rays_per_step=64, n_samples=8, shadow_samples=8, hash_levels=3, hash_base_resolution=4,
                hash_table_size=2 ** 10, init_steps=400)
    base.update(kw)
    return OLATReconstructor(**base)


def test_params_round_trip():
    est = tiny_estimator(seed=7)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.set_params(steps=2).steps == 2


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        OLATReconstructor().predict(np.zeros((1, 3)))


def test_fit_predict_transform(tiny_dataset):
    est = tiny_estimator().fit(tiny_dataset)
    assert len(est.history_) == 4
    g = est.predict(np.array([[0.0, 0.0, 0.0], [0.95, 0.0, 0.0]]))
    assert g[0] < 0 < g[1]
    assert est.transform(np.zeros((5, 3))).shape == (5, 63)
    assert est.light_directions_.shape == (2, 3)
    assert np.all(est.light_intensities_ > 0)
    assert np.isfinite(est.score(tiny_dataset))
    with pytest.raises(ValueError):
        est.predict(np.zeros((3, 2)))
