"""scikit-learn style wrapper around the training pipeline."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_points
from .encodings import HashEncodingConfig
from .fields import FieldConfig
from .scene import Dataset, load_dataset
from .training import LossConfig, TrainConfig, train


class OLATReconstructor(BaseEstimator):
    """Fit geometry, reflectance and lights to an OLAT dataset.

    ``fit`` accepts a :class:`Dataset` or a dataset directory.  After
    fitting, ``predict`` returns signed distances at object-space points and
    ``transform`` returns the 63-dimensional BRDF latents there.
    """

    def __init__(self, steps=3000, rays_per_step=4096, n_samples=64, shadow_samples=64, color_loss="weighted_l1",
                 angular_encoding=True, hash_levels=14, hash_base_resolution=32, hash_table_size=2 ** 16,
                 init_steps=2000, occupancy=True, seed=0):
        self.steps = steps
        self.rays_per_step = rays_per_step
        self.n_samples = n_samples
        self.shadow_samples = shadow_samples
        self.color_loss = color_loss
        self.angular_encoding = angular_encoding
        self.hash_levels = hash_levels
        self.hash_base_resolution = hash_base_resolution
        self.hash_table_size = hash_table_size
        self.init_steps = init_steps
        self.occupancy = occupancy
        self.seed = seed

    def _config(self) -> TrainConfig:
        hc = HashEncodingConfig(base_resolution=self.hash_base_resolution, levels=self.hash_levels,
                                table_size=self.hash_table_size)
        fc = FieldConfig(hash=hc, angular_encoding=self.angular_encoding, seed=self.seed)
        cfg = TrainConfig(steps=self.steps, rays_per_step=self.rays_per_step, n_samples=self.n_samples,
                          shadow_samples=self.shadow_samples, init_steps=self.init_steps,
                          occupancy=self.occupancy, seed=self.seed, fields=fc)
        return replace(cfg, loss=LossConfig(color_loss=self.color_loss))

    def fit(self, X, y=None):
        ds = X if isinstance(X, Dataset) else load_dataset(Path(X))
        self.model_, self.history_ = train(ds, self._config())
        self.transform_ = ds.transform
        self.n_lights_ = ds.n_lights
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        x = check_points(X)
        with ad.no_grad():
            return self.model_.spatial.sdf(np.clip(x, -1.0, 1.0)).value

    def transform(self, X):
        check_is_fitted(self, "model_")
        x = check_points(X)
        with ad.no_grad():
            return self.model_.spatial(np.clip(x, -1.0, 1.0))[1].value

    def score(self, X, y=None):
        """Mean PSNR of the fitted renders over the training views of ``X``."""
        from .evalmesh import psnr
        from .renderer import render_image

        check_is_fitted(self, "model_")
        ds = X if isinstance(X, Dataset) else load_dataset(Path(X))
        pred, ref = [], []
        for v, img, m in zip(ds.views, ds.images, ds.masks):
            r = render_image(self.model_, v, ds.transform, n_samples=self.n_samples,
                             shadow_samples=self.shadow_samples)
            pred.append(np.clip(r["rgb"][m], 0, 1))
            ref.append(np.clip(img[m], 0, 1))
        return psnr(np.concatenate(pred), np.concatenate(ref))

    @property
    def light_directions_(self):
        check_is_fitted(self, "model_")
        return self.model_.lights.directions

    @property
    def light_intensities_(self):
        check_is_fitted(self, "model_")
        return self.model_.lights.intensities
