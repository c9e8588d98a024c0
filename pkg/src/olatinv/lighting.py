"""Camera-static directional lights and the camera-to-world transform."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

FRONTAL = np.array([0.0, 0.0, -1.0])


@dataclass
class View:
    """One OLAT image: pinhole camera (world-to-camera ``R``, ``t``) and light index."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    light: int
    image: str = ""
    mask: str = ""
    width: int = 0
    height: int = 0

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.light = int(self.light)

    def validate(self, n_lights: int | None = None, tol: float = 1e-6):
        R = self.R
        if np.max(np.abs(R @ R.T - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise ValueError("rotation matrix is not orthonormal with det +1")
        if self.light < 0 or (n_lights is not None and self.light >= n_lights):
            raise ValueError(f"light index {self.light} out of range")
        return self

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates, ``-R^T t``."""
        return -self.R.T @ self.t

    @property
    def focal(self) -> float:
        return float(0.5 * (self.K[0, 0] + self.K[1, 1]))

    def to_dict(self) -> dict:
        return {"K": self.K.ravel().tolist(), "R": self.R.ravel().tolist(), "t": self.t.tolist(),
                "light": self.light, "image": self.image, "mask": self.mask}


class LightRig:
    """Per-light raw camera-space direction and log RGB intensity in a ParamStore."""

    def __init__(self, store: ad.ParamStore, n_lights: int, dirs=None, log_intensity=None):
        if n_lights < 1:
            raise ValueError("a light rig needs at least one light")
        self.store = store
        self.n = int(n_lights)
        if "lights/dirs" not in store:
            d = np.tile(FRONTAL, (self.n, 1)) if dirs is None else np.asarray(dirs, dtype=np.float64)
            e = np.zeros((self.n, 3)) if log_intensity is None else np.asarray(log_intensity, dtype=np.float64)
            if d.shape != (self.n, 3) or e.shape != (self.n, 3):
                raise ValueError("light arrays must be (M, 3)")
            store.add("lights/dirs", d, "light-dirs")
            store.add("lights/log_intensity", e, "light-log-intensity")

    def __len__(self):
        return self.n

    @property
    def directions(self) -> np.ndarray:
        """Normalized camera-space directions ``(M, 3)``."""
        d = self.store["lights/dirs"]
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    @property
    def intensities(self) -> np.ndarray:
        return np.exp(self.store["lights/log_intensity"])

    def dir_nodes(self, idx) -> ad.Node:
        """Graph of normalized directions for a per-ray light index array."""
        return ad.normalize(ad.take(self.store.node("lights/dirs"), idx))

    def intensity_nodes(self, idx) -> ad.Node:
        return ad.exp(ad.take(self.store.node("lights/log_intensity"), idx))


def init_lights(store: ad.ParamStore, n_lights: int) -> LightRig:
    """Frontal lights ``[0, 0, -1]`` with unit intensity."""
    return LightRig(store, n_lights)


def world_light(rig_or_dirs, view: View, index: int | None = None) -> np.ndarray:
    """World-space light direction of ``view`` (camera-to-world is ``R^T``)."""
    if isinstance(rig_or_dirs, LightRig):
        d = rig_or_dirs.directions[view.light if index is None else index]
    else:
        d = np.asarray(rig_or_dirs, dtype=np.float64)
        d = d / np.linalg.norm(d)
    return view.R.T @ d


def camera_light(world_dir, view: View) -> np.ndarray:
    d = np.asarray(world_dir, dtype=np.float64)
    return view.R @ (d / np.linalg.norm(d))


def rotate_to_world(dirs: ad.Node, rot_t: np.ndarray) -> ad.Node:
    """Apply per-ray camera-to-world matrices ``(P, 3, 3)`` to a direction graph."""
    return ad.matvec(rot_t, dirs)
