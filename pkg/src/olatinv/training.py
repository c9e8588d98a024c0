"""Losses, occupancy grid and the joint optimization loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli
from scipy import ndimage
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .encodings import HashEncodingConfig
from .fields import FieldConfig, SceneModel, default_groups, init_sphere
from .optim import AdamW
from .renderer import RayBatch, generate_rays, pixel_centers, render_rays, sample_occupied, sample_uniform
from .scene import Dataset

log = logging.getLogger(__name__)

COLOR_LOSSES = ("weighted_l1", "l1", "l2", "weighted_l2")


class TrainingDiverged(RuntimeError):
    def __init__(self, step, checkpoint=None):
        msg = f"loss became non-finite at step {step}"
        if checkpoint is not None:
            msg += f"; last good checkpoint at {checkpoint}"
        super().__init__(msg)
        self.step = step
        self.checkpoint = checkpoint


# ---------------------------------------------------------------- config


@dataclass
class LossConfig:
    lambda_mask: float = 1.0
    lambda_eikonal: float = 1.0
    color_eps: float = 1e-3
    color_loss: str = "weighted_l1"
    mask_eps: float = 1e-6


@dataclass
class TrainConfig:
    steps: int = 3000
    rays_per_step: int = 4096
    n_samples: int = 64
    shadow_samples: int = 64
    shadows: bool = True
    lr_mlp: float = 1e-2
    lr_other: float = 1e-3
    lr_sharpness: float | None = None
    weight_decay: float = 1e-2
    occupancy: bool = True
    occupancy_resolution: int = 32
    occupancy_interval: int = 16
    occupancy_threshold: float = 1e-4
    candidate_dilation: int = 16
    init_radius: float = 0.5
    init_steps: int = 2000
    init_batch: int = 4096
    init_tol: float = 0.02
    seed: int = 0
    sequential: bool = True
    log_every: int = 1
    checkpoint_every: int = 500
    loss: LossConfig = field(default_factory=LossConfig)
    fields: FieldConfig = field(default_factory=FieldConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "fields" in d:
            fd = dict(d["fields"])
            if "hash" in fd:
                fd["hash"] = HashEncodingConfig(**fd["hash"])
            d["fields"] = FieldConfig(**fd)
        cfg = cls(**d)
        if cfg.loss.color_loss not in COLOR_LOSSES:
            raise ValueError(f"color_loss must be one of {COLOR_LOSSES}")
        return cfg

    @classmethod
    def load(cls, path) -> "TrainConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            return cls.from_dict(tomli.loads(text))
        return cls.from_dict(json.loads(text))

    def with_seed(self, seed):
        return replace(self, seed=seed, fields=replace(self.fields, seed=seed))


# ---------------------------------------------------------------- losses


def color_loss(c, c_hat, eps: float = 1e-3, kind: str = "weighted_l1") -> ad.Node:
    """Per-ray channel sum of the (weighted) residual, averaged over rays.

    The weighted variants divide by ``sg(c) + eps``: the denominator is a
    constant of the graph, so no gradient flows through it.
    """
    c = c if isinstance(c, ad.Node) else ad.constant(c)
    c_hat = np.asarray(c_hat, dtype=np.float64)
    r = ad.sub(c, c_hat)
    if kind in ("weighted_l1", "weighted_l2"):
        r = ad.div(r, ad.add(ad.stop_gradient(c), eps))
    if kind in ("weighted_l1", "l1"):
        per = ad.relu(r) + ad.relu(-r)
    elif kind in ("l2", "weighted_l2"):
        per = ad.square(r)
    else:
        raise ValueError(f"unknown color loss {kind!r}")
    return ad.mean(ad.sum_(per, axis=-1))


def mask_loss(m, m_hat, eps: float = 1e-6) -> ad.Node:
    """Mean binary cross-entropy with ``m`` clamped to ``[eps, 1 - eps]``."""
    m = m if isinstance(m, ad.Node) else ad.constant(m)
    mh = np.asarray(m_hat, dtype=np.float64)
    mc = ad.clamp(m, eps, 1.0 - eps)
    bce = -(ad.mul(ad.log(mc), mh) + ad.mul(ad.log(1.0 - mc), 1.0 - mh))
    return ad.mean(bce)


def eikonal_loss(grad) -> ad.Node:
    """Mean ``(|grad g| - 1)^2``."""
    grad = grad if isinstance(grad, ad.Node) else ad.constant(grad)
    return ad.mean(ad.square(ad.norm(grad) - 1.0))


# ---------------------------------------------------------------- occupancy


class OccupancyGrid:
    """Boolean occupancy over ``[-1, 1]^3``; a fresh grid is fully occupied."""

    def __init__(self, resolution: int = 32, threshold: float = 1e-4):
        self.resolution = int(resolution)
        self.threshold = threshold
        self.occ = np.ones((self.resolution,) * 3, dtype=bool)

    @property
    def cell_size(self):
        return 2.0 / self.resolution

    def reset(self):
        self.occ[:] = True

    def cell_index(self, pts):
        idx = np.floor((np.asarray(pts) + 1.0) * 0.5 * self.resolution).astype(np.int64)
        return np.clip(idx, 0, self.resolution - 1)

    def lookup(self, pts) -> np.ndarray:
        i = self.cell_index(pts)
        return self.occ[i[:, 0], i[:, 1], i[:, 2]]

    def centers(self):
        c = (np.arange(self.resolution) + 0.5) * self.cell_size - 1.0
        return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)

    @property
    def fraction(self):
        return float(self.occ.mean())


def update_occupancy(grid: OccupancyGrid, sdf_fn, sharpness: float, chunk: int = 65536) -> OccupancyGrid:
    """Mark a cell occupied when the smallest ``|g|`` it can contain gives opacity above threshold.

    The lower bound of ``|g|`` in a cell is the centre value minus half the
    cell diagonal (a unit-gradient assumption); the result is dilated by one
    cell to stay conservative.
    """
    pts = grid.centers()
    g = np.empty(pts.shape[0])
    with ad.no_grad():
        for s in range(0, pts.shape[0], chunk):
            v = sdf_fn(pts[s:s + chunk])
            g[s:s + chunk] = v.value if isinstance(v, ad.Node) else v
    gmin = np.maximum(np.abs(g) - 0.5 * np.sqrt(3.0) * grid.cell_size, 0.0)
    # sigma(-a * gmin) > thr  <=>  a * gmin < log(1/thr - 1)
    occ = sharpness * gmin < np.log(1.0 / grid.threshold - 1.0)
    occ = occ.reshape((grid.resolution,) * 3)
    grid.occ = ndimage.binary_dilation(occ, structure=np.ones((3, 3, 3), bool))
    return grid


# ---------------------------------------------------------------- ray pool


@dataclass
class RayPool:
    """All candidate training rays, precomputed once."""

    batch: RayBatch
    rgb: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.batch)


def candidate_pixels(mask: np.ndarray, dilation: int) -> np.ndarray:
    if dilation <= 0:
        return mask.copy()
    return ndimage.distance_transform_edt(~mask) <= dilation


def build_ray_pool(ds: Dataset, dilation: int = 16) -> RayPool:
    batches, rgbs, masks = [], [], []
    for vi, (v, img, m) in enumerate(zip(ds.views, ds.images, ds.masks)):
        cand = candidate_pixels(m, dilation)
        ii, jj = np.nonzero(cand)
        uv = np.stack([jj + 0.5, ii + 0.5], axis=1).astype(np.float64)
        b = generate_rays(v, uv, ds.transform, view_index=vi)
        keep = np.flatnonzero(b.hit)
        dropped_fg = int(np.count_nonzero(m[ii, jj][~b.hit]))
        if dropped_fg:
            log.warning("view %d: %d foreground pixel(s) miss the unit sphere", vi, dropped_fg)
        batches.append(b.subset(keep))
        rgbs.append(img[ii[keep], jj[keep]])
        masks.append(m[ii[keep], jj[keep]].astype(np.float64))
    return RayPool(RayBatch.concat(batches), np.concatenate(rgbs), np.concatenate(masks))


# ---------------------------------------------------------------- training loop


@dataclass
class StepLog:
    step: int
    loss: float
    color: float
    mask: float
    eikonal: float
    sharpness: float
    occupancy: float
    seconds: float


def build_model(cfg: TrainConfig, n_lights: int, init: bool = True) -> SceneModel:
    model = SceneModel(cfg.fields, n_lights, groups=default_groups(cfg.lr_mlp, cfg.lr_other, cfg.weight_decay, cfg.lr_sharpness))
    if init:
        init_sphere(model.spatial, cfg.init_radius, steps=cfg.init_steps, tol=cfg.init_tol,
                    rng=np.random.default_rng(cfg.seed + 1), batch=cfg.init_batch)
    return model


def train_step(model, pool: RayPool, cfg: TrainConfig, rng, grid=None):
    """One forward/backward pass; returns ``(loss node, components)``."""
    idx = rng.integers(0, len(pool), size=cfg.rays_per_step)
    batch = pool.batch.subset(idx)
    if grid is not None:
        sample_occupied(batch, grid, cfg.n_samples, rng)
    else:
        sample_uniform(batch, cfg.n_samples, rng)
    out = render_rays(model, batch, train=True, shadows=cfg.shadows, shadow_samples=cfg.shadow_samples)
    mhat = pool.mask[idx]
    fg = np.flatnonzero(mhat > 0.5)
    lc = color_loss(ad.take(out.rgb, fg), pool.rgb[idx][fg], cfg.loss.color_eps, cfg.loss.color_loss) \
        if fg.size else ad.constant(0.0)
    lm = mask_loss(out.m, mhat, cfg.loss.mask_eps)
    le = eikonal_loss(out.sdf_grad)
    total = lc + cfg.loss.lambda_mask * lm + cfg.loss.lambda_eikonal * le
    return total, (lc, lm, le)


def train(ds: Dataset, cfg: TrainConfig, out_dir=None, log_path=None, model: SceneModel | None = None,
          callback=None) -> tuple[SceneModel, list]:
    """Jointly optimize geometry, BRDF, shadow refinement and lights.

    When ``out_dir`` is given, checkpoints are written periodically and at
    the end, along with the resolved config.  A non-finite loss aborts the
    run with :class:`TrainingDiverged` after saving the last good state.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    limits = threadpool_limits(1) if cfg.sequential else None
    try:
        return _train(ds, cfg, out_dir, log_path, model, callback)
    finally:
        if limits is not None:
            limits.restore_original_limits()


def _meta(ds, cfg):
    return {"transform": ds.transform.to_dict(), "train_config": cfg.to_dict()}


def _train(ds, cfg, out_dir, log_path, model, callback):
    if model is None:
        model = build_model(cfg, ds.n_lights)
    rng = np.random.default_rng(cfg.seed + 2)
    pool = build_ray_pool(ds, cfg.candidate_dilation)
    opt = AdamW(model.store)
    grid = OccupancyGrid(cfg.occupancy_resolution, cfg.occupancy_threshold) if cfg.occupancy else None
    history = []
    good = model.store.values.copy()
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow([f.name for f in fields(StepLog)])
    t0 = time.perf_counter()
    try:
        for step in range(cfg.steps):
            if grid is not None and step % cfg.occupancy_interval == 0 and step > 0:
                update_occupancy(grid, model.spatial.sdf, model.sharpness)
            model.store.zero_grad()
            try:
                # per-op scans are skipped here; a NaN anywhere reaches the loss
                with ad.finite_checks(False):
                    total, (lc, lm, le) = train_step(model, pool, cfg, rng, grid)
                finite = np.isfinite(total.value)
            except ad.NonFiniteError:
                finite = False
            if not finite:
                ckpt = None
                if out_dir is not None:
                    model.store.values[:] = good
                    ckpt = model.save(out_dir / "checkpoint", _meta(ds, cfg))
                raise TrainingDiverged(step, ckpt)
            good = model.store.values.copy()
            ad.backward(total)
            opt.step()
            rec = StepLog(step, float(total.value), float(lc.value), float(lm.value), float(le.value),
                          model.sharpness, grid.fraction if grid is not None else 1.0,
                          time.perf_counter() - t0)
            history.append(rec)
            if writer is not None and step % cfg.log_every == 0:
                writer.writerow([rec.step, f"{rec.loss:.8g}", f"{rec.color:.8g}", f"{rec.mask:.8g}",
                                 f"{rec.eikonal:.8g}", f"{rec.sharpness:.6g}", f"{rec.occupancy:.4f}",
                                 f"{rec.seconds:.2f}"])
            if callback is not None:
                callback(step, model, rec)
            if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                model.save(out_dir / "checkpoint", _meta(ds, cfg))
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        model.save(out_dir / "checkpoint", _meta(ds, cfg))
    return model, history
