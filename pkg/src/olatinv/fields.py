"""Neural fields: spatial (SDF + BRDF latent), BRDF and shadow MLPs."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .encodings import ANGULAR_DIM, HashEncodingConfig, HashGrid, angular_encode, sh_dim, sh_encode
from .optim import AdamW

log = logging.getLogger(__name__)

LATENT_DIM = 63


@dataclass
class FieldConfig:
    hash: HashEncodingConfig = field(default_factory=HashEncodingConfig)
    spatial_hidden: int = 64
    spatial_out: int = 64
    brdf_hidden: int = 64
    shadow_hidden: int = 64
    sdf_beta: float = 100.0
    clamp_beta: float = 10.0
    angular_encoding: bool = True
    sh_degree: int = 3
    init_sharpness: float = 20.0
    seed: int = 0

    @property
    def latent_dim(self):
        return self.spatial_out - 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "hash" in d and isinstance(d["hash"], dict):
            d["hash"] = HashEncodingConfig(**d["hash"])
        return cls(**d)


def _kaiming_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class MLP:
    """Fully connected stack whose weights live in a ParamStore group."""

    def __init__(self, store, prefix, sizes, group, rng, hidden="relu", output=None, out_bias=0.0):
        self.store = store
        self.prefix = prefix
        self.sizes = list(sizes)
        self.hidden = hidden
        self.output = output
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            if f"{prefix}/W{i}" in store:
                continue
            store.add(f"{prefix}/W{i}", _kaiming_uniform(rng, a, b), group)
            bias = np.full(b, out_bias) if i == len(sizes) - 2 else np.zeros(b)
            store.add(f"{prefix}/b{i}", bias, group)

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def __call__(self, x):
        h = x
        for i in range(self.n_layers):
            h = ad.matmul(h, self.store.node(f"{self.prefix}/W{i}")) + self.store.node(f"{self.prefix}/b{i}")
            last = i == self.n_layers - 1
            act = self.output if last else self.hidden
            if act == "relu":
                h = ad.relu(h)
            elif act == "sigmoid":
                h = ad.sigmoid(h)
        return h


class SpatialField:
    """Hash-encoded single-hidden-layer MLP predicting ``(g, b)``.

    The hidden activation is softplus with sharpness ``beta``.  Input is the
    hash features concatenated with the raw coordinates.
    """

    def __init__(self, store: ad.ParamStore, cfg: FieldConfig, rng: np.random.Generator):
        self.store = store
        self.cfg = cfg
        self.grid = HashGrid(store, cfg.hash, rng=rng)
        self.in_dim = self.grid.output_dim + 3
        self.beta = cfg.sdf_beta
        if "spatial/W0" not in store:
            store.add("spatial/W0", _kaiming_uniform(rng, self.in_dim, cfg.spatial_hidden), "spatial-mlp")
            store.add("spatial/b0", np.zeros(cfg.spatial_hidden), "spatial-mlp")
            store.add("spatial/W1", _kaiming_uniform(rng, cfg.spatial_hidden, cfg.spatial_out) * 0.1, "spatial-mlp")
            store.add("spatial/b1", np.zeros(cfg.spatial_out), "spatial-mlp")

    def _hidden(self, x):
        feats = self.grid.encode(x)
        z = ad.concat([feats, x], axis=-1)
        pre = ad.matmul(z, self.store.node("spatial/W0")) + self.store.node("spatial/b0")
        return pre, ad.softplus(pre, self.beta)

    def __call__(self, x):
        """Signed distance ``(P,)`` and latent ``(P, 63)``."""
        x = x if isinstance(x, ad.Node) else ad.constant(x)
        _, h = self._hidden(x)
        out = ad.matmul(h, self.store.node("spatial/W1")) + self.store.node("spatial/b1")
        return out[:, 0], out[:, 1:]

    def sdf(self, x):
        """Signed distance only (skips the latent columns)."""
        x = x if isinstance(x, ad.Node) else ad.constant(x)
        _, h = self._hidden(x)
        w = self.store.node("spatial/W1")[:, 0]
        return ad.matmul(h, w) + self.store.node("spatial/b1")[0]

    def with_gradient(self, x):
        """``(g, b, grad_x g)`` where the gradient is itself a graph node.

        The gradient is assembled in closed form (chain rule through the
        output column, the softplus derivative and the hash Jacobian), so
        parameter adjoints of anything computed from it are exact.
        """
        x = x if isinstance(x, ad.Node) else ad.constant(x)
        pre, h = self._hidden(x)
        W1 = self.store.node("spatial/W1")
        out = ad.matmul(h, W1) + self.store.node("spatial/b1")
        g, b = out[:, 0], out[:, 1:]
        dh = ad.sigmoid(pre * self.beta) * W1[:, 0]
        dz = ad.matmul(dh, ad.transpose(self.store.node("spatial/W0")))
        nf = self.grid.output_dim
        grad = self.grid.spatial_jacobian_t(x, dz[:, :nf]) + dz[:, nf:]
        return g, b, grad

    def normal_at(self, x):
        _, _, grad = self.with_gradient(x)
        gn = np.linalg.norm(grad.value, axis=-1)
        if np.any(gn < 1e-9):
            log.debug("normal_at: %d vanishing SDF gradient(s)", int(np.sum(gn < 1e-9)))
        return ad.normalize(grad)


class BRDFField:
    """Latent + direction encoding -> non-negative RGB BRDF value."""

    def __init__(self, store, cfg: FieldConfig, rng):
        self.store = store
        self.angular = cfg.angular_encoding
        self.sh_degree = cfg.sh_degree
        enc = ANGULAR_DIM if self.angular else 3 * sh_dim(cfg.sh_degree)
        self.mlp = MLP(store, "brdf", [cfg.latent_dim + enc, cfg.brdf_hidden, cfg.brdf_hidden, 3], "brdf-mlp",
                       rng, hidden="relu", output="relu", out_bias=0.1)

    def encode_directions(self, n, v, light):
        if self.angular:
            return angular_encode(n, v, light)
        return ad.concat([sh_encode(n, self.sh_degree, tol=1e-3), sh_encode(v, self.sh_degree),
                          sh_encode(light, self.sh_degree)], axis=-1)

    def __call__(self, b, n, v, light):
        return self.mlp(ad.concat([b, self.encode_directions(n, v, light)], axis=-1))


class ShadowField:
    """Refines a volume-rendered shadow factor into ``(0, 1)``."""

    def __init__(self, store, cfg: FieldConfig, rng):
        self.store = store
        self.sh_degree = cfg.sh_degree
        self.mlp = MLP(store, "shadow", [cfg.latent_dim + sh_dim(cfg.sh_degree) + 1, cfg.shadow_hidden,
                                         cfg.shadow_hidden, 1], "shadow-mlp", rng, hidden="relu", output="sigmoid")

    def __call__(self, b, v, s):
        s = s if isinstance(s, ad.Node) else ad.constant(s)
        x = ad.concat([b, sh_encode(v, self.sh_degree), ad.reshape(s, s.shape + (1,))], axis=-1)
        return self.mlp(x)[:, 0]


def default_groups(lr_mlp: float = 1e-2, lr_other: float = 1e-3, weight_decay: float = 1e-2,
                   lr_sharpness: float | None = None):
    """Optimizer groups: the spatial network (MLP + hash table) and BRDF MLP use ``lr_mlp``.

    ``lr_sharpness`` overrides ``lr_other`` for the log-sharpness scalar.
    """
    return [
        ad.ParamGroup("spatial-mlp", lr_mlp, weight_decay),
        ad.ParamGroup("hash-table", lr_mlp, 0.0),
        ad.ParamGroup("brdf-mlp", lr_mlp, weight_decay),
        ad.ParamGroup("shadow-mlp", lr_other, weight_decay),
        ad.ParamGroup("sharpness", lr_other if lr_sharpness is None else lr_sharpness, 0.0),
        ad.ParamGroup("light-dirs", lr_other, 0.0),
        ad.ParamGroup("light-log-intensity", lr_other, 0.0),
    ]


class SceneModel:
    """All learnable state: the three fields, the light rig and the opacity sharpness."""

    def __init__(self, cfg: FieldConfig, n_lights: int, store: ad.ParamStore | None = None, groups=None):
        from .lighting import LightRig

        self.cfg = cfg
        self.store = store if store is not None else ad.ParamStore(groups or default_groups())
        rng = np.random.default_rng(cfg.seed)
        self.spatial = SpatialField(self.store, cfg, rng)
        self.brdf = BRDFField(self.store, cfg, rng)
        self.shadow = ShadowField(self.store, cfg, rng)
        self.lights = LightRig(self.store, n_lights)
        if "sharpness/log_a" not in self.store:
            self.store.add("sharpness/log_a", np.array([np.log(cfg.init_sharpness)]), "sharpness")

    @property
    def n_lights(self):
        return self.lights.n

    @property
    def sharpness(self) -> float:
        return float(np.exp(self.store["sharpness/log_a"][0]))

    def sharpness_node(self) -> ad.Node:
        return ad.exp(self.store.node("sharpness/log_a"))

    def save(self, path, extra: dict | None = None):
        meta = {"config": self.cfg.to_dict(), "n_lights": self.n_lights}
        if extra:
            meta.update(extra)
        return save_checkpoint(path, self.store, meta)

    @classmethod
    def load(cls, path):
        store, header = load_checkpoint(path)
        model = cls(FieldConfig.from_dict(header["config"]), int(header["n_lights"]), store=store)
        return model, header


# ---------------------------------------------------------------- initialization


class InitError(RuntimeError):
    pass


def fit_sdf(spatial: SpatialField, target: Callable, steps: int = 2000, batch: int = 4096,
            lr: float = 1e-2, tol: float | None = None, rng=None, target_grad: Callable | None = None,
            eval_points: int = 20000, grad_weight: float = 0.3):
    """Regress the signed distance (and optionally its gradient) onto an analytic SDF.

    Only the spatial parameters move.  Returns the mean absolute residual on
    fresh uniform cube samples; raises :class:`InitError` when ``tol`` is given
    and not reached.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    store = spatial.store
    names = [n for n in store.names() if store.group_of(n) in ("spatial-mlp", "hash-table")]
    sub = ad.ParamStore([ad.ParamGroup("spatial-mlp", lr), ad.ParamGroup("hash-table", lr)])
    for n in names:
        sub.add(n, store[n], store.group_of(n))
    field_view = SpatialField.__new__(SpatialField)
    field_view.__dict__.update(spatial.__dict__)
    field_view.store = sub
    field_view.grid = HashGrid(sub, spatial.grid.cfg, name=spatial.grid.name)
    opt = AdamW(sub, betas=(0.9, 0.99), eps=1e-15)
    for step in range(steps):
        x = rng.uniform(-1.0, 1.0, size=(batch, 3))
        sub.zero_grad()
        if target_grad is not None:
            g, _, grad = field_view.with_gradient(x)
            loss = ad.mean(ad.square(g - target(x))) + grad_weight * ad.mean(ad.sum_(ad.square(grad - target_grad(x)), axis=-1))
        else:
            g = field_view.sdf(x)
            loss = ad.mean(ad.square(g - target(x)))
        ad.backward(loss)
        opt.step()
    for n in names:
        store[n] = sub[n]
    xe = rng.uniform(-1.0, 1.0, size=(eval_points, 3))
    with ad.no_grad():
        resid = float(np.mean(np.abs(spatial.sdf(xe).value - target(xe))))
    if tol is not None and resid >= tol:
        raise InitError(f"SDF fit did not converge: mean residual {resid:.4f} >= {tol}")
    return resid


def sphere_sdf(radius):
    return lambda x: np.linalg.norm(x, axis=-1) - radius


def _sphere_grad(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(n, 1e-12)


def init_sphere(spatial: SpatialField, radius: float = 0.5, steps: int = 2000, tol: float = 0.02,
                rng=None, batch: int = 4096, grad_weight: float = 0.3) -> float:
    """Fit the field to a sphere of ``radius``; returns the final mean residual."""
    return fit_sdf(spatial, sphere_sdf(radius), steps=steps, batch=batch, tol=tol, rng=rng,
                   target_grad=_sphere_grad, grad_weight=grad_weight)


# ---------------------------------------------------------------- checkpoints


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, store: ad.ParamStore, meta: dict) -> Path:
    """Write ``params.bin`` (little-endian float64) and ``header.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    store.values.astype("<f8").tofile(path / "params.bin")
    header = store.header()
    header.update(meta)
    header["config_hash"] = config_hash(meta.get("config", {}))
    (path / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return path


def load_checkpoint(path):
    """Return ``(store, header)``."""
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    values = np.fromfile(path / "params.bin", dtype="<f8")
    if values.size != header["size"]:
        raise ValueError(f"checkpoint size mismatch: {values.size} != {header['size']}")
    groups = [ad.ParamGroup(n, g["lr"], g["weight_decay"]) for n, g in header["groups"].items()]
    store = ad.ParamStore(groups)
    for p in sorted(header["params"], key=lambda p: p["offset"]):
        n = int(np.prod(p["shape"], dtype=np.int64))
        store.add(p["name"], values[p["offset"]:p["offset"] + n].reshape(p["shape"]), p["group"])
    return store, header
