"""Input encodings: hash grid for positions, angular and SH encodings for directions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import _hashkernels as hk
from . import autodiff as ad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HashEncodingConfig:
    base_resolution: int = 32
    levels: int = 14
    features_per_level: int = 2
    table_size: int = 2 ** 16
    growth_factor: float = 1.38

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def resolutions(self) -> np.ndarray:
        return np.array(
            [int(np.floor(self.base_resolution * self.growth_factor ** lev)) for lev in range(self.levels)],
            dtype=np.int64,
        )

    def dense_levels(self) -> np.ndarray:
        return np.array([(n + 1) ** 3 <= self.table_size for n in self.resolutions()], dtype=np.bool_)

    def to_dict(self):
        return asdict(self)


def _clamp_points(x: np.ndarray) -> np.ndarray:
    if np.any(np.abs(x) > 1.0):
        n_out = int(np.sum(np.any(np.abs(x) > 1.0, axis=-1)))
        log.warning("hash_encode: %d point(s) outside [-1, 1]^3 clamped", n_out)
        return np.clip(x, -1.0, 1.0)
    return x


class HashGrid:
    """Multi-resolution hash encoding whose table lives in a ParamStore.

    Levels whose ``(N+1)^3`` vertices fit in the table are indexed densely;
    finer levels use XOR-folded prime hashing with unresolved collisions.
    """

    def __init__(self, store: ad.ParamStore, cfg: HashEncodingConfig = HashEncodingConfig(),
                 name: str = "hash/table", rng: np.random.Generator | None = None, init_scale: float = 1e-4):
        self.cfg = cfg
        self.store = store
        self.name = name
        self.res = cfg.resolutions()
        self.dense = cfg.dense_levels()
        if name not in store:
            rng = rng if rng is not None else np.random.default_rng(0)
            shape = (cfg.levels, cfg.table_size, cfg.features_per_level)
            store.add(name, rng.uniform(-init_scale, init_scale, size=shape), "hash-table")

    @property
    def output_dim(self):
        return self.cfg.output_dim

    def encode(self, x) -> ad.Node:
        """Features ``(P, levels * features)`` for object-space points ``(P, 3)``."""
        xn = x if isinstance(x, ad.Node) else ad.constant(x)
        xv = _clamp_points(np.ascontiguousarray(xn.value, dtype=np.float64))
        table = self.store.node(self.name)
        tv = table.value
        res, dense = self.res, self.dense
        feats = hk.encode(xv, tv, res, dense)
        P, L, F = feats.shape

        def vjp(g):
            g3 = np.ascontiguousarray(g.reshape(P, L, F))
            gt = hk.grad_table(xv, g3, res, dense, tv.shape[1]) if table.requires_grad else None
            gx = hk.contract(xv, tv, res, dense, g3) if xn.requires_grad else None
            return gx, gt

        return ad.custom("hash_encode", feats.reshape(P, L * F), (xn, table), vjp)

    def spatial_jacobian_t(self, x, u) -> ad.Node:
        """``J(x)^T u``: contract per-feature sensitivities ``u`` with d(features)/dx.

        Used to build the SDF gradient as a first-order graph.  Adjoints flow
        to ``u`` and the table exactly, and to ``x`` via the in-cell second
        derivative of the trilinear weights.
        """
        xn = x if isinstance(x, ad.Node) else ad.constant(x)
        un = u if isinstance(u, ad.Node) else ad.constant(u)
        xv = _clamp_points(np.ascontiguousarray(xn.value, dtype=np.float64))
        table = self.store.node(self.name)
        tv = table.value
        res, dense = self.res, self.dense
        P = xv.shape[0]
        L, F = self.cfg.levels, self.cfg.features_per_level
        u3 = np.ascontiguousarray(un.value.reshape(P, L, F))
        out = hk.contract(xv, tv, res, dense, u3)

        def vjp(g):
            gu, gt, gx = hk.contract_backward(
                xv, tv, res, dense, u3, np.ascontiguousarray(g),
                un.requires_grad, table.requires_grad, xn.requires_grad)
            return (gx if xn.requires_grad else None,
                    gu.reshape(P, L * F) if un.requires_grad else None,
                    gt if table.requires_grad else None)

        return ad.custom("hash_jacobian", out, (xn, un, table), vjp)


def hash_encode(x, grid: HashGrid) -> ad.Node:
    return grid.encode(x)


# ---------------------------------------------------------------- angular encoding

ANGULAR_DIM = 5


def angular_encode(n, v, light) -> ad.Node:
    """Rotation-invariant features ``[n.h, l.h, n.l, n.v, (n.h)^10]``.

    ``h`` is the normalized half vector of ``light`` and ``v``; the
    antipodal case falls back on the epsilon-guarded normalization.
    """
    h = ad.normalize(ad.add(light, v))
    nh = ad.dot(n, h)
    comps = [nh, ad.dot(light, h), ad.dot(n, light), ad.dot(n, v), ad.pow_int(nh, 10)]
    return ad.concat([ad.reshape(c, c.shape + (1,)) for c in comps], axis=-1)


# ---------------------------------------------------------------- spherical harmonics

_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
       -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_dim(degree: int) -> int:
    return (degree + 1) ** 2


def sh_encode(v, degree: int = 3, tol: float = 1e-4) -> ad.Node:
    """Real orthonormal spherical harmonics up to ``degree`` (at most 3)."""
    if not 0 <= degree <= 3:
        raise ValueError("sh_encode supports degrees 0..3")
    vn = v if isinstance(v, ad.Node) else ad.constant(v)
    norms = np.linalg.norm(vn.value, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("sh_encode expects unit-norm directions")
    x, y, z = vn[..., 0], vn[..., 1], vn[..., 2]
    ones = ad.constant(np.ones(x.shape))
    out = [ones * _C0]
    if degree >= 1:
        out += [y * -_C1, z * _C1, x * -_C1]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            x * y * _C2[0],
            y * z * _C2[1],
            (zz * 2.0 - xx - yy) * _C2[2],
            x * z * _C2[3],
            (xx - yy) * _C2[4],
        ]
    if degree >= 3:
        out += [
            y * (xx * 3.0 - yy) * _C3[0],
            x * y * z * _C3[1],
            y * (zz * 4.0 - xx - yy) * _C3[2],
            z * (zz * 2.0 - xx * 3.0 - yy * 3.0) * _C3[3],
            x * (zz * 4.0 - xx - yy) * _C3[4],
            z * (xx - yy) * _C3[5],
            x * (xx - yy * 3.0) * _C3[6],
        ]
    return ad.concat([ad.reshape(c, c.shape + (1,)) for c in out], axis=-1)
