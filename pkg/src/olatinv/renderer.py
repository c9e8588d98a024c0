"""Shadow-aware SDF volume rendering of OLAT pixels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .lighting import View
from .scene import SceneTransform

log = logging.getLogger(__name__)

SHADOW_NEAR = 1e-2
SHADOW_FAR = 0.5
SDF_EPS = 1e-12


@dataclass
class RayBatch:
    """Object-space rays with their sample depths and view/light bindings."""

    origins: np.ndarray
    dirs: np.ndarray
    near: np.ndarray
    far: np.ndarray
    hit: np.ndarray
    view_idx: np.ndarray
    light_idx: np.ndarray
    rot_t: np.ndarray
    t: np.ndarray | None = None
    interval_ok: np.ndarray | None = None

    def __len__(self):
        return self.origins.shape[0]

    def subset(self, idx) -> "RayBatch":
        pick = lambda a: None if a is None else a[idx]
        return RayBatch(self.origins[idx], self.dirs[idx], self.near[idx], self.far[idx], self.hit[idx],
                        self.view_idx[idx], self.light_idx[idx], self.rot_t[idx], pick(self.t),
                        pick(self.interval_ok))

    @staticmethod
    def concat(batches) -> "RayBatch":
        cat = lambda name: (None if getattr(batches[0], name) is None
                            else np.concatenate([getattr(b, name) for b in batches]))
        return RayBatch(*(cat(n) for n in ("origins", "dirs", "near", "far", "hit", "view_idx", "light_idx",
                                           "rot_t", "t", "interval_ok")))


def pixel_centers(height: int, width: int) -> np.ndarray:
    """Continuous ``(u, v)`` coordinates of all pixel centres, row-major."""
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([jj.ravel() + 0.5, ii.ravel() + 0.5], axis=1).astype(np.float64)


def sphere_bounds(o, d, radius=1.0):
    """Near/far distances of rays against a centred sphere; ``hit`` flags intersections."""
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius * radius
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    near = np.maximum(-b - sq, 0.0)
    far = -b + sq
    hit = (disc > 0) & (far > near)
    return near, far, hit


def generate_rays(view: View, pixels, transform: SceneTransform | None = None, view_index: int = 0) -> RayBatch:
    """Rays through continuous pixel coordinates ``(u, v)`` of ``view``, in object space."""
    transform = transform or SceneTransform()
    uv = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    P = uv.shape[0]
    hom = np.concatenate([uv, np.ones((P, 1))], axis=1)
    d = (view.R.T @ np.linalg.solve(view.K, hom.T)).T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(transform.to_object(view.center), (P, 3)).copy()
    near, far, hit = sphere_bounds(o, d)
    return RayBatch(o, d, near, far, hit, np.full(P, view_index), np.full(P, view.light),
                    np.broadcast_to(view.R.T, (P, 3, 3)).copy())


# ---------------------------------------------------------------- sampling


def sample_uniform(batch: RayBatch, n_samples: int, rng: np.random.Generator | None = None) -> RayBatch:
    """``n_samples`` strictly increasing depths in ``[near, far]`` (stratified if ``rng`` is given)."""
    R = len(batch)
    u = (np.arange(n_samples) + 0.5) / n_samples
    u = np.broadcast_to(u, (R, n_samples))
    if rng is not None:
        u = (np.arange(n_samples) + rng.uniform(0.0, 1.0, size=(R, n_samples))) / n_samples
    span = (batch.far - batch.near)[:, None]
    batch.t = batch.near[:, None] + u * span
    batch.interval_ok = np.ones((R, n_samples - 1), dtype=bool)
    return batch


def sample_occupied(batch: RayBatch, grid, n_samples: int, rng: np.random.Generator | None = None,
                    fine: int | None = None) -> RayBatch:
    """Spread samples uniformly over the occupied part of each ray.

    A fine march (about two steps per grid cell) marks occupied stretches;
    samples are placed at equal quantiles of the occupied length by
    inverting its piecewise-linear cumulative.  Intervals between two samples
    in different occupied runs are flagged so no opacity is accumulated
    across skipped space.  Rays with no occupied length keep uniform samples
    and have every interval disabled.
    """
    R = len(batch)
    if fine is None:
        fine = 2 * grid.resolution
    edges = np.linspace(0.0, 1.0, fine + 1)
    span = (batch.far - batch.near)[:, None]
    te = batch.near[:, None] + edges[None, :] * span
    mids = 0.5 * (te[:, :-1] + te[:, 1:])
    pts = batch.origins[:, None, :] + mids[..., None] * batch.dirs[:, None, :]
    occ = grid.lookup(pts.reshape(-1, 3)).reshape(R, fine)
    seg = (te[:, 1:] - te[:, :-1]) * occ
    cum = np.concatenate([np.zeros((R, 1)), np.cumsum(seg, axis=1)], axis=1)
    total = cum[:, -1]
    if rng is None:
        u = np.broadcast_to((np.arange(n_samples) + 0.5) / n_samples, (R, n_samples))
    else:
        u = (np.arange(n_samples) + rng.uniform(0.0, 1.0, size=(R, n_samples))) / n_samples
    target = u * total[:, None]
    # run id increments whenever an occupied stretch starts
    starts = occ & ~np.concatenate([np.zeros((R, 1), bool), occ[:, :-1]], axis=1)
    run = np.cumsum(starts, axis=1)
    t = np.empty((R, n_samples))
    rid = np.empty((R, n_samples), dtype=np.int64)
    for r in range(R):
        if total[r] <= 0:
            t[r] = batch.near[r] + u[r] * span[r, 0]
            rid[r] = -np.arange(n_samples)
            continue
        j = np.searchsorted(cum[r], target[r], side="right") - 1
        j = np.clip(j, 0, fine - 1)
        # skip zero-length (empty) fine cells sitting at the same cumulative value
        j = np.where(occ[r, j], j, np.searchsorted(cum[r], target[r], side="left"))
        j = np.clip(j, 0, fine - 1)
        frac = np.where(seg[r, j] > 0, (target[r] - cum[r, j]) / np.maximum(seg[r, j], 1e-300), 0.5)
        t[r] = te[r, j] + np.clip(frac, 0.0, 1.0) * (te[r, j + 1] - te[r, j])
        rid[r] = run[r, j]
    # enforce strict increase against ties from clipping
    t = np.maximum.accumulate(t, axis=1)
    t = t + np.arange(n_samples)[None, :] * 1e-9
    batch.t = t
    batch.interval_ok = (rid[:, 1:] == rid[:, :-1]) & (total[:, None] > 0)
    return batch


# ---------------------------------------------------------------- primitives


def opacity_from_sdf(g_k, g_next, a) -> ad.Node:
    """Discrete opacity ``max((sig(g_k) - sig(g_next)) / sig(g_k), 0)`` with ``sig(x) = 1/(1+exp(-a x))``.

    Where ``sig(g_k)`` underflows below 1e-12 the opacity is defined as 0.
    """
    s0 = ad.sigmoid(ad.mul(g_k, a))
    s1 = ad.sigmoid(ad.mul(g_next, a))
    ok = s0.value >= SDF_EPS
    ratio = ad.div(ad.sub(s0, s1), ad.clamp(s0, lo=SDF_EPS))
    return ad.select(ok, ad.relu(ratio), 0.0)


def sdf_alphas(g: ad.Node, a) -> ad.Node:
    """Opacities ``(R, K-1)`` for SDF values at ``K`` consecutive samples."""
    return opacity_from_sdf(g[:, :-1], g[:, 1:], a)


composite = ad.composite


def accumulate_weights(alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(T_k * alpha_k, T_{N+1})`` for an opacity array ``(R, K)``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    om = 1.0 - alpha
    trans = np.ones_like(alpha)
    trans[:, 1:] = np.cumprod(om[:, :-1], axis=1)
    return trans * alpha, trans[:, -1] * om[:, -1]


def surface_point(origins, dirs, alpha, t) -> ad.Node:
    """``x' = o + (sum_k T_k alpha_k t_k) v``."""
    depth = ad.composite(alpha, t)
    return ad.add(origins, ad.mul(ad.reshape(depth, depth.shape + (1,)), dirs))


def shadow_factor(spatial, x_surf, light, a, n_samples: int = 64, t_near: float = SHADOW_NEAR,
                  t_far: float = SHADOW_FAR) -> ad.Node:
    """Transmittance ``1 - sum T alpha`` along ``x' + t l`` for ``t`` uniform in ``[t_near, t_far]``.

    Shadow samples are clamped to the cube and contribute no opacity outside
    the unit sphere.
    """
    x_surf = x_surf if isinstance(x_surf, ad.Node) else ad.constant(x_surf)
    light = light if isinstance(light, ad.Node) else ad.constant(light)
    R = x_surf.shape[0]
    ts = np.linspace(t_near, t_far, n_samples)
    xs = ad.add(ad.reshape(x_surf, (R, 1, 3)), ad.mul(ad.reshape(light, (R, 1, 3)), ts[None, :, None]))
    flat = ad.reshape(xs, (R * n_samples, 3))
    inside = (np.linalg.norm(flat.value, axis=-1) <= 1.0).reshape(R, n_samples)
    gs = ad.reshape(spatial.sdf(ad.clamp(flat, -1.0, 1.0)), (R, n_samples))
    alpha = sdf_alphas(gs, a)
    alpha = ad.mul(alpha, (inside[:, 1:] & inside[:, :-1]).astype(np.float64))
    return ad.transmittance(alpha)


# ---------------------------------------------------------------- pixel rendering


@dataclass
class RenderOutput:
    rgb: ad.Node
    rgb_unshadowed: ad.Node
    radiance: ad.Node
    m: ad.Node
    depth: ad.Node
    s: ad.Node
    s_refined: ad.Node
    sdf_grad: ad.Node
    x_surface: ad.Node
    normal: ad.Node | None = None
    latent: ad.Node | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class LightOverride:
    """Substitute lights: world-space directions and RGB intensities per ray (or one for all)."""

    directions: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(np.abs(n - 1.0) > 1e-6):
            log.warning("relight: non-unit override direction normalized")
        self.directions = d / n
        self.intensities = np.atleast_2d(np.asarray(self.intensities, dtype=np.float64))


def _ray_lights(model, batch: RayBatch, override: LightOverride | None):
    R = len(batch)
    if override is not None:
        dirs = np.broadcast_to(override.directions, (R, 3))
        e = np.broadcast_to(override.intensities, (R, 3))
        return ad.constant(dirs), ad.constant(e)
    cam = model.lights.dir_nodes(batch.light_idx)
    return ad.matvec(batch.rot_t, cam), model.lights.intensity_nodes(batch.light_idx)


def render_rays(model, batch: RayBatch, train: bool = True, shadows: bool = True, shadow_samples: int = 64,
                override: LightOverride | None = None, want_normals: bool = False) -> RenderOutput:
    """Render every ray of a sampled batch (all rays must hit the unit sphere).

    ``train`` selects the softplus clamp of the cosine term; evaluation uses a
    hard ``max(., 0)``.  Rays whose accumulated opacity is below 0.5 carry an
    unrefined shadow of 1.
    """
    if batch.t is None:
        raise ValueError("render_rays: batch has no samples")
    R, K = batch.t.shape
    if K < 2:
        raise ValueError("render_rays: need at least two samples per ray")
    cfg = model.cfg
    o, d, t = batch.origins, batch.dirs, batch.t
    x = (o[:, None, :] + t[..., None] * d[:, None, :]).reshape(-1, 3)
    g, b, grad = model.spatial.with_gradient(x)
    a = model.sharpness_node()
    alpha = sdf_alphas(ad.reshape(g, (R, K)), a)
    alpha = ad.mul(alpha, batch.interval_ok.astype(np.float64))

    L = b.shape[-1]
    Ks = K - 1
    P = R * Ks
    b_s = ad.reshape(ad.reshape(b, (R, K, L))[:, :-1], (P, L))
    n_s = ad.normalize(ad.reshape(ad.reshape(grad, (R, K, 3))[:, :-1], (P, 3)))
    light_w, intensity = _ray_lights(model, batch, override)
    rep = np.repeat(np.arange(R), Ks)
    v_out = np.repeat(-d, Ks, axis=0)
    l_s = ad.take(light_w, rep)
    brdf = model.brdf(b_s, n_s, v_out, l_s)
    cos = ad.dot(n_s, l_s)
    clamp = ad.softplus(cos, cfg.clamp_beta) if train else ad.relu(cos)
    q = ad.reshape(ad.mul(brdf, ad.reshape(clamp, (P, 1))), (R, Ks, 3))
    radiance = ad.composite(alpha, q)
    m = ad.composite(alpha, np.ones((R, Ks)))
    t_mid = 0.5 * (t[:, :-1] + t[:, 1:])
    depth = ad.composite(alpha, t_mid)
    x_surf = ad.add(o, ad.mul(ad.reshape(depth, (R, 1)), d))

    fg = np.flatnonzero(m.value >= 0.5)
    if shadows and fg.size:
        xs = ad.clamp(x_surf, -1.0, 1.0)
        s_fg = shadow_factor(model.spatial, ad.take(xs, fg), ad.take(light_w, fg), a, shadow_samples)
        s = ad.scatter(s_fg, fg, R, fill=1.0)
    else:
        s = ad.constant(np.ones(R))
    _, b_surf = model.spatial(ad.clamp(x_surf, -1.0, 1.0))
    s_ref = model.shadow(b_surf, -d, s)
    unshadowed = ad.mul(intensity, radiance)
    rgb = ad.mul(ad.reshape(s_ref, (R, 1)), unshadowed)

    normal = None
    if want_normals:
        normal = ad.composite(alpha, ad.reshape(n_s, (R, Ks, 3)))
    return RenderOutput(rgb, unshadowed, radiance, m, depth, s, s_ref, grad, x_surf, normal, b_surf)


def render_pixel(model, batch: RayBatch, **kw) -> RenderOutput:
    return render_rays(model, batch, **kw)


def render_unshadowed(model, batch: RayBatch, **kw) -> ad.Node:
    return render_rays(model, batch, **kw).rgb_unshadowed


def relight(model, batch: RayBatch, direction, intensity, **kw) -> ad.Node:
    """Render with a substituted world-space light direction and RGB intensity."""
    return render_rays(model, batch, override=LightOverride(direction, intensity), **kw).rgb


# ---------------------------------------------------------------- full images


def render_image(model, view: View, transform: SceneTransform, n_samples: int = 64, grid=None,
                 chunk: int = 2048, shadows: bool = True, shadow_samples: int = 64,
                 override: LightOverride | None = None, pixels=None) -> dict:
    """Evaluation-mode render of a whole view; returns numpy maps.

    Keys: ``rgb``, ``unshadowed``, ``mask`` (accumulated opacity), ``depth``,
    ``shadow`` (refined), ``shadow_raw``, ``normal`` (world/object space),
    ``latent``.  Background rays (opacity < 0.5 or missing the unit sphere)
    are black with shadow 1.
    """
    H, W = view.height, view.width
    uv = pixel_centers(H, W) if pixels is None else pixels
    N = uv.shape[0]
    batch = generate_rays(view, uv, transform)
    out = {
        "rgb": np.zeros((N, 3)), "unshadowed": np.zeros((N, 3)), "mask": np.zeros(N), "depth": np.zeros(N),
        "shadow": np.ones(N), "shadow_raw": np.ones(N), "normal": np.zeros((N, 3)),
        "latent": np.zeros((N, model.cfg.latent_dim)),
    }
    idx = np.flatnonzero(batch.hit)
    with ad.no_grad():
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            sub = batch.subset(sel)
            if grid is not None:
                sample_occupied(sub, grid, n_samples)
            else:
                sample_uniform(sub, n_samples)
            r = render_rays(model, sub, train=False, shadows=shadows, shadow_samples=shadow_samples,
                            override=override, want_normals=True)
            out["rgb"][sel] = r.rgb.value
            out["unshadowed"][sel] = r.rgb_unshadowed.value
            out["mask"][sel] = r.m.value
            out["depth"][sel] = r.depth.value
            out["shadow"][sel] = r.s_refined.value
            out["shadow_raw"][sel] = r.s.value
            nv = r.normal.value
            out["normal"][sel] = nv / np.maximum(np.linalg.norm(nv, axis=1, keepdims=True), 1e-12)
            out["latent"][sel] = r.latent.value
    bg = out["mask"] < 0.5
    for key in ("rgb", "unshadowed", "normal", "latent"):
        out[key][bg] = 0.0
    out["shadow"][bg] = 1.0
    out["shadow_raw"][bg] = 1.0
    if pixels is None:
        out = {k: v.reshape((H, W) + v.shape[1:]) for k, v in out.items()}
    return out
