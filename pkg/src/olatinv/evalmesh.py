"""Mesh extraction, evaluation metrics and BRDF/latent visualizations."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial import cKDTree
from skimage import measure

from . import autodiff as ad

log = logging.getLogger(__name__)

PSNR_SENTINEL = 99.0


class EmptySurfaceError(ValueError):
    pass


# ---------------------------------------------------------------- meshes


def mesh_from_grid(values: np.ndarray, lo, hi):
    """Zero isosurface of samples on a regular grid spanning ``[lo, hi]``."""
    values = np.asarray(values, dtype=np.float64)
    if not (values.min() < 0.0 < values.max()):
        raise EmptySurfaceError("no zero crossing")
    lo, hi = np.broadcast_to(np.asarray(lo, float), (3,)), np.broadcast_to(np.asarray(hi, float), (3,))
    spacing = (hi - lo) / (np.array(values.shape) - 1)
    verts, faces, _, _ = measure.marching_cubes(values, level=0.0, spacing=tuple(spacing))
    return verts + lo, faces.astype(np.int64)


def mesh_from_sdf(sdf_fn, lo, hi, resolution: int, chunk: int = 65536):
    lo, hi = np.broadcast_to(np.asarray(lo, float), (3,)), np.broadcast_to(np.asarray(hi, float), (3,))
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        v = sdf_fn(pts[s:s + chunk])
        vals[s:s + chunk] = v.value if isinstance(v, ad.Node) else v
    return mesh_from_grid(vals.reshape((resolution,) * 3), lo, hi)


def marching_cubes(spatial, resolution: int = 128, transform=None):
    """Extract the zero level set of a spatial field over ``[-1, 1]^3``.

    With a scene ``transform`` the vertices are mapped to world space.
    """
    with ad.no_grad():
        verts, faces = mesh_from_sdf(spatial.sdf, -1.0, 1.0, resolution)
    if transform is not None:
        verts = transform.to_world(verts)
    return verts, faces


def write_obj(path, verts, faces):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path):
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def edge_valence(faces) -> np.ndarray:
    """How many faces share each undirected edge."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


# ---------------------------------------------------------------- ray casting


@njit(cache=True)
def _first_hits(orig, dirs, v0, e1, e2):
    n = dirs.shape[0]
    nf = v0.shape[0]
    t_out = np.full(n, np.inf)
    for r in range(n):
        o0, o1, o2 = orig[r, 0], orig[r, 1], orig[r, 2]
        d0, d1, d2 = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = np.inf
        for f in range(nf):
            p0 = d1 * e2[f, 2] - d2 * e2[f, 1]
            p1 = d2 * e2[f, 0] - d0 * e2[f, 2]
            p2 = d0 * e2[f, 1] - d1 * e2[f, 0]
            det = e1[f, 0] * p0 + e1[f, 1] * p1 + e1[f, 2] * p2
            if abs(det) < 1e-14:
                continue
            inv = 1.0 / det
            s0, s1, s2 = o0 - v0[f, 0], o1 - v0[f, 1], o2 - v0[f, 2]
            u = (s0 * p0 + s1 * p1 + s2 * p2) * inv
            if u < 0.0 or u > 1.0:
                continue
            q0 = s1 * e1[f, 2] - s2 * e1[f, 1]
            q1 = s2 * e1[f, 0] - s0 * e1[f, 2]
            q2 = s0 * e1[f, 1] - s1 * e1[f, 0]
            v = (d0 * q0 + d1 * q1 + d2 * q2) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[f, 0] * q0 + e2[f, 1] * q1 + e2[f, 2] * q2) * inv
            if 1e-9 < t < best:
                best = t
        t_out[r] = best
    return t_out


def ray_mesh_hits(origins, dirs, verts, faces):
    """Closest positive hit distance per ray (``inf`` for a miss); Moller-Trumbore."""
    origins = np.ascontiguousarray(np.broadcast_to(origins, dirs.shape), dtype=np.float64)
    tri = verts[faces]
    v0 = np.ascontiguousarray(tri[:, 0])
    e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
    e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
    return _first_hits(origins, np.ascontiguousarray(dirs, dtype=np.float64), v0, e1, e2)


def visible_points(verts, faces, views, masks, stride: int = 4):
    from .scene import pixel_rays

    pts = []
    for v, m in zip(views, masks):
        ii, jj = np.nonzero(m)
        sel = (ii % stride == 0) & (jj % stride == 0)
        if not sel.any():
            continue
        o, d = pixel_rays(v, np.stack([jj[sel] + 0.5, ii[sel] + 0.5], axis=1))
        t = ray_mesh_hits(o, d, verts, faces)
        ok = np.isfinite(t)
        pts.append(o + t[ok, None] * d[ok])
    return np.concatenate(pts) if pts else np.zeros((0, 3))


def chamfer(points_a, points_b) -> float:
    """Symmetric Chamfer distance: sum of both mean nearest-neighbour distances."""
    if len(points_a) == 0 or len(points_b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    da, _ = cKDTree(points_b).query(points_a)
    db, _ = cKDTree(points_a).query(points_b)
    return float(np.mean(da) + np.mean(db))


def chamfer_visible(mesh_a, mesh_b, views, masks, stride: int = 4) -> float:
    """Chamfer distance between the surface points of two world-space meshes seen by ``views``."""
    pa = visible_points(*mesh_a, views, masks, stride)
    pb = visible_points(*mesh_b, views, masks, stride)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("no ray hits on one of the meshes")
    return chamfer(pa, pb)


# ---------------------------------------------------------------- metrics


def angular_errors(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)))


def normal_mae(normals_a, normals_b, mask=None) -> float:
    """Mean angular difference in degrees over ``mask``."""
    a = np.asarray(normals_a, dtype=np.float64)
    b = np.asarray(normals_b, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        a, b = a[mask], b[mask]
    a, b = a.reshape(-1, 3), b.reshape(-1, 3)
    if a.shape[0] == 0:
        raise ValueError("normal_mae: empty mask")
    return float(np.mean(angular_errors(a, b)))


def psnr(img_a, img_b, mask=None) -> float:
    """``10 log10(1 / MSE)`` with MAX = 1; identical inputs give the 99 dB sentinel."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        a, b = a[mask], b[mask]
    if a.size == 0:
        raise ValueError("psnr: empty mask")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return float(10.0 * np.log10(1.0 / mse))


def si_scale(e_est, e_gt) -> float:
    e_est = np.asarray(e_est, dtype=np.float64)
    e_gt = np.asarray(e_gt, dtype=np.float64)
    den = float(np.sum(e_est * e_est))
    if den == 0.0:
        raise ValueError("si_mse: all estimated intensities are zero")
    return float(np.sum(e_est * e_gt)) / den


def si_mse(e_est, e_gt) -> tuple[float, float]:
    """Scale-invariant relative intensity error and the optimal scale ``s_e``."""
    e_est = np.asarray(e_est, dtype=np.float64).ravel()
    e_gt = np.asarray(e_gt, dtype=np.float64).ravel()
    if np.any(e_gt <= 0):
        raise ValueError("si_mse: ground-truth intensities must be positive")
    s = si_scale(e_est, e_gt)
    return float(np.mean(np.abs(s * e_est - e_gt) / e_gt)), s


def light_mae(dirs_est, dirs_gt) -> float:
    a = np.asarray(dirs_est, dtype=np.float64)
    b = np.asarray(dirs_gt, dtype=np.float64)
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return float(np.mean(angular_errors(a, b)))


# ---------------------------------------------------------------- visualizations


def hemisphere_normals(resolution: int):
    """Normals of a front-facing hemisphere (centre pixel faces ``[0, 0, -1]``) and the disk mask."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    y, x = np.meshgrid(c, c, indexing="ij")
    r2 = x * x + y * y
    disk = r2 <= 1.0
    n = np.stack([x, y, -np.sqrt(np.maximum(1.0 - r2, 0.0))], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return n, disk


def render_brdf_sphere(brdf, latent, resolution: int = 64) -> np.ndarray:
    """BRDF values for view and light fixed at ``[0, 0, -1]`` over hemisphere normals."""
    n, disk = hemisphere_normals(resolution)
    nn = n[disk]
    P = nn.shape[0]
    b = np.broadcast_to(np.asarray(latent, dtype=np.float64).reshape(1, -1), (P, np.size(latent)))
    vl = np.tile([0.0, 0.0, -1.0], (P, 1))
    with ad.no_grad():
        vals = brdf(ad.constant(b), ad.constant(nn), ad.constant(vl), ad.constant(vl)).value
    img = np.zeros((resolution, resolution, 3))
    img[disk] = vals
    return img


def latent_pca(latents: np.ndarray) -> np.ndarray:
    """Project latents to 3 principal components mapped affinely into ``[0, 1]``."""
    X = np.asarray(latents, dtype=np.float64)
    if X.shape[0] < 3:
        raise ValueError("latent map needs at least 3 foreground pixels")
    Xc = X - X.mean(axis=0)
    _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
    if sv[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        return np.full((X.shape[0], 3), 0.5)
    k = min(3, vt.shape[0])
    Y = Xc @ vt[:k].T
    if k < 3:
        Y = np.concatenate([Y, np.zeros((Y.shape[0], 3 - k))], axis=1)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    rng = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    return np.clip((Y - lo) / rng, 0.0, 1.0)


def latent_map(model, view, transform, n_samples: int = 64, grid=None) -> np.ndarray:
    from .renderer import render_image

    maps = render_image(model, view, transform, n_samples=n_samples, grid=grid, shadows=False)
    fg = maps["mask"] >= 0.5
    img = np.zeros(fg.shape + (3,))
    img[fg] = latent_pca(maps["latent"][fg])
    return img


# ---------------------------------------------------------------- full evaluation


def evaluate(model, ds, gt_mesh=None, gt_lights=None, n_samples: int = 64, shadow_samples: int = 64,
             mesh_resolution: int = 128, stride: int = 4, gt_normals=None) -> dict:
    """All six scalar metrics for a trained model on a (synthetic) dataset.

    Missing ground truth yields ``None`` for the affected metrics.  Normal
    error is pooled over every training view's foreground; test-light PSNR
    uses the ground-truth test lights with intensities mapped through the
    per-channel scale from the SI fit.
    """
    from .renderer import LightOverride, render_image
    from .scene import read_gt_lights

    metrics = {"cd_mm": None, "normal_mae_deg": None, "psnr_train": None, "psnr_test": None,
               "light_mae_deg": None, "si_mse": None}
    tr = ds.transform
    renders = [render_image(model, v, tr, n_samples=n_samples, shadow_samples=shadow_samples) for v in ds.views]
    pred_masks = [r["mask"] >= 0.5 for r in renders]
    metrics["psnr_train"] = psnr(np.concatenate([np.clip(r["rgb"][m], 0, 1) for r, m in zip(renders, ds.masks)]),
                                 np.concatenate([np.clip(img[m], 0, 1) for img, m in zip(ds.images, ds.masks)]))

    if gt_normals is None and ds.gt.get("gt_normals"):
        from .scene import read_pfm

        gt_normals = [read_pfm(p) for p in ds.gt["gt_normals"]]
    if gt_normals is not None:
        a, b = [], []
        for r, n, m, pm in zip(renders, gt_normals, ds.masks, pred_masks):
            sel = m & pm
            a.append(r["normal"][sel])
            b.append(n[sel])
        metrics["normal_mae_deg"] = normal_mae(np.concatenate(a), np.concatenate(b))

    gt_mesh = gt_mesh if gt_mesh is not None else ds.gt.get("gt_mesh")
    if gt_mesh is not None:
        gm = read_obj(gt_mesh) if isinstance(gt_mesh, (str, Path)) else gt_mesh
        pm = marching_cubes(model.spatial, mesh_resolution, transform=tr)
        metrics["cd_mm"] = chamfer_visible(pm, gm, ds.views, ds.masks, stride)

    gt_lights = gt_lights if gt_lights is not None else ds.gt.get("gt_lights")
    if gt_lights is not None:
        gdirs, gint = read_gt_lights(gt_lights) if isinstance(gt_lights, (str, Path)) else gt_lights
        metrics["light_mae_deg"] = light_mae(model.lights.directions, gdirs)
        est = model.lights.intensities
        metrics["si_mse"] = si_mse(est[:, 1], gint[:, 1])[0]
        if ds.test_views:
            scale = np.array([si_scale(est[:, c], gint[:, c]) for c in range(3)])
            pred, ref = [], []
            for v, img, m in zip(ds.test_views, ds.test_images, ds.test_masks):
                tl = ds.test_lights[v.light]
                ov = LightOverride(v.R.T @ np.asarray(tl["direction"], float),
                                   np.asarray(tl["intensity"], float) / scale)
                r = render_image(model, v, tr, n_samples=n_samples, shadow_samples=shadow_samples, override=ov)
                pred.append(np.clip(r["rgb"][m], 0, 1))
                ref.append(np.clip(img[m], 0, 1))
            metrics["psnr_test"] = psnr(np.concatenate(pred), np.concatenate(ref))
    return metrics


def write_metrics(path, metrics: dict):
    clean = {k: (None if v is None else round(float(v), 10)) for k, v in metrics.items()}
    Path(path).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    return clean
