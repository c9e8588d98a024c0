"""Dataset layout, scene normalization and the analytic synthetic OLAT generator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .lighting import View

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------- transform


@dataclass
class SceneTransform:
    """Object-to-world similarity without rotation: ``x_W = s * x_O + d``."""

    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.scale = float(self.scale)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise ValueError("scene scale must be positive")

    def to_object(self, x):
        return (np.asarray(x, dtype=np.float64) - self.translation) / self.scale

    def to_world(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.translation

    @staticmethod
    def direction(v):
        """Directions are unchanged by the normalization."""
        return v

    def to_dict(self):
        return {"scale": self.scale, "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["scale"], d["translation"])


def to_object(x, transform: SceneTransform):
    return transform.to_object(x)


def to_world(x, transform: SceneTransform):
    return transform.to_world(x)


# ---------------------------------------------------------------- image IO


def write_pfm(path, img):
    img = np.asarray(img, dtype="<f4")
    if img.ndim == 2:
        header = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM needs an (H, W) or (H, W, 3) array")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise DatasetError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(w * h * ch * 4), dtype=dtype)
    if data.size != w * h * ch:
        raise DatasetError(f"{path}: truncated PFM data")
    img = data.reshape(h, w, ch)[::-1].astype(np.float64)
    return img if ch == 3 else img[..., 0]


def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def read_image(path, linearized=True) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        img = read_pfm(path)
        return img if img.ndim == 3 else np.repeat(img[..., None], 3, axis=-1)
    arr = np.asarray(Image.open(path).convert("RGB"))
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    img = arr.astype(np.float64) / scale
    return srgb_to_linear(img) if linearized else img


def write_png(path, img, bits=8, srgb=True):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bits == 16 and img.ndim == 3:
        log.warning("16-bit PNG output is single-channel only; writing 8-bit RGB")
    if srgb:
        img = linear_to_srgb(img)
    if bits == 16 and img.ndim == 2:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def write_mask(path, mask):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


# ---------------------------------------------------------------- dataset


@dataclass
class Dataset:
    views: list
    n_lights: int
    images: list
    masks: list
    transform: SceneTransform = field(default_factory=SceneTransform)
    root: Path | None = None
    gt: dict = field(default_factory=dict)
    test_views: list = field(default_factory=list)
    test_images: list = field(default_factory=list)
    test_masks: list = field(default_factory=list)
    test_lights: list = field(default_factory=list)

    def __len__(self):
        return len(self.views)

    @property
    def shape(self):
        return self.images[0].shape[:2]

    def light_groups(self) -> dict:
        groups = {}
        for i, v in enumerate(self.views):
            groups.setdefault(v.light, []).append(i)
        return groups


def _view_from_json(d, n_lights, where):
    try:
        v = View(d["K"], d["R"], d["t"], d["light"], d.get("image", ""), d.get("mask", ""))
    except KeyError as e:
        raise DatasetError(f"{where}: missing key {e.args[0]!r}") from None
    except ValueError as e:
        raise DatasetError(f"{where}: {e}") from None
    try:
        v.validate(n_lights)
    except ValueError as e:
        raise DatasetError(f"{where}: {e}") from None
    return v


def _load_view_images(root, views, linearized, where):
    images, masks = [], []
    for i, v in enumerate(views):
        ip, mp = root / v.image, root / v.mask
        if not ip.is_file():
            raise DatasetError(f"{where}[{i}]: missing image {v.image}")
        if not mp.is_file():
            raise DatasetError(f"{where}[{i}]: missing mask {v.mask}")
        img = read_image(ip, linearized)
        m = read_mask(mp)
        if img.shape[:2] != m.shape:
            raise DatasetError(f"{where}[{i}]: image {img.shape[:2]} and mask {m.shape} differ in size")
        v.height, v.width = m.shape
        images.append(img)
        masks.append(m)
    return images, masks


def load_dataset(root, normalize: bool = True, k: float = 5.0) -> Dataset:
    """Read ``scene.json`` + images/masks and estimate the scene transform."""
    root = Path(root)
    sj = root / "scene.json"
    if not sj.is_file():
        raise DatasetError(f"{root}: scene.json not found")
    try:
        meta = json.loads(sj.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"scene.json: line {e.lineno} col {e.colno}: {e.msg}") from None
    if "lights" not in meta or "views" not in meta:
        raise DatasetError("scene.json: needs 'lights' and 'views'")
    n_lights = int(meta["lights"])
    linearized = bool(meta.get("linearized", True))
    views = [_view_from_json(d, n_lights, f"views[{i}]") for i, d in enumerate(meta["views"])]
    if not views:
        raise DatasetError("scene.json: no views")
    images, masks = _load_view_images(root, views, linearized, "views")
    ds = Dataset(views, n_lights, images, masks, root=root)
    for key in ("gt_lights", "gt_mesh"):
        if key in meta:
            ds.gt[key] = str(root / meta[key])
    if meta.get("gt_normals"):
        ds.gt["gt_normals"] = [str(root / p) for p in meta["gt_normals"]]
    if meta.get("test_views"):
        ds.test_lights = meta.get("test_lights", [])
        nt = max(len(ds.test_lights), 1)
        ds.test_views = [_view_from_json(d, nt, f"test_views[{i}]") for i, d in enumerate(meta["test_views"])]
        ds.test_images, ds.test_masks = _load_view_images(root, ds.test_views, linearized, "test_views")
    if normalize:
        d = estimate_translation(views, masks)
        s = estimate_scale(views, masks, d, k=k)
        ds.transform = SceneTransform(s, d)
    return ds


def write_dataset(ds: Dataset, root, extra: dict | None = None) -> Path:
    """Write images as PFM and masks as PNG under ``root``; lossless for both."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)

    def dump(views, images, masks, prefix):
        out = []
        for i, (v, img, m) in enumerate(zip(views, images, masks)):
            v.image = f"images/{prefix}{i:04d}.pfm"
            v.mask = f"masks/{prefix}{i:04d}.png"
            write_pfm(root / v.image, img)
            write_mask(root / v.mask, m)
            out.append(v.to_dict())
        return out

    meta = {"lights": ds.n_lights, "views": dump(ds.views, ds.images, ds.masks, "")}
    if ds.test_views:
        meta["test_views"] = dump(ds.test_views, ds.test_images, ds.test_masks, "test_")
        meta["test_lights"] = ds.test_lights
    if extra:
        meta.update(extra)
    (root / "scene.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return root


# ---------------------------------------------------------------- normalization


def pixel_rays(view: View, uv) -> tuple[np.ndarray, np.ndarray]:
    """World-space origin and unit directions through continuous pixel coords ``uv``."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    h = np.concatenate([uv, np.ones((uv.shape[0], 1))], axis=1)
    d = (view.R.T @ np.linalg.solve(view.K, h.T)).T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return view.center, d


def mask_centroid(mask) -> np.ndarray:
    ii, jj = np.nonzero(mask)
    if ii.size == 0:
        raise DatasetError("empty foreground mask")
    return np.array([jj.mean() + 0.5, ii.mean() + 0.5])


def estimate_translation(views, masks=None, rays=None) -> np.ndarray:
    """Least-squares point closest to every view's centre-of-mass ray.

    Either ``views`` + ``masks`` or explicit ``rays`` (list of ``(origin,
    direction)``) may be given.
    """
    if rays is None:
        rays = []
        for v, m in zip(views, masks):
            o, d = pixel_rays(v, mask_centroid(m))
            rays.append((o, d[0]))
    V = np.zeros((3, 3))
    b = np.zeros(3)
    for o, d in rays:
        d = np.asarray(d, dtype=np.float64)
        d = d / np.linalg.norm(d)
        P = np.eye(3) - np.outer(d, d)
        V += P
        b += P @ np.asarray(o, dtype=np.float64)
    ev = np.linalg.eigvalsh(V)
    if ev[0] <= 1e-9 * max(ev[-1], 1.0):
        raise DatasetError("degenerate camera configuration")
    return np.linalg.lstsq(V, b, rcond=None)[0]


def estimate_scale(views, masks, d, k: float = 5.0, areas=None) -> float:
    """Closed-form object-to-world scale from foreground areas and focal lengths."""
    d = np.asarray(d, dtype=np.float64)
    if areas is None:
        areas = [float(np.count_nonzero(m)) for m in masks]
    denom = 0.0
    for v in views:
        z = float((v.R @ d + v.t)[2])
        if z <= 0:
            raise DatasetError("object centre lies behind a camera")
        denom += v.focal ** 2 / z ** 2
    return float(np.sqrt(k * float(np.sum(areas)) / (np.pi * denom)))


def enclosure_margins(views, masks, transform: SceneTransform) -> np.ndarray:
    """Per view, the minimum over foreground pixels of ``1 - dist(ray, centre) / s``.

    Positive values mean the projected unit sphere encloses the foreground.
    """
    out = []
    for v, m in zip(views, masks):
        ii, jj = np.nonzero(m)
        o, dirs = pixel_rays(v, np.stack([jj + 0.5, ii + 0.5], axis=1))
        w = transform.translation - o
        along = dirs @ w
        perp = np.sqrt(np.maximum(w @ w - along ** 2, 0.0))
        out.append(float(np.min(1.0 - perp / transform.scale)))
    return np.array(out)


# ---------------------------------------------------------------- synthetic scenes


def _sd_sphere(p, c, r):
    return np.linalg.norm(p - c, axis=-1) - r


def _sd_capsule(p, a, b, r):
    pa, ba = p - a, b - a
    h = np.clip((pa @ ba) / (ba @ ba), 0.0, 1.0)
    return np.linalg.norm(pa - h[:, None] * ba, axis=-1) - r


def _smin(a, b, k):
    if k <= 0:
        return np.minimum(a, b)
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1 - h) + a * h - k * h * (1 - h)


class AnalyticScene:
    """Union of analytic primitives with one material index per primitive."""

    def __init__(self, primitives, materials, blend=0.0):
        if not primitives:
            raise DatasetError("scene spec: 'primitives' must be non-empty")
        self.prims = []
        for i, p in enumerate(primitives):
            kind = p.get("type")
            try:
                if kind == "sphere":
                    self.prims.append(("sphere", np.asarray(p["center"], float), None, float(p["radius"])))
                elif kind == "capsule":
                    self.prims.append(("capsule", np.asarray(p["a"], float), np.asarray(p["b"], float),
                                       float(p["radius"])))
                else:
                    raise DatasetError(f"scene spec: primitives[{i}].type: unknown primitive {kind!r}")
            except KeyError as e:
                raise DatasetError(f"scene spec: primitives[{i}]: missing key {e.args[0]!r}") from None
        self.material_of = [int(p.get("material", 0)) for p in primitives]
        self.materials = materials
        for i, m in enumerate(self.material_of):
            if not 0 <= m < len(materials):
                raise DatasetError(f"scene spec: primitives[{i}].material: index {m} out of range")
        self.blend = float(blend)

    def parts(self, p):
        out = []
        for kind, a, b, r in self.prims:
            out.append(_sd_sphere(p, a, r) if kind == "sphere" else _sd_capsule(p, a, b, r))
        return np.stack(out, axis=0)

    def sdf(self, p):
        d = self.parts(p)
        acc = d[0]
        for di in d[1:]:
            acc = _smin(acc, di, self.blend)
        return acc

    def material(self, p):
        return np.asarray(self.material_of)[np.argmin(self.parts(p), axis=0)]

    def normal(self, p, h=1e-5):
        g = np.zeros_like(p)
        for ax in range(3):
            e = np.zeros(3)
            e[ax] = h
            g[:, ax] = self.sdf(p + e) - self.sdf(p - e)
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def bounds(self):
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for kind, a, b, r in self.prims:
            pts = [a] if b is None else [a, b]
            for q in pts:
                lo = np.minimum(lo, q - r)
                hi = np.maximum(hi, q + r)
        return lo, hi

    def bounding_sphere(self):
        lo, hi = self.bounds()
        c = 0.5 * (lo + hi)
        return c, 0.5 * np.linalg.norm(hi - lo) * 1.05

    def trace(self, o, d, max_steps=512):
        """Sphere tracing; returns ``(hit, t)`` per ray."""
        c, rad = self.bounding_sphere()
        o = np.broadcast_to(o, d.shape)
        oc = o - c
        bb = np.sum(oc * d, axis=1)
        disc = bb * bb - (np.sum(oc * oc, axis=1) - rad * rad)
        live = disc > 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = np.maximum(-bb - sq, 0.0)
        tfar = -bb + sq
        hit = np.zeros(d.shape[0], dtype=bool)
        eps = 1e-6 * rad
        for _ in range(max_steps):
            idx = np.flatnonzero(live & ~hit)
            if idx.size == 0:
                break
            dist = self.sdf(o[idx] + t[idx, None] * d[idx])
            done = dist < eps
            hit[idx[done]] = True
            t[idx[~done]] += dist[~done]
            live[idx[t[idx] > tfar[idx]]] = False
        return hit & live, t


def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera ``(R, t)`` for an OpenCV-style camera (x right, y down, z forward)."""
    center = np.asarray(center, float)
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, float), z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross([0.0, -1.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ center


def light_direction(elevation_deg, azimuth_deg):
    """Camera-space unit direction tilted ``elevation`` degrees off the frontal ``[0,0,-1]``."""
    th, ph = np.radians(elevation_deg), np.radians(azimuth_deg)
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), -np.cos(th)])


def _rgb(x):
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(x, 3) if x.size == 1 else x.reshape(3)


def _parse_lights(items, where):
    dirs, ints = [], []
    for i, it in enumerate(items):
        if "direction" in it:
            d = np.asarray(it["direction"], float)
        elif "elevation" in it:
            d = light_direction(it["elevation"], it.get("azimuth", 0.0))
        else:
            raise DatasetError(f"scene spec: {where}[{i}]: needs 'direction' or 'elevation'")
        dirs.append(d / np.linalg.norm(d))
        ints.append(_rgb(it.get("intensity", 1.0)))
    return np.array(dirs), np.array(ints)


def _ring_poses(target, distance, azimuths, elevations):
    poses = []
    for az, el in zip(azimuths, elevations):
        a, e = np.radians(az), np.radians(el)
        c = np.asarray(target) + distance * np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
        poses.append(look_at(c, target))
    return poses


def shade(scene: AnalyticScene, p, n, v_out, light, intensity, shadows=True):
    """Closed-form OLAT radiance with binary visibility; ``light`` is a world direction."""
    mats = scene.material(p)
    albedo = np.array([_rgb(scene.materials[m].get("albedo", 0.8)) for m in range(len(scene.materials))])[mats]
    ks = np.array([float(scene.materials[m].get("specular", 0.0)) for m in range(len(scene.materials))])[mats]
    shin = np.array([float(scene.materials[m].get("shininess", 32.0)) for m in range(len(scene.materials))])[mats]
    cos = np.maximum(n @ light, 0.0)
    h = v_out + light
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    spec = ks * np.maximum(np.sum(n * h, axis=1), 0.0) ** shin
    f = albedo / np.pi + spec[:, None]
    vis = np.ones(p.shape[0])
    if shadows:
        vis = visibility(scene, p, n, light)
    return intensity * f * (cos * vis)[:, None], vis


def visibility(scene: AnalyticScene, p, n, light):
    _, rad = scene.bounding_sphere()
    start = p + n * (1e-4 * rad) + light * (1e-4 * rad)
    hit, _ = scene.trace(start, np.broadcast_to(light, p.shape).copy())
    return (~hit).astype(np.float64)


def render_view(scene: AnalyticScene, view: View, light_world, intensity, shadows=True):
    """Analytic render of one view: ``(image, mask, world normals, visibility)``."""
    H, W = view.height, view.width
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    uv = np.stack([jj.ravel() + 0.5, ii.ravel() + 0.5], axis=1)
    o, d = pixel_rays(view, uv)
    hit, t = scene.trace(o, d)
    img = np.zeros((H * W, 3))
    nrm = np.zeros((H * W, 3))
    vis = np.ones(H * W)
    if hit.any():
        p = o + t[hit, None] * d[hit]
        n = scene.normal(p)
        col, vv = shade(scene, p, n, -d[hit], light_world, intensity, shadows)
        img[hit] = col
        nrm[hit] = n
        vis[hit] = vv
    return img.reshape(H, W, 3), hit.reshape(H, W), nrm.reshape(H, W, 3), vis.reshape(H, W)


def _spec_value(spec, key, default, kind=float):
    try:
        return kind(spec.get(key, default))
    except (TypeError, ValueError):
        raise DatasetError(f"scene spec: {key}: expected {kind.__name__}") from None


def synth_scene(spec: dict, out_dir=None, seed: int = 0):
    """Render an analytic OLAT dataset from a scene description.

    Returns ``(dataset, ground_truth)``; when ``out_dir`` is given the
    dataset, ground-truth lights, normals and mesh are also written.
    """
    if not isinstance(spec, dict):
        raise DatasetError("scene spec: expected a JSON object")
    scene = AnalyticScene(spec.get("primitives", []), spec.get("materials", [{"albedo": 0.8}]),
                          spec.get("blend", 0.0))
    if "lights" not in spec or not spec["lights"]:
        raise DatasetError("scene spec: 'lights' must be non-empty")
    ldirs, lint = _parse_lights(spec["lights"], "lights")
    M = len(ldirs)
    res = spec.get("resolution", 64)
    W, H = (res, res) if np.isscalar(res) else (int(res[0]), int(res[1]))
    rig = spec.get("rig", {})
    layout = rig.get("layout", "aligned")
    nv = _spec_value(rig, "views_per_light", 8, int)
    distance = _spec_value(rig, "distance", 3.0)
    focal = _spec_value(rig, "focal", 100.0)
    elev = rig.get("elevations", [20.0, -10.0])
    target = np.asarray(rig.get("target", scene.bounding_sphere()[0]), float)
    K = np.array([[focal, 0, W / 2], [0, focal, H / 2], [0, 0, 1.0]])
    shadows = bool(spec.get("shadows", True))

    views = []
    for j in range(M):
        if layout == "aligned":
            offset = 0.0
        elif layout == "unaligned":
            offset = j * 360.0 / (nv * M)
        else:
            raise DatasetError(f"scene spec: rig.layout: unknown layout {layout!r}")
        az = [offset + 360.0 * i / nv for i in range(nv)]
        el = [elev[i % len(elev)] for i in range(nv)]
        for R, t in _ring_poses(target, distance, az, el):
            views.append(View(K, R, t, j, width=W, height=H))

    rng = np.random.default_rng(seed)
    noise = _spec_value(spec, "noise", 0.0)
    images, masks, normals, vis_maps = [], [], [], []
    for v in views:
        img, m, n, vis = render_view(scene, v, v.R.T @ ldirs[v.light], lint[v.light], shadows)
        if noise > 0:
            img = np.where(m[..., None], np.maximum(img + rng.normal(0, noise, img.shape), 0.0), img)
        images.append(img)
        masks.append(m)
        normals.append(n)
        vis_maps.append(vis)

    ds = Dataset(views, M, images, masks)
    gt = {"scene": scene, "light_dirs": ldirs, "light_intensities": lint, "normals": normals,
          "visibility": vis_maps}

    tl = spec.get("test_lights", [])
    if tl:
        tdirs, tint = _parse_lights(tl, "test_lights")
        ds.test_lights = [{"direction": d.tolist(), "intensity": e.tolist()} for d, e in zip(tdirs, tint)]
        tpl = _spec_value(spec, "test_views_per_light", 2, int)
        for j in range(len(tdirs)):
            az = [22.5 + 360.0 * i / tpl for i in range(tpl)]
            el = [elev[(i + 1) % len(elev)] for i in range(tpl)]
            for R, t in _ring_poses(target, distance, az, el):
                v = View(K, R, t, j, width=W, height=H)
                img, m, _, _ = render_view(scene, v, R.T @ tdirs[j], tint[j], shadows)
                ds.test_views.append(v)
                ds.test_images.append(img)
                ds.test_masks.append(m)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "normals").mkdir(exist_ok=True)
        npaths = []
        for i, n in enumerate(normals):
            npaths.append(f"normals/{i:04d}.pfm")
            write_pfm(out / npaths[-1], n)
        lights_json = [{"direction": d.tolist(), "intensity": e.tolist()} for d, e in zip(ldirs, lint)]
        (out / "gt_lights.json").write_text(json.dumps(lights_json, indent=1))
        from .evalmesh import mesh_from_sdf, write_obj

        lo, hi = scene.bounds()
        pad = 0.05 * (hi - lo).max()
        verts, faces = mesh_from_sdf(scene.sdf, lo - pad, hi + pad, int(spec.get("mesh_resolution", 96)))
        write_obj(out / "gt_mesh.obj", verts, faces)
        write_dataset(ds, out, extra={"gt_lights": "gt_lights.json", "gt_mesh": "gt_mesh.obj",
                                      "gt_normals": npaths, "spec": spec})
        ds.root = out
    return ds, gt


def read_gt_lights(path):
    """``(dirs (M, 3), intensities (M, 3))`` from a ground-truth light JSON."""
    items = json.loads(Path(path).read_text())
    if isinstance(items, dict):
        items = items.get("lights", [])
    return _parse_lights(items, "gt_lights")
