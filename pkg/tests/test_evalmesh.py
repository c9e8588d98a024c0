import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olatinv import autodiff as ad
from olatinv.evalmesh import (
    EmptySurfaceError, chamfer, chamfer_visible, edge_valence, hemisphere_normals, latent_map, latent_pca,
    light_mae, marching_cubes, mesh_from_sdf, normal_mae, psnr, read_obj, render_brdf_sphere, si_mse, write_obj,
)
from olatinv.lighting import View
from olatinv.scene import SceneTransform, look_at

from conftest import random_rotation, random_unit, tiny_model


class SphereField:
    """Stand-in spatial field with an analytic SDF."""

    def __init__(self, r=0.5, offset=0.0):
        self.r, self.offset = r, offset

    def sdf(self, p):
        if isinstance(p, ad.Node):
            p = p.value
        return np.linalg.norm(p, axis=-1) - self.r + self.offset


def frontal_view(dist, focal, size, target=(0.0, 0.0, 0.0), direction=(0.0, 0.0, 1.0)):
    direction = np.asarray(direction, float)
    R, t = look_at(np.asarray(target) - dist * direction, target, up=(0, 1, 0) if abs(direction[1]) < 0.9 else (1, 0, 0))
    K = np.array([[focal, 0, size / 2], [0, focal, size / 2], [0, 0, 1.0]])
    return View(K, R, t, 0, width=size, height=size)


# ---------------------------------------------------------------- marching cubes


def test_sphere_isosurface_radii():
    verts, faces = marching_cubes(SphereField(0.5), 64)
    cell = 2.0 / 63
    r = np.linalg.norm(verts, axis=1)
    assert np.all(np.abs(r - 0.5) < 2 * cell)
    # the tighter bound: |g(vertex)| against twice the cell size times the unit gradient
    assert np.abs(r - 0.5).max() < 0.1 * cell


def test_sphere_mesh_watertight():
    _, faces = marching_cubes(SphereField(0.5), 48)
    assert np.all(edge_valence(faces) == 2)


def test_no_zero_crossing():
    with pytest.raises(EmptySurfaceError, match="no zero crossing"):
        marching_cubes(SphereField(0.5, offset=10.0), 16)


def test_world_space_conversion():
    tr = SceneTransform(10.0, [1.0, 2.0, 3.0])
    verts, _ = marching_cubes(SphereField(0.5), 32, transform=tr)
    np.testing.assert_allclose(np.linalg.norm(verts - tr.translation, axis=1), 5.0, atol=0.05)


def test_obj_round_trip(tmp_path):
    verts, faces = marching_cubes(SphereField(0.5), 16)
    write_obj(tmp_path / "m.obj", verts, faces)
    v2, f2 = read_obj(tmp_path / "m.obj")
    np.testing.assert_allclose(v2, verts, rtol=1e-8, atol=1e-9)
    np.testing.assert_array_equal(f2, faces)


# ---------------------------------------------------------------- Chamfer


def brute_chamfer(a, b):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return d.min(axis=1).mean() + d.min(axis=0).mean()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_chamfer_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(rng.integers(1, 40), 3))
    b = rng.normal(size=(rng.integers(1, 40), 3))
    assert abs(chamfer(a, b) - brute_chamfer(a, b)) < 1e-9
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)


def plane(z, half=5.0):
    verts = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return verts, np.array([[0, 1, 2], [0, 2, 3]])


def test_chamfer_visible_self_is_zero():
    mesh = marching_cubes(SphereField(0.5), 32)
    v = frontal_view(4.0, 40.0, 24)
    m = np.ones((24, 24), bool)
    assert chamfer_visible(mesh, mesh, [v], [m], stride=2) == 0.0


def test_chamfer_visible_parallel_planes():
    # a distant long-focal camera makes the rays nearly parallel
    delta = 0.05
    v = frontal_view(1000.0, 1e5, 32)
    m = np.ones((32, 32), bool)
    cd = chamfer_visible(plane(0.0), plane(delta), [v], [m], stride=1)
    assert cd == pytest.approx(2 * delta, rel=1e-3)


def test_chamfer_visible_offset_sphere():
    # pixel footprints must be much finer than the 1% offset, so only a dense
    # central patch of each view is cast
    r = 1.0
    a = mesh_from_sdf(lambda p: np.linalg.norm(p, axis=-1) - r, -1.2, 1.2, 64)
    b = mesh_from_sdf(lambda p: np.linalg.norm(p, axis=-1) - 1.01 * r, -1.2, 1.2, 64)
    size = 400
    views = [frontal_view(4.0, 1300.0, size, direction=d) for d in ([0, 0, 1], [1, 0, 0], [0, -1, 0])]
    m = np.zeros((size, size), bool)
    m[180:220, 180:220] = True
    cd = chamfer_visible(a, b, views, [m] * 3, stride=1)
    assert abs(cd - 0.02 * r) < 0.1 * 0.02 * r
    assert cd == pytest.approx(chamfer_visible(b, a, views, [m] * 3, stride=1), abs=1e-12)


def test_chamfer_visible_no_hits():
    v = frontal_view(4.0, 40.0, 16)
    far = plane(0.0, half=0.01)
    far = (far[0] + [100.0, 0, 0], far[1])
    with pytest.raises(ValueError, match="no ray hits"):
        chamfer_visible(far, plane(0.0), [v], [np.ones((16, 16), bool)])


# ---------------------------------------------------------------- normal MAE


def test_normal_mae_examples():
    a = np.array([[0.0, 0.0, 1.0]])
    assert normal_mae(a, a) == 0.0
    assert normal_mae(a, [[1.0, 0, 0]]) == pytest.approx(90.0, abs=1e-12)
    assert normal_mae(a, -a) == pytest.approx(180.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_normal_mae_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = random_unit(rng, 20), random_unit(rng, 20)
    mask = rng.uniform(size=20) < 0.7
    mask[0] = True
    ref = np.mean([math.degrees(math.acos(max(-1.0, min(1.0, float(x @ y))))) for x, y, k in zip(a, b, mask) if k])
    assert abs(normal_mae(a, b, mask) - ref) < 1e-9


def test_normal_mae_empty_mask():
    with pytest.raises(ValueError):
        normal_mae(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(2, bool))


# ---------------------------------------------------------------- PSNR


def test_psnr_examples():
    img = np.full((4, 4, 3), 0.3)
    assert psnr(img, img) == 99.0
    assert psnr(img, img + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert psnr(img, img + 0.5) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_empty_mask():
    with pytest.raises(ValueError, match="empty mask"):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2), bool))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_psnr_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(5, 6, 3)), rng.uniform(size=(5, 6, 3))
    mask = rng.uniform(size=(5, 6)) < 0.6
    mask[0, 0] = True
    errs = [float(x - y) ** 2 for i in range(5) for j in range(6) if mask[i, j] for x, y in zip(a[i, j], b[i, j])]
    ref = 10 * math.log10(1.0 / (sum(errs) / len(errs)))
    assert abs(psnr(a, b, mask) - ref) < 1e-9


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.2, 0.8, size=(32, 32, 3))
    u = rng.uniform(-1, 1, size=img.shape)
    vals = [psnr(img, img + amp * u) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


# ---------------------------------------------------------------- intensities and directions


def test_si_mse_examples():
    err, s = si_mse([1.0, 1.0], [1.0, 2.0])
    assert s == 1.5
    assert err == 0.375
    e = np.array([0.5, 1.2, 3.0])
    assert si_mse(e, e) == (0.0, 1.0)
    err, s = si_mse(2 * e, e)
    assert s == 0.5 and err == 0.0


def test_si_mse_errors():
    with pytest.raises(ValueError, match="zero"):
        si_mse([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="positive"):
        si_mse([1.0, 1.0], [1.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(1e-3, 1e3))
def test_si_mse_brute_force_and_scale_invariance(seed, c):
    from scipy.optimize import minimize_scalar

    rng = np.random.default_rng(seed)
    est, gt = rng.uniform(0.1, 3, size=6), rng.uniform(0.1, 3, size=6)
    err, s = si_mse(est, gt)
    s_ref = minimize_scalar(lambda x: np.sum((x * est - gt) ** 2), bracket=(0.0, 1.0), tol=1e-14).x
    assert abs(s - s_ref) < 1e-6 * max(1.0, s_ref)
    ref = sum(abs(s * x - y) / y for x, y in zip(est, gt)) / len(gt)
    assert abs(err - ref) < 1e-9
    assert abs(si_mse(c * est, gt)[0] - err) < 1e-9


def test_light_mae_examples():
    d = random_unit(np.random.default_rng(2), 4)
    assert light_mae(d, d) < 1e-6
    c, s = np.cos(np.radians(10)), np.sin(np.radians(10))
    rot = d.copy()
    rot[1] = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]) @ np.array([1.0, 0.0, 0.0])
    base = d.copy()
    base[1] = [1.0, 0.0, 0.0]
    assert light_mae(rot, base) == pytest.approx(10.0 / 4, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_light_mae_rotation_invariant_and_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = random_unit(rng, 5), random_unit(rng, 5)
    R = random_rotation(rng)
    assert abs(light_mae(a @ R.T, b @ R.T) - light_mae(a, b)) < 1e-6
    ref = np.mean([math.degrees(math.acos(max(-1.0, min(1.0, float(x @ y))))) for x, y in zip(a, b)])
    assert abs(light_mae(a, b) - ref) < 1e-9


# ---------------------------------------------------------------- visualizations


def test_hemisphere_centre_faces_camera():
    n, disk = hemisphere_normals(33)
    np.testing.assert_allclose(n[16, 16], [0, 0, -1.0], atol=1e-12)
    assert not disk[0, 0]
    np.testing.assert_allclose(np.linalg.norm(n[disk], axis=1), 1.0)


def test_constant_brdf_uniform_disk():
    model = tiny_model()
    store = model.store
    for name in store.names():
        if store.group_of(name) == "brdf-mlp":
            store[name] = np.zeros(store.shape_of(name))
    store["brdf/b2"] = np.array([0.3, 0.2, 0.1])
    img = render_brdf_sphere(model.brdf, np.zeros(63), 32)
    _, disk = hemisphere_normals(32)
    np.testing.assert_allclose(img[disk], np.tile([0.3, 0.2, 0.1], (disk.sum(), 1)), atol=1e-15)
    assert np.all(img[~disk] == 0)


def test_phong_brdf_symmetric_highlight():
    def phong(b, n, v, l):
        h = v.value + l.value
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        spec = np.maximum(np.sum(n.value * h, axis=1), 0.0) ** 20
        return ad.constant(np.repeat((0.2 + spec)[:, None], 3, axis=1))

    img = render_brdf_sphere(phong, np.zeros(4), 33)
    g = img[..., 0]
    assert np.unravel_index(np.argmax(g), g.shape) == (16, 16)
    np.testing.assert_allclose(g, g[::-1], atol=1e-12)
    np.testing.assert_allclose(g, g.T, atol=1e-12)


def test_latent_pca_constant_and_range(rng):
    out = latent_pca(np.tile(rng.normal(size=63), (10, 1)))
    assert np.all(out == 0.5)
    out = latent_pca(rng.normal(size=(50, 63)))
    assert out.min() >= 0.0 and out.max() <= 1.0
    with pytest.raises(ValueError, match="at least 3"):
        latent_pca(rng.normal(size=(2, 63)))


def test_latent_pca_separates_two_materials(rng):
    from sklearn.cluster import KMeans

    centres = rng.normal(size=(2, 63))
    labels = rng.integers(0, 2, size=200)
    X = centres[labels] + 0.1 * rng.normal(size=(200, 63))
    Y = latent_pca(X)
    pred = KMeans(2, n_init=5, random_state=0).fit_predict(Y)
    purity = max(np.mean(pred == labels), np.mean(pred != labels))
    assert purity >= 0.9


def test_latent_map_output(tiny_dataset):
    from olatinv.fields import init_sphere

    model = tiny_model(n_lights=tiny_dataset.n_lights)
    init_sphere(model.spatial, 0.5, steps=150, batch=512, tol=0.5, rng=np.random.default_rng(0))
    img = latent_map(model, tiny_dataset.views[0], tiny_dataset.transform, n_samples=8)
    assert img.shape == (24, 24, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
