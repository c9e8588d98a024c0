import json
import subprocess
import sys

import numpy as np
import pytest

from olatinv.cli import main
from olatinv.scene import read_image

from conftest import TINY_SPHERE_SPEC

TINY_TOML = """
steps = 4
rays_per_step = 64
n_samples = 8
shadow_samples = 8
init_steps = 60
init_batch = 512
init_tol = 0.2
checkpoint_every = 0
seed = 3

[fields.hash]
base_resolution = 4
levels = 3
features_per_level = 2
table_size = 1024
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(TINY_SPHERE_SPEC))
    (root / "cfg.toml").write_text(TINY_TOML)
    assert main(["synth", str(root / "spec.json"), str(root / "data")]) == 0
    assert main(["train", str(root / "data"), str(root / "cfg.toml"), "--out", str(root / "run")]) == 0
    return root


def test_synth_then_normalize(pipeline, capsys):
    assert main(["normalize", str(pipeline / "data")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("scale ")
    assert float(out[0].split()[1]) > 0
    d = [float(x) for x in out[1].split()[1:]]
    np.testing.assert_allclose(d, [5, -3, 10], atol=1.0)
    margins = [float(line.split()[-1]) for line in out[2:]]
    assert len(margins) == 6 and min(margins) > 0


def test_train_artifacts(pipeline):
    run = pipeline / "run"
    for name in ("config.json", "log.csv"):
        assert (run / name).is_file()
    assert (run / "checkpoint").is_dir()
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["steps"] == 4 and cfg["seed"] == 3
    assert len((run / "log.csv").read_text().strip().splitlines()) == 1 + 4


def test_evaluate_writes_six_metrics(pipeline, capsys):
    out = pipeline / "metrics.json"
    rc = main(["evaluate", "--checkpoint", str(pipeline / "run"), "--dataset", str(pipeline / "data"),
               "--mesh-resolution", "32", "--out", str(out)])
    assert rc == 0
    metrics = json.loads(out.read_text())
    assert set(metrics) == {"cd_mm", "normal_mae_deg", "psnr_train", "psnr_test", "light_mae_deg", "si_mse"}
    assert all(v is not None and np.isfinite(v) for v in metrics.values())
    assert json.loads(capsys.readouterr().out) == metrics


def test_render_top_down_light(pipeline):
    out = pipeline / "top.pfm"
    rc = main(["render", "--checkpoint", str(pipeline / "run"), "--dataset", str(pipeline / "data"),
               "--view-id", "0", "--light-dir", "0,-1,0", "--emit", "shadow", "--emit", "depth", "--out", str(out)])
    assert rc == 0
    img = read_image(out)
    assert img.shape == (24, 24, 3) and np.all(np.isfinite(img))
    assert (pipeline / "top_shadow.pfm").is_file() and (pipeline / "top_depth.pfm").is_file()


def test_relight_and_png(pipeline):
    out = pipeline / "relit.png"
    rc = main(["relight", "--checkpoint", str(pipeline / "run"), "--dataset", str(pipeline / "data"),
               "--view-id", "1", "--light-dir", "0,0,-1", "--light-intensity", "2", "--unshadowed",
               "--out", str(out)])
    assert rc == 0 and out.is_file()


def test_extract_mesh(pipeline, capsys):
    out = pipeline / "mesh.obj"
    rc = main(["extract-mesh", "--checkpoint", str(pipeline / "run"), "--resolution", "24", "--world-space",
               "--out", str(out)])
    assert rc == 0 and out.read_text().startswith("v ")


def test_errors_are_one_line(pipeline, capsys):
    rc = main(["render", "--checkpoint", str(pipeline / "run"), "--dataset", str(pipeline / "data"),
               "--view-id", "99", "--out", str(pipeline / "x.png")])
    assert rc == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ValueError: view id 99 out of range")
    rc = main(["render", "--checkpoint", str(pipeline / "run"), "--dataset", str(pipeline / "data"),
               "--view-id", "0", "--light-dir", "0,0,0", "--out", str(pipeline / "x.png")])
    assert rc == 1
    rc = main(["normalize", str(pipeline / "missing")])
    assert rc == 1
    assert "scene.json not found" in capsys.readouterr().err


def test_bad_spec_json(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{")
    assert main(["synth", str(tmp_path / "bad.json"), str(tmp_path / "o")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_unknown_config_key(pipeline, tmp_path, capsys):
    (tmp_path / "c.toml").write_text("stepz = 3\n")
    assert main(["train", str(pipeline / "data"), str(tmp_path / "c.toml"), "--out", str(tmp_path / "r")]) == 1
    assert "unknown config key(s): stepz" in capsys.readouterr().err


def test_unknown_flag_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["render", "--bogus"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["synth", "normalize", "train", "render", "relight", "extract-mesh", "evaluate"])
def test_every_subcommand_has_help(cmd):
    r = subprocess.run([sys.executable, "-m", "olatinv", cmd, "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "usage" in r.stdout
