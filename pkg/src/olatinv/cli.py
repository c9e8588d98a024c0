"""Command-line entry point: ``olatinv <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._validation import check_positive, parse_vector

log = logging.getLogger("olatinv")


def _checkpoint_dir(path) -> Path:
    p = Path(path)
    if (p / "header.json").is_file():
        return p
    if (p / "checkpoint" / "header.json").is_file():
        return p / "checkpoint"
    raise FileNotFoundError(f"no checkpoint found at {p}")


def _load_model(path):
    from .fields import SceneModel
    from .scene import SceneTransform

    model, header = SceneModel.load(_checkpoint_dir(path))
    tr = SceneTransform.from_dict(header["transform"]) if "transform" in header else SceneTransform()
    tc = header.get("train_config", {})
    return model, tr, int(tc.get("n_samples", 64)), int(tc.get("shadow_samples", 64))


def _save_image(path, img, bits=8, srgb=True):
    from .scene import write_pfm, write_png

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, img)
    else:
        write_png(path, img, bits=bits, srgb=srgb)


# ---------------------------------------------------------------- subcommands


def cmd_synth(args):
    from .scene import synth_scene

    try:
        spec = json.loads(Path(args.spec).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{args.spec}: line {e.lineno} col {e.colno}: {e.msg}") from None
    ds, _ = synth_scene(spec, args.out, seed=args.seed)
    print(f"wrote {len(ds.views)} views, {ds.n_lights} lights, {len(ds.test_views)} test views to {args.out}")
    return 0


def cmd_normalize(args):
    from .scene import enclosure_margins, load_dataset

    check_positive(args.k, "k")
    ds = load_dataset(args.dataset, k=args.k)
    tr = ds.transform
    print(f"scale {tr.scale:.9g}")
    print("translation " + " ".join(f"{x:.9g}" for x in tr.translation))
    for i, m in enumerate(enclosure_margins(ds.views, ds.masks, tr)):
        print(f"view {i} margin {m:.4f}")
    return 0


def cmd_train(args):
    from .scene import load_dataset
    from .training import TrainConfig, train

    dataset = args.dataset or args.dataset_pos
    if dataset is None:
        raise ValueError("train: a dataset directory is required")
    cfg_path = args.config or args.config_pos
    cfg = TrainConfig.load(cfg_path) if cfg_path else TrainConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.steps is not None:
        cfg.steps = args.steps
    out = Path(args.out)
    ds = load_dataset(dataset)
    log_path = Path(args.log) if args.log else out / "log.csv"
    out.mkdir(parents=True, exist_ok=True)
    model, hist = train(ds, cfg, out_dir=out, log_path=log_path)
    print(f"trained {len(hist)} steps; final loss {hist[-1].loss:.6g}; checkpoint {out / 'checkpoint'}")
    return 0


def _view_for(args, tr):
    from .lighting import View
    from .scene import load_dataset

    if args.camera_json:
        d = json.loads(Path(args.camera_json).read_text())
        v = View(d["K"], d["R"], d["t"], d.get("light", 0), width=int(d["width"]), height=int(d["height"]))
        return v.validate()
    if args.dataset is None:
        raise ValueError("render: --dataset is required with --view-id")
    ds = load_dataset(args.dataset, normalize=False)
    if not 0 <= args.view_id < len(ds.views):
        raise ValueError(f"view id {args.view_id} out of range (0..{len(ds.views) - 1})")
    return ds.views[args.view_id]


def _render(args, relight=False):
    from .renderer import LightOverride, render_image

    model, tr, ns, nss = _load_model(args.checkpoint)
    view = _view_for(args, tr)
    override = None
    if args.light_dir is not None:
        cam = parse_vector(args.light_dir, 3, "--light-dir")
        if np.linalg.norm(cam) == 0:
            raise ValueError("--light-dir must be non-zero")
        cam = cam / np.linalg.norm(cam)
        e = (parse_vector(args.light_intensity, 3, "--light-intensity") if args.light_intensity
             else model.lights.intensities.mean(axis=0))
        override = LightOverride(view.R.T @ cam, e)
    elif relight:
        raise ValueError("relight: --light-dir is required")
    elif args.light_id is not None:
        if not 0 <= args.light_id < model.n_lights:
            raise ValueError(f"light id {args.light_id} out of range (0..{model.n_lights - 1})")
        view.light = args.light_id
    maps = render_image(model, view, tr, n_samples=ns, shadow_samples=nss, override=override)
    img = maps["unshadowed"] if getattr(args, "unshadowed", False) else maps["rgb"]
    out = Path(args.out)
    _save_image(out, img, bits=args.bits)
    for kind in args.emit or []:
        aux = out.with_name(f"{out.stem}_{kind}{out.suffix}")
        if kind == "shadow":
            _save_image(aux, maps["shadow"], bits=args.bits, srgb=False)
        elif kind == "normal":
            n = maps["normal"]
            _save_image(aux, n if aux.suffix.lower() == ".pfm" else (n * 0.5 + 0.5) * (maps["mask"] >= 0.5)[..., None],
                        bits=args.bits, srgb=False)
        elif kind == "depth":
            d = maps["depth"] * tr.scale
            fg = maps["mask"] >= 0.5
            if aux.suffix.lower() != ".pfm" and fg.any():
                lo, hi = d[fg].min(), d[fg].max()
                d = np.where(fg, (d - lo) / max(hi - lo, 1e-12), 0.0)
            _save_image(aux, d, bits=args.bits, srgb=False)
    print(f"wrote {out}")
    return 0


def cmd_render(args):
    return _render(args)


def cmd_relight(args):
    return _render(args, relight=True)


def cmd_extract_mesh(args):
    from .evalmesh import marching_cubes, write_obj

    model, tr, _, _ = _load_model(args.checkpoint)
    verts, faces = marching_cubes(model.spatial, args.resolution, transform=tr if args.world_space else None)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_obj(args.out, verts, faces)
    print(f"wrote {args.out}: {len(verts)} vertices, {len(faces)} faces")
    return 0


def cmd_evaluate(args):
    from .evalmesh import evaluate, write_metrics
    from .scene import load_dataset

    model, _, ns, nss = _load_model(args.checkpoint)
    ds = load_dataset(args.dataset)
    metrics = evaluate(model, ds, gt_mesh=args.gt_mesh, gt_lights=args.gt_lights, n_samples=ns,
                       shadow_samples=nss, mesh_resolution=args.mesh_resolution, stride=args.stride)
    clean = write_metrics(args.out, metrics)
    print(json.dumps(clean, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parser


def _add_render_args(p, relight=False):
    p.add_argument("--checkpoint", required=True, help="checkpoint directory (or training output directory)")
    p.add_argument("--dataset", help="dataset directory providing the cameras")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--view-id", type=int, help="index of a dataset view")
    g.add_argument("--camera-json", help="JSON with K, R, t, width, height")
    if not relight:
        p.add_argument("--light-id", type=int, help="render with a learned light")
    p.add_argument("--light-dir", required=relight, help="camera-space light direction x,y,z")
    p.add_argument("--light-intensity", help="RGB (or scalar) intensity for --light-dir")
    p.add_argument("--unshadowed", action="store_true", help="omit the shadow factor")
    p.add_argument("--emit", action="append", choices=["shadow", "normal", "depth"], help="auxiliary maps")
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--out", required=True, help="output image (.png or .pfm)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="olatinv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic OLAT dataset from a scene JSON")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("normalize", help="estimate and print the scene normalization")
    p.add_argument("dataset")
    p.add_argument("--k", type=float, default=5.0, help="enclosure factor")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("train", help="optimize a scene model")
    p.add_argument("dataset_pos", nargs="?", metavar="DATASET")
    p.add_argument("config_pos", nargs="?", metavar="CONFIG")
    p.add_argument("--dataset")
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="CSV of per-step losses (default OUT/log.csv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a view")
    _add_render_args(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("relight", help="render a view under a new light")
    _add_render_args(p, relight=True)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("extract-mesh", help="marching cubes on the learned SDF")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--world-space", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_mesh)

    p = sub.add_parser("evaluate", help="compute evaluation metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--gt-mesh")
    p.add_argument("--gt-lights")
    p.add_argument("--mesh-resolution", type=int, default=128)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # one machine-parsable line per failure
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
