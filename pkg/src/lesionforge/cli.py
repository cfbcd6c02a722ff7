"""Command-line entry point wiring data prep, training, evaluation, latent
exploration and the blinded study service into reproducible runs.

Every run resolves its configuration as defaults < --config JSON < explicit
flags, then writes a manifest.json next to its outputs recording the fully
resolved config, seed, artifact paths and tool version. Feeding a manifest
back via --config reproduces the run bit-exactly. Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from PIL import Image

from . import __version__
from .checkpoint import load_checkpoint, restore_models
from .data import (IMAGE_SUFFIXES, DataError, load_indexed, read_cache,
                   read_cache_dir, records_to_array, scan_dataset,
                   synth_blob_dataset, write_cache_dir)
from .latent import WalkSpec, manifold_walk, render_grid
from .rater import (aggregate_rates, confusion, confusion_text_table,
                    kappa_report, kappa_text_table, load_export_csv,
                    load_export_jsonl, metrics_display)
from .swd import SwdConfig, swd_report
from .training import TrainConfig, run_training, sample_fakes
from .vtt import StudyConfig, StudyStore, export_jsonl
from .zoo import ProgressiveSchedule


def write_manifest(out_dir, subcommand, cfg, artifacts):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"subcommand": subcommand, "seed": cfg["seed"], "config": cfg,
           "artifacts": artifacts, "version": __version__}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _require(cfg, key, flag):
    if not cfg.get(key):
        raise ValueError(f"{flag} is required")
    return cfg[key]


def _image_files(root):
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    files = [p for p in sorted(root.rglob("*"))
             if p.suffix.lower() in IMAGE_SUFFIXES]
    if not files:
        raise DataError(f"no images under {root}")
    return files


def _infer_resolution(root):
    with Image.open(_image_files(root)[0]) as img:
        side = min(img.size)
    res = 1
    while res * 2 <= side:
        res *= 2
    return res


def _load_image_set(path, resolution):
    """Cache file/directory or image directory -> (N, 3, r, r) array."""
    path = Path(path)
    if path.is_file():
        pixels = read_cache(path)[None]
    elif path.is_dir() and any(path.glob("*.lfc")):
        pixels = read_cache_dir(path)
    else:
        target = resolution or _infer_resolution(path)
        index = scan_dataset(path, target)
        return records_to_array(load_indexed(index))
    if resolution and pixels.shape[-1] != resolution:
        raise DataError(f"cache {path} holds {pixels.shape[-1]}x"
                        f"{pixels.shape[-1]}, asked for {resolution}")
    return pixels


# ---------------------------------------------------------------------------
# subcommand handlers (each takes the resolved config, returns the summary
# dict printed as JSON on stdout)


def cmd_prepare_data(cfg):
    data = _require(cfg, "data", "--data")
    out = Path(cfg["out"])
    index = scan_dataset(Path(data), cfg["resolution"])
    pixels = records_to_array(load_indexed(index))
    cache = write_cache_dir(out / "cache", pixels)
    write_manifest(out, "prepare-data", cfg, {"cache": cache.name})
    return {"images": int(pixels.shape[0]), "skipped": len(index.skipped),
            "resolution": cfg["resolution"], "cache": str(cache)}


def cmd_synth_data(cfg):
    out = Path(cfg["out"])
    records = synth_blob_dataset(cfg["seed"], cfg["count"], cfg["resolution"])
    pixels = records_to_array(records)
    cache = write_cache_dir(out / "cache", pixels)
    write_manifest(out, "synth-data", cfg, {"cache": cache.name})
    return {"images": int(pixels.shape[0]),
            "resolution": cfg["resolution"], "cache": str(cache)}


def _parse_schedule(spec, base_res, target_res, total_iters):
    if spec is None:
        base = base_res or 4
        n_stages = 1
        res = base
        while res < target_res:
            res *= 2
            n_stages += 2
        per = total_iters // n_stages
        if per < 1:
            raise ValueError(f"{total_iters} iterations cannot cover the "
                             f"{n_stages}-stage default schedule")
        return ProgressiveSchedule.ramp(base, target_res, per, per)
    if isinstance(spec, str):
        spec = json.loads(spec)
    stages = [(int(r), str(p), int(d)) for r, p, d in spec]
    return ProgressiveSchedule(stages, stages[0][0], stages[-1][0])


def cmd_train(cfg):
    data = _require(cfg, "data", "--data")
    pixels = _load_image_set(Path(data), None)
    res = int(pixels.shape[-1])
    if cfg["target_res"] and cfg["target_res"] != res:
        raise DataError(f"dataset cache is {res}x{res} but --target-res is "
                        f"{cfg['target_res']}; prepare the data at that size")
    arch = cfg["arch"]
    schedule = None
    base_res, levels = cfg["base_res"], cfg["levels"]
    if arch == "pgan":
        schedule = _parse_schedule(cfg["schedule"], base_res, res,
                                   cfg["iters"])
        cfg = dict(cfg, schedule=[list(s) for s in schedule.stages],
                   base_res=schedule.base_resolution)
    elif arch == "lapgan":
        if base_res is None:
            base_res = res >> (levels - 1)
            cfg = dict(cfg, base_res=base_res)
    tconf = TrainConfig(
        architecture=arch, total_iterations=cfg["iters"],
        latent_dim=cfg["latent_dim"], minibatch=cfg["batch"],
        seed=cfg["seed"], schedule=schedule,
        checkpoint_every=cfg["checkpoint_every"],
        swd_eval_every=cfg["swd_every"], target_resolution=res,
        base_channels=cfg["base_channels"],
        levels=levels, base_res=base_res or 8,
        embed_channels=cfg["embed_channels"],
        lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"],
        saturating_g=bool(cfg["saturating_g"]),
        swd_eval_samples=cfg["swd_samples"], out_dir=cfg["out"])
    result = run_training(tconf, pixels, resume_from=cfg["resume"])
    out = Path(cfg["out"])
    ckpts = [Path(p).name for p in result["checkpoints"]]
    artifacts = {"train_log": "train_log.jsonl", "events": "events.jsonl",
                 "checkpoints": ckpts}
    if cfg["swd_every"]:
        artifacts["swd_log"] = "swd_log.jsonl"
    write_manifest(out, "train", cfg, artifacts)
    return {"iterations": result["iterations"],
            "final_checkpoint": str(result["final_checkpoint"]),
            "checkpoints": ckpts, "out": str(out)}


def cmd_generate(cfg):
    ckpt_path = _require(cfg, "checkpoint", "--checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    models = restore_models(ckpt)
    kind = ckpt.arch["kind"]
    images = sample_fakes(kind, models, cfg["count"], cfg["seed"],
                          latent_dim=ckpt.arch["latent_dim"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    grid = out / "grid.png"
    grid.write_bytes(render_grid(images, cfg["columns"]))
    write_manifest(out, "generate", cfg, {"grid": grid.name})
    return {"images": cfg["count"], "architecture": kind,
            "resolution": int(images.shape[-1]), "grid": str(grid)}


def cmd_walk(cfg):
    ckpt_path = _require(cfg, "checkpoint", "--checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    kind = ckpt.arch["kind"]
    if kind not in ("dcgan", "pgan"):
        raise ValueError(f"walk needs a single-generator checkpoint "
                         f"(dcgan or pgan), got {kind}")
    anchors = cfg["anchor_seeds"]
    if anchors is None:
        anchors = [cfg["seed"] + i for i in range(3)]
    elif isinstance(anchors, str):
        anchors = [int(s) for s in anchors.split(",")]
    cfg = dict(cfg, anchor_seeds=list(anchors))
    walk = WalkSpec(anchor_seeds=cfg["anchor_seeds"], steps=cfg["steps"],
                    mode=cfg["mode"])
    generator = restore_models(ckpt)[0]
    frames = manifold_walk(generator, walk, ckpt.arch["latent_dim"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    png = out / "walk.png"
    png.write_bytes(render_grid(frames, cfg["columns"] or cfg["steps"]))
    write_manifest(out, "walk", cfg, {"walk": png.name})
    return {"frames": int(frames.shape[0]), "mode": cfg["mode"],
            "walk": str(png)}


def cmd_swd(cfg):
    a = _load_image_set(_require(cfg, "a", "--a"), cfg["resolution"])
    b = _load_image_set(_require(cfg, "b", "--b"), cfg["resolution"])
    sconf = SwdConfig(patch_size=cfg["patch"],
                      patches_per_image=cfg["patches_per_image"],
                      n_projections=cfg["projections"],
                      n_repeats=cfg["repeats"],
                      min_level=cfg["min_level"], seed=cfg["seed"])
    report = swd_report(a, b, sconf)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "swd.json").write_text(report.to_json() + "\n")
        write_manifest(out, "swd", cfg, {"report": "swd.json"})
    return json.loads(report.to_json())


def cmd_study_create(cfg):
    reals = [str(p) for p in _image_files(_require(cfg, "real", "--real"))]
    fakes = [str(p) for p in _image_files(_require(cfg, "fake", "--fake"))]
    store = StudyStore(cfg["out"])
    study = store.create_study(reals, fakes, StudyConfig(
        n_real=cfg["n_real"], n_fake=cfg["n_fake"], seed=cfg["seed"]))
    write_manifest(cfg["out"], "study create", cfg,
                   {"log": "log.jsonl", "assets": "assets"})
    return {"study_id": study.id, "n_items": len(study.items),
            "store": str(cfg["out"])}


def cmd_study_serve(cfg):
    from .vtt_api import build_app
    token = cfg["export_token"] or os.environ.get("LESIONFORGE_EXPORT_TOKEN")
    if not token:
        raise ValueError("--export-token (or LESIONFORGE_EXPORT_TOKEN) "
                         "is required")
    store = StudyStore(_require(cfg, "store", "--store"))
    app = build_app(store, token)
    import uvicorn
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="warning")
    return {"served": str(cfg["store"])}


def cmd_study_analyze(cfg):
    if cfg["export"]:
        text = Path(cfg["export"]).read_text()
        loader = load_export_csv if cfg["export"].endswith(".csv") \
            else load_export_jsonl
        rows = loader(text)
    else:
        store = StudyStore(_require(cfg, "store", "--store"))
        study_id = cfg["study"] or next(iter(sorted(store.studies)), None)
        if study_id is None:
            raise ValueError("store holds no studies")
        rows = load_export_jsonl(export_jsonl(store.export(study_id)))
    truth = {r["item"]: r["truth"] for r in rows}
    by_rater = {}
    roles = {}
    for r in rows:
        by_rater.setdefault(r["participant"], []).append((r["item"], r["label"]))
        roles[r["participant"]] = r["role"]
    per_rater = {pid: confusion(pairs, truth)
                 for pid, pairs in sorted(by_rater.items(),
                                          key=lambda kv: (roles[kv[0]], kv[0]))}
    grid = kappa_report(rows)
    doc = {"raters": {pid: {"role": roles[pid], "tp": cm.tp, "fp": cm.fp,
                            "fn": cm.fn, "tn": cm.tn, **metrics_display(cm)}
                      for pid, cm in per_rater.items()},
           "aggregate": aggregate_rates(per_rater.values()),
           "kappa": json.loads(grid.to_json())}
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n")
        tables = (confusion_text_table(per_rater) + "\n\n" +
                  kappa_text_table(grid) + "\n")
        (out / "tables.txt").write_text(tables)
        write_manifest(out, "study analyze", cfg,
                       {"report": "report.json", "tables": "tables.txt"})
    return doc


# ---------------------------------------------------------------------------
# parser


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON config or a previous manifest.json")
    return p


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lesionforge",
        description="small-data GAN training, evaluation and study toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    common = _common()

    p = sub.add_parser("prepare-data", parents=[common],
                       help="scan, crop, resize and cache an image folder")
    p.add_argument("--data", help="source image directory")
    p.add_argument("--resolution", type=int)
    p.set_defaults(func=cmd_prepare_data, name="prepare-data", defaults={
        "data": None, "resolution": 32, "seed": 0, "out": "prepared"})

    p = sub.add_parser("synth-data", parents=[common],
                       help="generate a synthetic blob dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--resolution", type=int)
    p.set_defaults(func=cmd_synth_data, name="synth-data", defaults={
        "count": 200, "resolution": 32, "seed": 0, "out": "synth-out"})

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", help="dataset cache file")
    p.add_argument("--arch", choices=("dcgan", "lapgan", "pgan"))
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--target-res", type=int)
    p.add_argument("--base-res", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--embed-channels", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--saturating-g", action="store_true", default=None)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--swd-every", type=int)
    p.add_argument("--swd-samples", type=int)
    p.add_argument("--schedule", help="JSON [[res, phase, iters], ...]")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train, name="train", defaults={
        "data": None, "arch": "dcgan", "iters": 200, "batch": 8,
        "latent_dim": 128, "target_res": None, "base_res": None,
        "levels": 2, "base_channels": 64, "embed_channels": 8,
        "lr": None, "beta1": None, "beta2": None, "saturating_g": False,
        "checkpoint_every": 0, "swd_every": 0, "swd_samples": 64,
        "schedule": None, "resume": None, "seed": 0, "out": "train-out"})

    p = sub.add_parser("generate", parents=[common],
                       help="sample a checkpoint into a PNG grid")
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int)
    p.add_argument("--columns", type=int)
    p.set_defaults(func=cmd_generate, name="generate", defaults={
        "checkpoint": None, "count": 16, "columns": 4, "seed": 0,
        "out": "generated"})

    p = sub.add_parser("walk", parents=[common],
                       help="render a latent-space interpolation strip")
    p.add_argument("--checkpoint")
    p.add_argument("--anchor-seeds", help="comma-separated anchor seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--mode", choices=("linear", "spherical"))
    p.add_argument("--columns", type=int)
    p.set_defaults(func=cmd_walk, name="walk", defaults={
        "checkpoint": None, "anchor_seeds": None, "steps": 8,
        "mode": "spherical", "columns": None, "seed": 0, "out": "walk-out"})

    p = sub.add_parser("swd", parents=[common],
                       help="sliced Wasserstein distance between two image sets")
    p.add_argument("--a", help="image directory or cache file")
    p.add_argument("--b", help="image directory or cache file")
    p.add_argument("--resolution", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--patches-per-image", type=int)
    p.add_argument("--projections", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--min-level", type=int)
    p.set_defaults(func=cmd_swd, name="swd", defaults={
        "a": None, "b": None, "resolution": None, "patch": 7,
        "patches_per_image": 64, "projections": 512, "repeats": 4,
        "min_level": 16, "seed": 0, "out": None})

    study = sub.add_parser("study", help="blinded visual study service")
    actions = study.add_subparsers(dest="action", required=True)

    p = actions.add_parser("create", parents=[common],
                           help="assemble a blinded study from two folders")
    p.add_argument("--real", help="directory of real images")
    p.add_argument("--fake", help="directory of fake images")
    p.add_argument("--n-real", type=int)
    p.add_argument("--n-fake", type=int)
    p.set_defaults(func=cmd_study_create, name="study create", defaults={
        "real": None, "fake": None, "n_real": 50, "n_fake": 30,
        "seed": 0, "out": "study"})

    p = actions.add_parser("serve", parents=[common],
                           help="serve a study store over HTTP")
    p.add_argument("--store", help="study store directory")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--export-token")
    p.set_defaults(func=cmd_study_serve, name="study serve", defaults={
        "store": None, "host": "127.0.0.1", "port": 8600,
        "export_token": None, "seed": 0, "out": None})

    p = actions.add_parser("analyze", parents=[common],
                           help="confusion metrics and agreement report")
    p.add_argument("--export", help="export file (.jsonl or .csv)")
    p.add_argument("--store", help="study store directory")
    p.add_argument("--study", help="study id (default: only study in store)")
    p.set_defaults(func=cmd_study_analyze, name="study analyze", defaults={
        "export": None, "store": None, "study": None, "seed": 0,
        "out": "analysis"})

    return parser


def _resolve(args):
    cfg = dict(args.defaults)
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        if isinstance(doc, dict) and "config" in doc and "subcommand" in doc:
            doc = doc["config"]
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        cfg.update(doc)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def parse_and_dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        summary = args.func(_resolve(args))
        print(json.dumps(summary, sort_keys=True))
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    raise SystemExit(parse_and_dispatch())


if __name__ == "__main__":
    main()
