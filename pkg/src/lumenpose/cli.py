"""Command-line entry point: ``lumenpose <subcommand> [flags]``.

Exit status is 0 on success, 2 for a bad configuration and 1 for any other
failure; errors are printed to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .airway import (
    AirwayTree,
    ConfigError,
    LobeLabel,
    PatientSpec,
    camera_pose_at,
    centerline_path,
    generate_patient,
)
from .config import dataset_config, load_config, model_config, train_config, write_effective
from .dataset import DatasetReader, build_dataset
from .evaluate import (
    EvalMode,
    ModelPredictor,
    OraclePredictor,
    ZeroPredictor,
    evaluate_accumulated,
    evaluate_per_pair,
    report_csv,
    report_markdown,
)
from .grid import run_experiment_grid, write_traces
from .metrics import LossCombo
from .models import HeadKind, PoseNet, load_model
from .pose import EulerAngles, Pose, Position
from .render import CameraIntrinsics, render, write_ppm
from .train import holdout_patients, prepare_split, train

log = logging.getLogger("lumenpose")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (sections dataset/model/train/grid)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. train.lr=0.001 (repeatable)")
    p.add_argument("--seed", type=int, help="seed for every random stream (dataset, model, training)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes where supported")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lumenpose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-anatomy", help="write one procedural airway tree as JSON")
    _common(p)
    p.add_argument("--levels", type=int, default=4, help="branching levels (4-6)")

    p = sub.add_parser("gen-dataset", help="render a dataset directory and manifest")
    _common(p)

    p = sub.add_parser("train", help="train one model on a dataset split")
    _common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--scheme", help="personalized | cross-subject:<patient>")
    p.add_argument("--head", choices=[h.value for h in HeadKind])
    p.add_argument("--loss", choices=["mse-mse", "mse-de", "mse-ce"])

    p = sub.add_parser("eval", help="evaluate a checkpoint or a reference predictor")
    _common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--checkpoint", help="model checkpoint (required for --predictor model)")
    p.add_argument("--predictor", choices=["model", "zero", "oracle"], default="model")
    p.add_argument("--mode", choices=["per-pair", "accumulated"], action="append",
                   help="evaluation mode (repeatable; default both)")
    p.add_argument("--scheme", help="personalized | cross-subject:<patient>")

    p = sub.add_parser("grid", help="train and evaluate every head x loss cell")
    _common(p)
    p.add_argument("--dataset", help="existing dataset directory (default: generate into OUT/dataset)")
    p.add_argument("--scheme", action="append", help="restrict to these schemes (repeatable)")

    p = sub.add_parser("render-preview", help="render one frame from an airway JSON")
    _common(p)
    p.add_argument("--anatomy", required=True, help="airway JSON from gen-anatomy")
    p.add_argument("--lobe", default="LowerRight", choices=[lb.value for lb in LobeLabel])
    p.add_argument("--s", type=float, default=10.0, help="arc length along the lobe path")
    p.add_argument("--roll", type=float, default=0.0, help="roll in degrees")
    p.add_argument("--offset", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "Z"))
    p.add_argument("--position", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="explicit camera position (with --euler; overrides --s/--roll/--offset)")
    p.add_argument("--euler", type=float, nargs=3, metavar=("A", "B", "G"), help="explicit Euler angles (rad)")
    return parser


def _config(args) -> dict:
    return load_config(args.config, args.set, args.seed)


def cmd_gen_anatomy(args) -> int:
    cfg = _config(args)
    ds = dataset_config(cfg)
    seed = cfg["dataset"]["seed"]
    spec = PatientSpec(seed, ds.scale, args.levels, ds.angle_jitter, ds.radius_taper)
    tree = generate_patient(spec)
    out = Path(args.out)
    write_effective(out, cfg, {"command": "gen-anatomy", "levels": args.levels})
    (out / "airway.json").write_text(tree.to_json())
    return 0


def cmd_gen_dataset(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    write_effective(out, cfg, {"command": "gen-dataset"})
    build_dataset(dataset_config(cfg), out / "dataset", jobs=args.jobs)
    return 0


def _fold_flags(cfg: dict, args) -> None:
    if getattr(args, "head", None):
        cfg["model"]["head"] = args.head
    if getattr(args, "loss", None):
        cfg["train"]["loss"] = args.loss
    if getattr(args, "scheme", None) and isinstance(args.scheme, str):
        cfg["train"]["split"] = args.scheme


def cmd_train(args) -> int:
    cfg = _config(args)
    _fold_flags(cfg, args)
    cfg["model"]["dropout_rate"] = cfg["train"]["dropout_rate"]
    mc, tc = model_config(cfg), train_config(cfg)
    mc.validate()
    tc.validate()
    out = Path(args.out)
    write_effective(out, cfg, {"command": "train", "dataset": str(args.dataset)})
    reader = DatasetReader(args.dataset)
    tr, va, _, _ = prepare_split(reader, tc.split, mc.dtype)
    model = PoseNet(mc)
    record = train(model, tr, va, tc, out, forbidden_patients=holdout_patients(tc.split))
    print(json.dumps({"best_epoch": record.best_epoch, "best_val_loss": record.best_val_loss,
                      "checkpoint": str(out / "model.ckpt")}))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    _fold_flags(cfg, args)
    scheme = cfg["train"]["split"]
    modes = [EvalMode.parse(m) for m in (args.mode or ["per-pair", "accumulated"])]
    if args.predictor == "model" and not args.checkpoint:
        raise ConfigError("--checkpoint is required with --predictor model")
    out = Path(args.out)
    write_effective(out, cfg, {"command": "eval", "dataset": str(args.dataset), "checkpoint": args.checkpoint,
                               "predictor": args.predictor, "modes": [m.value for m in modes]})
    labels = {"scheme": scheme, "head": args.predictor, "loss": ""}
    dtype = "float32"
    if args.predictor == "model":
        model, meta = load_model(args.checkpoint)
        predictor = ModelPredictor(model)
        dtype = model.cfg.dtype
        labels["head"] = model.cfg.head.value
        labels["loss"] = meta.get("loss", "")
    else:
        predictor = ZeroPredictor() if args.predictor == "zero" else OraclePredictor()
    _, va, _, _ = prepare_split(DatasetReader(args.dataset), scheme, dtype)
    reports = []
    for mode in modes:
        if mode is EvalMode.PER_PAIR:
            reports.append(evaluate_per_pair(predictor, va.trajectories, **labels))
        else:
            traces: list = []
            reports.append(evaluate_accumulated(predictor, va.trajectories, traces, **labels))
            write_traces(out / "traces.csv", traces)
    rows = [r.row() for r in reports]
    (out / "report.csv").write_text(report_csv(rows))
    (out / "report.md").write_text(report_markdown(rows))
    (out / "report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n")
    return 0


def cmd_grid(args) -> int:
    cfg = _config(args)
    if args.scheme:
        cfg["grid"]["schemes"] = list(args.scheme)
    out = Path(args.out)
    write_effective(out, cfg, {"command": "grid", "dataset": args.dataset})
    heads = [HeadKind.parse(h) for h in cfg["grid"]["heads"]]
    losses = [LossCombo.parse(n) for n in cfg["grid"]["losses"]]
    root = args.dataset
    if root is None:
        root = out / "dataset"
        build_dataset(dataset_config(cfg), root, jobs=args.jobs)
    bundle = run_experiment_grid(root, out, heads, losses, cfg["grid"]["schemes"], train_config(cfg),
                                 model_config(cfg), jobs=args.jobs)
    failed = [c for c in bundle["cells"] if c["error"]]
    print(json.dumps({"rows": len(bundle["rows"]), "failed_cells": len(failed)}))
    return 0


def cmd_render_preview(args) -> int:
    cfg = _config(args)
    ds = dataset_config(cfg)
    tree = AirwayTree.from_json(Path(args.anatomy).read_text())
    if args.position is not None or args.euler is not None:
        if args.position is None or args.euler is None:
            raise ConfigError("--position and --euler must be given together")
        pose = Pose(Position(*args.position), EulerAngles(*args.euler))
    else:
        path = centerline_path(tree, LobeLabel(args.lobe), rng_seed=cfg["dataset"]["seed"])
        pose = camera_pose_at(path, args.s, ds.delta_d, math.radians(args.roll), args.offset)
    out = Path(args.out)
    write_effective(out, cfg, {"command": "render-preview", "anatomy": args.anatomy,
                               "pose": pose.as_array().tolist()})
    cam = CameraIntrinsics(ds.width, ds.height, math.radians(ds.vertical_fov_deg))
    write_ppm(out / "preview.ppm", render(tree, pose, cam))
    return 0


COMMANDS = {
    "gen-anatomy": cmd_gen_anatomy,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "grid": cmd_grid,
    "render-preview": cmd_render_preview,
}


def _fail(kind: str, exc: BaseException) -> None:
    msg = str(exc).replace("\n", " ")
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": msg}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    except Exception as exc:
        _fail("runtime", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
