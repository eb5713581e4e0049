"""Command-line pipeline: synth, prep, train, predict, ensemble, eval.

Exit status is 0 on success, 2 for usage errors and 1 for any other
failure; failures print a single ``error: <Category>: <message>`` line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .dicom import read_dicom, read_labels_csv, scan_dataset
from .ensemble import (
    StackingModel,
    average_ensemble,
    fit_stacking,
    merge_modality_predictions,
    predict_stacking,
    read_predictions_csv,
    write_predictions_csv,
)
from .errors import IoError, RadiovitError, UsageError
from .metrics import emit_report, evaluate_scores
from .modality import MODALITIES, Modality
from .synth import SynthSpec, generate_dataset
from .trainer import TrainConfig, evaluate, train, write_log_csv
from .vit3d import Vit3dConfig
from .volume import Volume, build_volume, read_volume, resize_volume, write_volume

log = logging.getLogger("radiovit")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxWxD, got {text!r}")
    if len(dims) != 3 or min(dims) <= 0:
        raise argparse.ArgumentTypeError(f"expected three positive extents, got {text!r}")
    return dims


def _modality_list(text: str) -> list[Modality]:
    try:
        return [Modality(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radiovit", description="3D ViT radiogenomic classification pipeline")
    parser.add_argument("--version", action="version", version=f"radiovit {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    add = lambda name, **kw: sub.add_parser(name, parents=[common], **kw)  # noqa: E731

    p = add("synth", help="write a synthetic DICOM dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--dims", type=_dims, default=(32, 32, 32))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--lesion-size", type=int, default=8)
    p.add_argument("--lesion-delta", type=float, default=1500.0)
    p.add_argument("--noise-sigma", type=float, default=10.0)
    p.add_argument("--jobs", type=int, default=1)

    p = add("prep", help="DICOM series to VOL1 volume files")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--depth", type=int, default=64)
    p.add_argument("--modalities", type=_modality_list, default=list(MODALITIES))
    p.add_argument("--jobs", type=int, default=1)

    p = add("train", help="train one modality's model")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--modality", type=Modality, required=True)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--val-split", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--heads", type=int, default=16)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--mlp-dim", type=int, default=0)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--pool", choices=("cls", "mean"), default="cls")
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-decay", type=float, default=0.95)
    p.add_argument("--patience", type=int, default=3, help="0 disables early stopping")
    p.add_argument("--augment", choices=("none", "expand", "random"), default="expand")

    p = add("predict", help="per-subject probabilities from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--modality", type=Modality, default=None)

    p = add("ensemble", help="combine per-modality prediction CSVs")
    p.add_argument("--mode", choices=("average", "stack"), required=True)
    p.add_argument("--preds", required=True, help="comma-separated CSVs in T1w,T1wCE,T2w,FLAIR order")
    p.add_argument("--labels", default=None)
    p.add_argument("--stacker", default=None)
    p.add_argument("--l2", type=float, default=0.01)
    p.add_argument("--out", required=True)

    p = add("eval", help="ROC/AUC and confusion-matrix report")
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="unspecified")
    p.add_argument("--threshold", type=float, default=0.5)
    return parser


def run_config(args: argparse.Namespace) -> dict:
    """Effective configuration of a run, as JSON-ready values."""
    out = {}
    for key, value in sorted(vars(args).items()):
        if key == "verbose":
            continue
        if isinstance(value, Modality):
            value = value.value
        elif isinstance(value, (list, tuple)):
            value = [v.value if isinstance(v, Modality) else v for v in value]
        out[key] = value
    return out


def write_sidecar(path: str | Path, config: dict) -> Path:
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    return sidecar


def _prep_subject(task) -> list[str]:
    entry, out_root, target, modalities = task
    written = []
    for modality in modalities:
        files = entry.series.get(modality, [])
        if not files:
            continue
        volume = build_volume([read_dicom(f) for f in files], target, entry.subject_id, modality)
        folder = Path(out_root) / entry.subject_id
        folder.mkdir(parents=True, exist_ok=True)
        write_volume(volume, folder / f"{modality.value}.vol")
        written.append(f"{entry.subject_id}/{modality.value}")
    return written


def load_volumes(data_dir: str | Path, modality: Modality, target: tuple[int, int, int] | None = None) -> list[Volume]:
    """Read ``<data_dir>/<subject>/<modality>.vol`` files, resizing to ``target`` if given."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise IoError(f"no such directory: {data_dir}")
    volumes = []
    for folder in sorted(p for p in data_dir.iterdir() if p.is_dir() and p.name.isdigit()):
        path = folder / f"{modality.value}.vol"
        if path.is_file():
            v = read_volume(path, folder.name)
            if target is not None and v.shape != tuple(target):
                v = resize_volume(v, target)
                v = v.with_voxels(v.voxels.astype("float32"))
            volumes.append(v)
    return volumes


def cmd_synth(args, config) -> None:
    spec = SynthSpec(args.subjects, args.dims, args.positive_fraction, args.lesion_size, args.lesion_delta, args.noise_sigma, args.seed)
    index = generate_dataset(spec, args.out, jobs=args.jobs)
    write_sidecar(Path(args.out) / "synth", config)
    log.info("wrote %d subjects to %s", len(index), args.out)


def cmd_prep(args, config) -> None:
    target = (args.size, args.size, args.depth)
    index = scan_dataset(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(entry, str(out), target, args.modalities) for entry in index.subjects]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            written = [w for ws in pool.map(_prep_subject, tasks) for w in ws]
    else:
        written = [w for task in tasks for w in _prep_subject(task)]
    write_sidecar(out / "prep", config)
    log.info("prepared %d volumes into %s", len(written), out)


def cmd_train(args, config) -> None:
    probe = load_volumes(args.data, args.modality)
    if not probe:
        raise UsageError(f"no {args.modality.value} volumes under {args.data}")
    h, w, d = probe[0].shape
    target = (args.image_size, args.image_size, d) if args.image_size else (h, w, d)
    if args.patch <= 0 or any(s % args.patch for s in target):
        raise UsageError(f"patch {args.patch} must divide the volume dims {target}")
    if args.embed_dim % args.heads:
        raise UsageError(f"embed dim {args.embed_dim} must be divisible by {args.heads} heads")
    volumes = load_volumes(args.data, args.modality, target)
    model_config = Vit3dConfig(target, args.patch, args.embed_dim, args.blocks, args.heads, args.dropout, args.mlp_dim, args.pool)
    train_config = TrainConfig(
        epochs=args.epochs, val_split=args.val_split, batch_size=args.batch_size, lr=args.lr,
        lr_decay=args.lr_decay, early_stop_patience=args.patience or None, seed=args.seed,
        modality=args.modality, augment=args.augment,
    )
    labels = read_labels_csv(args.labels)
    result = train(volumes, labels, model_config, train_config, checkpoint_path=args.out, meta={"run": config})
    log_path = args.log or args.out + ".log.csv"
    write_log_csv(log_path, result.log)
    write_sidecar(log_path, config)
    log.info("best val loss %.6f at epoch %d; checkpoint %s", result.checkpoint.best_val_loss, result.checkpoint.epoch, args.out)


def cmd_predict(args, config) -> None:
    ckpt = load_checkpoint(args.model)
    modality = args.modality or Modality(ckpt.meta.get("modality", Modality.FLAIR.value))
    volumes = load_volumes(args.data, modality, ckpt.config.image_size)
    preds = evaluate(ckpt, volumes)
    write_predictions_csv(args.out, [(p.subject_id, p.per_modality[modality]) for p in preds])
    write_sidecar(args.out, {**config, "modality": modality.value})


def cmd_ensemble(args, config) -> None:
    paths = [p for p in args.preds.split(",") if p.strip()]
    if not 1 <= len(paths) <= len(MODALITIES):
        raise UsageError("--preds takes one to four CSV paths")
    if args.mode == "stack" and len(paths) != len(MODALITIES):
        raise UsageError("stacking needs exactly four prediction files (T1w,T1wCE,T2w,FLAIR)")
    tables = {m: read_predictions_csv(p) for m, p in zip(MODALITIES, paths)}
    preds = merge_modality_predictions(tables)
    if args.mode == "average":
        combined = average_ensemble(preds)
    else:
        if args.labels:
            labels = read_labels_csv(args.labels)
            fitted = [p for p in preds if p.subject_id in labels]
            model = fit_stacking(fitted, labels, l2_lambda=args.l2)
            if args.stacker:
                model.save(args.stacker)
                write_sidecar(args.stacker, config)
        elif args.stacker:
            model = StackingModel.load(args.stacker)
        else:
            raise UsageError("stacking needs --labels to fit or --stacker to load")
        combined = predict_stacking(model, preds)
    write_predictions_csv(args.out, [(p.subject_id, p.final) for p in combined])
    write_sidecar(args.out, config)


def cmd_eval(args, config) -> None:
    preds = read_predictions_csv(args.preds)
    labels = read_labels_csv(args.labels)
    ids = sorted(set(preds) & set(labels))
    if not ids:
        raise UsageError("no subject appears in both the predictions and the labels")
    report = evaluate_scores([preds[i] for i in ids], [labels[i] for i in ids], args.threshold, args.split, config)
    emit_report(report, args.out_dir)
    write_sidecar(Path(args.out_dir) / "run", config)
    log.info("AUC %.4f over %d subjects", report.auc, report.n)


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "train": cmd_train,
    "predict": cmd_predict,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        config = run_config(args)
        log.info("effective config: %s", json.dumps(config, sort_keys=True))
        COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RadiovitError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: InvalidArgument: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
