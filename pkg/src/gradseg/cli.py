"""Command-line interface.

Subcommands: synth (write a synthetic corpus), train (fit the classifier),
segment (derive masks), evaluate (score masks against ground truth).

Every flag can also be supplied through a JSON config file (--config);
explicit flags override file values, which override built-in defaults.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evalharness, pipeline
from .attribution import IgConfig
from .classifier import LabeledDataset, TrainConfig, load_checkpoint, save_checkpoint, train
from .evalharness import SynthConfig, evaluate, generate_synthetic
from .imagecore import ImageFormatError, compute_stats, load_image, load_mask, save_mask

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_DEFAULTS = {
    "synth": {"n_pos": 100, "n_neg": 100, "size": 64, "seed": 0},
    "train": {"epochs": 100, "lr": 0.005, "momentum": 0.9, "decay": 0.1,
              "decay_every": 50, "freeze_backbone": False, "seed": 0},
    "segment": {"variant": "xncut", "crf": "off", "ig_steps": 50,
                "nt_samples": 5, "nt_sigma": None, "seed": 0},
    "evaluate": {},
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gradseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    synth = sub.add_parser("synth", help="write a synthetic disk corpus")
    synth.add_argument("--out", help="corpus directory to create")
    synth.add_argument("--n-pos", type=int, dest="n_pos")
    synth.add_argument("--n-neg", type=int, dest="n_neg")
    synth.add_argument("--size", type=int)
    synth.add_argument("--seed", type=int)

    tr = sub.add_parser("train", help="train the reference classifier")
    tr.add_argument("--data", help="corpus directory with manifest.json")
    tr.add_argument("--out", help="checkpoint path to write")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--decay", type=float)
    tr.add_argument("--decay-every", type=int, dest="decay_every")
    tr.add_argument("--freeze-backbone", action=argparse.BooleanOptionalAction,
                    dest="freeze_backbone", default=None)
    tr.add_argument("--seed", type=int)

    seg = sub.add_parser("segment", help="derive masks for a corpus")
    seg.add_argument("--model", help="checkpoint path")
    seg.add_argument("--data", help="corpus directory")
    seg.add_argument("--variant", choices=sorted(pipeline._VARIANT_NAMES))
    seg.add_argument("--crf", choices=["on", "off"])
    seg.add_argument("--ig-steps", type=int, dest="ig_steps")
    seg.add_argument("--nt-samples", type=int, dest="nt_samples")
    seg.add_argument("--nt-sigma", type=float, dest="nt_sigma")
    seg.add_argument("--out", help="directory for predicted masks")
    seg.add_argument("--seed", type=int)

    ev = sub.add_parser("evaluate", help="score predicted masks against truth")
    ev.add_argument("--pred", help="directory of predicted masks")
    ev.add_argument("--truth", help="directory of ground-truth masks")
    ev.add_argument("--out", help="report JSON path")

    for p in (synth, tr, seg, ev):
        p.add_argument("--config", help="JSON file supplying any flag")
    return parser


def _merge_options(command: str, args: argparse.Namespace) -> dict:
    merged = dict(_DEFAULTS[command])
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}")
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in file_values.items():
            key = key.replace("-", "_")
            if key not in cli and key not in merged:
                raise UsageError(f"config key {key!r} is not a flag of '{command}'")
            merged[key] = value
    merged.update({k: v for k, v in cli.items() if v is not None})
    return merged


def _require(opts: dict, command: str, *keys):
    for key in keys:
        if opts.get(key) is None:
            raise UsageError(f"'{command}' requires --{key.replace('_', '-')}")


# ---------------------------------------------------------------------------
# Corpus I/O
# ---------------------------------------------------------------------------

def _write_corpus(corpus, out_dir: Path, opts: dict) -> None:
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    items = []
    for i, (img, mask, label) in enumerate(zip(corpus.images, corpus.masks, corpus.labels)):
        name = f"img_{i:04d}.pgm"
        from .imagecore import save_image
        save_image(img, out_dir / "images" / name)
        save_mask(mask, out_dir / "masks" / name)
        items.append({
            "image": f"images/{name}", "mask": f"masks/{name}",
            "label": int(label), "group": "positive" if label == 1 else "negative",
        })
    manifest = {
        "format": "gradseg-corpus", "version": 1, "num_classes": 2,
        "image_size": corpus.config.image_size, "seed": corpus.config.seed,
        "synth": opts, "items": items,
    }
    with open(out_dir / _MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)


def _load_manifest(data_dir: Path) -> dict | None:
    path = data_dir / _MANIFEST
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def _corpus_images(data_dir: Path):
    """(names, images, labels-or-None) for a corpus directory."""
    manifest = _load_manifest(data_dir)
    if manifest is not None:
        names, images, labels = [], [], []
        for item in manifest["items"]:
            rel = item["image"]
            names.append(Path(rel).name)
            images.append(load_image(data_dir / rel))
            labels.append(item.get("label"))
        if any(lbl is None for lbl in labels):
            labels = None
        return names, images, labels, manifest
    search = data_dir / "images" if (data_dir / "images").is_dir() else data_dir
    paths = sorted(p for p in search.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not paths:
        raise ValueError(f"no images found under {data_dir}")
    return [p.name for p in paths], [load_image(p) for p in paths], None, None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(opts: dict) -> int:
    _require(opts, "synth", "out")
    cfg = SynthConfig(n_positive=int(opts["n_pos"]), n_negative=int(opts["n_neg"]),
                      image_size=int(opts["size"]), seed=int(opts["seed"]))
    corpus = generate_synthetic(cfg)
    out_dir = Path(opts["out"])
    _write_corpus(corpus, out_dir, {k: opts[k] for k in ("n_pos", "n_neg", "size", "seed")})
    print(f"wrote {len(corpus)} images to {out_dir}")
    return EXIT_OK


def _cmd_train(opts: dict) -> int:
    _require(opts, "train", "data", "out")
    data_dir = Path(opts["data"])
    names, images, labels, manifest = _corpus_images(data_dir)
    if labels is None:
        raise ValueError(f"{data_dir} has no manifest with labels; cannot train")
    num_classes = int(manifest.get("num_classes", max(labels) + 1))
    stats = compute_stats(images)
    from .imagecore import normalize
    dataset = LabeledDataset([normalize(im, stats) for im in images],
                             np.asarray(labels), num_classes)
    cfg = TrainConfig(epochs=int(opts["epochs"]), learning_rate=float(opts["lr"]),
                      momentum=float(opts["momentum"]), decay_factor=float(opts["decay"]),
                      decay_every=int(opts["decay_every"]), seed=int(opts["seed"]),
                      freeze_backbone=bool(opts["freeze_backbone"]))
    history = []
    params = train(dataset, cfg, loss_history=history)
    save_checkpoint(opts["out"], params, stats)
    final = history[-1] if history else float("nan")
    print(f"trained on {len(dataset)} images for {cfg.epochs} epochs "
          f"(final loss {final:.4f}); checkpoint: {opts['out']}")
    return EXIT_OK


def _cmd_segment(opts: dict) -> int:
    _require(opts, "segment", "model", "data", "out")
    params, stats = load_checkpoint(opts["model"])
    if stats is None:
        raise ValueError("checkpoint carries no normalization stats; re-train to embed them")
    names, images, _, _ = _corpus_images(Path(opts["data"]))
    cfg = pipeline.PipelineConfig(
        variant=pipeline.parse_variant(opts["variant"], crf=opts["crf"] == "on"),
        stats=stats,
        ig=IgConfig(steps=int(opts["ig_steps"]), nt_samples=int(opts["nt_samples"]),
                    nt_sigma=None if opts["nt_sigma"] is None else float(opts["nt_sigma"]),
                    seed=int(opts["seed"])),
    )
    results = pipeline.run_corpus(params, images, cfg)
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for name, result in zip(names, results):
        save_mask(result.mask, out_dir / name)
        records.append({"image": name, "label": int(result.label),
                        "warnings": list(result.warnings), "error": result.error})
    summary = {
        "variant": opts["variant"], "crf": opts["crf"], "seed": int(opts["seed"]),
        "ig_steps": int(opts["ig_steps"]), "nt_samples": int(opts["nt_samples"]),
        "nt_sigma": opts["nt_sigma"], "items": records,
    }
    with open(out_dir / "predictions.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    failures = sum(1 for r in records if r["error"])
    print(f"segmented {len(records)} images -> {out_dir} ({failures} failures)")
    return EXIT_OK


def _mask_files(directory: Path) -> dict:
    if not directory.is_dir():
        raise ValueError(f"not a directory: {directory}")
    return {p.name: p for p in directory.iterdir() if p.suffix.lower() == ".pgm"}


def _cmd_evaluate(opts: dict) -> int:
    _require(opts, "evaluate", "pred", "truth", "out")
    pred_dir, truth_dir = Path(opts["pred"]), Path(opts["truth"])
    preds = _mask_files(pred_dir)
    truths = _mask_files(truth_dir)
    common = sorted(preds.keys() & truths.keys())
    if not common:
        raise ValueError("no filename-matched mask pairs between pred and truth")

    groups = None
    manifest = _load_manifest(truth_dir) or _load_manifest(truth_dir.parent)
    if manifest is not None:
        by_name = {Path(item["mask"]).name: item.get("group")
                   for item in manifest.get("items", [])}
        if all(by_name.get(name) for name in common):
            groups = [by_name[name] for name in common]

    report = evalharness.evaluate(
        [load_mask(preds[name]) for name in common],
        [load_mask(truths[name]) for name in common],
        names=common, groups=groups,
        config={"pred": str(pred_dir), "truth": str(truth_dir)},
    )
    with open(opts["out"], "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"evaluated {report['count']} pairs: mean IoU {report['mean_iou']:.4f}, "
          f"mean Dice {report['mean_dice']:.4f} -> {opts['out']}")
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "train": _cmd_train,
             "segment": _cmd_segment, "evaluate": _cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (synth, train, segment, evaluate)")
        opts = _merge_options(args.command, args)
        return _COMMANDS[args.command](opts)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageFormatError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - internal invariant violations
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
