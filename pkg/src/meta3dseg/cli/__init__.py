"""``meta3dseg`` command line.

Exit codes: 0 success, 2 validation error, 3 divergence abort, 4 I/O error.
Every command validates all of its inputs before it creates any output.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ..evaluation import (ablation_csv, evaluate_records, score_category, scores_csv, scores_json)
from ..geometry import CATEGORIES, Dataset, DatasetFormatError, load_dataset, make_record, save_dataset
from ..learner import ArchitectureError
from ..training import (SETTINGS, DivergenceError, TrainingError, fine_tune, meta_train,
                        run_weight_setting)
from . import checkpoint, ply, runconfig
from .checkpoint import CheckpointError
from .ply import PaletteError
from .runconfig import ConfigError

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("meta3dseg")


class UsageError(ValueError):
    pass


# --- helpers ---------------------------------------------------------------------------

def _dataset(path: str) -> tuple[Dataset, str]:
    ds = load_dataset(path)
    digest = hashlib.sha256((Path(path) / "manifest.json").read_bytes()).hexdigest()
    return ds, digest


def _config(path: str | None) -> dict:
    return runconfig.load(path) if path else runconfig.validate({})


def _data_path(args, doc: dict) -> str:
    path = args.data or doc.get("data")
    if not path:
        raise UsageError("no dataset given (use --data or the config's \"data\" key)")
    return path


def _check_resolution(records, arch) -> None:
    bad = sorted({r.grid.resolution for r in records} - {arch.resolution})
    if bad:
        raise ArchitectureError(f"dataset grids have resolution {bad[0]}, preset {arch.name!r} "
                                f"expects {arch.resolution}")


def _category(ds: Dataset, name: str):
    records = ds.category(name)
    if not records:
        present = sorted({r.category for r in ds.records})
        raise UsageError(f"category {name!r} not in dataset (has: {', '.join(present)})")
    return records


def _fresh_output(path: str, force_dir: bool = False) -> Path:
    out = Path(path)
    if not out.parent.exists():
        raise UsageError(f"output directory {out.parent} does not exist")
    if force_dir and out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    return out


def _read_labels(path: Path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


# --- commands ----------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cats = [c.strip() for c in args.categories.split(",") if c.strip()]
    unknown = [c for c in cats if c not in CATEGORIES]
    if unknown or not cats:
        raise UsageError(f"unknown category {unknown[0]!r}; expected one of {', '.join(CATEGORIES)}"
                         if unknown else "no categories given")
    if args.per_category < 1 or args.resolution < 2 or args.seed < 0 or args.points < 1:
        raise UsageError("--per-category, --points must be >= 1, --resolution >= 2, --seed >= 0")
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    records = [make_record(c, args.seed * 1000 + i, args.resolution, args.points, args.split)
               for c in cats for i in range(args.per_category)]
    save_dataset(records, out)
    print(f"wrote {len(records)} shapes to {out}")
    return EXIT_OK


def cmd_meta_train(args) -> int:
    doc = _config(args.config)
    cfg = runconfig.train_config(doc)
    setting = args.setting or doc.get("setting", "C")
    ds, digest = _dataset(_data_path(args, doc))
    records = ds.split("train") or ds.records
    if not records:
        raise UsageError("dataset has no shapes to train on")
    _check_resolution(records, cfg.arch)
    out = _fresh_output(args.out)
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".jsonl")
    params, report = meta_train(records, cfg, variant=SETTINGS[setting],
                                on_epoch=lambda e, l: log.info("epoch %d loss %.6f", e, l))
    prov = {"seed": cfg.seed, "epochs": cfg.meta_epochs, "dataset_digest": digest,
            "setting": setting, "n_shapes": len(records)}
    checkpoint.save(checkpoint.from_meta(params, cfg.to_dict(), prov), out)
    report_path.write_text(report.json_lines("epoch"))
    print(f"meta-trained setting {setting}: loss {report.initial_loss:.5f} -> {report.final_loss:.5f}")
    return EXIT_OK


def cmd_fine_tune(args) -> int:
    doc = _config(args.config)
    cfg = runconfig.train_config(doc)
    ckpt = None
    if not args.setting:
        if not args.meta:
            raise UsageError("fine-tune needs --meta CKPT (or --setting to train one)")
        ckpt = checkpoint.load(args.meta)
        checkpoint.check_compatible(ckpt, cfg.arch)
    ds, digest = _dataset(_data_path(args, doc))
    targets = _category(ds, args.category)
    _check_resolution(targets, cfg.arch)
    out = _fresh_output(args.out)
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".jsonl")
    prov = {"seed": cfg.seed, "epochs": cfg.meta_epochs, "finetune_steps": cfg.finetune_steps,
            "dataset_digest": digest, "category": args.category}

    if args.setting:
        train = [r for r in (ds.split("train") or ds.records) if r.category != args.category]
        if not train:
            raise UsageError(f"--setting needs training shapes outside category {args.category!r}")
        _check_resolution(train, cfg.arch)
        csv_path = Path(args.csv) if args.csv else out.with_name(out.name + ".csv")
        result = run_weight_setting(args.setting, train, targets, cfg)
        ft, ft_report = result.finetuned, result.finetune_report
        score = evaluate_records(lambda r, p: ft.segment(r, p)[0], targets, ft.meta.arch.n_branches)
        csv_path.write_text(ablation_csv([(args.setting, score.mean_iou, score.accuracy)]))
        prov["setting"] = args.setting
        print(f"setting {args.setting}: mIoU {score.mean_iou:.4f} acc {score.accuracy:.4f}")
    else:
        meta = checkpoint.to_meta(ckpt)
        ft, ft_report = fine_tune(meta, targets, cfg)
        prov["setting"] = ckpt.header["provenance"].get("setting")
        prov["meta_provenance"] = ckpt.header["provenance"]
    checkpoint.save(checkpoint.from_finetuned(ft, cfg.to_dict(), prov), out)
    report_path.write_text(ft_report.json_lines("step"))
    print(f"fine-tuned on {len(targets)} {args.category} shapes: "
          f"loss {ft_report.initial_loss:.5f} -> {ft_report.final_loss:.5f}")
    return EXIT_OK


def _selected(ds: Dataset, category: str | None):
    return _category(ds, category) if category else ds.records


def cmd_segment(args) -> int:
    ft = checkpoint.to_finetuned(checkpoint.load(args.model))
    ds, _ = _dataset(args.data)
    records = _selected(ds, args.category)
    _check_resolution(records, ft.meta.arch)
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    for r in records:
        labels, _ = ft.segment(r, r.cloud.points)
        (out / f"{r.id}.labels").write_text("".join(f"{v}\n" for v in labels.tolist()))
    print(f"segmented {len(records)} shapes into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if bool(args.model) == bool(args.labels):
        raise UsageError("give exactly one of --model or --labels")
    if args.labels and args.points:
        raise UsageError("--points resamples the surface and needs --model")
    ds, _ = _dataset(args.data)
    records = _selected(ds, args.category)
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.category, []).append(r)
    out = _fresh_output(args.out)
    json_path = Path(args.json) if args.json else out.with_suffix(".json")
    scores = []
    if args.model:
        ft = checkpoint.to_finetuned(checkpoint.load(args.model))
        _check_resolution(records, ft.meta.arch)
        for cat, recs in groups.items():
            scores.append(evaluate_records(lambda r, p: ft.segment(r, p)[0], recs,
                                           ft.meta.arch.n_branches, args.points, args.seed))
    else:
        root = Path(args.labels)
        preds = {r.id: _read_labels(root / f"{r.id}.labels") for r in records}
        for r in records:
            if len(preds[r.id]) != len(r.cloud):
                raise UsageError(f"{r.id}: {len(preds[r.id])} labels for {len(r.cloud)} points")
            if preds[r.id].size and preds[r.id].min() < 0:
                raise UsageError(f"{r.id}: negative label")
        for cat, recs in groups.items():
            n_parts = len(recs[0].part_names)
            n_branches = max(n_parts, max(int(preds[r.id].max()) + 1 for r in recs))
            scores.append(score_category([preds[r.id] for r in recs], [r.cloud.labels for r in recs],
                                         n_branches, n_parts, cat))
    out.write_text(scores_csv(scores))
    json_path.write_text(scores_json(scores))
    for s in scores:
        print(f"{s.category}: mIoU {s.mean_iou:.4f} acc {s.accuracy:.4f} ({s.n_shapes} shapes)")
    return EXIT_OK


def cmd_export_ply(args) -> int:
    ds, _ = _dataset(args.data)
    match = [r for r in ds.records if r.id == args.shape]
    if not match:
        raise UsageError(f"shape {args.shape!r} not in dataset")
    r = match[0]
    if args.labels and args.model:
        raise UsageError("give at most one of --labels or --model")
    if args.model:
        ft = checkpoint.to_finetuned(checkpoint.load(args.model))
        _check_resolution([r], ft.meta.arch)
        labels, _ = ft.segment(r, r.cloud.points)
    elif args.labels:
        labels = _read_labels(Path(args.labels) / f"{r.id}.labels")
    else:
        labels = r.cloud.labels
    text = ply.ply_text(r.cloud.points, labels)  # raises on palette overflow before writing
    _fresh_output(args.out).write_text(text)
    print(f"wrote {len(r.cloud)} vertices to {args.out}")
    return EXIT_OK


def cmd_schema(args) -> int:
    sys.stdout.write(runconfig.schema_json())
    return EXIT_OK


# --- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meta3dseg", description="Meta-learned unsupervised 3D part segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic shape dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--categories", required=True, help="comma-separated, e.g. table,mug")
    g.add_argument("--per-category", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=16)
    g.add_argument("--points", type=int, default=2048, help="surface points per shape")
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("meta-train", help="train the meta-learner")
    m.add_argument("--data")
    m.add_argument("--config")
    m.add_argument("--out", required=True, help="checkpoint path")
    m.add_argument("--report", help="JSON-lines report (default: <out>.jsonl)")
    m.add_argument("--setting", choices=sorted(SETTINGS))
    m.set_defaults(func=cmd_meta_train)

    f = sub.add_parser("fine-tune", help="fine-tune theta_l on one category")
    f.add_argument("--meta", help="meta-learner checkpoint")
    f.add_argument("--data")
    f.add_argument("--category", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True, help="learner checkpoint path")
    f.add_argument("--report", help="JSON-lines report (default: <out>.jsonl)")
    f.add_argument("--setting", choices=sorted(SETTINGS),
                   help="run the full weight setting (meta-train on the other categories, then fine-tune)")
    f.add_argument("--csv", help="setting,iou,acc table (default: <out>.csv; with --setting)")
    f.set_defaults(func=cmd_fine_tune)

    s = sub.add_parser("segment", help="write per-shape branch labels")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--category")
    s.add_argument("--out", required=True, help="directory for <id>.labels files")
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score segmentations (CSV + JSON)")
    e.add_argument("--data", required=True)
    e.add_argument("--model")
    e.add_argument("--labels", help="directory of <id>.labels files")
    e.add_argument("--category")
    e.add_argument("--points", type=int, help="resample this many surface points per shape")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True, help="CSV path")
    e.add_argument("--json", help="JSON path (default: CSV path with .json)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-ply", help="write a coloured ASCII PLY")
    x.add_argument("--data", required=True)
    x.add_argument("--shape", required=True, help="shape id")
    x.add_argument("--labels", help="directory of <id>.labels files (default: ground truth)")
    x.add_argument("--model")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_ply)

    sc = sub.add_parser("schema", help="print the run-config JSON schema")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, DatasetFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ConfigError, ArchitectureError, PaletteError, TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
