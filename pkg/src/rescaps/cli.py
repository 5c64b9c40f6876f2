"""Command-line entry point: scan, normalize, train, eval, verify."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as C
from .checkpoint import CheckpointError
from .dataset import (DEFAULT_FRACTIONS, ManifestError, assign_splits, read_manifest, scan,
                      write_manifest)
from .imageio import IMAGE_SUFFIXES, ImageFormatError, read_image, write_image
from .metrics import (UndefinedMetricError, auc, per_magnification_report, roc_curve,
                      write_confusion_csv, write_metrics_csv, write_roc_csv)

log = logging.getLogger("rescaps")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class DataError(Exception):
    pass


def _fractions(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fractions {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("need three comma-separated fractions train,val,test")
    return vals


def cmd_scan(args) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise DataError(f"data root {root} does not exist or is not a directory")
    manifest = assign_splits(scan(root), args.fractions, args.seed)
    write_manifest(manifest, args.out)
    print(f"{'label':<10} {'mag':>4} {'train':>6} {'val':>6} {'test':>6}")
    counts = manifest.counts()
    for label in ("benign", "malignant"):
        for mag in (40, 100, 200, 400):
            row = [counts.get((label, mag, s), 0) for s in ("train", "val", "test")]
            if any(row):
                print(f"{label:<10} {mag:>4} {row[0]:>6} {row[1]:>6} {row[2]:>6}")
    sizes = manifest.split_sizes()
    print(f"{'total':<10} {'':>4} {sizes['train']:>6} {sizes['val']:>6} {sizes['test']:>6}")
    if manifest.skipped:
        print(f"skipped {len(manifest.skipped)} file(s) outside the label/magnification layout")
    return EXIT_OK


def cmd_normalize(args) -> int:
    from .stain import image_stats, reinhard_transfer

    in_dir, ref, out_dir = Path(args.in_dir), Path(args.reference), Path(args.out)
    if not in_dir.is_dir():
        raise DataError(f"input directory {in_dir} does not exist")
    if not ref.is_file():
        raise DataError(f"reference image {ref} does not exist")
    stats = image_stats(read_image(ref))
    files = sorted(p for p in in_dir.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats.save(out_dir / "reference_stats.txt")
    for src in files:
        dst = out_dir / src.relative_to(in_dir)
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_image(dst, reinhard_transfer(read_image(src), stats))
    print(f"normalized {len(files)} image(s) into {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import cross_validate

    cfg = C.load(args.config, args.set)
    if not cfg.paths.manifest:
        raise C.ConfigError(f"{args.config}: paths.manifest is required")
    if not cfg.paths.output_dir:
        raise C.ConfigError(f"{args.config}: paths.output_dir is required")
    manifest_path = Path(cfg.paths.manifest)
    if not manifest_path.is_file():
        raise DataError(f"manifest {manifest_path} does not exist")
    if cfg.paths.reference_image and not Path(cfg.paths.reference_image).is_file():
        raise DataError(f"reference image {cfg.paths.reference_image} does not exist")
    manifest = read_manifest(manifest_path)
    for rec in manifest.select(split="train"):
        if not Path(rec.path).is_file():
            raise DataError(f"training image {rec.path} does not exist")
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(cfg.to_text(), encoding="utf-8")
    rows = cross_validate(cfg, manifest, out, resume=args.resume, progress=log.info)
    for r in rows:
        print(f"fold {r['fold']}: best epoch {r['best_epoch']} val acc {r['acc']:.6f}")
    print(f"wrote {out / 'folds.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .plotting import plot_roc
    from .train import load_for_eval, make_transform, predict

    ck_path = Path(args.checkpoint)
    if not ck_path.is_file():
        raise DataError(f"checkpoint {ck_path} does not exist")
    if not Path(args.manifest).is_file():
        raise DataError(f"manifest {args.manifest} does not exist")
    ck, stats = load_for_eval(ck_path)
    manifest = read_manifest(args.manifest)
    records = manifest.select(split=args.split)
    if not records:
        raise DataError(f"split {args.split!r} of {args.manifest} is empty")
    cfg = C.RunConfig(seed=ck.seed, model=ck.config,
                      train=C.TrainSettings(batch_size=args.batch_size, augment=False))
    pred = predict(ck.params, ck.config, records, make_transform(cfg, stats, train=False),
                   args.batch_size)
    mags = [r.magnification for r in records]
    reports = per_magnification_report(pred.predicted, pred.truths, mags, pred.scores)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", reports)
    write_confusion_csv(out / "confusion.csv", reports["overall"].confusion)
    curves, aucs = {}, {}
    for scope in reports:
        idx = [i for i, m in enumerate(mags) if scope == "overall" or str(m) == scope]
        try:
            curves[scope] = roc_curve(pred.scores[idx], pred.truths[idx])
            aucs[scope] = auc(curves[scope])
        except UndefinedMetricError:
            continue
    write_roc_csv(out / "roc.csv", curves.get("overall", []))
    plot_roc(curves, aucs, out / "roc.png")
    overall = reports["overall"].metrics
    print(f"{args.split}: n={len(records)} acc={overall.acc:.6f} -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(seed=args.seed, full_model=not args.quick)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rescaps", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="index a labeled image tree and assign splits")
    s.add_argument("root")
    s.add_argument("--out", required=True, help="manifest CSV to write")
    s.add_argument("--fractions", type=_fractions, default=DEFAULT_FRACTIONS,
                   help="train,val,test fractions (default: 5053/1263/1593 of 7909)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("normalize", help="color-normalize images to a reference")
    s.add_argument("in_dir")
    s.add_argument("--reference", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("train", help="k-fold cross-validated training")
    s.add_argument("config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    s.add_argument("--resume", action="store_true", help="continue interrupted folds")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", required=True)
    s.add_argument("--batch-size", type=int, default=16)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify", help="run gradient, routing and metric self-checks")
    s.add_argument("--quick", action="store_true", help="skip the full-model gradient check")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ManifestError, CheckpointError, ImageFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
