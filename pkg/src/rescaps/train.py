"""Training, evaluation and k-fold cross-validation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import augment as aug
from . import model as M
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .config import RunConfig
from .dataset import (DatasetManifest, SampleRecord, batch_iterator, kfold_split,
                      with_folds)
from .imageio import read_image
from .metrics import confusion, fmt, mean_and_std, scalar_metrics
from .optim import OptimizerState, optimizer_step, zero_grad
from .stain import ChannelStats, image_stats, reinhard_transfer

log = logging.getLogger(__name__)

Transform = Callable[[np.ndarray, np.random.Generator], np.ndarray]

EPOCH_HEADER = ("fold", "epoch", "split", "loss", "acc", "precision", "recall", "dsc")
FOLD_HEADER = ("fold", "best_epoch", "acc", "precision", "recall", "dsc")


# ---------------------------------------------------------------------------
# preprocessing


def reference_record(manifest: DatasetManifest) -> SampleRecord:
    """First benign training image in manifest order."""
    for r in manifest.records:
        if r.split == "train" and r.label == "benign":
            return r
    raise ValueError("manifest has no benign training image to use as color reference")


def make_transform(cfg: RunConfig, stats: ChannelStats | None, train: bool) -> Transform:
    size = (cfg.model.input_width, cfg.model.input_height)
    use_aug = train and cfg.train.augment

    def transform(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if stats is not None:
            img = reinhard_transfer(img, stats)
        img = aug.resize(img, *size)
        if use_aug:
            img = aug.augment(img, cfg.augment, rng)
        return img

    return transform


def stats_to_meta(stats: ChannelStats | None) -> str:
    if stats is None:
        return "none"
    return " ".join(repr(float(v)) for v in stats.means + stats.stds)


def stats_from_meta(text: str | None) -> ChannelStats | None:
    if not text or text == "none":
        return None
    vals = [float(v) for v in text.split()]
    return ChannelStats(tuple(vals[:3]), tuple(vals[3:]))


# ---------------------------------------------------------------------------
# steps


@dataclass
class Predictions:
    scores: np.ndarray  # malignant capsule length
    predicted: np.ndarray
    truths: np.ndarray
    loss: float


def train_step(params: dict, opt: OptimizerState, images: np.ndarray, targets: np.ndarray,
               cfg: RunConfig) -> tuple[float, np.ndarray]:
    plist = list(params.values())
    out = M.forward(M.as_batch(images), cfg.model, params)
    loss = M.margin_loss(out.scores, M.one_hot(targets), cfg.loss)
    zero_grad(plist)
    loss.backward()
    optimizer_step(plist, opt)
    return loss.item(), out.predicted


def predict(params: dict, arch: M.ArchitectureConfig, records: Sequence[SampleRecord],
            transform: Transform | None, batch_size: int,
            loss_cfg: M.MarginLossConfig = M.MarginLossConfig(),
            loader=read_image) -> Predictions:
    scores, preds, truths, total = [], [], [], 0.0
    for images, targets in batch_iterator(records, batch_size, seed=0, shuffle=False,
                                          transform=transform, loader=loader):
        out = M.forward(M.as_batch(images), arch, params)
        total += M.margin_loss(out.scores, M.one_hot(targets), loss_cfg).item() * len(targets)
        scores.append(out.scores.data[:, 1])
        preds.append(out.predicted)
        truths.append(targets)
    if not scores:
        return Predictions(np.zeros(0), np.zeros(0, int), np.zeros(0, int), float("nan"))
    return Predictions(np.concatenate(scores), np.concatenate(preds), np.concatenate(truths),
                       total / len(records))


def _summary(loss: float, predicted, truths) -> dict:
    m = scalar_metrics(confusion(predicted, truths))
    return {"loss": loss, "acc": m.acc, "precision": m.precision, "recall": m.recall,
            "dsc": m.dsc}


# ---------------------------------------------------------------------------
# cross-validation


def _row_text(row: dict) -> list[str]:
    return [str(row["fold"]), str(row["epoch"]), row["split"], fmt(row["loss"]), fmt(row["acc"]),
            fmt(row["precision"]), fmt(row["recall"]), fmt(row["dsc"])]


def _parse_row(raw: dict) -> dict:
    def num(x):
        return None if x == "undefined" else float(x)

    return {"fold": int(raw["fold"]), "epoch": int(raw["epoch"]), "split": raw["split"],
            "loss": num(raw["loss"]), "acc": num(raw["acc"]),
            "precision": num(raw["precision"]), "recall": num(raw["recall"]),
            "dsc": num(raw["dsc"])}


def _write_csv(path: Path, header: Sequence[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_history(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8", newline="") as fh:
        return [_parse_row(r) for r in csv.DictReader(fh)]


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def train_fold(cfg: RunConfig, fold: int, train_recs: list[SampleRecord],
               val_recs: list[SampleRecord], stats: ChannelStats | None, out_dir: Path,
               resume: bool = False, loader=read_image,
               progress: Callable[[str], None] | None = None) -> dict:
    """Train one fold; returns the best-validation summary row."""
    fdir = out_dir / f"fold{fold}"
    fdir.mkdir(parents=True, exist_ok=True)
    state_path, best_path, hist_path = fdir / "state.rcap", fdir / "best.rcap", fdir / "epochs.csv"
    seed = fold_seed(cfg.seed, fold)
    meta = {"fold": str(fold), "reference_stats": stats_to_meta(stats)}

    params = M.init_params(cfg.model, seed)
    opt = OptimizerState(cfg.optim.kind, cfg.optim.learning_rate, cfg.optim.beta1,
                         cfg.optim.beta2, cfg.optim.epsilon)
    history: list[dict] = []
    start = 1
    if resume and state_path.exists():
        ck = checkpoint_load(state_path)
        params = ck.params
        opt.step_count = int(ck.meta["step_count"])
        names = list(params)
        if ck.extras:
            opt.m = [ck.extras[f"m.{n}"] for n in names]
            opt.v = [ck.extras[f"v.{n}"] for n in names]
        start = int(ck.meta["epoch"]) + 1
        history = [r for r in _read_history(hist_path) if r["epoch"] < start]
        log.info("fold %d: resuming after epoch %d", fold, start - 1)
    elif resume and best_path.exists() and not state_path.exists() and hist_path.exists():
        history = _read_history(hist_path)
        log.info("fold %d: already complete", fold)
        return _best_row(fold, history)

    train_tf = make_transform(cfg, stats, train=True)
    eval_tf = make_transform(cfg, stats, train=False)

    def validate(epoch: int) -> dict:
        pred = predict(params, cfg.model, val_recs, eval_tf, cfg.train.batch_size, cfg.loss,
                       loader)
        row = {"fold": fold, "epoch": epoch, "split": "val",
               **_summary(pred.loss, pred.predicted, pred.truths)}
        history.append(row)
        return row

    def save_best_if_improved(row: dict) -> None:
        val_rows = [r for r in history if r["split"] == "val"]
        best = max(val_rows, key=lambda r: (r["acc"], -r["epoch"]))
        if best is row:
            checkpoint_save(params, cfg.model, best_path, seed,
                            {**meta, "epoch": str(row["epoch"])})

    if cfg.train.epochs == 0:
        save_best_if_improved(validate(0))

    for epoch in range(start, cfg.train.epochs + 1):
        losses, preds, truths = [], [], []
        for images, targets in batch_iterator(train_recs, cfg.train.batch_size, seed, epoch,
                                              transform=train_tf, loader=loader):
            loss, predicted = train_step(params, opt, images, targets, cfg)
            losses.append(loss * len(targets))
            preds.append(predicted)
            truths.append(targets)
        history.append({"fold": fold, "epoch": epoch, "split": "train",
                        **_summary(float(np.sum(losses)) / len(train_recs),
                                   np.concatenate(preds), np.concatenate(truths))})
        row = validate(epoch)
        save_best_if_improved(row)
        extras = {}
        if opt.m:
            extras = {f"m.{n}": m for n, m in zip(params, opt.m)}
            extras.update({f"v.{n}": v for n, v in zip(params, opt.v)})
        checkpoint_save(params, cfg.model, state_path, seed,
                        {**meta, "epoch": str(epoch), "step_count": str(opt.step_count)},
                        extras)
        _write_csv(hist_path, EPOCH_HEADER, [_row_text(r) for r in history])
        if progress:
            progress(f"fold {fold} epoch {epoch}: loss {history[-2]['loss']:.4f} "
                     f"val acc {fmt(row['acc'])}")

    _write_csv(hist_path, EPOCH_HEADER, [_row_text(r) for r in history])
    if state_path.exists():
        state_path.unlink()
    return _best_row(fold, history)


def _best_row(fold: int, history: list[dict]) -> dict:
    val_rows = [r for r in history if r["split"] == "val"]
    best = max(val_rows, key=lambda r: (r["acc"], -r["epoch"]))
    return {"fold": fold, "best_epoch": best["epoch"], "acc": best["acc"],
            "precision": best["precision"], "recall": best["recall"], "dsc": best["dsc"]}


def cross_validate(cfg: RunConfig, manifest: DatasetManifest, out_dir, resume: bool = False,
                   loader=read_image, progress=None) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds = kfold_split(manifest, cfg.train.folds, cfg.seed)
    manifest = with_folds(manifest, folds)

    stats = None
    if cfg.train.normalize:
        ref = cfg.paths.reference_image or reference_record(manifest).path
        stats = image_stats(loader(ref))
        stats.save(out_dir / "reference_stats.txt")

    train_all = manifest.select(split="train")
    rows = []
    for f in range(folds.k):
        tr = [r for r in train_all if r.fold != f]
        va = [r for r in train_all if r.fold == f]
        rows.append(train_fold(cfg, f, tr, va, stats, out_dir, resume, loader, progress))

    history = []
    for f in range(folds.k):
        history += _read_history(out_dir / f"fold{f}" / "epochs.csv")
    _write_csv(out_dir / "epochs.csv", EPOCH_HEADER, [_row_text(r) for r in history])

    table = [[str(r["fold"]), str(r["best_epoch"]), fmt(r["acc"]), fmt(r["precision"]),
              fmt(r["recall"]), fmt(r["dsc"])] for r in rows]
    means, stds = ["mean", ""], ["std", ""]
    for key in ("acc", "precision", "recall", "dsc"):
        mu, sd = mean_and_std([r[key] for r in rows])
        means.append(fmt(mu))
        stds.append(fmt(sd))
    _write_csv(out_dir / "folds.csv", FOLD_HEADER, table + [means, stds])

    from .plotting import plot_training

    plot_training(history, out_dir / "training_curves.png")
    return rows


def load_for_eval(path) -> tuple[Checkpoint, ChannelStats | None]:
    ck = checkpoint_load(path)
    return ck, stats_from_meta(ck.meta.get("reference_stats"))
