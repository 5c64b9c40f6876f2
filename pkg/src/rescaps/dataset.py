"""Manifest ingestion, stratified splits, k-fold assignment and batching."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .imageio import IMAGE_SUFFIXES, read_image

log = logging.getLogger(__name__)

LABELS = ("benign", "malignant")
MAGNIFICATIONS = (40, 100, 200, 400)
SPLITS = ("train", "val", "test", "unassigned")
HEADER = ("path", "label", "magnification", "split", "fold")
# 5053 / 1263 / 1593 of 7909 images
DEFAULT_FRACTIONS = (5053 / 7909, 1263 / 7909, 1593 / 7909)

_MAG_DIR = re.compile(r"^(40|100|200|400)[xX]$")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    path: str
    label: str
    magnification: int
    split: str = "unassigned"
    fold: int | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"bad label {self.label!r}")
        if self.magnification not in MAGNIFICATIONS:
            raise ManifestError(f"bad magnification {self.magnification!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"bad split {self.split!r}")

    @property
    def target(self) -> int:
        return LABELS.index(self.label)

    @property
    def stratum(self) -> tuple[str, int]:
        return self.label, self.magnification


@dataclass
class DatasetManifest:
    records: list[SampleRecord] = field(default_factory=list)
    seed: int | None = None
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.path in seen:
                raise ManifestError(f"duplicate path {r.path}")
            seen.add(r.path)

    def __len__(self) -> int:
        return len(self.records)

    def select(self, split: str | None = None, magnification: int | None = None,
               folds: Sequence[int] | None = None) -> list[SampleRecord]:
        out = self.records
        if split is not None:
            out = [r for r in out if r.split == split]
        if magnification is not None:
            out = [r for r in out if r.magnification == magnification]
        if folds is not None:
            wanted = set(folds)
            out = [r for r in out if r.fold in wanted]
        return list(out)

    def counts(self) -> dict[tuple[str, int, str], int]:
        table: dict[tuple[str, int, str], int] = {}
        for r in self.records:
            key = (r.label, r.magnification, r.split)
            table[key] = table.get(key, 0) + 1
        return table

    def split_sizes(self) -> dict[str, int]:
        sizes = {s: 0 for s in SPLITS}
        for r in self.records:
            sizes[r.split] += 1
        return sizes


# ---------------------------------------------------------------------------
# scanning


def _classify_path(rel: Path) -> tuple[str, int] | None:
    parts = rel.parts[:-1]
    for i, part in enumerate(parts):
        if part.lower() in LABELS:
            for later in parts[i + 1:]:
                m = _MAG_DIR.match(later)
                if m:
                    return part.lower(), int(m.group(1))
            return None
    return None


def scan(root) -> DatasetManifest:
    """Find images under root/{benign|malignant}/.../{40X|100X|200X|400X}/..."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"data root {root} is not a readable directory")
    records, skipped = [], []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root)
        hit = _classify_path(rel) if path.suffix.lower() in IMAGE_SUFFIXES else None
        if hit is None:
            log.warning("skipping %s: does not match the label/magnification layout", path)
            skipped.append(path.as_posix())
            continue
        records.append(SampleRecord(path.as_posix(), hit[0], hit[1]))
    return DatasetManifest(records, skipped=skipped)


# ---------------------------------------------------------------------------
# splitting


def _quota(n: int, f: float) -> float:
    q = n * f
    r = round(q)
    return float(r) if abs(q - r) < 1e-9 else q


def largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    quotas = [_quota(total, f) for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    left = total - sum(counts)
    order = sorted(range(len(quotas)), key=lambda j: (-(quotas[j] - counts[j]), j))
    for j in order[:left]:
        counts[j] += 1
    return counts


def stratified_counts(sizes: Sequence[int], fractions: Sequence[float]) -> list[list[int]]:
    """Round the stratum-by-split quota matrix so rows sum to the stratum sizes and
    every cell and column total lands on the floor or ceiling of its quota.

    Column totals follow the largest-remainder rounding of the grand total when
    that is reachable. The rounding is a small 0/1 program over which cells get
    their ceiling; its constraint matrix is totally unimodular.
    """
    n_s, n_f = len(sizes), len(fractions)
    quotas = [[_quota(n, f) for f in fractions] for n in sizes]
    cells = [[int(np.floor(q)) for q in row] for row in quotas]
    frac = np.array([[q - c for q, c in zip(qr, cr)] for qr, cr in zip(quotas, cells)])
    row_need = np.array([n - sum(row) for n, row in zip(sizes, cells)], dtype=float)
    if not row_need.any():
        return cells
    col_quota = frac.sum(axis=0)
    up = np.array(largest_remainder(sum(sizes), fractions)) > np.floor(
        [_quota(sum(sizes), f) for f in fractions])

    # variable (s, j) = 1 when cell (s, j) is rounded up
    rows = np.zeros((n_s, n_s * n_f))
    cols = np.zeros((n_f, n_s * n_f))
    for s in range(n_s):
        rows[s, s * n_f:(s + 1) * n_f] = 1
        for j in range(n_f):
            cols[j, s * n_f + j] = 1
    lo_col = np.maximum(np.floor(col_quota + 1e-9), 0)
    hi_col = np.ceil(col_quota - 1e-9)
    weight = (frac + 10.0 * up[None, :]).ravel()
    res = milp(-weight, integrality=np.ones(n_s * n_f),
               bounds=Bounds(0, (frac > 1e-12).astype(float).ravel()),
               constraints=[LinearConstraint(rows, row_need, row_need),
                            LinearConstraint(cols, lo_col, hi_col)])
    if not res.success:
        raise ManifestError("cannot round split counts consistently")
    x = np.rint(res.x).astype(int).reshape(n_s, n_f)
    return [[c + int(d) for c, d in zip(cr, xr)] for cr, xr in zip(cells, x)]


def _strata(records: Sequence[SampleRecord]) -> dict[tuple[str, int], list[SampleRecord]]:
    groups: dict[tuple[str, int], list[SampleRecord]] = {}
    for r in sorted(records, key=lambda r: r.path):
        groups.setdefault(r.stratum, []).append(r)
    return dict(sorted(groups.items()))


def assign_splits(manifest: DatasetManifest, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                  seed: int = 0) -> DatasetManifest:
    """Stratified (label x magnification) seeded split into train/val/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ManifestError(f"need three non-negative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ManifestError(f"split fractions sum to {sum(fractions)!r}, not 1")
    nonzero = sum(f > 0 for f in fractions)
    groups = _strata(manifest.records)
    for key, recs in groups.items():
        if len(recs) < nonzero:
            raise ManifestError(
                f"stratum {key[0]}/{key[1]}X has {len(recs)} records, fewer than the "
                f"{nonzero} non-empty splits"
            )
    counts = stratified_counts([len(g) for g in groups.values()], fractions)
    rng = np.random.default_rng(seed)
    assigned: dict[str, SampleRecord] = {}
    for (key, recs), row in zip(groups.items(), counts):
        order = rng.permutation(len(recs))
        names = ["train"] * row[0] + ["val"] * row[1] + ["test"] * row[2]
        for idx, split in zip(order, names):
            rec = recs[idx]
            assigned[rec.path] = replace(rec, split=split, fold=None)
    return DatasetManifest([assigned[r.path] for r in manifest.records], seed=seed)


@dataclass
class FoldAssignment:
    k: int
    fold_of: dict[str, int]

    def fold_paths(self, fold: int) -> list[str]:
        return [p for p, f in self.fold_of.items() if f == fold]


def kfold_split(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Stratified image-level k-fold partition of the training split."""
    if k < 2:
        raise ManifestError(f"k must be >= 2, got {k}")
    train = manifest.select(split="train")
    if not train:
        raise ManifestError("training split is empty")
    groups = _strata(train)
    smallest = min(len(g) for g in groups.values())
    if k > smallest:
        raise ManifestError(f"k={k} exceeds the smallest training stratum ({smallest} records)")
    rng = np.random.default_rng([seed, k])
    fold_of: dict[str, int] = {}
    offset = 0
    for recs in groups.values():
        for pos, idx in enumerate(rng.permutation(len(recs))):
            fold_of[recs[idx].path] = (offset + pos) % k
        offset += len(recs)
    return FoldAssignment(k, {p: fold_of[p] for p in sorted(fold_of)})


def with_folds(manifest: DatasetManifest, folds: FoldAssignment) -> DatasetManifest:
    recs = [replace(r, fold=folds.fold_of.get(r.path)) for r in manifest.records]
    return DatasetManifest(recs, seed=manifest.seed)


# ---------------------------------------------------------------------------
# CSV


def dumps_manifest(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    if manifest.seed is not None:
        buf.write(f"# seed={manifest.seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in manifest.records:
        writer.writerow([r.path, r.label, r.magnification, r.split,
                         "" if r.fold is None else r.fold])
    return buf.getvalue()


def write_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(dumps_manifest(manifest), encoding="utf-8", newline="")


def loads_manifest(text: str, source: str = "<manifest>") -> DatasetManifest:
    lines = text.split("\n")
    seed = None
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        m = re.fullmatch(r"#\s*seed\s*=\s*(-?\d+)\s*", lines[start])
        if not m:
            raise ManifestError(f"{source}:{start + 1}: unrecognized comment line")
        seed = int(m.group(1))
        start += 1
    reader = csv.reader(lines[start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(f"{source}: missing header") from None
    if tuple(header) != HEADER:
        raise ManifestError(
            f"{source}:{start + 1}: header must be {','.join(HEADER)}, got {','.join(header)}"
        )
    records = []
    for lineno, row in enumerate(reader, start=start + 2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise ManifestError(f"{source}:{lineno}: expected {len(HEADER)} fields, got {len(row)}")
        path, label, mag, split, fold = row
        try:
            magnification = int(mag)
            fold_val = None if fold == "" else int(fold)
            records.append(SampleRecord(path, label, magnification, split, fold_val))
        except (ValueError, ManifestError) as exc:
            raise ManifestError(f"{source}:{lineno}: {exc}") from None
    try:
        return DatasetManifest(records, seed=seed)
    except ManifestError as exc:
        raise ManifestError(f"{source}: {exc}") from None


def read_manifest(path) -> DatasetManifest:
    return loads_manifest(Path(path).read_text(encoding="utf-8"), source=str(path))


# ---------------------------------------------------------------------------
# batching

Transform = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def batch_iterator(records: Sequence[SampleRecord], batch_size: int, seed: int, epoch: int = 0,
                   shuffle: bool = True, transform: Transform | None = None,
                   loader: Callable[[str], np.ndarray] = read_image,
                   ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images [B,H,W,3], targets [B]) covering every record once.

    Order is a seeded permutation per epoch; ``transform`` gets a per-sample
    generator derived from (seed, epoch, position) so results do not depend on
    how batches are consumed.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(records))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(records))
    for start in range(0, len(order), batch_size):
        imgs, targets = [], []
        for pos in order[start:start + batch_size]:
            rec = records[pos]
            try:
                img = loader(rec.path)
            except (OSError, ValueError) as exc:
                raise OSError(f"cannot load image {rec.path}: {exc}") from exc
            if transform is not None:
                img = transform(img, np.random.default_rng([seed, epoch, int(pos)]))
            imgs.append(img)
            targets.append(rec.target)
        yield np.stack(imgs), np.array(targets, dtype=int)
