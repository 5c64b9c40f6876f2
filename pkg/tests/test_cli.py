import csv
from pathlib import Path

import numpy as np
import pytest

from rescaps import cli
from rescaps import tensor as T
from rescaps.checkpoint import checkpoint_load, checkpoint_save
from rescaps.dataset import DatasetManifest, SampleRecord, read_manifest, write_manifest
from rescaps.imageio import write_image
from rescaps.model import init_params
from rescaps.stain import image_stats
from rescaps.synthetic import write_tree
from rescaps.train import fold_seed
from rescaps.verify import DESK_ARCH

DESK = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def scanned(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_tree(root / "tree", per_stratum=8, size=32, seed=1, magnifications=(40, 400))
    manifest = root / "manifest.csv"
    assert cli.main(["scan", str(root / "tree"), "--out", str(manifest), "--seed", "3"]) == 0
    return root, manifest


def train_args(manifest, out, *extra):
    return ["train", str(DESK), "--set", f"paths.manifest = {manifest}",
            "--set", f"paths.output_dir = {out}", "--set", "train.batch_size = 8", *extra]


# --- scan ---------------------------------------------------------------------


def test_scan_writes_stratified_manifest(scanned, capsys, tmp_path):
    root, manifest = scanned
    m = read_manifest(manifest)
    assert len(m) == 32 and m.seed == 3
    assert m.counts()[("benign", 40, "train")] == 5
    again = tmp_path / "again.csv"
    assert cli.main(["scan", str(root / "tree"), "--out", str(again), "--seed", "3"]) == 0
    assert again.read_bytes() == manifest.read_bytes()
    out = capsys.readouterr().out
    assert "malignant" in out and "total" in out


def test_scan_missing_root_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert cli.main(["scan", str(missing), "--out", str(tmp_path / "m.csv")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert cli.main([]) == 1
    assert cli.main(["scan", str(tmp_path), "--out", "x", "--fractions", "0.5,0.5"]) == 1


# --- train --------------------------------------------------------------------


def test_train_five_folds(scanned, tmp_path):
    _, manifest = scanned
    out = tmp_path / "run"
    assert cli.main(train_args(manifest, out, "--set", "train.epochs = 1")) == 0
    for f in range(5):
        assert (out / f"fold{f}" / "best.rcap").is_file()
        assert not (out / f"fold{f}" / "state.rcap").exists()
    rows = read_rows(out / "folds.csv")
    assert [r["fold"] for r in rows] == ["0", "1", "2", "3", "4", "mean", "std"]
    accs = [float(r["acc"]) for r in rows[:5]]
    assert float(rows[5]["acc"]) == pytest.approx(np.mean(accs), abs=1e-6)
    for name in ("run.cfg", "epochs.csv", "training_curves.png", "reference_stats.txt"):
        assert (out / name).is_file()


def test_train_zero_epochs_keeps_initial_parameters(scanned, tmp_path):
    _, manifest = scanned
    out = tmp_path / "run"
    assert cli.main(train_args(manifest, out, "--set", "train.epochs = 0",
                               "--set", "train.folds = 2")) == 0
    for f in range(2):
        ck = checkpoint_load(out / f"fold{f}" / "best.rcap")
        init = init_params(DESK_ARCH, fold_seed(7, f))
        assert all(ck.params[k].data.tobytes() == init[k].data.tobytes() for k in init)
        assert ck.meta["epoch"] == "0"


def test_train_is_deterministic(scanned, tmp_path):
    _, manifest = scanned
    for name in ("a", "b"):
        assert cli.main(train_args(manifest, tmp_path / name, "--set", "train.epochs = 2",
                                   "--set", "train.folds = 2")) == 0
    for rel in ("folds.csv", "epochs.csv", "fold0/best.rcap", "fold1/best.rcap"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_resume_matches_uninterrupted_run(scanned, tmp_path):
    from rescaps import config as C
    from rescaps.train import cross_validate

    _, manifest = scanned
    cfg = C.load(DESK, ["train.epochs = 2", "train.folds = 2", "train.batch_size = 8"])
    m = read_manifest(manifest)
    cross_validate(cfg, m, tmp_path / "full")

    class Stop(Exception):
        pass

    def interrupt(msg):
        if "epoch 1" in msg:
            raise Stop

    with pytest.raises(Stop):
        cross_validate(cfg, m, tmp_path / "cut", progress=interrupt)
    assert (tmp_path / "cut" / "fold0" / "state.rcap").exists()
    cross_validate(cfg, m, tmp_path / "cut", resume=True)
    for rel in ("folds.csv", "fold0/best.rcap", "fold1/best.rcap", "fold0/epochs.csv"):
        assert (tmp_path / "full" / rel).read_bytes() == (tmp_path / "cut" / rel).read_bytes()


def test_train_config_errors(scanned, tmp_path, capsys):
    _, manifest = scanned
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nmodel.depth = 3\n")
    assert cli.main(["train", str(bad)]) == 1
    assert "bad.cfg:2" in capsys.readouterr().err
    assert cli.main(["train", str(DESK)]) == 1
    assert cli.main(train_args(tmp_path / "none.csv", tmp_path / "o")) == 2


# --- eval ---------------------------------------------------------------------


def _eval_fixture(tmp_path, params, imgs, labels, mags=None):
    recs = []
    for i, (img, y) in enumerate(zip(imgs, labels)):
        p = tmp_path / "imgs" / f"{i:03d}.ppm"
        p.parent.mkdir(exist_ok=True)
        write_image(p, img)
        mag = (40, 100, 200, 400)[i % 4] if mags is None else mags
        recs.append(SampleRecord(p.as_posix(), ("benign", "malignant")[int(y)], mag, "test"))
    write_manifest(DatasetManifest(recs, seed=0), tmp_path / "m.csv")
    checkpoint_save(params, DESK_ARCH, tmp_path / "ck.rcap", seed=7,
                    meta={"reference_stats": "none"})


def test_eval_on_memorized_set(tmp_path, overfit_run):
    params, _, accs, imgs, labels = overfit_run
    assert accs[-1] == 1.0
    _eval_fixture(tmp_path, params, imgs, labels)
    out = tmp_path / "eval"
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "ck.rcap"), "--manifest",
                     str(tmp_path / "m.csv"), "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert [r["scope"] for r in rows] == ["40", "100", "200", "400", "overall"]
    assert rows[-1]["acc"] == "1.000000" and rows[-1]["n"] == "16"
    assert rows[-1]["auc"] == "1.000000"
    assert (out / "roc.png").is_file() and (out / "confusion.csv").is_file()
    roc = read_rows(out / "roc.csv")
    assert roc[0]["threshold"] == "inf"


def test_eval_single_class_reports_undefined_auc(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.uniform(size=(3, 32, 32, 3))
    _eval_fixture(tmp_path, init_params(DESK_ARCH, 1), imgs, [1, 1, 1], mags=40)
    out = tmp_path / "eval"
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "ck.rcap"), "--manifest",
                     str(tmp_path / "m.csv"), "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert rows[-1]["auc"] == "undefined"


def test_eval_missing_inputs(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "x.rcap"), "--manifest",
                     str(tmp_path / "m.csv"), "--out", str(tmp_path)]) == 2
    (tmp_path / "x.rcap").write_bytes(b"JUNK")
    (tmp_path / "m.csv").write_text("path,label,magnification,split,fold\n")
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "x.rcap"), "--manifest",
                     str(tmp_path / "m.csv"), "--out", str(tmp_path)]) == 2


# --- normalize ----------------------------------------------------------------


def test_normalize_tree(scanned, tmp_path, capsys):
    root, _ = scanned
    ref = next((root / "tree" / "benign" / "40X").iterdir())
    out = tmp_path / "norm"
    assert cli.main(["normalize", str(root / "tree"), "--reference", str(ref),
                     "--out", str(out)]) == 0
    files = sorted(out.rglob("*.ppm"))
    assert len(files) == 32
    from rescaps.imageio import read_image

    target = image_stats(read_image(ref))
    same = read_image(out / ref.relative_to(root / "tree"))
    assert np.abs(same - read_image(ref)).max() <= 1 / 255 + 1e-12
    got = image_stats(read_image(files[-1]))
    np.testing.assert_allclose(got.means, target.means, atol=2e-2)
    assert "normalized 32" in capsys.readouterr().out


def test_normalize_missing_reference(tmp_path):
    assert cli.main(["normalize", str(tmp_path), "--reference", str(tmp_path / "r.ppm"),
                     "--out", str(tmp_path / "o")]) == 2


# --- verify -------------------------------------------------------------------


def test_verify_passes(capsys):
    assert cli.main(["verify", "--quick"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_verify_catches_broken_squash_gradient(monkeypatch, capsys):
    real = T._Squash.backward

    def broken(self, grad):
        return tuple(g * 1.01 for g in real(self, grad))

    monkeypatch.setattr(T._Squash, "backward", broken)
    assert cli.main(["verify", "--quick"]) == 3
    out = capsys.readouterr().out
    assert "FAIL  gradient/squash" in out
