from pathlib import Path

import pytest

from rescaps import config as C
from rescaps.verify import DESK_ARCH

DESK = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"


def test_desk_profile_loads():
    cfg = C.load(DESK)
    assert cfg.model == DESK_ARCH
    assert cfg.seed == 7 and cfg.augment.seed == 7
    assert cfg.train.epochs * -(-16 // cfg.train.batch_size) == 200
    assert cfg.optim.kind == "adam" and cfg.optim.learning_rate == 1e-3


def test_round_trip_through_text():
    cfg = C.load(DESK, ["train.epochs = 3", "paths.output_dir = out"])
    again = C.loads(cfg.to_text())
    assert again == cfg
    assert again.train.epochs == 3 and again.paths.output_dir == "out"


def test_unknown_key_names_line():
    with pytest.raises(C.ConfigError, match=r"x\.cfg:3: unknown key 'model.depth'"):
        C.loads("seed = 1\n\nmodel.depth = 4\n", "x.cfg")


def test_bad_values_name_line():
    with pytest.raises(C.ConfigError, match=r"x\.cfg:2: bad value"):
        C.loads("seed = 1\ntrain.epochs = many\n", "x.cfg")
    with pytest.raises(C.ConfigError, match=r"x\.cfg:1: invalid train"):
        C.loads("train.folds = 1\n", "x.cfg")
    with pytest.raises(C.ConfigError, match=r"x\.cfg:2: duplicate"):
        C.loads("seed = 1\nseed = 2\n", "x.cfg")
    with pytest.raises(C.ConfigError, match="expected 'key = value'"):
        C.loads("seed\n", "x.cfg")


def test_comments_and_booleans():
    cfg = C.loads("train.augment = off  # no aug\n# comment\ntrain.normalize = YES\n")
    assert cfg.train.augment is False and cfg.train.normalize is True


def test_missing_file(tmp_path):
    with pytest.raises(C.ConfigError, match="cannot read"):
        C.load(tmp_path / "nope.cfg")
