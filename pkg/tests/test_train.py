import csv
import json

import numpy as np
import pytest
import torch

from fgscodec.config import TrainConfig
from fgscodec.data import DatasetError, ImageSet, center_crop16, synthetic_dataset
from fgscodec.objective import NonFiniteLoss
from fgscodec.train import LOG_FIELDS, moving_average, train

from conftest import tiny_config


def tiny_train_config(**kw):
    base = dict(n_synthetic=4, synthetic_size=32, crop=32, batch=2, steps=6, log_every=2,
                checkpoint_every=3, model=tiny_config())
    base.update(kw)
    return TrainConfig(**base)


def test_runs_are_bit_reproducible(tmp_path):
    cfg = tiny_train_config()
    a = train(cfg, out_dir=tmp_path / "a")
    b = train(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    assert a.history == b.history
    c = train(tiny_train_config(seed=8), out_dir=tmp_path / "c")
    assert (tmp_path / "c" / "final.ckpt").read_bytes() != (tmp_path / "a" / "final.ckpt").read_bytes()
    assert c.history != a.history


def test_outputs_and_log(tmp_path):
    res = train(tiny_train_config(), out_dir=tmp_path)
    assert [p.name for p in res.checkpoints] == ["step000003.ckpt", "final.ckpt"]
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 6 and tuple(rows[0]) == LOG_FIELDS
    assert json.loads((tmp_path / "config.json").read_text())["steps"] == 6
    assert all(np.isfinite(res.totals()))
    lrs = [h["lr"] for h in res.history]
    assert lrs == [1e-3] * 4 + [1e-4] * 2


def test_single_rate_training_uses_all_channels(tmp_path):
    res = train(tiny_train_config(model=tiny_config(single_rate=True)), save=False)
    assert {h["j"] for h in res.history} == {4}


def test_non_finite_loss_leaves_snapshot(tmp_path):
    imgs = synthetic_dataset(2, 32, 0)
    imgs[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteLoss):
        train(tiny_train_config(batch=2), dataset=ImageSet(list(imgs)), out_dir=tmp_path)
    snap = json.loads((tmp_path / "nonfinite.json").read_text())
    assert snap["step"] == 1 and (tmp_path / "nonfinite.ckpt").exists()


def test_empty_dataset(tmp_path):
    with pytest.raises(DatasetError):
        ImageSet([])
    with pytest.raises(DatasetError):
        ImageSet.from_dir(tmp_path)


def test_moving_average():
    v = np.arange(1, 11, dtype=float)
    ma = moving_average(v, 3)
    assert ma[0] == 1 and ma[1] == 1.5 and ma[2] == 2 and ma[-1] == 9


def test_center_crop16():
    x = torch.rand(1, 3, 37, 50)
    y = center_crop16(x)
    assert y.shape[-2:] == (32, 48)
    assert torch.equal(y, x[..., 2:34, 1:49])
    with pytest.raises(DatasetError):
        center_crop16(torch.rand(1, 3, 10, 40))


def test_synthetic_images_reproducible():
    a = synthetic_dataset(3, 32, 5)
    assert torch.equal(a, synthetic_dataset(3, 32, 5))
    assert a.shape == (3, 3, 32, 32) and float(a.min()) >= 0 and float(a.max()) <= 1
