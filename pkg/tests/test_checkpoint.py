import zipfile

import numpy as np
import pytest
import torch

from tripletdiff.checkpoint import FORMAT_VERSION, load_checkpoint, read_meta, save_checkpoint
from tripletdiff.config import load_config
from tripletdiff.data import make_toy_dataset
from tripletdiff.errors import ContractError, FormatError
from tripletdiff.training import checkpoint_info, load_stage, train_stage


def test_round_trip_and_bytes_stable(tmp_path):
    arrays = {"b/x": np.arange(6.0).reshape(2, 3), "a": np.array([1, 2], dtype=np.int64)}
    p1 = save_checkpoint(tmp_path / "1.ckpt", arrays, {"k": [1, 2]})
    p2 = save_checkpoint(tmp_path / "2.ckpt", arrays, {"k": [1, 2]})
    assert p1.read_bytes() == p2.read_bytes()
    back, meta = load_checkpoint(p1)
    assert meta["k"] == [1, 2] and meta["version"] == FORMAT_VERSION
    for k, v in arrays.items():
        np.testing.assert_array_equal(back[k], v)


def test_rejects_foreign_or_future_files(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a zip")
    with pytest.raises(FormatError):
        read_meta(tmp_path / "x.ckpt")
    p = save_checkpoint(tmp_path / "v.ckpt", {}, {})
    with zipfile.ZipFile(p) as zf:
        meta = zf.read("__meta__.json").decode().replace(f'"version": {FORMAT_VERSION}', '"version": 99')
    with zipfile.ZipFile(tmp_path / "v2.ckpt", "w") as zf:
        zf.writestr("__meta__.json", meta)
    with pytest.raises(FormatError, match="version 99"):
        read_meta(tmp_path / "v2.ckpt")


@pytest.fixture(scope="module")
def tiny_setup():
    cfg = load_config(overrides=["data.n_frames=80", "diffusion.T=8", "diffusion.base_channels=8",
                                 "diffusion.sr_base_channels=8", "diffusion.checkpoint_every=5",
                                 "diffusion.sample_every=0", "diffusion.log_every=5",
                                 "diffusion.batch_size=4"]).validate()
    return cfg, make_toy_dataset(cfg.toy(), cfg.data.n_frames)


def _arrays(path):
    return load_checkpoint(path)[0]


@pytest.mark.parametrize("stage", ["base", "sr"])
def test_resume_is_bit_identical(tmp_path, tiny_setup, stage):
    cfg, ds = tiny_setup
    full = train_stage(cfg, ds, stage, tmp_path / "full", steps=10)
    train_stage(cfg, ds, stage, tmp_path / "part", steps=5)
    ckpt = tmp_path / "part" / "checkpoints" / f"{stage}_step_0000005.ckpt"
    resumed = train_stage(cfg, ds, stage, tmp_path / "part", resume=ckpt, steps=10)
    assert resumed.losses == full.losses[5:]
    a = _arrays(tmp_path / "full" / "checkpoints" / f"{stage}_last.ckpt")
    b = _arrays(tmp_path / "part" / "checkpoints" / f"{stage}_last.ckpt")
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_training_reproducible_bytes(tmp_path, tiny_setup):
    cfg, ds = tiny_setup
    for name in ("a", "b"):
        train_stage(cfg, ds, "base", tmp_path / name, steps=5)
    ck = "checkpoints/base_last.ckpt"
    assert (tmp_path / "a" / ck).read_bytes() == (tmp_path / "b" / ck).read_bytes()


def test_resume_wrong_stage_or_config(tmp_path, tiny_setup):
    cfg, ds = tiny_setup
    train_stage(cfg, ds, "base", tmp_path, steps=5)
    ckpt = tmp_path / "checkpoints" / "base_last.ckpt"
    with pytest.raises(ContractError):
        train_stage(cfg, ds, "sr", tmp_path / "x", resume=ckpt, steps=6)
    other = load_config(overrides=["data.n_frames=80", "diffusion.T=8", "diffusion.base_channels=16",
                                   "diffusion.batch_size=4"]).validate()
    with pytest.raises(ContractError):
        train_stage(other, ds, "base", tmp_path / "y", resume=ckpt, steps=6)


def test_checkpoint_kinds_and_loading(tmp_path, tiny_setup):
    cfg, ds = tiny_setup
    res = train_stage(cfg, ds, "base", tmp_path, steps=10)
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names[:2] == ["base_best.ckpt", "base_last.ckpt"] and len(res.checkpoints) == 2
    info = checkpoint_info(tmp_path / "checkpoints" / "base_last.ckpt")
    assert info["kind"] == "last" and info["step"] == 10 and info["config_hash"] == cfg.hash()
    loaded = load_stage(tmp_path / "checkpoints" / "base_last.ckpt")
    for (k, v), (k2, v2) in zip(loaded.model.state_dict().items(), res.state.model.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == "stage,step,loss,lr,wall_time"
