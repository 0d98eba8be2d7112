import struct

import numpy as np
import pytest

from kneecast.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from kneecast.errors import CheckpointError, UpgradeError
from kneecast.models import ModelHyper, build_model, set_group_training


def small_model(scenario="DIC_F", seed=3):
    model = build_model(scenario, ModelHyper.tiny(), seed=seed)
    model.set_target_stats(31.5, 18.25)
    model.meta["provenance"] = [{"stage": "primary_train", "seed": seed}]
    return model


def test_roundtrip_bit_exact(tmp_path):
    model = small_model()
    set_group_training(model, "emg_branch", False, lr_scale=0.1)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    back = load_checkpoint(p)
    assert back.scenario == model.scenario
    assert back.hyper == model.hyper
    assert list(back.params) == list(model.params)
    for name in model.params:
        np.testing.assert_array_equal(back.params[name].data, model.params[name].data)
        assert back.group_of[name] == model.group_of[name]
    assert back.target_mean == model.target_mean
    assert back.target_std == model.target_std
    assert back.trainable["emg_branch"] is False
    assert back.lr_scale["emg_branch"] == 0.1
    assert back.meta["provenance"] == model.meta["provenance"]


def test_save_load_save_identical_bytes(tmp_path):
    model = small_model()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_is_corruption_error(tmp_path):
    model = small_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    data = p.read_bytes()
    for cut in (10, len(data) // 2, len(data) - 1):
        (tmp_path / "cut.ckpt").write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "cut.ckpt")


def test_bitflip_detected(tmp_path):
    model = small_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_version_mismatch_is_upgrade_error(tmp_path):
    model = small_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    data = p.read_bytes()
    # bump the version inside the header JSON and re-checksum
    old = f'"format_version": {FORMAT_VERSION}'.encode()
    new = f'"format_version": {FORMAT_VERSION + 8}'.encode()  # same byte count
    assert old in data
    body = data[:-32].replace(old, new)
    # header length unchanged (same byte count)
    assert len(body) == len(data) - 32
    import hashlib
    (tmp_path / "v.ckpt").write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(UpgradeError):
        load_checkpoint(tmp_path / "v.ckpt")


def test_not_a_checkpoint(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"definitely not a checkpoint" + b"\0" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
