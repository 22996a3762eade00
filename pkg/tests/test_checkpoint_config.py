import json
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from quadfuse import checkpoint
from quadfuse.checkpoint import CheckpointError
from quadfuse.config import ConfigError, apply_overrides, from_flat, preset, resolve


# ---------------------------------------------------------------- VGCK

def test_layout_by_hand():
    blob = checkpoint.encode({"b": np.array([1.5], dtype=np.float32), "a": np.zeros((2, 1))})
    body = b"VGCK" + struct.pack("<II", 1, 2)
    body += struct.pack("<H", 1) + b"a" + struct.pack("<B", 2) + struct.pack("<II", 2, 1) + struct.pack("<2f", 0, 0)
    body += struct.pack("<H", 1) + b"b" + struct.pack("<B", 1) + struct.pack("<I", 1) + struct.pack("<f", 1.5)
    assert blob == body + struct.pack("<I", zlib.crc32(body))


names = st.text(st.characters(min_codepoint=32, max_codepoint=0x2FFF), min_size=1, max_size=12)
arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                    elements=st.floats(-1e6, 1e6, width=32))


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(names, arrays, max_size=5))
def test_roundtrip(tensors):
    out = checkpoint.decode(checkpoint.encode(tensors))
    assert sorted(out) == sorted(tensors)
    for k, v in tensors.items():
        assert out[k].shape == v.shape and out[k].tobytes() == v.tobytes()


def test_encode_is_order_independent():
    a = {"x": np.ones(2), "y": np.zeros(3)}
    b = {"y": np.zeros(3), "x": np.ones(2)}
    assert checkpoint.encode(a) == checkpoint.encode(b)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XGCK" + b[4:],
    lambda b: b[:20] + bytes([b[20] ^ 1]) + b[21:],
    lambda b: b[:-9] + b[-4:],
    lambda b: b[:6],
])
def test_corruption_detected(mutate):
    blob = checkpoint.encode({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    with pytest.raises(CheckpointError):
        checkpoint.decode(mutate(blob))


def test_wrong_version():
    body = b"VGCK" + struct.pack("<II", 2, 0)
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.decode(body + struct.pack("<I", zlib.crc32(body)))


def test_save_load(tmp_path):
    path = tmp_path / "m.vgck"
    checkpoint.save(path, {"w": np.eye(2)})
    np.testing.assert_array_equal(checkpoint.load(path)["w"], np.eye(2))


# ---------------------------------------------------------------- config

def test_presets():
    desk, paper = preset("desk"), preset("paper")
    assert (desk.vit.image_size, desk.vit.patch_size, desk.vit.embed_dim, desk.vit.n_layers,
            desk.vit.n_heads, desk.vit.mlp_dim) == (64, 8, 64, 4, 4, 128)
    assert (paper.vit.image_size, paper.vit.patch_size, paper.vit.embed_dim, paper.vit.n_layers,
            paper.vit.n_heads, paper.vit.mlp_dim) == (224, 16, 768, 12, 12, 3072)
    assert (paper.gcn.hidden, paper.fusion.d_model, paper.fusion.n_heads) == (256, 1024, 8)
    assert paper.fusion.head_dim == 128
    assert (paper.train.lr, paper.train.batch_size, desk.train.lr, desk.train.batch_size) == (5e-6, 32, 3e-4, 16)
    assert desk.train.tau == 0.5 and desk.train.patience == 5 and desk.train.epochs == 20
    assert desk.gcn.dropout == 0.2


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("laptop")


@pytest.mark.parametrize("key", ["train.lrr", "nope.x", "train", "vit.grid"])
def test_unknown_key(key):
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_overrides(preset("desk"), {key: 1})


def test_override_types():
    cfg = apply_overrides(preset("desk"), {"train.epochs": "7", "train.lr": 1, "train.use_ce": False})
    assert cfg.train.epochs == 7 and isinstance(cfg.train.lr, float) and cfg.train.use_ce is False


@pytest.mark.parametrize("flat", [{"train.tau": 0}, {"vit.patch_size": 7}, {"fusion.n_heads": 3},
                                  {"train.patience": 0}, {"train.beta1": 1.0}])
def test_invalid_values(flat):
    with pytest.raises(ConfigError):
        apply_overrides(preset("desk"), flat).validate()


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train.lr": 0.001, "train.epochs": 3}))
    cfg = resolve("desk", str(path), {"train.epochs": 4})
    assert cfg.train.lr == 0.001 and cfg.train.epochs == 4 and cfg.train.batch_size == 16


def test_flat_roundtrip():
    cfg = apply_overrides(preset("paper"), {"train.seed": 9})
    again = from_flat(json.loads(cfg.to_json()))
    assert again.to_flat() == cfg.to_flat()
