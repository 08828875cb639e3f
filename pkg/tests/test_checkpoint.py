import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_config
from elcbert.checkpoint import MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from elcbert.errors import CorruptCheckpoint, VersionMismatch, WiringMismatch
from elcbert.mixing import PRESETS
from elcbert.training import TrainConfig, train
from elcbert.encoder import init_encoder


@pytest.fixture(scope="module")
def trained(tiny_corpus):
    corpus, vocab = tiny_corpus
    cfg = TrainConfig(steps=4, batch_size=8, seed=2)
    return train(init_encoder(tiny_config(len(vocab)), 2), corpus, cfg, vocab=vocab).checkpoint


def test_round_trip_is_bit_exact(tmp_path, trained):
    save_checkpoint(tmp_path / "a.elcb", trained)
    back = load_checkpoint(tmp_path / "a.elcb")
    assert back.encoder == trained.encoder and back.train == trained.train
    assert back.step == 4 and back.opt_step == 4 and back.vocab == trained.vocab
    for group in ("params", "opt_m", "opt_v"):
        a, b = getattr(trained, group), getattr(back, group)
        assert list(a) == list(b)
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
    save_checkpoint(tmp_path / "b.elcb", back)
    assert (tmp_path / "a.elcb").read_bytes() == (tmp_path / "b.elcb").read_bytes()


def test_layout_prefix(trained):
    blob = to_bytes(trained)
    magic, version, hlen = struct.unpack_from("<4sIQ", blob)
    assert magic == MAGIC == b"ELCB" and version == 1
    header = json.loads(blob[16:16 + hlen])
    first = header["tensors"][0]
    assert first["offset"] == 0 and first["length"] == 8 * int(np.prod(first["shape"]))
    assert len(blob) == 16 + hlen + sum(e["length"] for e in header["tensors"])


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_every_truncation_is_rejected(trained, data):
    blob = to_bytes(trained)
    cut = data.draw(st.integers(0, len(blob) - 1))
    with pytest.raises(CorruptCheckpoint):
        from_bytes(blob[:cut])


def test_truncated_file_leaves_no_partial_state(tmp_path, trained):
    path = tmp_path / "t.elcb"
    blob = to_bytes(trained)
    path.write_bytes(blob[: len(blob) // 2])
    result = None
    with pytest.raises(CorruptCheckpoint):
        result = load_checkpoint(path)
    assert result is None


def test_bad_magic_and_version(trained):
    blob = bytearray(to_bytes(trained))
    bad = bytes(b"XLCB" + blob[4:])
    with pytest.raises(CorruptCheckpoint):
        from_bytes(bad)
    v2 = bytes(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(VersionMismatch):
        from_bytes(v2)
    # the version is checked before anything else is parsed
    with pytest.raises(VersionMismatch):
        from_bytes(v2[:16])


def test_shape_length_disagreement(trained):
    blob = to_bytes(trained)
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16:16 + hlen])
    header["tensors"][0]["shape"] = [1]
    h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with pytest.raises(CorruptCheckpoint):
        from_bytes(blob[:8] + struct.pack("<Q", len(h)) + h + blob[16 + hlen:])


def test_wiring_guard(tmp_path, trained):
    save_checkpoint(tmp_path / "e.elcb", trained)
    with pytest.raises(WiringMismatch):
        load_checkpoint(tmp_path / "e.elcb", expect_wiring=PRESETS["bert-baseline"])
    assert load_checkpoint(tmp_path / "e.elcb", expect_wiring=PRESETS["elc"]).step == 4


def test_atomic_save_leaves_no_temp(tmp_path, trained):
    save_checkpoint(tmp_path / "c.elcb", trained)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.elcb"]
