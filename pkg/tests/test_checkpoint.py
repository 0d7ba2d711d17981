import struct

import numpy as np
import pytest

from impactforge.dataset import ScalerParams
from impactforge.surrogate import SurrogateModel, forward, load_checkpoint, save_checkpoint
from impactforge.surrogate.checkpoint import MAGIC, CheckpointError


def _scaler():
    rng = np.random.default_rng(3)
    return ScalerParams(rng.normal(size=8), rng.uniform(1, 2, 8), rng.normal(size=4),
                        rng.uniform(1, 2, 4), rng.normal(size=8) - 5, rng.normal(size=8) + 5)


def test_round_trip_is_bit_identical(tmp_path):
    m = SurrogateModel.create(hidden=(7, 5, 3), seed=9)
    sc = _scaler()
    path = tmp_path / "m.ifgru"
    save_checkpoint(path, m, sc)
    m2, sc2 = load_checkpoint(path)
    assert m2.hidden_sizes == (7, 5, 3)
    for a, b in zip(m.parameters(), m2.parameters()):
        assert np.array_equal(a, b)
    for name in ("in_mean", "in_std", "out_mean", "out_std", "in_lo", "in_hi"):
        assert np.array_equal(getattr(sc, name), getattr(sc2, name))
    X = np.random.default_rng(0).normal(size=(3, 6, 8))
    assert np.array_equal(forward(m, X), forward(m2, X))


def test_documented_layout(tmp_path):
    m = SurrogateModel.create(hidden=(2,), seed=0)
    path = tmp_path / "m.ifgru"
    save_checkpoint(path, m)
    buf = path.read_bytes()
    assert buf[:8] == MAGIC
    assert struct.unpack_from("<5I", buf, 8) == (1, 8, 4, 1, 2)
    n = m.n_params
    assert len(buf) == 8 + 5 * 4 + 8 * n + 4
    first = np.frombuffer(buf, "<f8", count=1, offset=28)[0]
    assert first == m.layers[0].W[0, 0]
    assert load_checkpoint(path)[1] is None


def test_bad_magic_and_trailing_bytes(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"NOTAMODEL" + bytes(40))
    with pytest.raises(CheckpointError, match="not a surrogate checkpoint"):
        load_checkpoint(bad)
    good = tmp_path / "good"
    save_checkpoint(good, SurrogateModel.create(hidden=(2,)))
    good.write_bytes(good.read_bytes() + b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(good)


def test_version_mismatch(tmp_path):
    p = tmp_path / "v"
    save_checkpoint(p, SurrogateModel.create(hidden=(2,)))
    buf = bytearray(p.read_bytes())
    buf[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(buf))
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(p)
