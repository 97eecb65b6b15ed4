import numpy as np
import pytest

from timemae_pfm.checkpoint import (
    Checkpoint,
    ShapeMismatch,
    TruncatedPayload,
    VersionMismatch,
    adapt_channels,
    load_checkpoint,
    save_checkpoint,
)
from timemae_pfm.encoders import EncoderConfig, EncoderParams, extract_features_batch
from timemae_pfm.arrayio import MAGIC, decode, encode
from timemae_pfm.sra import SRAConfig, SRAParams

CFG = EncoderConfig(d=8, depth_visible=1, depth_masked=1, heads=2, ffn_width=12, sigma=4, max_slices=32)


def make(head=True):
    enc = EncoderParams.initialize(CFG, seed=2)
    h = SRAParams.initialize(11, SRAConfig(d_k=2), seed=2) if head else None
    return Checkpoint(enc, [1.0, 0.5], 2, {"lr": 0.001}, {"series": {"mean": [0.0], "std": [1.0]}}, h,
                      {"mode": "fused"} if head else {})


def test_round_trip_bit_exact_and_idempotent(tmp_path):
    ck = make()
    save_checkpoint(ck, tmp_path / "a.bin")
    loaded = load_checkpoint(tmp_path / "a.bin")
    for k, v in ck.arrays().items():
        assert np.array_equal(loaded.arrays()[k], v)
    assert loaded.meta() == ck.meta()
    save_checkpoint(loaded, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert loaded.encoder["visible.0.attn.wq"].requires_grad
    assert not loaded.encoder["target.0.attn.wq"].requires_grad


def test_features_identical_after_reload(tmp_path):
    ck = make(head=False)
    xs = [np.random.default_rng(i).normal(size=(40, 1)) for i in range(5)]
    before = extract_features_batch(xs, ck.encoder)
    save_checkpoint(ck, tmp_path / "c.bin")
    after = extract_features_batch(xs, load_checkpoint(tmp_path / "c.bin").encoder)
    assert np.array_equal(before, after)


def test_distinct_errors(tmp_path):
    ck = make()
    p = tmp_path / "x.bin"
    save_checkpoint(ck, p)
    blob = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(blob[:-13])
    with pytest.raises(TruncatedPayload) as e1:
        load_checkpoint(tmp_path / "t.bin")
    arrays, meta = decode(blob, 1)
    (tmp_path / "v.bin").write_bytes(encode(arrays, meta, 99))
    with pytest.raises(VersionMismatch) as e2:
        load_checkpoint(tmp_path / "v.bin")
    arrays["encoder/pos"] = arrays["encoder/pos"][:-1]
    (tmp_path / "s.bin").write_bytes(encode(arrays, meta, 1))
    with pytest.raises(ShapeMismatch, match="encoder/pos") as e3:
        load_checkpoint(tmp_path / "s.bin")
    assert len({e1.value.code, e2.value.code, e3.value.code}) == 3
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.bin")
    assert blob.startswith(MAGIC)


def test_adapt_channels_matches_replicated_input():
    cfg = EncoderConfig(d=8, depth_visible=1, depth_masked=1, heads=2, ffn_width=12, sigma=4, channels=3,
                        max_slices=32)
    enc = EncoderParams.initialize(cfg, seed=4)
    one = adapt_channels(enc, 1)
    assert one.config.channels == 1 and enc.config.channels == 3
    x = np.random.default_rng(0).normal(size=(20, 1))
    assert np.allclose(extract_features_batch([x], one), extract_features_batch([np.repeat(x, 3, 1)], enc),
                       atol=1e-12)
    assert adapt_channels(enc, 3) is enc
