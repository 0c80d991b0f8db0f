"""Snapshot format: bit-exact round trips and defensive loading."""

import json

import numpy as np
import pytest

from nlslab.fieldio import load_field, save_field
from nlslab.spectral import Field, make_grid


def sample_field(n=16, L=8.0, seed=11):
    g = make_grid(n, L)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n,) * 3) + 1j * rng.normal(size=(n,) * 3)
    return Field(g, v)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        u = sample_field()
        path = save_field(tmp_path / "state.bin", u)
        back = load_field(path)
        assert back.grid == u.grid
        assert np.array_equal(back.values, u.values)
        # bit-for-bit, including signed zeros and the like
        assert (
            back.values.tobytes() == np.ascontiguousarray(u.values).tobytes()
        )

    def test_suffix_forced(self, tmp_path):
        u = sample_field()
        path = save_field(tmp_path / "state", u)
        assert path.suffix == ".bin"

    def test_sidecar_contents(self, tmp_path):
        u = sample_field()
        path = save_field(tmp_path / "state.bin", u, extra={"t": 1.5})
        meta = json.loads(path.with_suffix(".json").read_text())
        assert meta["n"] == 16
        assert meta["box_length"] == 8.0
        assert meta["t"] == 1.5
        assert len(meta["payload_sha256"]) == 64

    def test_deterministic_bytes(self, tmp_path):
        u = sample_field()
        p1 = save_field(tmp_path / "a.bin", u)
        p2 = save_field(tmp_path / "b.bin", u)
        assert p1.read_bytes() == p2.read_bytes()
        assert (
            p1.with_suffix(".json").read_text()
            == p2.with_suffix(".json").read_text()
        )


class TestDefensiveLoad:
    def test_bad_magic(self, tmp_path):
        u = sample_field()
        path = save_field(tmp_path / "state.bin", u)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            load_field(path)

    def test_truncated_payload(self, tmp_path):
        u = sample_field()
        path = save_field(tmp_path / "state.bin", u)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 8])
        with pytest.raises(ValueError):
            load_field(path)
