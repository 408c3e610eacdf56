import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from graspkit.errors import BadMagic, DataError, DimLimit, TruncatedFile
from graspkit.fileio import (
    atomic_write_text, decode_tensor, encode_tensor, load_heatmap, load_tensor, read_pnm,
    save_heatmap, save_tensor, write_pgm, write_ppm,
)


def test_random_tensor_round_trip_is_bit_exact(tmp_path, rng):
    a = rng.standard_normal((3, 4, 5)).astype(np.float32)
    save_tensor(tmp_path / "t.gaft", a)
    b = load_tensor(tmp_path / "t.gaft")
    assert b.shape == (3, 4, 5) and b.dtype == np.float32
    assert a.tobytes() == b.tobytes()


def test_header_layout():
    buf = encode_tensor(np.zeros((2, 3), np.float32))
    assert buf[:4] == b"GAFT"
    assert struct.unpack_from("<IIII", buf, 4) == (1, 2, 2, 3)
    assert len(buf) == 4 + 16 + 24


def test_wrong_magic(tmp_path):
    p = tmp_path / "bad.gaft"
    p.write_bytes(b"GIFT" + encode_tensor(np.ones(3))[4:])
    with pytest.raises(BadMagic):
        load_tensor(p)


@pytest.mark.parametrize("cut", [6, 14, 25])
def test_truncated(cut):
    buf = encode_tensor(np.ones((2, 2)))
    with pytest.raises(TruncatedFile):
        decode_tensor(buf[:cut])


def test_dim_limits():
    with pytest.raises(DimLimit):
        encode_tensor(np.float32(1.0))
    with pytest.raises(DimLimit):
        decode_tensor(encode_tensor(np.ones((4, 4))), max_elements=15)
    buf = bytearray(encode_tensor(np.ones(2)))
    struct.pack_into("<I", buf, 8, 9)
    with pytest.raises(DimLimit):
        decode_tensor(bytes(buf))


def test_unsupported_version():
    buf = bytearray(encode_tensor(np.ones(2)))
    struct.pack_into("<I", buf, 4, 2)
    with pytest.raises(DataError):
        decode_tensor(bytes(buf))


def test_pgm_pixel_128(tmp_path):
    p = tmp_path / "g.pgm"
    p.write_bytes(b"P5\n# comment\n2 1\n255\n" + bytes([128, 255]))
    m = load_heatmap(p)
    assert m[0, 0] == pytest.approx(0.50196, abs=1e-5)
    assert m[0, 1] == 1.0


def test_ascii_pgm_and_16bit(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n3 1\n4\n0 2 4\n")
    np.testing.assert_allclose(load_heatmap(p), [[0, 0.5, 1]])
    q = tmp_path / "w.pgm"
    q.write_bytes(b"P5 1 1 65535\n" + (32768).to_bytes(2, "big"))
    assert load_heatmap(q)[0, 0] == pytest.approx(32768 / 65535)


def test_ppm_round_trip(tmp_path, rng):
    rgb = rng.integers(0, 256, (4, 5, 3), dtype=np.uint8)
    write_ppm(tmp_path / "c.ppm", rgb)
    px, maxval = read_pnm(tmp_path / "c.ppm")
    assert maxval == 255
    np.testing.assert_array_equal(px, rgb)


def test_color_image_is_not_a_heatmap(tmp_path):
    write_ppm(tmp_path / "c.ppm", np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(DataError):
        load_heatmap(tmp_path / "c.ppm")


def test_truncated_pgm(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(TruncatedFile):
        read_pnm(p)


def test_heatmap_must_be_rank_two(tmp_path):
    save_tensor(tmp_path / "f.gaft", np.ones((2, 2, 2)))
    with pytest.raises(DataError):
        load_heatmap(tmp_path / "f.gaft")


def test_pgm_write_quantizes(tmp_path):
    m = np.array([[0.0, 0.5, 1.0, 1.7]])
    write_pgm(tmp_path / "q.pgm", m)
    np.testing.assert_allclose(load_heatmap(tmp_path / "q.pgm"), [[0, 128 / 255, 1, 1]])


def test_save_heatmap_picks_format(tmp_path, rng):
    m = rng.random((3, 4))
    save_heatmap(tmp_path / "m.gaft", m)
    save_heatmap(tmp_path / "m.pgm", m)
    np.testing.assert_allclose(load_heatmap(tmp_path / "m.gaft"), m, rtol=1e-7)
    np.testing.assert_allclose(load_heatmap(tmp_path / "m.pgm"), m, atol=0.5 / 255 + 1e-12)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "sub" / "x.txt", "hello")
    atomic_write_text(tmp_path / "sub" / "x.txt", "world")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.txt"]
    assert (tmp_path / "sub" / "x.txt").read_text() == "world"


@given(arrays(np.float32, st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple)))
def test_encode_decode_round_trip(a):
    b = decode_tensor(encode_tensor(a))
    assert b.shape == a.shape and a.tobytes() == b.tobytes()
