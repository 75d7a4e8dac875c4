import os

import numpy as np
import pytest

from layervec import (DecodeError, Image, ShapeMismatchError, ValidationError,
                      abs_diff, connected_components, largest_component,
                      load_png, save_png)


def test_image_validates_range_and_shape():
    assert Image(np.zeros((4, 4))).channels == 1  # 2-D promotes to 1 channel
    with pytest.raises(ValidationError):
        Image(np.zeros((4, 4, 2)))
    with pytest.raises(ValidationError):
        Image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValidationError):
        Image(np.full((2, 2, 3), np.nan))
    img = Image(np.zeros((2, 3, 3)))
    assert (img.height, img.width, img.channels) == (2, 3, 3)
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0  # buffer is read-only


def test_png_round_trip_identity(tmp_path):
    data = np.array([[[0.0, 0.5, 1.0], [0.25, 0.75, 0.1]],
                     [[1.0, 0.0, 0.0], [0.2, 0.4, 0.6]]])
    path = os.path.join(tmp_path, "a.png")
    save_png(Image(data), path)
    back = load_png(path)
    quantized = np.floor(data * 255 + 0.5) / 255.0
    assert np.abs(back.data - quantized).max() < 1e-12
    # a second trip through disk changes nothing further
    save_png(back, path)
    assert np.array_equal(load_png(path).data, back.data)


def test_sixteen_bit_png_normalized_by_65535(tmp_path):
    import cv2

    raw = np.array([[0, 32768], [65535, 1000]], dtype=np.uint16)
    path = os.path.join(tmp_path, "deep.png")
    cv2.imwrite(path, raw)
    img = load_png(path)
    assert img.channels == 1
    expected = raw.astype(np.float64) / 65535.0
    assert np.array_equal(img.data[:, :, 0], expected)


def test_truncated_png_raises_decode_error(tmp_path):
    good = os.path.join(tmp_path, "ok.png")
    save_png(Image(np.zeros((8, 8, 3))), good)
    blob = open(good, "rb").read()
    bad = os.path.join(tmp_path, "broken.png")
    with open(bad, "wb") as fh:
        fh.write(blob[: len(blob) // 3])
    with pytest.raises(DecodeError):
        load_png(bad)
    with pytest.raises(DecodeError):
        load_png(os.path.join(tmp_path, "missing.png"))


def test_abs_diff_identity_and_extremes():
    rng = np.random.default_rng(11)
    x = Image(rng.random((6, 5, 3)))
    assert np.array_equal(abs_diff(x, x).data, np.zeros((6, 5, 1)))
    black = Image(np.zeros((4, 4, 3)))
    white = Image(np.ones((4, 4, 3)))
    assert np.array_equal(abs_diff(black, white).data, np.ones((4, 4, 1)))


def test_abs_diff_matches_scalar_loop():
    rng = np.random.default_rng(7)
    a = Image(rng.random((5, 4, 3)))
    b = Image(rng.random((5, 4, 3)))
    d = abs_diff(a, b)
    for r in range(5):
        for c in range(4):
            want = sum(abs(a.data[r, c, k] - b.data[r, c, k]) for k in range(3)) / 3.0
            assert d.data[r, c, 0] == pytest.approx(want, abs=1e-15)
    with pytest.raises(ShapeMismatchError):
        abs_diff(a, Image(rng.random((4, 4, 3))))


def test_connected_components_threshold_and_order():
    assert connected_components(Image(np.zeros((12, 16, 1))), 0.1) == []

    # 30-pixel blob (5x6) and a 10-pixel blob (2x5), plus sub-threshold noise
    d = np.zeros((12, 16, 1))
    d[2:7, 1:7, 0] = 0.5
    d[9:11, 10:15, 0] = 0.3
    d[0, 15, 0] = 0.05
    regions = connected_components(Image(d), 0.1)
    assert [r.area for r in regions] == [30, 10]
    big = {(r, c) for r in range(2, 7) for c in range(1, 7)}
    assert {tuple(p) for p in regions[0].pixels} == big
    assert regions[0].bbox == (2, 1, 6, 6)

    only = connected_components(Image(d), 0.4)
    assert len(only) == 1 and only[0].area == 30


def test_diff_region_to_bits_round_trip():
    d = np.zeros((9, 9, 1))
    d[3:6, 3:6, 0] = 1.0
    region = connected_components(Image(d), 0.5)[0]
    bits = region.to_bits(9, 9)
    assert bits.sum() == 9
    assert np.array_equal(bits, d[:, :, 0] > 0.5)


def test_largest_component_picks_biggest():
    bits = np.zeros((8, 8), dtype=bool)
    bits[0:2, 0:2] = True
    bits[4:8, 4:8] = True
    comp = largest_component(bits)
    assert comp.sum() == 16
    assert comp[5, 5] and not comp[0, 0]
