import json
import os

import numpy as np
import pytest

from layervec import (BinaryMask, Image, MaskSet, ValidationError,
                      builtin_segment, dedup_across_levels, import_masks,
                      save_masks)


def _mask(bits, level=0, mid="m0"):
    return BinaryMask(bits=np.asarray(bits, dtype=bool), level=level, id=mid)


def _write_mask_png(path, bits):
    import cv2

    cv2.imwrite(path, np.where(bits, 255, 0).astype(np.uint8))


def test_maskset_validates():
    a = np.zeros((4, 4), dtype=bool)
    a[0, 0] = True
    with pytest.raises(ValidationError):
        MaskSet(masks=(_mask(a, 0, "x"), _mask(a, 1, "x")), source="test")  # dup id
    b = np.zeros((5, 4), dtype=bool)
    b[0, 0] = True
    with pytest.raises(ValidationError):
        MaskSet(masks=(_mask(a, 0, "x"), _mask(b, 0, "y")), source="test")  # dims
    ms = MaskSet(masks=(_mask(a, 0, "x"),), source="test")
    assert ms.by_id("x").area == 1


def test_import_masks_manifest(tmp_path):
    bits1 = np.zeros((8, 8), dtype=bool)
    bits1[0:3, 0:3] = True
    bits2 = np.zeros((8, 8), dtype=bool)
    bits2[4:8, 4:8] = True
    bits3 = np.zeros((8, 8), dtype=bool)
    bits3[6:8, 0:2] = True
    entries = []
    for i, bits in enumerate([bits1, bits2, bits3]):
        name = f"m{i}.png"
        _write_mask_png(os.path.join(tmp_path, name), bits)
        entries.append({"id": f"L0_m{i}", "file": name})
    manifest = {"levels": [{"level": 0, "masks": entries}]}
    mpath = os.path.join(tmp_path, "masks.json")
    json.dump(manifest, open(mpath, "w"))

    ms = import_masks(mpath)
    assert len(ms) == 3
    assert ms.by_id("L0_m1").area == 16
    assert ms.by_id("L0_m2").level == 0


def test_import_masks_binarizes_at_128(tmp_path):
    import cv2

    gray = np.zeros((6, 6), dtype=np.uint8)
    gray[0:2] = 127
    gray[2:4] = 128
    gray[4:6] = 200
    cv2.imwrite(os.path.join(tmp_path, "g.png"), gray)
    manifest = {"levels": [{"level": 0, "masks": [{"id": "a", "file": "g.png"}]}]}
    mpath = os.path.join(tmp_path, "masks.json")
    json.dump(manifest, open(mpath, "w"))
    ms = import_masks(mpath)
    assert ms.by_id("a").area == 24  # rows with 128 and 200 only


def test_import_drops_empty_mask_with_warning(tmp_path):
    full = np.ones((5, 5), dtype=bool)
    empty = np.zeros((5, 5), dtype=bool)
    for name, bits in (("full.png", full), ("empty.png", empty)):
        _write_mask_png(os.path.join(tmp_path, name), bits)
    manifest = {"levels": [{"level": 0, "masks": [
        {"id": "keep", "file": "full.png"},
        {"id": "drop", "file": "empty.png"},
    ]}]}
    mpath = os.path.join(tmp_path, "masks.json")
    json.dump(manifest, open(mpath, "w"))
    ms = import_masks(mpath)
    assert len(ms) == 1
    assert ms.masks[0].id == "keep"
    assert any("drop" in w for w in ms.warnings)


def test_import_multi_level_tags(tmp_path):
    bits = np.zeros((6, 6), dtype=bool)
    bits[2:4, 2:4] = True
    levels = []
    for lvl in (0, 1):
        entries = []
        for i in range(2):
            name = f"l{lvl}_{i}.png"
            shifted = np.roll(bits, i, axis=1)
            _write_mask_png(os.path.join(tmp_path, name), shifted)
            entries.append({"id": f"L{lvl}_m{i}", "file": name})
        levels.append({"level": lvl, "masks": entries})
    mpath = os.path.join(tmp_path, "masks.json")
    json.dump({"levels": levels}, open(mpath, "w"))
    ms = import_masks(mpath)
    assert len(ms) == 4
    assert sorted((m.level, m.id) for m in ms.masks) == [
        (0, "L0_m0"), (0, "L0_m1"), (1, "L1_m0"), (1, "L1_m1")]


def test_builtin_segment_uniform_image():
    img = Image(np.full((16, 16, 3), 0.5))
    masks = builtin_segment(img, 64)
    assert len(masks) == 1
    assert masks[0].area == 256


def test_builtin_segment_two_halves():
    data = np.zeros((16, 16, 3))
    data[:, :8] = (0.8, 0.1, 0.1)
    data[:, 8:] = (0.1, 0.1, 0.8)
    masks = builtin_segment(Image(data), 64)
    assert len(masks) == 2
    assert {m.area for m in masks} == {128}
    assert masks[0].id == "L0_m0" and masks[1].id == "L0_m1"


def test_builtin_segment_matches_hand_labels():
    data = np.full((20, 20, 3), 0.95)
    region_a = np.zeros((20, 20), dtype=bool)
    region_a[2:10, 2:10] = True
    region_b = np.zeros((20, 20), dtype=bool)
    region_b[12:19, 5:18] = True
    data[region_a] = (0.7, 0.2, 0.2)
    data[region_b] = (0.2, 0.2, 0.7)
    background = ~(region_a | region_b)

    masks = builtin_segment(Image(data), min_area=30)
    assert len(masks) == 3
    by_area = sorted(masks, key=lambda m: -m.area)
    assert np.array_equal(by_area[0].bits, background)
    assert np.array_equal(by_area[1].bits, region_b)
    assert np.array_equal(by_area[2].bits, region_a)


def test_builtin_segment_min_area_and_level_tag():
    data = np.full((16, 16, 3), 0.9)
    data[0:3, 0:3] = (0.1, 0.1, 0.1)  # 9 px, below the cut
    masks = builtin_segment(Image(data), min_area=16, level=2)
    assert len(masks) == 1
    assert masks[0].id == "L2_m0"
    assert masks[0].level == 2


def test_dedup_keeps_more_simplified_duplicate():
    bits = np.zeros((10, 10), dtype=bool)
    bits[2:8, 2:8] = True
    ms = MaskSet(masks=(_mask(bits, 0, "L0_m0"), _mask(bits, 2, "L2_m0")), source="t")
    out = dedup_across_levels(ms)
    assert len(out) == 1
    assert out.masks[0].id == "L2_m0"


def test_dedup_keeps_disjoint_and_subthreshold():
    a = np.zeros((10, 10), dtype=bool)
    a[0:4, 0:4] = True
    b = np.zeros((10, 10), dtype=bool)
    b[6:10, 6:10] = True
    ms = MaskSet(masks=(_mask(a, 0, "a"), _mask(b, 1, "b")), source="t")
    assert len(dedup_across_levels(ms)) == 2

    # Jaccard 0.85: 20-px strip vs the same strip missing 3 px -> 17/20
    c = np.zeros((10, 10), dtype=bool)
    c[0, 0:10] = True
    c[1, 0:10] = True
    d = c.copy()
    d[1, 7:10] = False
    ms2 = MaskSet(masks=(_mask(c, 0, "c"), _mask(d, 1, "d")), source="t")
    out2 = dedup_across_levels(ms2, jaccard_threshold=0.90)
    assert len(out2) == 2
    assert len(dedup_across_levels(ms2, jaccard_threshold=0.80)) == 1


def test_save_masks_round_trip(tmp_path):
    data = np.full((16, 16, 3), 0.9)
    data[4:12, 4:12] = (0.2, 0.6, 0.3)
    masks = builtin_segment(Image(data), min_area=10)
    ms = MaskSet(masks=tuple(masks), source="builtin")
    out_dir = os.path.join(tmp_path, "masks")
    save_masks(ms, out_dir)
    back = import_masks(os.path.join(out_dir, "masks.json"))
    assert len(back) == len(ms)
    for m in ms.masks:
        assert np.array_equal(back.by_id(m.id).bits, m.bits)
