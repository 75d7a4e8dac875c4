import json
import os

import numpy as np
import pytest

from layervec import (Image, ValidationError, VectorizeConfig, load_scene_json,
                      run_vectorize)
from layervec.pipeline import as_rgb

from conftest import make_card


# ---------------------------------------------------------------------------
# config


def test_config_rejects_bad_values(tmp_path):
    kw = dict(target="t.png", out_dir=str(tmp_path))
    with pytest.raises(ValidationError):
        VectorizeConfig(paths_budget=0, **kw)
    with pytest.raises(ValidationError):
        VectorizeConfig(color_fit="nearest", **kw)
    with pytest.raises(ValidationError):
        VectorizeConfig(threads=0, **kw)


# ---------------------------------------------------------------------------
# channel normalization


def test_as_rgb_passthrough():
    img = Image(np.random.default_rng(0).random((5, 4, 3)))
    assert as_rgb(img) is img


def test_as_rgb_grayscale_replicates():
    img = Image(np.linspace(0, 1, 20).reshape(5, 4, 1))
    out = as_rgb(img)
    assert out.data.shape == (5, 4, 3)
    assert np.array_equal(out.data[..., 0], img.data[..., 0])
    assert np.array_equal(out.data[..., 1], out.data[..., 2])


def test_as_rgb_alpha_composites_over_white():
    data = np.zeros((1, 3, 4))
    data[0, 0] = (0.2, 0.4, 0.6, 1.0)   # opaque: keeps rgb
    data[0, 1] = (0.2, 0.4, 0.6, 0.0)   # transparent: white
    data[0, 2] = (0.0, 0.0, 0.0, 0.5)   # half black over white
    out = as_rgb(Image(data))
    assert np.allclose(out.data[0, 0], (0.2, 0.4, 0.6))
    assert np.allclose(out.data[0, 1], (1.0, 1.0, 1.0))
    assert np.allclose(out.data[0, 2], (0.5, 0.5, 0.5))


# ---------------------------------------------------------------------------
# full runs


def test_run_emits_artifacts_and_respects_budget(quick_run):
    out = quick_run.out_dir
    for name in ("layers.json", "scene_stage1.json", "scene_final.json",
                 "final.svg", "render.png", "loss.csv", "run.json"):
        assert os.path.isfile(os.path.join(out, name)), name
    assert os.path.isfile(os.path.join(out, "masks", "masks.json"))

    scene = load_scene_json(os.path.join(out, "scene_final.json"))
    assert 0 < len(scene.paths) <= 8
    assert quick_run.structure_count <= 4  # half the budget goes to structure
    structure = [p for p in scene.paths if p.kind == "structure"]
    assert len(structure) == quick_run.structure_count
    assert all(p.frozen for p in structure)

    with open(os.path.join(out, "run.json")) as fh:
        doc = json.load(fh)
    assert doc["config"]["paths_budget"] == 8
    assert doc["config"]["seed"] == 0
    assert doc["total_paths"] == len(scene.paths)
    assert doc["structure_paths"] == quick_run.structure_count
    assert doc["mask_count"] >= doc["layer_count"] >= 1


def test_same_seed_runs_are_byte_identical(card_png, tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = VectorizeConfig(target=card_png, out_dir=str(tmp_path / name),
                              segment="builtin", paths_budget=6, seed=3,
                              stage1_iters=6, stage2_iters=6)
        run_vectorize(cfg)
        outs.append(tmp_path / name)
    for name in ("scene_final.json", "render.png", "loss.csv", "final.svg"):
        a = (outs[0] / name).read_bytes()
        b = (outs[1] / name).read_bytes()
        assert a == b, name


def test_run_without_masks_or_segmenter_fails(card_png, tmp_path):
    cfg = VectorizeConfig(target=card_png, out_dir=str(tmp_path / "x"))
    with pytest.raises(ValidationError, match="masks"):
        run_vectorize(cfg)


def test_no_structure_opt_skips_stage1_rows(card_png, tmp_path):
    cfg = VectorizeConfig(target=card_png, out_dir=str(tmp_path / "x"),
                          segment="builtin", paths_budget=6,
                          no_structure_opt=True, stage1_iters=6, stage2_iters=0)
    run_vectorize(cfg)
    with open(tmp_path / "x" / "loss.csv") as fh:
        rows = fh.read().strip().splitlines()
    assert len(rows) == 1  # header only: neither stage logged anything


def test_mismatched_external_masks_fail(card_png, tmp_path, quick_run):
    small = Image(make_card(24, 24))
    from layervec import save_png

    wrong = tmp_path / "small.png"
    save_png(small, str(wrong))
    cfg = VectorizeConfig(target=str(wrong), out_dir=str(tmp_path / "x"),
                          masks=os.path.join(quick_run.out_dir, "masks"))
    with pytest.raises(ValidationError, match="does not match"):
        run_vectorize(cfg)
