import json
import os

import numpy as np
import pytest

from layervec import Image, load_png, load_scene_json, load_sequence, save_png
from layervec.cli import main

from conftest import make_card


def test_vectorize_smoke(card_png, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["vectorize", "--target", card_png, "--out", str(out),
                 "--segment", "builtin", "--paths", "8",
                 "--stage1-iters", "5", "--stage2-iters", "5"])
    assert code == 0
    assert capsys.readouterr().out.strip().endswith(str(out))
    assert (out / "scene_final.json").is_file()
    assert (out / "render.png").is_file()
    scene = load_scene_json(str(out / "scene_final.json"))
    assert 0 < len(scene.paths) <= 8


def test_vectorize_requires_mask_source(card_png, tmp_path, capsys):
    code = main(["vectorize", "--target", card_png, "--out", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert len(err.strip().splitlines()) == 1


def test_vectorize_missing_target(tmp_path, capsys):
    code = main(["vectorize", "--target", str(tmp_path / "nope.png"),
                 "--out", str(tmp_path / "x"), "--segment", "builtin"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_vectorize_needs_target_or_batch(tmp_path, capsys):
    code = main(["vectorize", "--out", str(tmp_path / "x"), "--segment", "builtin"])
    assert code == 2
    assert "--target or --batch" in capsys.readouterr().err


def test_vectorize_batch(tmp_path, capsys):
    a = tmp_path / "one.png"
    b = tmp_path / "two.png"
    save_png(Image(make_card()), str(a))
    save_png(Image(make_card(40, 40)), str(b))
    listing = tmp_path / "targets.txt"
    listing.write_text(f"{a}\n\n{b}\n")
    out = tmp_path / "batch"
    code = main(["vectorize", "--batch", str(listing), "--out", str(out),
                 "--segment", "builtin", "--paths", "6",
                 "--stage1-iters", "3", "--stage2-iters", "3"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == [str(out / "one"), str(out / "two")]
    assert (out / "one" / "scene_final.json").is_file()
    assert (out / "two" / "scene_final.json").is_file()


def test_vectorize_empty_batch(tmp_path, capsys):
    listing = tmp_path / "targets.txt"
    listing.write_text("\n")
    code = main(["vectorize", "--batch", str(listing), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "no targets" in capsys.readouterr().err


def test_simplify_writes_sequence(card_png, tmp_path, capsys):
    out = tmp_path / "seq"
    code = main(["simplify", "--in", card_png, "--method", "gaussian",
                 "--out", str(out)])
    assert code == 0
    manifest = capsys.readouterr().out.strip()
    assert os.path.isfile(manifest)
    seq = load_sequence(manifest)
    assert len(seq) == 5
    assert seq.method == "gaussian"


def test_render_scene_and_scale(quick_run, tmp_path, capsys):
    scene_path = os.path.join(quick_run.out_dir, "scene_final.json")
    out = tmp_path / "r.png"
    assert main(["render", "--scene", scene_path, "--out", str(out)]) == 0
    img = load_png(str(out))
    assert (img.height, img.width) == (48, 48)

    big = tmp_path / "r2.png"
    assert main(["render", "--scene", scene_path, "--out", str(big),
                 "--scale", "2"]) == 0
    img2 = load_png(str(big))
    assert (img2.height, img2.width) == (96, 96)
    capsys.readouterr()

    assert main(["render", "--scene", scene_path, "--out", str(out),
                 "--scale", "0"]) == 2
    assert "--scale" in capsys.readouterr().err


def test_render_accepts_svg(quick_run, tmp_path, capsys):
    svg_path = os.path.join(quick_run.out_dir, "final.svg")
    json_path = os.path.join(quick_run.out_dir, "scene_final.json")
    from_svg = tmp_path / "svg.png"
    from_json = tmp_path / "json.png"
    assert main(["render", "--scene", svg_path, "--out", str(from_svg)]) == 0
    assert main(["render", "--scene", json_path, "--out", str(from_json)]) == 0
    a = load_png(str(from_svg)).data
    b = load_png(str(from_json)).data
    assert np.abs(a - b).max() < 2.0 / 255.0


def test_layers_writes_cumulative_renders(quick_run, tmp_path, capsys):
    out = tmp_path / "layers"
    assert main(["layers", "--scene",
                 os.path.join(quick_run.out_dir, "scene_final.json"),
                 "--out", str(out)]) == 0
    scene = load_scene_json(os.path.join(quick_run.out_dir, "scene_final.json"))
    levels = sorted({p.layer for p in scene.paths})
    files = sorted(os.listdir(out))
    assert files == [f"layer_{j:02d}.png" for j in levels]


def test_metrics_reports_mse_and_compactness(quick_run, card_png, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code = main(["metrics",
                 "--scene", os.path.join(quick_run.out_dir, "scene_final.json"),
                 "--target", card_png,
                 "--masks", os.path.join(quick_run.out_dir, "masks"),
                 "--out", str(report_path)])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    on_disk = json.loads(report_path.read_text())
    assert printed == on_disk
    assert 0.0 <= printed["mse"] <= 1.0
    assert "per_mask" in printed["compactness"]


def test_missing_scene_file_exits_2(tmp_path, capsys):
    code = main(["render", "--scene", str(tmp_path / "no.json"),
                 "--out", str(tmp_path / "o.png")])
    assert code == 2
    assert "error:" in capsys.readouterr().err
