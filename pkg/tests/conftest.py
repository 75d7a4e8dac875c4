import numpy as np
import pytest

from layervec import Image, VectorizeConfig, run_vectorize, save_png


def make_card(h=48, w=48):
    """Flat three-region test card: gray ground, red and blue rectangles."""
    data = np.full((h, w, 3), 0.9)
    data[6:28, 4:26] = (0.8, 0.2, 0.2)
    data[24:44, 28:44] = (0.2, 0.3, 0.8)
    return data


@pytest.fixture(scope="session")
def card_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "card.png"
    save_png(Image(make_card()), str(path))
    return str(path)


@pytest.fixture(scope="session")
def quick_run(card_png, tmp_path_factory):
    """One short vectorize run shared by the CLI artifact tests."""
    out = tmp_path_factory.mktemp("run") / "out"
    cfg = VectorizeConfig(target=card_png, out_dir=str(out), segment="builtin",
                          paths_budget=8, seed=0, stage1_iters=8, stage2_iters=8)
    return run_vectorize(cfg)
