import numpy as np
import pytest

from sds_toolchain import save_rgb


def checker_image(h: int = 96, w: int = 96, cell: int = 8) -> np.ndarray:
    """High-contrast checkerboard with two discs, plenty of edges to smooth."""
    yy, xx = np.mgrid[0:h, 0:w]
    board = ((yy // cell + xx // cell) % 2).astype(np.float64)
    img = np.stack([0.1 + 0.8 * board] * 3, axis=2)
    d1 = (yy - h * 0.3) ** 2 + (xx - w * 0.3) ** 2 < (h * 0.18) ** 2
    d2 = (yy - h * 0.7) ** 2 + (xx - w * 0.65) ** 2 < (h * 0.22) ** 2
    img[d1] = (0.85, 0.25, 0.2)
    img[d2] = (0.2, 0.35, 0.8)
    return img


@pytest.fixture(scope="session")
def input_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "target.png"
    save_rgb(str(path), checker_image(64, 64))
    return str(path)
