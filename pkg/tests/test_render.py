import numpy as np
import pytest
from scipy.special import expit

from layervec import (BezierPath, ParamGradients, RasterCache, RenderConfig,
                      Scene, ValidationError, path_coverage_mask, render,
                      render_with_grad)


def _square_path(x0, y0, x1, y1, fill, layer=0, uid="p0", **kw):
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)
    ctrl = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        ctrl.extend([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0])
    return BezierPath(points=np.array(ctrl), fill=np.asarray(fill, dtype=np.float64),
                      layer=layer, kind="structure", uid=uid, **kw)


def _blob_path(cx, cy, r, k, fill, layer=0, uid="p0", seed=None, **kw):
    """A generic smooth closed shape; radii jittered so nothing aligns with
    the pixel grid (keeps the signed-distance field single-valued)."""
    ang = np.linspace(0.0, 2 * np.pi, k, endpoint=False) + 0.37
    radii = np.full(k, float(r))
    if seed is not None:
        radii += np.random.default_rng(seed).uniform(-0.2 * r, 0.2 * r, k)
    anchors = np.stack([cx + radii * np.cos(ang), cy + radii * np.sin(ang)], axis=1)
    ctrl = []
    for i in range(k):
        a, b = anchors[i], anchors[(i + 1) % k]
        ctrl.extend([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0])
    return BezierPath(points=np.array(ctrl), fill=np.asarray(fill, dtype=np.float64),
                      layer=layer, kind="structure", uid=uid, **kw)


def test_empty_scene_renders_background():
    scene = Scene(width=7, height=5, background=np.array([0.2, 0.4, 0.6]))
    img = render(scene)
    assert img.data.shape == (5, 7, 3)
    assert np.array_equal(img.data, np.broadcast_to([0.2, 0.4, 0.6], (5, 7, 3)))


def test_interior_pixel_saturates_to_path_color():
    scene = Scene(width=32, height=32, background=np.ones(3),
                  paths=(_square_path(4, 4, 28, 28, [0.1, 0.6, 0.3, 1.0]),))
    img = render(scene)
    assert np.abs(img.data[16, 16] - [0.1, 0.6, 0.3]).max() < 1e-3


def test_half_alpha_over_operator():
    scene = Scene(width=24, height=24, background=np.array([0.0, 0.0, 1.0]),
                  paths=(_square_path(2, 2, 22, 22, [1.0, 0.0, 0.0, 0.5]),))
    img = render(scene)
    # center pixel: coverage expit(10) ~ 1, so 0.5*red + 0.5*blue
    assert np.abs(img.data[12, 12] - [0.5, 0.0, 0.5]).max() < 1e-3


def test_coverage_value_matches_logistic_of_distance():
    # square interior: signed distance at the center of a 16px square is 8
    scene = Scene(width=32, height=32, background=np.ones(3),
                  paths=(_square_path(8.5, 8.5, 24.5, 24.5, [0.0, 0.0, 0.0, 1.0]),))
    cov = path_coverage_mask(scene.paths[0], 32, 32)
    assert cov[16, 16] == pytest.approx(expit(8.0), abs=1e-6)
    # pixel center exactly on the edge: sd = 0 -> coverage 1/2
    assert cov[16, 8] == pytest.approx(0.5, abs=1e-6)


def test_coverage_outside_padded_bbox_is_exactly_zero():
    path = _square_path(10, 10, 14, 14, [0, 0, 0, 1.0])
    cov = path_coverage_mask(path, 40, 40)
    assert cov[30, 30] == 0.0
    assert cov[0, 0] == 0.0
    assert cov.max() > 0.8  # 4px square: center pixel sits 1.5px inside


def test_coverage_mask_areas():
    big = _square_path(4, 4, 36, 36, [0, 0, 0, 1.0])
    cov = path_coverage_mask(big, 44, 44)
    interior = (cov > 0.5).sum()
    assert interior == 32 * 32  # edges fall between pixel centers

    degenerate = BezierPath(points=np.tile([[5.0, 5.0]], (9, 1)), fill=np.array([0, 0, 0, 1.0]),
                            layer=0, kind="structure", uid="z")
    assert (path_coverage_mask(degenerate, 20, 20) > 0.5).sum() == 0

    circle = _blob_path(20, 20, 10, 12, [0, 0, 0, 1.0])
    area = (path_coverage_mask(circle, 40, 40) > 0.5).sum()
    assert area == pytest.approx(np.pi * 100, rel=0.05)


def test_integer_translation_equivariance():
    # integer corners with a side divisible by 3 keep every control point and
    # subdivision midpoint exactly representable, so the shift is bitwise
    path = _square_path(5, 6, 23, 24, [0.3, 0.5, 0.7, 0.8])
    scene = Scene(width=48, height=48, background=np.zeros(3), paths=(path,))
    moved = Scene(width=48, height=48, background=np.zeros(3),
                  paths=(path.with_points(path.points + [11.0, 9.0]),))
    a = render(scene).data
    b = render(moved).data
    assert np.array_equal(a[1:38, 0:30], b[10:47, 11:41])

    # generic curved geometry: equal to floating-point noise
    blob = _blob_path(14.3, 13.7, 6, 7, [0.3, 0.5, 0.7, 0.8], seed=5)
    s1 = Scene(width=48, height=48, background=np.zeros(3), paths=(blob,))
    s2 = Scene(width=48, height=48, background=np.zeros(3),
               paths=(blob.with_points(blob.points + [11.0, 9.0]),))
    d = np.abs(render(s1).data[4:38, 4:30] - render(s2).data[13:47, 15:41])
    assert d.max() < 1e-12


def test_zero_adjoint_gives_zero_gradients():
    scene = Scene(width=16, height=16, background=np.ones(3),
                  paths=(_blob_path(8, 8, 5, 5, [0.9, 0.1, 0.2, 0.7], seed=1),))
    img, grads = render_with_grad(scene, np.zeros((16, 16, 3)))
    assert np.array_equal(img.data, render(scene).data)
    assert np.array_equal(grads.points[0], np.zeros_like(scene.paths[0].points))
    assert np.array_equal(grads.fills[0], np.zeros(4))


def test_requires_exactly_one_adjoint_form():
    scene = Scene(width=8, height=8, background=np.ones(3))
    with pytest.raises(ValidationError):
        render_with_grad(scene)
    with pytest.raises(ValidationError):
        render_with_grad(scene, np.zeros((8, 8, 3)),
                         adjoint_fn=lambda img: np.zeros_like(img))


def test_color_gradient_closed_form():
    # opaque path covering every pixel: d(loss)/d(fill_rgb) = 2 sum(render - target)
    scene = Scene(width=24, height=24, background=np.zeros(3),
                  paths=(_square_path(-40, -40, 64, 64, [0.7, 0.2, 0.5, 1.0]),))
    rng = np.random.default_rng(3)
    target = rng.random((24, 24, 3))
    img, grads = render_with_grad(scene, adjoint_fn=lambda im: 2.0 * (im - target))
    cov = path_coverage_mask(scene.paths[0], 24, 24)
    assert cov.min() == 1.0  # logistic saturates exactly in float64 this deep
    expected = 2.0 * (img.data - target).sum(axis=(0, 1))
    assert np.abs(grads.fills[0][:3] - expected).max() < 1e-9
    # alpha gradient over a black background: d(render)/d(alpha) = fill
    expected_a = (2.0 * (img.data - target) * np.array([0.7, 0.2, 0.5])).sum()
    assert grads.fills[0][3] == pytest.approx(expected_a, rel=1e-9)


def _fd_check(scene, coords_tol=1e-2, h=1e-3, seed=0):
    """Central finite differences on every point coordinate and fill channel."""
    rng = np.random.default_rng(seed)
    target = rng.random((scene.height, scene.width, 3))

    def loss(s):
        img = render(s)
        return float(((img.data - target) ** 2).sum())

    _, grads = render_with_grad(scene, adjoint_fn=lambda im: 2.0 * (im - target))
    checked = passed = 0
    for i, p in enumerate(scene.paths):
        if p.frozen:
            continue
        for flat in range(p.points.size):
            for arr, analytic in ((p.points, grads.points[i][np.unravel_index(flat, p.points.shape)]),):
                plus = arr.copy().ravel()
                plus[flat] += h
                minus = arr.copy().ravel()
                minus[flat] -= h
                s_p = scene.with_paths([q if j != i else q.with_points(plus.reshape(arr.shape))
                                        for j, q in enumerate(scene.paths)])
                s_m = scene.with_paths([q if j != i else q.with_points(minus.reshape(arr.shape))
                                        for j, q in enumerate(scene.paths)])
                fd = (loss(s_p) - loss(s_m)) / (2 * h)
                if abs(fd) <= 1e-6:
                    continue
                checked += 1
                if abs(analytic - fd) / abs(fd) < coords_tol:
                    passed += 1
    return checked, passed


def test_point_gradients_match_finite_differences():
    scene = Scene(width=24, height=24, background=np.ones(3), paths=(
        _blob_path(9.2, 9.7, 5, 5, [0.8, 0.2, 0.3, 0.9], layer=0, uid="a", seed=4),
        _blob_path(14.6, 13.1, 6, 6, [0.2, 0.6, 0.9, 0.7], layer=1, uid="b", seed=9),
    ))
    checked, passed = _fd_check(scene)
    assert checked > 20
    assert passed == checked


def test_frozen_paths_get_zero_gradients_but_attenuate_correctly():
    # frozen paths are never optimized, so the backward pass skips them; the
    # gradients of paths underneath a frozen occluder must still be exact
    bottom = _blob_path(10.3, 11.2, 6, 5, [0.8, 0.2, 0.3, 0.9], layer=0, uid="lo", seed=4)
    top = _blob_path(13.6, 12.1, 4, 6, [0.2, 0.6, 0.9, 0.6], layer=1, uid="hi",
                     seed=9, frozen=True)
    scene = Scene(width=24, height=24, background=np.ones(3), paths=(bottom, top))
    _, grads = render_with_grad(scene, np.ones((24, 24, 3)))
    assert np.array_equal(grads.points[1], np.zeros_like(top.points))
    assert np.array_equal(grads.fills[1], np.zeros(4))
    assert np.abs(grads.points[0]).max() > 0

    checked, passed = _fd_check(scene)
    assert checked >= 10
    assert passed == checked


def test_threading_is_bitwise_deterministic():
    paths = tuple(
        _blob_path(8 + 7 * i, 9 + 5 * (i % 3), 5, 5 + i % 3, [0.2 * i % 1, 0.5, 0.8, 0.8],
                   layer=i, uid=f"p{i}", seed=i)
        for i in range(5))
    scene = Scene(width=48, height=40, background=np.zeros(3), paths=paths)
    adj = np.random.default_rng(8).normal(size=(40, 48, 3))
    img1, g1 = render_with_grad(scene, adj, threads=1)
    img4, g4 = render_with_grad(scene, adj, threads=4)
    assert np.array_equal(img1.data, img4.data)
    for a, b in zip(g1.points, g4.points):
        assert np.array_equal(a, b)
    for a, b in zip(g1.fills, g4.fills):
        assert np.array_equal(a, b)


def test_raster_cache_reuses_frozen_coverage():
    path = _blob_path(10, 10, 6, 6, [0.1, 0.2, 0.3, 1.0], seed=3, frozen=True)
    scene = Scene(width=24, height=24, background=np.ones(3), paths=(path,))
    cache = RasterCache()
    first = render(scene, cache=cache)
    assert cache.hits == 0 and cache.misses == 1
    second = render(scene, cache=cache)
    assert cache.hits == 1
    assert np.array_equal(first.data, second.data)
    # changed fill must not invalidate the cached coverage
    recolored = scene.with_paths([path.with_fill(np.array([0.9, 0.1, 0.1, 0.5]))])
    render(recolored, cache=cache)
    assert cache.hits == 2


def test_render_config_rejects_unknown_fill_rule():
    with pytest.raises(ValidationError):
        RenderConfig(fill_rule="evenodd")


def test_param_gradients_accumulate():
    scene = Scene(width=8, height=8, background=np.ones(3),
                  paths=(_square_path(1, 1, 7, 7, [0.5, 0.5, 0.5, 1.0]),))
    g1 = ParamGradients.zeros_like(scene)
    g2 = ParamGradients.zeros_like(scene)
    g1.points[0][:] = 1.0
    g2.points[0][:] = 2.0
    g2.fills[0][:] = 0.5
    g1.accumulate(g2)
    assert np.array_equal(g1.points[0], np.full_like(g1.points[0], 3.0))
    assert np.array_equal(g1.fills[0], np.full(4, 0.5))
