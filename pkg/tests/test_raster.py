import math

import numpy as np
import pytest

from tablescene.geometry import box_mesh
from tablescene.raster import (
    Camera,
    RenderError,
    _rasterize,
    crop_bounds,
    project,
    render,
    sobel_edge_map,
    tight_crop_resize,
    to_float_image,
    to_uint8,
)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(elevation=95)
    with pytest.raises(ValueError):
        Camera(distance=0)
    with pytest.raises(ValueError):
        Camera(fov=180)


def test_front_cube_coverage_matches_projection():
    n, fov, dist = 256, 40.0, 3.0
    cube = box_mesh((1.0, 1.0, 1.0))
    out = render(cube, Camera(0.0, 0.0, dist, fov, n), softness=0.05)
    radius = math.sqrt(3) / 2
    focal = 0.5 * n / math.tan(math.radians(fov) / 2)
    side = focal / (dist * radius - 0.5)
    expected = side * side / (n * n)
    assert out.coverage.mean() == pytest.approx(expected, rel=0.02)
    assert out.silhouette.sum() / (n * n) == pytest.approx(expected, rel=0.02)


def test_geometry_outside_image_renders_nothing():
    cube = box_mesh()
    xy, invz, cols = project(cube, Camera(image_size=64))
    n = 64
    sil, edges, color, covered = _rasterize(xy + 10_000.0, invz, cols, n, np.zeros(3), 1.5, 14.0,
                                            np.zeros((0, 2, 2)), True)
    assert not sil.any() and not edges.any() and not covered.any()


def test_soft_band_widens_with_softness(car_mesh):
    cam = Camera(30.0, 40.0, image_size=128)
    counts = []
    for s in (0.5, 1.0, 2.0, 4.0):
        sil = render(car_mesh, cam, 20.0, softness=s).silhouette
        counts.append(int(np.count_nonzero((sil > 0.01) & (sil < 0.99))))
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_silhouette_range_and_edge_map(car_mesh):
    out = render(car_mesh, Camera(image_size=96), 45.0, framing="tight", margin=0.1)
    assert out.silhouette.min() >= 0 and out.silhouette.max() <= 1
    assert np.array_equal(out.edge_map, sobel_edge_map(out.silhouette))
    assert out.color.shape == (96, 96, 3)
    with pytest.raises(RenderError):
        render(car_mesh, Camera(image_size=96), softness=0.0)


def test_tight_framing_fills_image(car_mesh):
    margin = 0.1
    out = render(car_mesh, Camera(image_size=128), 10.0, framing="tight", margin=margin)
    ys, xs = np.nonzero(out.coverage)
    extent = max(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
    assert extent == pytest.approx(128 / (1 + 2 * margin), abs=2)


def test_backface_culling_keeps_coverage(car_mesh):
    cam = Camera(0.0, 30.0, image_size=128)
    a = render(car_mesh, cam, 77.0, cull_backfaces=False)
    b = render(car_mesh, cam, 77.0, cull_backfaces=True)
    assert np.count_nonzero(a.coverage != b.coverage) <= 1
    assert np.abs(a.color - b.color).max() < 1e-9 or np.count_nonzero(np.abs(a.color - b.color) > 1e-9) <= 3


def test_render_is_deterministic(car_mesh):
    cam = Camera(10.0, 50.0, image_size=64)
    a, b = render(car_mesh, cam, 33.3), render(car_mesh, cam, 33.3)
    assert np.array_equal(a.silhouette, b.silhouette) and np.array_equal(a.color, b.color)


def test_sobel_constant_is_zero():
    assert not sobel_edge_map(np.full((16, 16), 0.7)).any()


def test_sobel_unit_step_peaks_at_four():
    img = np.zeros((16, 16))
    img[:, 8:] = 1.0
    e = sobel_edge_map(img)
    assert e.max() == pytest.approx(4.0)
    assert np.allclose(e[:, 7], 4.0) and np.allclose(e[:, 8], 4.0)
    assert np.allclose(sobel_edge_map(3.0 * img), 3.0 * e)


def test_sobel_rejects_color():
    with pytest.raises(ValueError):
        sobel_edge_map(np.zeros((4, 4, 3)))


def test_tight_crop_full_mask_is_plain_resize(rng):
    img = rng.random((32, 32))
    out = tight_crop_resize(img, np.ones((32, 32)), out_size=32)
    assert np.allclose(out, img)


def test_tight_crop_box_is_square_and_centered():
    mask = np.zeros((64, 64))
    mask[10:20, 30:50] = 1.0  # 10 rows x 20 cols
    x0, y0, side = crop_bounds(mask)
    assert side == 20
    assert (x0, y0) == (30.0, 5.0)
    for shape in ((64, 64), (40, 90)):
        m = np.zeros(shape)
        m[5:15, 5:25] = 1
        assert tight_crop_resize(np.ones(shape), m).shape == (256, 256)


def test_empty_mask_crop_rejected():
    with pytest.raises(ValueError):
        crop_bounds(np.zeros((8, 8)))


def test_uint8_round_trip(rng):
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    assert np.array_equal(to_uint8(to_float_image(img)), img)
