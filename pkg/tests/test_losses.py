import numpy as np
import pytest

from tablescene.losses import (
    FeatureVector,
    LossError,
    LossWeights,
    PatchPyramidExtractor,
    TargetViews,
    app_loss,
    edge_loss,
    rot_loss,
    sil_loss,
)


def square(offset_cols=0):
    m = np.zeros((40, 40))
    m[10:20, 10 + offset_cols:20 + offset_cols] = 1.0
    return m


def test_sil_identity_and_disjoint():
    assert sil_loss(square(), square()) == 0.0
    assert sil_loss(square(), square(20)) == 1.0


def test_sil_half_overlap_is_two_thirds():
    assert abs(sil_loss(square(), square(5)) - 2.0 / 3.0) <= 1e-12


def test_sil_shape_mismatch():
    with pytest.raises(LossError):
        sil_loss(np.zeros((4, 4)), np.zeros((5, 5)))


def test_edge_loss_cases():
    d = np.zeros((4, 4))
    e = np.zeros((4, 4))
    e[1, 1] = 0.7
    assert edge_loss(e, d) == 0.0
    d[2, 2] = 5.0
    e = np.zeros((4, 4))
    e[2, 2] = 1.0
    assert edge_loss(e, d) == 5.0
    e = np.zeros((4, 4))
    d = np.zeros((4, 4))
    e[0, 0], d[0, 0] = 1.0, 2.0
    e[3, 3], d[3, 3] = 3.0, 4.0
    assert abs(edge_loss(e, d) - 3.5) <= 1e-12


def test_edge_loss_rejects_empty_map():
    with pytest.raises(LossError):
        edge_loss(np.zeros((3, 3)), np.ones((3, 3)))


def test_app_loss_cases():
    e1 = FeatureVector(np.array([1.0, 0.0]), "x")
    e2 = FeatureVector(np.array([0.0, 1.0]), "x")
    assert app_loss(e1, e1) == 0.0
    assert abs(app_loss(e1, e2) - 2.0) <= 1e-12
    assert app_loss(e1, e2) == app_loss(e2, e1)
    with pytest.raises(LossError):
        app_loss(e1, FeatureVector(np.array([1.0, 0.0]), "y"))


def test_rot_loss_weights():
    assert rot_loss(0, 0, 0) == 0.0
    assert abs(rot_loss(1, 1, 1, LossWeights(0.5, 0.5, 2.0)) - 3.0) <= 1e-12
    w = LossWeights()
    base = rot_loss(0.2, 0.3, 0.4, w)
    assert rot_loss(0.2 + 1.0, 0.3, 0.4, w) - base == pytest.approx(w.lambda_s)
    assert rot_loss(0.2, 0.3 + 1.0, 0.4, w) - base == pytest.approx(w.lambda_e)
    assert rot_loss(0.2, 0.3, 0.4 + 1.0, w) - base == pytest.approx(w.lambda_a)
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0, 1.0)


def test_feature_extractor_is_deterministic(rng):
    img = rng.random((64, 64, 3))
    ex = PatchPyramidExtractor()
    a, b = ex.extract(img), ex.extract(img)
    assert a.values.shape == (ex.length,)
    assert np.array_equal(a.values, b.values)
    assert app_loss(a, ex.extract(img[:, ::-1])) > 0


def test_target_views_from_crop():
    m = np.zeros((48, 48))
    m[10:30, 12:40] = 1.0
    img = np.repeat(m[..., None], 3, axis=2)
    t = TargetViews.from_crop(img, m, PatchPyramidExtractor())
    assert t.distance.shape == m.shape and t.distance.min() == 0.0
    with pytest.raises(LossError):
        TargetViews.from_crop(img[:20], m, PatchPyramidExtractor())
