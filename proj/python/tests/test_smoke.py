import math

import numpy as np
import pytest

import msca


def test_metrics_fixture():
    a = np.zeros((4, 4), np.uint8)
    b = np.zeros((4, 4), np.uint8)
    a[0:2, 0:2] = 1
    b[1:4, 0:2] = 1
    assert msca.dice(a, b) == pytest.approx(0.4, abs=0)
    assert msca.iou(a, b) == 0.25
    assert msca.acc(a, b) == 10 / 16
    assert msca.hd95(a, b) == msca.hd95_fast(a, b)
    assert msca.hd95(a, np.zeros_like(a)) is None
    assert msca.hd95(np.zeros_like(a), np.zeros_like(a)) == 0.0


def test_hd95_fast_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.random((24, 24)) < 0.3
        q = rng.random((24, 24)) < 0.3
        assert msca.hd95(p, q) == msca.hd95_fast(p, q)


def test_preprocessing():
    np.testing.assert_array_equal(msca.window_ct(np.array([-1000.0, 40.0, 1000.0])), [-160, 40, 240])
    x = np.arange(1, 1001, dtype=float)
    assert msca.nearest_rank_percentile(x, 0.5) == 5
    assert msca.nearest_rank_percentile(x, 99.5) == 995
    n = msca.minmax_normalize(np.array([-160.0, 40.0, 240.0]))
    np.testing.assert_allclose(n, [0, 127.5, 255], atol=1e-12)
    vol = np.random.default_rng(1).lognormal(3, 1, (2, 8, 8))
    once = msca.normalize_intensities(vol, "mri")
    assert once.shape == vol.shape
    np.testing.assert_allclose(msca.normalize_intensities(once, "mri"), once, atol=1e-12)
    up = msca.resize(np.array([[1.0, 2.0], [3.0, 4.0]]), 4)
    np.testing.assert_allclose(up[0], [1, 1.25, 1.75, 2])
    with pytest.raises(ValueError):
        msca.window_ct(np.zeros(3), width=0)


def test_boxes_and_synthetic_data():
    sid, image, mask, box = msca.synthetic_sample(42, 0, 64)
    assert sid == "synth_00000"
    assert image.shape == (3, 64, 64)
    assert mask.shape == (64, 64) and mask.sum() > 0
    assert msca.box_from_mask(mask) == box
    assert msca.perturbation_max(1024) == 20
    for x0, y0, x1, y1 in msca.perturb_boxes(box, 64, 200, seed=3, p_max=5):
        assert 0 <= x0 <= box[0] and 0 <= y0 <= box[1]
        assert box[2] <= x1 <= 64 and box[3] <= y1 <= 64


def test_model_forward_and_adapter_identity():
    model = msca.Model("image_size=32\nwidth=16\nembed_dim=32\ndepth=2\nheads=2\n")
    _, image, _, box = msca.synthetic_sample(1, 0, 32)
    images = np.stack([image, image])
    on = model.forward(images, [box, box])
    off = model.forward(images, [box, box], adapters=False)
    assert on.shape == (2, 1, 32, 32)
    assert np.array_equal(on, off)
    assert all(math.isclose(b, 0.5) for _, b in model.fusion_biases())
    with pytest.raises(ValueError):
        msca.Model("width=7\n")


def test_gradcheck_blocks():
    results = msca.gradcheck("adapter", seeds=2)
    assert results and all(r["passed"] for r in results)
    assert "model" in msca.gradcheck_modules()
