import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from idcnn_switch import metrics
from idcnn_switch.errors import ContractError
from idcnn_switch.metrics import ConfusionCounts, aim_diagram, confusion, fnr, fpr, mae, psnr, ssim_c, wacc
from idcnn_switch.reference import confusion_loops, mae_loops, psnr_loops, ssim_direct

small_maps = hnp.arrays(bool, st.tuples(st.integers(1, 8), st.integers(1, 8)))


def rand_image(seed, h=16, w=16):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)


# -- detection ---------------------------------------------------------------


def test_confusion_identical_maps():
    t = np.random.default_rng(0).random((6, 6)) < 0.4
    c = confusion(t, t)
    assert c.fp == c.fn == 0 and c.tp == t.sum() and c.total == 36


def test_confusion_all_false_alarms():
    c = confusion(np.zeros((4, 4), bool), np.ones((4, 4), bool))
    assert (c.tp, c.tn, c.fp, c.fn) == (0, 0, 16, 0)


@settings(max_examples=50, deadline=None)
@given(small_maps, st.integers(0, 1000))
def test_confusion_matches_loops(truth, seed):
    est = np.random.default_rng(seed).random(truth.shape) < 0.5
    c = confusion(truth, est)
    assert (c.tp, c.tn, c.fp, c.fn) == confusion_loops(truth, est)


def test_confusion_shape_mismatch():
    with pytest.raises(ContractError):
        confusion(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_hand_computed_rates():
    c = ConfusionCounts(tp=90, tn=880, fp=20, fn=10)
    assert c.rho == pytest.approx(0.1)
    assert wacc(c) == pytest.approx(0.97, abs=1e-12)
    assert fpr(c) == pytest.approx(0.0222222, abs=1e-6)
    assert fnr(c) == pytest.approx(0.1)


def test_degenerate_classes():
    c = ConfusionCounts(tp=0, tn=90, fp=10, fn=0)
    assert fnr(c) == 0.0
    assert wacc(c) == pytest.approx(0.9)
    c = ConfusionCounts(tp=7, tn=0, fp=0, fn=3)
    assert fpr(c) == 0.0
    assert wacc(c) == pytest.approx(0.7)


def test_perfect_detection():
    c = ConfusionCounts(tp=5, tn=5, fp=0, fn=0)
    assert wacc(c) == 1.0 and fpr(c) == 0.0 and fnr(c) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_rates_in_unit_interval(tp, tn, fp, fn):
    c = ConfusionCounts(tp, tn, fp, fn)
    for v in (wacc(c), fpr(c), fnr(c)):
        assert 0.0 <= v <= 1.0 + 1e-12
    if tp + fn > 0 and tn + fp > 0:
        assert (wacc(c) == pytest.approx(1.0)) == (fp == 0 and fn == 0)


# -- image quality -----------------------------------------------------------


def test_psnr_identical_is_inf():
    img = rand_image(0)
    assert psnr(img, img) == math.inf


def test_psnr_single_channel_error():
    a = np.zeros((10, 10, 3), np.uint8)
    b = a.copy()
    b[3, 4, 1] = 255
    assert psnr(a, b) == pytest.approx(10 * math.log10(300))
    assert psnr(a, b) == pytest.approx(24.77, abs=5e-3)


def test_psnr_decreases_with_mse():
    a = np.full((8, 8, 3), 100, np.uint8)
    values = [psnr(a, a + np.uint8(d)) for d in (1, 2, 5, 20)]
    assert values == sorted(values, reverse=True)


def test_mae_examples():
    a = rand_image(1).clip(0, 200)
    assert mae(a, a) == 0
    assert mae(a, a + np.uint8(3)) == 3.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 10**6))
def test_psnr_and_mae_match_loops(h, w, seed):
    a, b = rand_image(seed, h, w), rand_image(seed + 1, h, w)
    assert mae(a, b) == pytest.approx(mae_loops(a, b), rel=1e-12)
    assert psnr(a, b) == pytest.approx(psnr_loops(a, b), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_mae_triangle_inequality(seed):
    a, b, c = (rand_image(seed + k, 5, 5) for k in range(3))
    assert mae(a, c) <= mae(a, b) + mae(b, c) + 1e-12


def test_ssim_identical_and_symmetric():
    a, b = rand_image(2), rand_image(3)
    assert ssim_c(a, a) == pytest.approx(1.0)
    assert ssim_c(a, b) == ssim_c(b, a)
    assert -1 <= ssim_c(a, b) <= 1


def test_ssim_constant_offset_matches_direct_formula():
    a = np.full((12, 13, 3), 90, np.uint8)
    b = a + np.uint8(20)
    expected = (2 * 90 * 110 + (0.01 * 255) ** 2) / (90**2 + 110**2 + (0.01 * 255) ** 2)
    assert ssim_c(a, b) == pytest.approx(expected, rel=1e-9)
    assert ssim_c(a, b) == pytest.approx(ssim_direct(a, b), rel=1e-9)


def test_ssim_matches_direct_on_random_images():
    rng = np.random.default_rng(4)
    for _ in range(3):
        h, w = rng.integers(11, 17, size=2)
        a = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        b = np.clip(a.astype(int) + rng.integers(-30, 31, a.shape), 0, 255).astype(np.uint8)
        assert ssim_c(a, b) == pytest.approx(ssim_direct(a, b), rel=1e-6)


def test_ssim_too_small():
    with pytest.raises(ContractError):
        ssim_c(np.zeros((10, 20, 3), np.uint8), np.zeros((10, 20, 3), np.uint8))


def test_dimension_mismatch():
    for fn in (psnr, mae, ssim_c, metrics.mse):
        with pytest.raises(ContractError):
            fn(np.zeros((12, 12, 3), np.uint8), np.zeros((12, 13, 3), np.uint8))


# -- aim diagram -------------------------------------------------------------


def test_aim_perfect():
    a = rand_image(5, 4, 4)
    m = np.eye(4, dtype=bool)
    aim = aim_diagram(a, a, m, m)
    assert aim.mae_tp == aim.mae_fp == aim.mae_fn == 0


def test_aim_one_pixel_per_class():
    clean = np.full((4, 4, 3), 100, np.uint8)
    restored = clean.copy()
    truth = np.zeros((4, 4), bool)
    est = np.zeros((4, 4), bool)
    truth[0, 0] = est[0, 0] = True          # TP, restored with error 6 per channel
    restored[0, 0] = 106
    est[1, 1] = True                        # FP, a clean pixel changed by 3, 0, 0
    restored[1, 1] = (103, 100, 100)
    truth[2, 2] = True                      # FN, impulse left in place
    restored[2, 2] = (0, 255, 100)
    aim = aim_diagram(clean, restored, truth, est)
    q3 = 3 * 16
    assert aim.mae_tp == pytest.approx(18 / q3)
    assert aim.mae_fp == pytest.approx(3 / q3)
    assert aim.mae_fn == pytest.approx((100 + 155) / q3)
    assert aim.total == pytest.approx(mae(clean, restored))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_aim_partition_identity(seed):
    rng = np.random.default_rng(seed)
    clean = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    truth, est = rng.random((8, 8)) < 0.3, rng.random((8, 8)) < 0.3
    restored = clean.copy()
    touched = truth | est
    restored[touched] = rng.integers(0, 256, (int(touched.sum()), 3), dtype=np.uint8)
    assert aim_diagram(clean, restored, truth, est).total == pytest.approx(mae(clean, restored))


def test_evaluate_row_fields():
    a = rand_image(6)
    m = np.zeros((16, 16), bool)
    row = metrics.evaluate(a, a, m, m)
    assert set(metrics.REPORT_COLUMNS) <= set(row)
    assert row["wacc"] == 1.0 and row["mae"] == 0 and row["psnr"] == math.inf and row["ssim"] == pytest.approx(1.0)
