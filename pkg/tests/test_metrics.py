import math

import numpy as np
import pytest

from nervpp import metrics
from nervpp.errors import DataError, ShapeError
from nervpp.metrics import RDCurve, bd_psnr, bd_rate

from oracles import gaussian_taps, ms_ssim_loops, psnr_loops, ssim_loops

ORACLE_TOL = 1e-8


@pytest.fixture
def pair(rng):
    x = rng.uniform(size=(3, 32, 32))
    y = np.clip(x + 0.05 * rng.standard_normal(x.shape), 0, 1)
    return x, y


# -- PSNR / SSIM / MS-SSIM ---------------------------------------------------------


def test_gaussian_window_matches_taps():
    np.testing.assert_allclose(metrics.gaussian_window(), gaussian_taps(), rtol=0, atol=1e-16)


def test_psnr_oracle(pair):
    assert metrics.psnr(*pair) == pytest.approx(psnr_loops(*pair), abs=ORACLE_TOL)


def test_psnr_known_values():
    x = np.zeros((3, 4, 4))
    assert metrics.psnr(x, x) == math.inf
    assert metrics.psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-12)
    assert metrics.psnr(x, x + 1.0) == 0.0


def test_ssim_oracle(pair):
    assert metrics.ssim(*pair) == pytest.approx(ssim_loops(*pair), abs=ORACLE_TOL)


def test_ssim_oracle_uncorrelated(rng):
    x, y = rng.uniform(size=(2, 3, 32, 32))
    assert metrics.ssim(x, y) == pytest.approx(ssim_loops(x, y), abs=ORACLE_TOL)


def test_ms_ssim_oracle(pair):
    assert metrics.ms_ssim_scales(32, 32) == 2
    assert metrics.ms_ssim(*pair) == pytest.approx(ms_ssim_loops(*pair, 2), abs=ORACLE_TOL)
    assert metrics.ms_ssim(*pair, scales=1) == pytest.approx(ms_ssim_loops(*pair, 1), abs=ORACLE_TOL)


def test_ms_ssim_oracle_three_scales(rng):
    x = rng.uniform(size=(3, 48, 48))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    assert metrics.ms_ssim_scales(48, 48) == 3
    assert metrics.ms_ssim(x, y) == pytest.approx(ms_ssim_loops(x, y, 3), abs=ORACLE_TOL)


def test_ms_ssim_oracle_64(rng):
    x = rng.uniform(size=(3, 64, 64))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    assert metrics.ms_ssim(x, y) == pytest.approx(ms_ssim_loops(x, y, 3), abs=ORACLE_TOL)


def test_ssim_constant_closed_form():
    x = np.zeros((3, 16, 16))
    y = np.ones((3, 16, 16))
    assert metrics.ssim(x, y) == pytest.approx(metrics.C1 / (1 + metrics.C1), abs=1e-10)


def test_ssim_identity_and_symmetry(pair):
    x, y = pair
    assert metrics.ssim(x, x) == 1.0
    assert metrics.ssim(x, y) == pytest.approx(metrics.ssim(y, x), abs=1e-15)
    assert metrics.ms_ssim(x, x) == pytest.approx(1.0, abs=1e-15)


def test_ms_ssim_one_scale_equals_ssim(rng):
    x, y = rng.uniform(size=(2, 3, 64, 64))
    assert metrics.ms_ssim(x, y, scales=1) == metrics.ssim(x, y)


def test_ms_ssim_scale_schedule():
    assert metrics.ms_ssim_scales(176, 176) == 5
    assert metrics.ms_ssim_scales(64, 128) == 3
    assert metrics.ms_ssim_scales(21, 40) == 1
    assert metrics.ms_ssim_scales(11, 11) == 1
    with pytest.raises(ShapeError):
        metrics.ms_ssim_scales(10, 64)
    np.testing.assert_allclose(metrics.ms_ssim_weights(5).sum(), 1.0)


def test_ms_ssim_rejects_too_many_scales(pair):
    with pytest.raises(ShapeError):
        metrics.ms_ssim(*pair, scales=3)


def test_metrics_on_video_pool_frames(rng):
    x = rng.uniform(size=(4, 3, 16, 16))
    y = rng.uniform(size=(4, 3, 16, 16))
    assert metrics.psnr(x, y) == pytest.approx(psnr_loops(x, y), abs=1e-12)
    assert metrics.ssim(x, y) == pytest.approx(np.mean([metrics.ssim(a, b) for a, b in zip(x, y)]), abs=1e-14)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        metrics.psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(ShapeError):
        metrics.ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_ms_ssim_db():
    assert metrics.ms_ssim_db(0.9) == pytest.approx(10.0)
    assert metrics.ms_ssim_db(1.0) == math.inf


def test_summarize_rows(rng):
    x = rng.uniform(size=(2, 3, 16, 16))
    y = np.clip(x + 0.01, 0, 1)
    rows = metrics.summarize(x, y, per_frame=True)
    assert [r["frame"] for r in rows] == ["0", "1", "all"]
    assert rows[-1]["psnr"] == metrics.psnr(x, y)


# -- rate --------------------------------------------------------------------------


def test_bpp_examples():
    assert metrics.bpp(1000, 10, 100, 8) == 1.0
    assert metrics.bpp(1000, 20, 100, 8) == 0.5
    with pytest.raises(ValueError):
        metrics.bpp(10, 0, 4, 4)


# -- Bjontegaard -------------------------------------------------------------------


ANCHOR = [(0.05, 28.0), (0.1, 30.5), (0.2, 32.6), (0.4, 34.1)]


def _scaled(points, k):
    return [(r * k, q) for r, q in points]


def test_bd_rate_identical_is_exact_zero():
    assert bd_rate(RDCurve(ANCHOR), RDCurve(ANCHOR)) == 0.0
    assert bd_psnr(RDCurve(ANCHOR), RDCurve(ANCHOR)) == 0.0


def test_bd_rate_doubling():
    assert bd_rate(RDCurve(ANCHOR), RDCurve(_scaled(ANCHOR, 2))) == pytest.approx(100.0, abs=1e-6)


def test_bd_rate_halving():
    assert bd_rate(RDCurve(ANCHOR), RDCurve(_scaled(ANCHOR, 0.5))) == pytest.approx(-50.0, abs=1e-6)


@pytest.mark.parametrize("k", [0.7, 1.3, 3.0])
def test_bd_rate_inverse_relation(k):
    a, b = RDCurve(ANCHOR), RDCurve(_scaled(ANCHOR, k))
    fwd = bd_rate(a, b) / 100 + 1
    back = bd_rate(b, a) / 100 + 1
    assert fwd * back == pytest.approx(1.0, abs=1e-12)


def test_bd_psnr_quality_shift():
    shifted = [(r, q + 0.5) for r, q in ANCHOR]
    assert bd_psnr(RDCurve(ANCHOR), RDCurve(shifted)) == pytest.approx(0.5, abs=1e-9)


def test_bd_rate_better_codec_is_negative():
    better = [(r, q + 1.0) for r, q in ANCHOR]
    assert bd_rate(RDCurve(ANCHOR), RDCurve(better)) < 0


def test_rd_curve_validation():
    with pytest.raises(DataError):
        RDCurve(ANCHOR[:3])
    with pytest.raises(DataError):
        RDCurve([(0.1, 30), (0.2, 29), (0.3, 31), (0.4, 32)])
    with pytest.raises(DataError):
        RDCurve([(0.0, 30), (0.2, 31), (0.3, 32), (0.4, 33)])
    # input order does not matter
    assert RDCurve(ANCHOR[::-1]).rates.tolist() == [0.05, 0.1, 0.2, 0.4]


def test_bd_rate_needs_overlap():
    far = [(r, q + 100) for r, q in ANCHOR]
    with pytest.raises(DataError):
        bd_rate(RDCurve(ANCHOR), RDCurve(far))


def test_format_metric():
    assert metrics.format_metric(math.inf) == "inf"
    assert float(metrics.format_metric(0.1)) == 0.1
