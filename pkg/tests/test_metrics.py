import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unitslab import metrics
from oracles import loop_mse, window_ssim


def test_mse_basics():
    a = np.random.default_rng(0).random((4, 4))
    assert metrics.mse(a, a) == 0
    assert metrics.mse(a + 0.3, a) == pytest.approx(0.09)
    with pytest.raises(ValueError):
        metrics.mse(a, a[:3])


def test_mse_matches_loop_frozen():
    rng = np.random.default_rng(16)
    a, b = rng.random((4, 4)), rng.random((4, 4))
    assert metrics.mse(a, b) == pytest.approx(loop_mse(a, b), abs=1e-12)
    assert metrics.mse(a, b) == pytest.approx(0.14984599360547907, abs=1e-12)


def test_psnr_identities():
    ref = np.zeros((4, 4))
    ref[0, 0] = 2.0
    assert metrics.psnr(ref, ref) == math.inf
    a = ref + 2.0  # mse = peak^2
    assert metrics.psnr(a, ref) == pytest.approx(0.0, abs=1e-12)
    b = ref + 0.02  # mse = peak^2 / 1e4
    assert metrics.psnr(b, ref) == pytest.approx(40.0, abs=1e-9)
    assert metrics.psnr(b, ref, peak=1.0) == pytest.approx(10 * np.log10(1 / 0.0004))


def smooth_pair():
    x = np.linspace(0, 1, 16)
    X, Y = np.meshgrid(x, x, indexing="ij")
    a = np.sin(3 * X) * np.cos(2 * Y) + 1
    return a, a + 0.1 * np.sin(5 * X + Y)


def test_ssim_identity_and_anticorrelation():
    a, _ = smooth_pair()
    assert metrics.ssim(a, a) == 1.0
    binary = (np.random.default_rng(0).random((16, 16)) < 0.5).astype(float)
    assert metrics.ssim(binary, 1 - binary) < 0


def test_ssim_matches_window_oracle_frozen():
    a, b = smooth_pair()
    assert metrics.ssim(a, b) == pytest.approx(window_ssim(a, b), abs=1e-9)
    assert metrics.ssim(a, b) == pytest.approx(0.977485829404346, abs=1e-9)


def test_ssim_frames_averaged():
    rng = np.random.default_rng(1)
    a, b = rng.random((10, 12, 3)), rng.random((10, 12, 3))
    r = max(a.max(), b.max()) - min(a.min(), b.min())
    expected = np.mean([window_ssim(a[..., t], b[..., t], data_range=r) for t in range(3)])
    assert metrics.ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((6, 6)), np.zeros((6, 6)))


@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100))
def test_ssim_symmetric_and_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.random((9, 9)), rng.random((9, 9))
    s = metrics.ssim(a, b)
    assert s == pytest.approx(metrics.ssim(b, a), abs=1e-12)
    assert s <= 1.0
    assert metrics.ssim(scale * a, scale * b) == pytest.approx(s, abs=1e-7)


@given(seed=st.integers(0, 10_000))
def test_mse_symmetric_psnr_fixed_peak(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((5, 5)), rng.random((5, 5))
    assert metrics.mse(a, b) == metrics.mse(b, a)
    assert metrics.psnr(a, b, 1.0) == metrics.psnr(b, a, 1.0)


@given(values=st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_streaming_matches_two_pass(values):
    rs = metrics.RunningStats()
    for v in values:
        rs.push(v)
    m, s = metrics.mean_std(values)
    assert rs.mean == pytest.approx(m, abs=1e-10)
    assert rs.std == pytest.approx(s, abs=1e-10)


def test_records_and_csv(tmp_path):
    rng = np.random.default_rng(2)
    ref = rng.random((8, 8, 3))
    rec = ref + 0.01 * rng.random((8, 8, 3))
    recs = metrics.frame_records(rec, ref, "run")
    assert [r.frame for r in recs] == [0, 1, 2]
    for r in recs:
        assert r.psnr == pytest.approx(10 * np.log10(ref.max() ** 2 / r.mse))
        assert r.ssim <= 1
    metrics.write_records(tmp_path / "m.csv", recs + [metrics.volume_record(rec, ref, "run")])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "run_id,frame,mse,psnr_db,ssim" and len(lines) == 5
    with pytest.raises(ValueError):
        metrics.mean_std([])
