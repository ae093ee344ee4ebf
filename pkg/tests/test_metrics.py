import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from dualcycle.errors import ParameterError
from dualcycle.forward import AffineMismatchSpec, gaussian_psf, register_views, simulate_views
from dualcycle.metrics import (
    average_by_method,
    evaluate,
    format_table,
    gaussian_window,
    metric_row,
    psnr,
    rows_to_json,
    ssim,
)
from dualcycle.phantom import PhantomSpec, generate_phantom
from dualcycle.volume import Volume3D


def ssim_oracle(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Local SSIM at every window position that fits, from the weighted-moment definition."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x**2 / (2 * sigma**2))
    w = np.einsum("i,j,k->ijk", g, g, g)
    w /= w.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    nz, ny, nx = a.shape
    for z in range(nz - size + 1):
        for y in range(ny - size + 1):
            for xx in range(nx - size + 1):
                pa = a[z:z + size, y:y + size, xx:xx + size]
                pb = b[z:z + size, y:y + size, xx:xx + size]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def pair(seed, shape=(16, 16, 16)):
    rng = np.random.default_rng(seed)
    a = rng.random(shape)
    b = np.clip(a + rng.normal(0, 0.1 + 0.05 * (seed % 3), shape), 0, 1)
    return a, b


class TestPSNR:
    def test_identical_is_inf(self):
        a = np.random.default_rng(0).random((4, 4, 4))
        assert psnr(a, a) == math.inf

    def test_constant_offset_20db(self):
        a = np.random.default_rng(1).random((8, 8, 8)) * 0.8
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_data_range_scales(self):
        a = np.zeros((4, 4, 4))
        assert psnr(a, a + 1.0, data_range=10.0) == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            psnr(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))

    def test_monotone_in_noise(self):
        a = np.random.default_rng(2).random((16, 16, 16))
        noise = np.random.default_rng(3).normal(size=a.shape)
        values = [psnr(a, a + s * noise) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_view_a_of_default_phantom_in_table_band(self):
        u = generate_phantom(PhantomSpec(seed=0))
        views = register_views(simulate_views(u, gaussian_psf(2.0, "z"), gaussian_psf(2.0, "x"),
                                              AffineMismatchSpec(seed=0)))
        # row "View A 29.32"; regenerated phantoms differ, so +-3 dB
        assert abs(psnr(u, views.view_a) - 29.32) <= 3.0


class TestSSIM:
    def test_identical(self):
        a = np.random.default_rng(0).random((12, 12, 12))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_is_negative(self):
        a = (np.random.default_rng(1).random((16, 16, 16)) > 0.5).astype(float)
        assert ssim(a, 1 - a) < 0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sliding_window_oracle(self, seed):
        a, b = pair(seed)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_matches_skimage_gaussian_mode(self):
        a, b = pair(4, (20, 18, 16))
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-7)

    def test_too_small(self):
        with pytest.raises(ParameterError):
            ssim(np.zeros((10, 16, 16)), np.zeros((10, 16, 16)))

    def test_window_taps(self):
        w = gaussian_window()
        assert len(w) == 11 and w.sum() == pytest.approx(1.0)
        assert w[6] / w[5] == pytest.approx(math.exp(-1 / (2 * 1.5**2)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric(self, seed):
        a, b = pair(seed, (12, 12, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounded(self, seed):
        a, b = pair(seed, (12, 12, 12))
        assert -1.0 <= ssim(a, b) <= 1.0


class TestReporting:
    def _rows(self):
        rows = []
        for vid, (p, s) in enumerate([(20.0, 0.5), (22.0, 0.7)]):
            rows.append(metric_row("view_a", vid, evaluate_stub(p, s)))
            rows.append(metric_row("joint_rl", vid, evaluate_stub(p + 3, s + 0.1)))
        return rows

    def test_average(self):
        avg = {r["method"]: r for r in average_by_method(self._rows())}
        assert avg["view_a"]["psnr_db"] == pytest.approx(21.0)
        assert avg["joint_rl"]["ssim"] == pytest.approx(0.7)
        assert avg["view_a"]["n"] == 2

    def test_table_order_and_format(self):
        lines = format_table(self._rows()).splitlines()
        assert lines[0].split() == ["Method", "PSNR", "[dB]", "SSIM"]
        assert lines[2].split() == ["view_a", "21.00", "0.600"]
        assert lines[3].split() == ["joint_rl", "24.00", "0.700"]

    def test_json_rows(self):
        doc = json.loads(rows_to_json(self._rows(), {"note": "x"}))
        assert doc["header"]["note"] == "x"
        assert "fully 3D" in doc["header"]["ssim"]
        assert set(doc["rows"][0]) == {"method", "volume_id", "psnr_db", "ssim"}

    def test_evaluate(self):
        a = Volume3D(np.random.default_rng(0).random((12, 12, 12)))
        rep = evaluate(a, a.with_data(a.data + 0.1))
        assert rep.psnr_db == pytest.approx(20.0)
        assert rep.ssim < 1.0


def evaluate_stub(p, s):
    from dualcycle.metrics import MetricReport

    return MetricReport(p, s)
