import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from skimage.metrics import structural_similarity

from mriprime.metrics import (
    MetricsRow,
    aggregate,
    betainc_regularized,
    full_metrics,
    mean_std,
    nmse,
    paired_t_test,
    psnr,
    read_rows,
    region_metrics,
    ssim,
    student_t_two_sided_p,
    write_rows,
)
from mriprime.phantoms import BBox


TAGS = dict(sample_id="s", pattern="p", R=4, family="A")


def brute_ssim(a, b, data_range, win=7, k1=0.01, k2=0.03):
    """Per-window loop with sample (N-1) statistics, valid windows only."""
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            pa = a[i:i + win, j:j + win].ravel()
            pb = b[i:i + win, j:j + win].ravel()
            ma, mb = pa.mean(), pb.mean()
            va, vb = pa.var(ddof=1), pb.var(ddof=1)
            cov = np.sum((pa - ma) * (pb - mb)) / (pa.size - 1)
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals)), len(vals)


# ---------------------------------------------------------------------------
# NMSE / PSNR
# ---------------------------------------------------------------------------


def test_nmse_examples_and_scale_law():
    x = np.random.default_rng(0).random((8, 8)) + 0.1
    assert nmse(x, x) == 0.0
    assert nmse(np.zeros_like(x), x) == 1.0
    assert nmse(2 * x, x) == pytest.approx(1.0, abs=1e-15)
    for a in (0.0, 0.5, 1.0, 2.0):
        assert nmse(a * x, x) == pytest.approx((a - 1) ** 2, abs=1e-15)
    with pytest.raises(ValueError):
        nmse(x, np.zeros_like(x))


def test_psnr_examples():
    x = np.random.default_rng(1).random((16, 16))
    x[0, 0] = 1.0
    assert psnr(x, x) == 100.0
    assert abs(psnr(x + 0.1, x) - 20.0) < 1e-9
    rng = np.random.default_rng(2)
    e = rng.standard_normal(x.shape) * 0.05
    assert abs(psnr(x + e / 2, x) - psnr(x + e, x) - 20 * math.log10(2)) < 1e-9
    with pytest.raises(ValueError):
        psnr(x, np.zeros_like(x))


def test_psnr_decreases_with_noise():
    x = np.random.default_rng(3).random((32, 32))
    for seed in range(10):
        e = np.random.default_rng(seed).standard_normal(x.shape)
        vals = [psnr(x + s * e, x) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------


def test_ssim_self_and_constants():
    x = np.random.default_rng(4).random((12, 12))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    c, d = 0.6, 0.25
    a = np.full((9, 9), c)
    b = np.full((9, 9), c + d)
    c1 = (0.01 * c) ** 2  # data range = reference max = c
    assert ssim(b, a) == pytest.approx((2 * c * (c + d) + c1) / (c * c + (c + d) ** 2 + c1), rel=1e-12)


def test_ssim_matches_brute_force_50_pairs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.random((16, 16))
        y = np.clip(x + 0.2 * rng.standard_normal((16, 16)), 0, None)
        ref, _ = brute_ssim(y, x, float(x.max()))
        assert abs(ssim(y, x) - ref) < 1e-6


def test_ssim_matches_skimage():
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = rng.random((24, 20))
        y = x + 0.1 * rng.standard_normal(x.shape)
        ref = structural_similarity(y, x, win_size=7, data_range=float(x.max()), gaussian_weights=False,
                                    use_sample_covariance=True, K1=0.01, K2=0.03)
        assert abs(ssim(y, x) - ref) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 10, 11))
    # symmetry holds for a shared data range; the default per-reference range differs per argument order
    assert abs(ssim(a, b, data_range=1.0) - ssim(b, a, data_range=1.0)) < 1e-12
    assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.ones((6, 8)), np.ones((6, 8)))


# ---------------------------------------------------------------------------
# region metrics
# ---------------------------------------------------------------------------


def test_region_full_box_equals_global():
    rng = np.random.default_rng(7)
    x = rng.random((16, 16))
    y = x + 0.05 * rng.standard_normal(x.shape)
    r = region_metrics(y, x, BBox(0, 0, 16, 16), **TAGS)
    g = full_metrics(y, x, **TAGS)
    assert (r.nmse, r.psnr, r.ssim) == (g.nmse, g.psnr, g.ssim)


def test_region_locality_and_window_count():
    rng = np.random.default_rng(8)
    x = rng.random((20, 20)) + 0.1
    y = x.copy()
    y[:, 15:] += 0.3  # error only outside the box
    box = BBox(2, 3, 10, 11)
    r = region_metrics(y, x, box, **TAGS)
    assert r.nmse == 0.0
    y2 = x + 0.1 * rng.standard_normal(x.shape)
    ref, count = brute_ssim(box.crop(y2), box.crop(x), float(x.max()))
    assert count == 4
    assert abs(region_metrics(y2, x, box, **TAGS).ssim - ref) < 1e-12


def test_region_errors():
    x = np.ones((16, 16))
    with pytest.raises(ValueError):
        region_metrics(x, x, BBox(0, 0, 7, 8), **TAGS)
    with pytest.raises(ValueError):
        region_metrics(x, x, BBox(10, 10, 20, 20), **TAGS)


# ---------------------------------------------------------------------------
# t-test
# ---------------------------------------------------------------------------


def test_ttest_identical():
    a = [1.0, 2.5, 3.0]
    r = paired_t_test(a, a)
    assert (r.t_statistic, r.p_value, r.degrees_of_freedom, r.n) == (0.0, 1.0, 2, 3)


def test_ttest_worked_example():
    r = paired_t_test([1, 2, 3], [0, 0, 0])
    assert r.t_statistic == pytest.approx(2 * math.sqrt(3), rel=1e-12)
    assert r.degrees_of_freedom == 2
    assert abs(r.p_value - 0.0742) < 1e-3
    # closed form for df = 2: p = 1 - |t| / sqrt(t^2 + 2)
    t = 2 * math.sqrt(3)
    assert r.p_value == pytest.approx(1 - t / math.sqrt(t * t + 2), rel=1e-10)


def test_ttest_matches_scipy():
    rng = np.random.default_rng(9)
    for n in (2, 3, 5, 20, 200):
        a = rng.standard_normal(n)
        b = a + rng.standard_normal(n) * 0.5 + 0.1
        ours = paired_t_test(a, b)
        ref = stats.ttest_rel(a, b)
        assert ours.t_statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)


def test_betainc_against_scipy():
    from scipy.special import betainc

    for a, b, x in itertools.product([0.5, 1.0, 2.5, 50.0], [0.5, 3.0, 20.0], [1e-6, 0.1, 0.5, 0.9, 0.999]):
        assert betainc_regularized(a, b, x) == pytest.approx(betainc(a, b, x), rel=1e-10, abs=1e-15)


def test_p_monotone_in_offset_and_t():
    rng = np.random.default_rng(10)
    a0 = rng.standard_normal(12)
    b = rng.standard_normal(12)
    ps = [paired_t_test(a0 + off, b).p_value for off in np.linspace(abs(a0 - b).max() * 0.0 + (b - a0).mean(), 3, 12)]
    assert all(x >= y for x, y in zip(ps, ps[1:]))
    pts = [student_t_two_sided_p(t, 7) for t in np.linspace(0, 10, 50)]
    assert all(x > y for x, y in zip(pts, pts[1:]))


def test_permutation_agreement():
    """Exact sign-flip permutation p-value vs the t-test on small normal samples."""
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = 12
        d = rng.standard_normal(n) + 0.5
        t_obs = abs(d.mean() / (d.std(ddof=1) / math.sqrt(n)))
        flips = np.array(list(itertools.product([-1.0, 1.0], repeat=n)))
        dd = flips * d
        tt = np.abs(dd.mean(1) / (dd.std(1, ddof=1) / math.sqrt(n)))
        p_perm = float(np.mean(tt >= t_obs - 1e-12))
        p_t = paired_t_test(d, np.zeros(n)).p_value
        assert abs(p_perm - p_t) < 0.03


def test_ttest_errors():
    with pytest.raises(ValueError):
        paired_t_test([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        paired_t_test([1], [0])
    with pytest.raises(ValueError):
        paired_t_test([2, 3, 4], [1, 2, 3])  # constant nonzero difference


# ---------------------------------------------------------------------------
# rows and aggregates
# ---------------------------------------------------------------------------


def test_csv_round_trip_and_auditable_aggregates(tmp_path):
    rng = np.random.default_rng(12)
    rows = [MetricsRow(f"s{i}", "random", 4, "A", "full" if i % 3 else "lesion",
                       float(rng.random()), float(rng.random() * 40), float(rng.random()), m, "sc")
            for i in range(30) for m in ("Mask", "Fixed")]
    write_rows(tmp_path / "r.csv", rows)
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.startswith("sample_id,pattern,R,family,region,nmse,psnr,ssim")
    back = read_rows(tmp_path / "r.csv")
    assert back == rows
    agg = aggregate(back)
    full_mask = [r.psnr for r in rows if r.model == "Mask" and r.region == "full"]
    assert agg["Mask"]["full"]["psnr"]["mean"] == float(np.mean(full_mask))
    assert agg["Mask"]["full"]["psnr"]["std"] == float(np.std(full_mask))
    assert agg["Mask"]["pathology"]["psnr"]["n"] == 10


def test_mean_std_empty():
    assert mean_std([])["n"] == 0
