"""Image quality metrics and the paired t-test.

Conventions: the data range ``L`` is the maximum of the reference image,
PSNR is capped at 100 dB, SSIM uses a 7x7 uniform window with sample
(co)variances and averages over valid (fully inside) windows only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .phantoms import MIN_BOX, BBox

PSNR_CAP = 100.0
SSIM_WIN = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(xhat, x):
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise ValueError(f"shape mismatch {xhat.shape} vs {x.shape}")
    return xhat, x


def nmse(xhat, x) -> float:
    xhat, x = _pair(xhat, x)
    ref = float(np.sum(x * x))
    if ref == 0:
        raise ValueError("nmse: reference image is all zero")
    return float(np.sum((xhat - x) ** 2) / ref)


def psnr(xhat, x, data_range: Optional[float] = None) -> float:
    xhat, x = _pair(xhat, x)
    peak = float(x.max()) if data_range is None else float(data_range)
    if peak <= 0:
        raise ValueError("psnr: zero data range")
    mse = float(np.mean((xhat - x) ** 2))
    if mse < (peak / 1e5) ** 2:
        return PSNR_CAP
    return float(20.0 * math.log10(peak / math.sqrt(mse)))


def ssim(xhat, x, data_range: Optional[float] = None) -> float:
    xhat, x = _pair(xhat, x)
    if x.ndim != 2 or min(x.shape) < SSIM_WIN:
        raise ValueError(f"ssim: images must be 2D and at least {SSIM_WIN}x{SSIM_WIN}, got {x.shape}")
    peak = float(x.max()) if data_range is None else float(data_range)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    np_ = SSIM_WIN * SSIM_WIN
    cov_norm = np_ / (np_ - 1.0)

    def wmean(a):
        return sliding_window_view(a, (SSIM_WIN, SSIM_WIN)).mean(axis=(-2, -1))

    ux, uy = wmean(xhat), wmean(x)
    vx = cov_norm * (wmean(xhat * xhat) - ux * ux)
    vy = cov_norm * (wmean(x * x) - uy * uy)
    vxy = cov_norm * (wmean(xhat * x) - ux * uy)
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return float(s.mean())


@dataclass
class MetricsRow:
    sample_id: str
    pattern: str
    R: int
    family: str
    region: str
    nmse: float
    psnr: float
    ssim: float
    model: str = ""
    scenario: str = ""


CSV_FIELDS = ["sample_id", "pattern", "R", "family", "region", "nmse", "psnr", "ssim"]
CSV_EXTRA = ["model", "scenario"]


def full_metrics(xhat, x, **tags) -> MetricsRow:
    return MetricsRow(region="full", nmse=nmse(xhat, x), psnr=psnr(xhat, x), ssim=ssim(xhat, x), **tags)


def region_metrics(xhat, x, box: BBox, **tags) -> MetricsRow:
    """Metrics on the box crop, with the data range of the whole reference."""
    xhat, x = _pair(xhat, x)
    h, w = x.shape
    if not box.inside(h, w):
        raise ValueError(f"box {box} outside {h}x{w} image")
    if box.width < MIN_BOX or box.height < MIN_BOX:
        raise ValueError(f"box {box} smaller than {MIN_BOX}x{MIN_BOX}")
    peak = float(x.max())
    a, b = box.crop(xhat), box.crop(x)
    return MetricsRow(
        region=box.label, nmse=nmse(a, b), psnr=psnr(a, b, data_range=peak), ssim=ssim(a, b, data_range=peak), **tags
    )


def write_rows(path, rows: Iterable[MetricsRow], extra: bool = True) -> None:
    fields = CSV_FIELDS + (CSV_EXTRA if extra else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            d = asdict(r)
            w.writerow([repr(d[f]) if isinstance(d[f], float) else d[f] for f in fields])


def read_rows(path) -> List[MetricsRow]:
    out = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            out.append(
                MetricsRow(
                    d["sample_id"], d["pattern"], int(d["R"]), d["family"], d["region"],
                    float(d["nmse"]), float(d["psnr"]), float(d["ssim"]),
                    d.get("model", ""), d.get("scenario", ""),
                )
            )
    return out


def mean_std(values: Sequence[float]) -> Dict[str, float]:
    """Mean and population std, summed in a fixed order."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def aggregate(rows: Iterable[MetricsRow]) -> Dict[str, Dict[str, Dict[str, Dict[str, float]]]]:
    """``{model: {region_kind: {metric: {mean, std, n}}}}``; region_kind is ``full`` or ``pathology``."""
    groups: Dict[tuple, List[MetricsRow]] = {}
    for r in rows:
        kind = "full" if r.region == "full" else "pathology"
        groups.setdefault((r.model, kind), []).append(r)
    out: Dict[str, dict] = {}
    for (model, kind), rs in sorted(groups.items()):
        out.setdefault(model, {})[kind] = {
            m: mean_std([getattr(r, m) for r in rs]) for m in ("nmse", "psnr", "ssim")
        }
    return out


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc: a and b must be positive")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired Student's t-test on ``a - b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired_t_test: need equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired_t_test: need at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, df, 1.0, n)
        raise ValueError("paired_t_test: differences are constant and nonzero (zero variance)")
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, df, student_t_two_sided_p(t, df), n)


def save_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
