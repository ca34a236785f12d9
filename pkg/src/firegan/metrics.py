"""Fusion quality metrics: entropy, correlation, PSNR and SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import MODEL_SIGNED, ImageTensor, from_model_domain

PER_CHANNEL = "per_channel"
LUMA = "luma"

# Row order and labels of the comparison tables
ROWS = (
    ("en", "EN"),
    ("cc_ir", "CC IR-fused"),
    ("cc_rgb", "CC RGB-fused"),
    ("psnr_ir", "PSNR IR-fused"),
    ("psnr_rgb", "PSNR RGB-fused"),
    ("ssim_ir", "SSIM IR-fused"),
    ("ssim_rgb", "SSIM RGB-fused"),
)
METRIC_FIELDS = tuple(name for name, _ in ROWS)


class MetricError(ValueError):
    pass


class UndefinedCorrelationError(MetricError):
    pass


@dataclass(frozen=True)
class MetricParams:
    entropy_levels: int = 256
    psnr_max: float = 255.0
    ssim_alpha: float = 1.0
    ssim_beta: float = 1.0
    ssim_gamma: float = 1.0
    # None -> (0.01 MAX)^2, (0.03 MAX)^2 and c2 / 2
    ssim_c1: float | None = None
    ssim_c2: float | None = None
    ssim_c3: float | None = None
    ssim_window: int = 11
    channel_mode: str = PER_CHANNEL

    def __post_init__(self):
        if self.entropy_levels < 2:
            raise ValueError("entropy_levels must be >= 2")
        if not self.psnr_max > 0:
            raise ValueError("psnr_max must be positive")
        for name in ("ssim_c1", "ssim_c2", "ssim_c3"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 3")
        if self.channel_mode not in (PER_CHANNEL, LUMA):
            raise ValueError(f"channel_mode must be {PER_CHANNEL!r} or {LUMA!r}")

    @property
    def c1(self) -> float:
        return self.ssim_c1 if self.ssim_c1 is not None else (0.01 * self.psnr_max) ** 2

    @property
    def c2(self) -> float:
        return self.ssim_c2 if self.ssim_c2 is not None else (0.03 * self.psnr_max) ** 2

    @property
    def c3(self) -> float:
        return self.ssim_c3 if self.ssim_c3 is not None else self.c2 / 2


def _as_array(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        if img.domain == MODEL_SIGNED:
            img = from_model_domain(img)
        return img.values
    arr = np.asarray(img, dtype=np.float64)
    if arr.size == 0:
        raise MetricError("empty image")
    return arr


def _same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")


# --------------------------------------------------------------------- EN


def entropy(img, p: MetricParams = MetricParams()) -> float:
    """Shannon entropy in bits of the L-level histogram over all elements."""
    arr = _as_array(img)
    if arr.size == 0:
        raise MetricError("empty image")
    levels = p.entropy_levels
    bins = np.rint(np.clip(arr, 0, p.psnr_max) * ((levels - 1) / p.psnr_max)).astype(np.int64)
    counts = np.bincount(bins.ravel(), minlength=levels)
    probs = counts[counts > 0] / arr.size
    return float(max(0.0, -(probs * np.log2(probs)).sum()))


# --------------------------------------------------------------------- CC


def correlation(x, y) -> float:
    a = _as_array(x).ravel()
    b = _as_array(y).ravel()
    _same_shape(a, b)
    da = a - a.mean()
    db = b - b.mean()
    va = (da * da).mean()
    vb = (db * db).mean()
    if va <= 0 or vb <= 0:
        raise UndefinedCorrelationError("correlation undefined for a zero-variance input")
    r = (da * db).mean() / math.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


# ------------------------------------------------------------------- PSNR


def psnr(ref, test, p: MetricParams = MetricParams()) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are equal."""
    a, b = _as_array(ref), _as_array(test)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(p.psnr_max**2 / mse)


# ------------------------------------------------------------------- SSIM


def _box_mean(a: np.ndarray, k: int) -> np.ndarray:
    """Mean over every fully contained k x k window (valid mode)."""
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    total = s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]
    return total / (k * k)


def _ssim_map(x: np.ndarray, y: np.ndarray, p: MetricParams) -> np.ndarray:
    k = p.ssim_window
    ux, uy = _box_mean(x, k), _box_mean(y, k)
    vx = np.maximum(_box_mean(x * x, k) - ux * ux, 0.0)
    vy = np.maximum(_box_mean(y * y, k) - uy * uy, 0.0)
    cov = _box_mean(x * y, k) - ux * uy
    sx, sy = np.sqrt(vx), np.sqrt(vy)
    c1, c2, c3 = p.c1, p.c2, p.c3
    lum = (2 * ux * uy + c1) / (ux * ux + uy * uy + c1)
    con = (2 * sx * sy + c2) / (vx + vy + c2)
    struct = (cov + c3) / (sx * sy + c3)
    out = np.ones_like(lum)
    for term, e in ((lum, p.ssim_alpha), (con, p.ssim_beta), (struct, p.ssim_gamma)):
        out = out * (term if e == 1 else np.power(term, e))
    return out


def ssim(x, y, p: MetricParams = MetricParams()) -> float:
    """Mean three-factor SSIM over uniform sliding windows, averaged over channels."""
    a, b = _as_array(x), _as_array(y)
    _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if p.ssim_window > a.shape[0] or p.ssim_window > a.shape[1]:
        raise MetricError(f"SSIM window {p.ssim_window} larger than image {a.shape[0]}x{a.shape[1]}")
    return float(np.mean([_ssim_map(a[:, :, c], b[:, :, c], p).mean() for c in range(a.shape[2])]))


# ---------------------------------------------------------------- records


@dataclass
class MetricRecord:
    en: float | None = None
    cc_ir: float | None = None
    cc_rgb: float | None = None
    psnr_ir: float | None = None
    psnr_rgb: float | None = None
    ssim_ir: float | None = None
    ssim_rgb: float | None = None
    errors: dict[str, str] = field(default_factory=dict)

    def values(self) -> list[float | None]:
        return [getattr(self, name) for name in METRIC_FIELDS]


def _luma(arr: np.ndarray) -> np.ndarray:
    if arr.shape[2] == 1:
        return arr
    return (arr @ np.array([0.299, 0.587, 0.114]))[:, :, None]


def _channels(arr: np.ndarray, p: MetricParams) -> np.ndarray:
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if p.channel_mode == LUMA:
        return _luma(arr)
    return np.repeat(arr, 3, axis=2) if arr.shape[2] == 1 else arr


def _per_channel(fn, ref: np.ndarray, test: np.ndarray) -> float:
    return float(np.mean([fn(ref[:, :, c], test[:, :, c]) for c in range(ref.shape[2])]))


def compare(ref, test, p: MetricParams = MetricParams()) -> dict[str, float | None]:
    """CC, PSNR and SSIM of ``test`` against ``ref``; failed cells map to None."""
    r, t = _channels(_as_array(ref), p), _channels(_as_array(test), p)
    _same_shape(r, t)
    out: dict[str, float | None] = {}
    errors: dict[str, str] = {}
    for name, fn in (
        ("cc", correlation),
        ("psnr", lambda a, b: psnr(a, b, p)),
        ("ssim", lambda a, b: ssim(a, b, p)),
    ):
        try:
            out[name] = _per_channel(fn, r, t)
        except MetricError as exc:
            out[name] = None
            errors[name] = str(exc)
    out["errors"] = errors
    return out


def evaluate_triple(visible, real_ir, fused, p: MetricParams = MetricParams()) -> MetricRecord:
    rec = MetricRecord()
    fz = _as_array(fused)
    try:
        rec.en = entropy(_channels(fz, p), p)
    except MetricError as exc:
        rec.errors["en"] = str(exc)
    for suffix, ref in (("ir", real_ir), ("rgb", visible)):
        res = compare(ref, fz, p)
        for name in ("cc", "psnr", "ssim"):
            setattr(rec, f"{name}_{suffix}", res[name])
            if name in res["errors"]:
                rec.errors[f"{name}_{suffix}"] = res["errors"][name]
    return rec


def evaluate_generated(real_ir, generated_ir, p: MetricParams = MetricParams()) -> dict[str, float | None]:
    """Four-metric row for a synthetic IR image against the real one."""
    gen = _as_array(generated_ir)
    res = compare(real_ir, gen, p)
    try:
        en = entropy(_channels(gen, p), p)
    except MetricError as exc:
        en = None
        res["errors"]["en"] = str(exc)
    return {"en": en, "cc": res["cc"], "psnr": res["psnr"], "ssim": res["ssim"], "errors": res["errors"]}


def mean_ignoring_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if any(math.isinf(v) for v in vals):
        # fsum rejects infinities; the +inf sentinel propagates
        return math.inf
    return math.fsum(vals) / len(vals)


def aggregate(records: list[MetricRecord]) -> MetricRecord:
    """Unweighted arithmetic mean of each metric over the records that have it."""
    out = MetricRecord()
    for name in METRIC_FIELDS:
        setattr(out, name, mean_ignoring_none(getattr(r, name) for r in records))
    return out


def _quantile(sorted_vals: list[float], q: float) -> float:
    pos = (len(sorted_vals) - 1) * q
    lo, hi = math.floor(pos), math.ceil(pos)
    a, b = sorted_vals[lo], sorted_vals[hi]
    if lo == hi or a == b:
        return a
    return a + (b - a) * (pos - lo)


def five_number_summary(values) -> tuple[float, float, float, float, float] | None:
    vals = sorted(v for v in values if v is not None)
    if not vals:
        return None
    return tuple(_quantile(vals, q) for q in (0.0, 0.25, 0.5, 0.75, 1.0))
