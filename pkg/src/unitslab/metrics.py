"""Image quality metrics on magnitude images: MSE, PSNR and windowed SSIM."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.signal import correlate2d

SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: Optional[float] = None) -> float:
    """PSNR in dB with ``b`` as the reference; identical images give ``inf``."""
    err = mse(a, b)
    if peak is None:
        peak = float(np.max(np.abs(b)))
    if err == 0:
        return math.inf
    if peak <= 0:
        raise ValueError("peak must be positive")
    return float(10.0 * np.log10(peak**2 / err))


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_map(a: np.ndarray, b: np.ndarray, w: np.ndarray, c1: float, c2: float) -> np.ndarray:
    f = lambda z: correlate2d(z, w, mode="valid")  # noqa: E731
    mu_a, mu_b = f(a), f(b)
    s_aa = f(a * a) - mu_a * mu_a
    s_bb = f(b * b) - mu_b * mu_b
    s_ab = f(a * b) - mu_a * mu_b
    num = (2 * (mu_a * mu_b) + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, window: int = 7, sigma: float = 1.5,
         k1: float = SSIM_K1, k2: float = SSIM_K2,
         data_range: Optional[float] = None) -> float:
    """Mean SSIM over valid windows of each 2D frame, averaged over frames.

    Accepts ``(nx, ny)`` or ``(nx, ny, nt)``. The dynamic range defaults to
    the joint range of both inputs (1 if both are constant).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape[:2]} smaller than {window}x{window} window")
    if data_range is None:
        data_range = float(max(a.max(), b.max()) - min(a.min(), b.min()))
        if data_range == 0:
            data_range = 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    w = gaussian_window(window, sigma)
    vals = [np.mean(_ssim_map(a[..., t], b[..., t], w, c1, c2)) for t in range(a.shape[2])]
    return float(np.mean(vals))


@dataclass(frozen=True)
class MetricRecord:
    run_id: str
    frame: int
    mse: float
    psnr: float
    ssim: float


def frame_records(recon_mag: np.ndarray, ref_mag: np.ndarray, run_id: str) -> List[MetricRecord]:
    """Per-frame metrics; peak and SSIM range are taken from the whole volume."""
    peak = float(np.max(np.abs(ref_mag)))
    rng = float(max(recon_mag.max(), ref_mag.max()) - min(recon_mag.min(), ref_mag.min())) or 1.0
    out = []
    for t in range(ref_mag.shape[2]):
        a, b = recon_mag[..., t], ref_mag[..., t]
        out.append(MetricRecord(run_id, t, mse(a, b), psnr(a, b, peak), ssim(a, b, data_range=rng)))
    return out


def volume_record(recon_mag: np.ndarray, ref_mag: np.ndarray, run_id: str) -> MetricRecord:
    """Whole-volume record (frame = -1), SSIM averaged over frames."""
    return MetricRecord(run_id, -1, mse(recon_mag, ref_mag), psnr(recon_mag, ref_mag),
                        ssim(recon_mag, ref_mag))


def write_records(path, records: Iterable[MetricRecord]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "frame", "mse", "psnr_db", "ssim"])
        for r in records:
            w.writerow([r.run_id, r.frame, repr(r.mse), repr(r.psnr), repr(r.ssim)])


class RunningStats:
    """Streaming mean and sample standard deviation (Welford)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else 0.0


def mean_std(values: Sequence[float]):
    """Two-pass mean and sample standard deviation."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    m = float(v.mean())
    s = float(np.sqrt(np.sum((v - m) ** 2) / (v.size - 1))) if v.size > 1 else 0.0
    return m, s
