"""Reference-free fusion quality metrics on 8-bit grayscale images."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError

CSV_HEADER = "en,sf,ag,sd"


@dataclass(frozen=True)
class MetricReport:
    en: float
    sf: float
    ag: float
    sd: float

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> str:
        return f"{self.en:.6f},{self.sf:.6f},{self.ag:.6f},{self.sd:.6f}"


def to_uint8(img) -> np.ndarray:
    """Scale an image in [0, 1] to 8-bit gray levels (round half to even)."""
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _gray(img) -> np.ndarray:
    a = np.asarray(img)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise DimensionError(f"expected a single 2-D grayscale image, got shape {np.shape(img)}")
    return a.astype(np.float64)


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-bin gray-level histogram."""
    a = np.asarray(img)
    if a.size == 0:
        raise DimensionError("entropy of an empty image")
    hist = np.bincount(np.clip(np.asarray(a, dtype=np.int64).ravel(), 0, 255), minlength=256)
    p = hist[hist > 0] / a.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def _min_size(a: np.ndarray) -> None:
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise DimensionError(f"image must be at least 2x2, got {a.shape[0]}x{a.shape[1]}")


def spatial_frequency(img) -> float:
    """sqrt(RF^2 + CF^2); RF and CF are RMS horizontal and vertical first differences."""
    a = _gray(img)
    _min_size(a)
    rf2 = np.mean(np.diff(a, axis=1) ** 2)
    cf2 = np.mean(np.diff(a, axis=0) ** 2)
    return float(np.sqrt(rf2 + cf2))


def average_gradient(img) -> float:
    """Mean of sqrt((dx^2 + dy^2) / 2) over pixels with both forward differences defined."""
    a = _gray(img)
    _min_size(a)
    dx = a[:-1, 1:] - a[:-1, :-1]
    dy = a[1:, :-1] - a[:-1, :-1]
    return float(np.mean(np.sqrt((dx**2 + dy**2) / 2.0)))


def std_dev(img) -> float:
    a = _gray(img)
    _min_size(a)
    return float(np.std(a))


def evaluate(img) -> MetricReport:
    """All four metrics of an 8-bit image (pass ``to_uint8(x)`` for [0, 1] data)."""
    return MetricReport(entropy(img), spatial_frequency(img), average_gradient(img), std_dev(img))
