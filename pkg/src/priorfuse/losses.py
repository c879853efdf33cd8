"""Unsupervised fusion objective: intensity, gradient, SSIM and residual-structure terms.

All terms average over every element of the batch. Source images ``I`` (infrared)
and ``V`` (visible) are constants; gradients flow to the fused image ``F`` only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .config import LossWeights
from .errors import DimensionError
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
WEIGHT_EPS = 1e-8


def _check(*xs: Tensor) -> None:
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise DimensionError(f"image shapes differ: {shape} vs {x.shape}")
    if len(shape) != 4:
        raise DimensionError(f"images must be rank 4 (B, C, H, W), got shape {shape}")


def _const(x, like: Tensor | None = None) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return Tensor(data if like is None else data.astype(like.dtype, copy=False))


def intensity_loss(F: Tensor, I, V) -> Tensor:
    """Mean |F - max(I, V)|."""
    I, V = _const(I, F), _const(V, F)
    _check(F, I, V)
    return T.mean(T.tabs(F - np.maximum(I.data, V.data)))


def gradient_loss(F: Tensor, I, V) -> Tensor:
    """Mean |grad F - max(grad I, grad V)| with Sobel magnitudes."""
    I, V = _const(I, F), _const(V, F)
    _check(F, I, V)
    target = np.maximum(T.sobel_gradient(I).data, T.sobel_gradient(V).data)
    return T.mean(T.tabs(T.sobel_gradient(F) - target))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(x, y) -> Tensor:
    """Mean SSIM over valid 11x11 Gaussian windows (unit dynamic range)."""
    x, y = (v if isinstance(v, Tensor) else Tensor(np.asarray(v)) for v in (x, y))
    _check(x, y)
    b, c, h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    win = np.tile(gaussian_window()[None, None], (c, 1, 1, 1)).astype(x.dtype)

    def blur(t):
        return T.conv2d(t, win, groups=c)

    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x * mu_x
    syy = blur(y * y) - mu_y * mu_y
    sxy = blur(x * y) - mu_x * mu_y
    num = (mu_x * mu_y * 2.0 + SSIM_C1) * (sxy * 2.0 + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return T.mean(num / den)


def gradient_weights(I, V, eps: float = WEIGHT_EPS) -> tuple[float, float]:
    """Convex weights from the global mean Sobel magnitude of each source."""
    gi = float(T.sobel_gradient(_const(I)).data.mean())
    gv = float(T.sobel_gradient(_const(V)).data.mean())
    w_i = (gi + eps) / (gi + gv + 2 * eps)
    return w_i, 1.0 - w_i


def ssim_loss(F: Tensor, I, V) -> tuple[Tensor, float, float]:
    I, V = _const(I, F), _const(V, F)
    _check(F, I, V)
    w_i, w_v = gradient_weights(I, V)
    return 1.0 - (ssim(I, F) * w_i + ssim(V, F) * w_v), w_i, w_v


def struct_loss(F: Tensor, I, V) -> Tensor:
    """Residual structure term: grad|F - V| should match grad I, and grad|F - I| grad V."""
    I, V = _const(I, F), _const(V, F)
    _check(F, I, V)
    r_v = T.tabs(F - V.data)
    r_i = T.tabs(F - I.data)
    t1 = T.mean(T.tabs(T.sobel_gradient(r_v) - T.sobel_gradient(I).data))
    t2 = T.mean(T.tabs(T.sobel_gradient(r_i) - T.sobel_gradient(V).data))
    return t1 + t2


@dataclass
class LossReport:
    intensity: float
    gradient: float
    ssim: float
    struct: float
    total: float
    omega_ir: float
    omega_vis: float
    weights: LossWeights
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("intensity", "gradient", "ssim", "struct", "total",
                                           "omega_ir", "omega_vis")}
        d["weights"] = asdict(self.weights)
        return d


def total_loss(F: Tensor, I, V, weights: LossWeights = LossWeights()) -> LossReport:
    """Weighted sum of the four terms; ``report.tensor`` is the differentiable total."""
    l_int = intensity_loss(F, I, V)
    l_grad = gradient_loss(F, I, V)
    l_ssim, w_i, w_v = ssim_loss(F, I, V)
    l_struct = struct_loss(F, I, V)
    total = (l_int * weights.intensity + l_grad * weights.gradient
             + l_ssim * weights.ssim + l_struct * weights.struct)
    terms = (l_int.item(), l_grad.item(), l_ssim.item(), l_struct.item())
    value = (weights.intensity * terms[0] + weights.gradient * terms[1]
             + weights.ssim * terms[2] + weights.struct * terms[3])
    return LossReport(*terms, value, w_i, w_v, weights, total)
