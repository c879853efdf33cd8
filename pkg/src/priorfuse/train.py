"""Toy-scale training: Adam with linear warm-up and cosine decay on the fusion loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .config import FusionConfig
from .data import as_arrays
from .errors import ConfigurationError, InputError
from .losses import total_loss
from .model import FusionNet
from .tensor import Tensor

SMOOTHING = 5


class Adam:
    """Adaptive moment estimation with bias correction; skips frozen parameters."""

    def __init__(self, params, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def lr_at(step: int, total: int, base: float, warmup_frac: float = 0.1) -> float:
    """Learning rate for 0-based ``step``: linear warm-up, then cosine decay to zero."""
    warm = max(1, round(warmup_frac * total)) if warmup_frac > 0 else 0
    if step < warm:
        return base * (step + 1) / warm
    span = max(1, total - warm)
    return base * 0.5 * (1.0 + math.cos(math.pi * (step - warm) / span))


def smooth(curve, window: int = SMOOTHING) -> np.ndarray:
    """Trailing moving average (valid part only)."""
    c = np.asarray(curve, dtype=np.float64)
    if len(c) < window:
        return np.array([c.mean()]) if len(c) else c
    return np.convolve(c, np.ones(window) / window, mode="valid")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float]
    model: FusionNet

    @property
    def smoothed(self) -> np.ndarray:
        return smooth(self.losses)


def _check_geometry(ir: np.ndarray, cfg: FusionConfig) -> None:
    h, w = ir.shape[2:]
    if h != w or h < 32 or h & (h - 1):
        raise InputError(f"training images must be square with a power-of-two side >= 32, got {h}x{w}")
    if h % (2 ** (cfg.scales - 1)):
        raise ConfigurationError(f"side {h} is too small for {cfg.scales} scales")


def train_toy(dataset, cfg: FusionConfig = FusionConfig(),
              log: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Train a fresh FusionNet for ``cfg.steps`` steps on ``dataset``.

    Batches are drawn without replacement per epoch from a generator seeded by
    ``cfg.seed``, separate from the initialisation stream, so runs are bit-for-bit
    repeatable. ``log(step, lr, loss)`` is called after every step.
    """
    ir, vis = as_arrays(dataset)
    _check_geometry(ir, cfg)
    dt = cfg.np_dtype
    ir, vis = ir.astype(dt), vis.astype(dt)
    model = FusionNet(cfg, seed=cfg.seed)
    opt = Adam(model.parameters(), cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    weights = cfg.loss_weights
    n = len(ir)
    bs = min(cfg.batch_size, n)
    order: list[int] = []
    losses: list[float] = []
    for step in range(cfg.steps):
        if len(order) < bs:
            order += list(rng.permutation(n))
        idx, order = np.array(order[:bs]), order[bs:]
        I, V = Tensor(ir[idx]), Tensor(vis[idx])
        model.zero_grad()
        report = total_loss(model(I, V), I, V, weights)
        report.tensor.backward()
        lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup_frac)
        opt.step(lr)
        losses.append(report.total)
        if log is not None:
            log(step, lr, report.total)
    state = {k: v.copy() for k, v in model.state_dict().items()}
    ckpt = Checkpoint(cfg, state, cfg.steps, cfg.seed, _json_state(rng))
    return TrainResult(ckpt, losses, model)


def _json_state(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {"bit_generator": st["bit_generator"], "state": {k: str(v) for k, v in st["state"].items()},
            "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def model_from_checkpoint(ckpt: Checkpoint, cfg: FusionConfig | None = None) -> FusionNet:
    """Build a network for ``cfg`` (default: the checkpoint's own) and load its parameters."""
    cfg = ckpt.config if cfg is None else cfg
    model = FusionNet(cfg)
    ckpt.check_compatible(cfg, {k: v.shape for k, v in model.named_parameters()})
    model.load_state_dict(ckpt.params)
    return model
