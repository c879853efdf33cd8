"""Per-scale cross-modal fusion by channel shuffling and channel-wise mixing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .nn import MLP, Conv2d, LayerNorm, Module, param
from .tensor import Tensor

MODES = ("full", "single_branch", "plain_conv")
BRANCH_DEPTHS = (1, 2, 3)


class BasicBlock(Module):
    """x + conv3x3(GELU(LN(conv3x3(x)))), LN over channels."""

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float32, zero_last: bool = False):
        self.conv1 = Conv2d(width, width, 3, rng, dtype)
        self.norm = LayerNorm(width, dtype, axis=1)
        self.conv2 = Conv2d(width, width, 3, rng, dtype, zero=zero_last)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.gelu(self.norm(self.conv1(x))))


class FiLMGate(Module):
    """Channel-wise affine modulation of both streams from a pooled joint descriptor.

    The descriptor is GAP(concat(ir, vis)); an MLP [2C -> C -> 4C] predicts
    (gamma_ir, beta_ir, gamma_vis, beta_vis). Gammas are ``1 + raw`` and the last
    layer starts at zero, so a fresh gate is the identity.
    """

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float32):
        self.width = width
        self.mlp = MLP(2 * width, width, 4 * width, rng, dtype, zero_last=True)

    def coefficients(self, ir: Tensor, vis: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        if ir.shape != vis.shape:
            raise DimensionError(f"modality shapes differ: ir {ir.shape} vs vis {vis.shape}")
        c = self.width
        phi = self.mlp(T.gap(T.concat([ir, vis], axis=1)))
        return 1.0 + phi[:, :c], phi[:, c:2 * c], 1.0 + phi[:, 2 * c:3 * c], phi[:, 3 * c:]

    def forward(self, ir: Tensor, vis: Tensor) -> tuple[Tensor, Tensor]:
        g_ir, b_ir, g_vis, b_vis = self.coefficients(ir, vis)
        b, c = ir.shape[:2]

        def modulate(x, g, beta):
            return x * T.reshape(g, (b, c, 1, 1)) + T.reshape(beta, (b, c, 1, 1))

        return modulate(ir, g_ir, b_ir), modulate(vis, g_vis, b_vis)


def shuffle_permutation(c: int) -> np.ndarray:
    """Indices into concat(a, b) giving [a0, b0, a1, b1, ...]."""
    perm = np.empty(2 * c, dtype=np.intp)
    perm[0::2] = np.arange(c)
    perm[1::2] = np.arange(c) + c
    return perm


def channel_shuffle(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"channel_shuffle operands differ: {a.shape} vs {b.shape}")
    return T.take(T.concat([a, b], axis=1), shuffle_permutation(a.shape[1]), axis=1)


def window_count(c_in: int, k: int, stride: int, padding: int) -> int:
    return (c_in + 2 * padding - k) // stride + 1


@dataclass(frozen=True)
class CwmcConfig:
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    groups: int = 4

    def windows(self, c_in: int) -> int:
        n = window_count(c_in, self.kernel, self.stride, self.padding)
        if n < 1:
            raise ConfigurationError(
                f"channel window {self.kernel} (stride {self.stride}, padding {self.padding}) "
                f"leaves no windows over {c_in} channels")
        return n


class ChannelMixConv(Module):
    """Sliding-window 1D convolution along channels, folded and projected by two 1x1 convs.

    The channel kernels are shared across spatial locations. Window responses
    [B, G, N_win, H, W] are folded kernel-major into G*N_win channels, compressed
    to half that width, then projected to ``c_out``.
    """

    def __init__(self, c_in: int, c_out: int, cfg: CwmcConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.c_in = c_in
        self.n_win = cfg.windows(c_in)
        self.kernels = param(rng.normal(0.0, 1.0 / np.sqrt(cfg.kernel), (cfg.groups, cfg.kernel)), dtype)
        self.kernel_bias = param(np.zeros(cfg.groups), dtype)
        folded = cfg.groups * self.n_win
        self.compress = Conv2d(folded, max(1, folded // 2), 1, rng, dtype)
        self.project = Conv2d(max(1, folded // 2), c_out, 1, rng, dtype)
        self._index = (np.arange(self.n_win)[:, None] * cfg.stride + np.arange(cfg.kernel)[None, :])

    def windows(self, x: Tensor) -> Tensor:
        """Channel window responses, [B, G, N_win, H, W]."""
        b, c, h, w = x.shape
        if c != self.c_in:
            raise DimensionError(f"channel axis has {c}, expected {self.c_in}")
        p = self.cfg.padding
        if p:
            z = np.zeros((b, p, h, w), dtype=x.dtype)
            x = T.concat([Tensor(z), x, Tensor(z)], axis=1)
        win = T.reshape(T.take(x, self._index, axis=1), (b, self.n_win, self.cfg.kernel, h * w))
        y = T.matmul(self.kernels, win) + T.reshape(self.kernel_bias, (self.cfg.groups, 1))
        return T.reshape(T.transpose(y, (0, 2, 1, 3)), (b, self.cfg.groups, self.n_win, h, w))

    def forward(self, x: Tensor) -> Tensor:
        y = self.windows(x)
        b, g, n, h, w = y.shape
        return self.project(self.compress(T.reshape(y, (b, g * n, h, w))))


class MixUnit(Module):
    """One branch stage: channel mixing (or a 3x3 conv in plain mode) followed by GELU."""

    def __init__(self, width: int, cfg: CwmcConfig, plain: bool, rng, dtype):
        self.op = Conv2d(width, width, 3, rng, dtype) if plain else ChannelMixConv(width, width, cfg, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.gelu(self.op(x))


class Branch(Module):
    def __init__(self, depth: int, width: int, cfg: CwmcConfig, plain: bool, rng, dtype):
        self.units = [MixUnit(width, cfg, plain, rng, dtype) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for u in self.units:
            x = u(x)
        return x


class ShuffleChannelFusion(Module):
    """Fuse same-scale IR and VIS features into one C-channel map."""

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float32,
                 cfg: CwmcConfig = CwmcConfig(), mode: str = "full"):
        if mode not in MODES:
            raise ConfigurationError(f"unknown fusion mode {mode!r}; expected one of {MODES}")
        self.width, self.mode = width, mode
        plain = mode == "plain_conv"
        self.pre_ir = BasicBlock(width, rng, dtype)
        self.pre_vis = BasicBlock(width, rng, dtype)
        self.film = FiLMGate(width, rng, dtype)
        w2 = 2 * width
        self.embed = Conv2d(w2, w2, 3, rng, dtype) if plain else ChannelMixConv(w2, w2, cfg, rng, dtype)
        depths = BRANCH_DEPTHS[:1] if mode == "single_branch" else BRANCH_DEPTHS
        self.branches = [Branch(d, w2, cfg, plain, rng, dtype) for d in depths]
        self.project = Conv2d(w2 * len(depths), width, 1, rng, dtype)

    def embedding(self, f_ir: Tensor, f_vis: Tensor) -> Tensor:
        if f_ir.shape != f_vis.shape:
            raise DimensionError(f"modality shapes differ: ir {f_ir.shape} vs vis {f_vis.shape}")
        t_ir, t_vis = self.film(self.pre_ir(f_ir), self.pre_vis(f_vis))
        return self.embed(channel_shuffle(t_vis, t_ir))

    def branch_outputs(self, e: Tensor) -> list[Tensor]:
        return [br(e) for br in self.branches]

    def fuse(self, branch_outs: list[Tensor]) -> Tensor:
        return self.project(T.concat(branch_outs, axis=1))

    def forward(self, f_ir: Tensor, f_vis: Tensor) -> Tensor:
        return self.fuse(self.branch_outputs(self.embedding(f_ir, f_vis)))
