"""Dual-branch multi-scale fusion network.

Encoder (per modality, per scale): embedding conv -> prior update -> local
branch (dynamic conv block or an ablation stand-in) plus global context ->
FFN with residual. Same-scale features of both modalities are fused, then the
decoder upsamples from the deepest fused map, injecting each shallower fused
map, and reconstructs a single-channel image through a sigmoid head.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import FusionConfig
from .dynconv import DynamicConvBlock
from .errors import ConfigurationError, DimensionError
from .fusion import BasicBlock, CwmcConfig, ShuffleChannelFusion
from .nn import MLP, Conv2d, LayerNorm, Module, Parameter
from .prior import PriorGenerator
from .tensor import Tensor


class GlobalExtractor(Module):
    """f + broadcast(MLP(GAP(f))): a pooled channel context added everywhere."""

    def __init__(self, width: int, rng, dtype):
        self.mlp = MLP(width, width, width, rng, dtype)

    def forward(self, f: Tensor) -> Tensor:
        b, c = f.shape[:2]
        return f + T.reshape(self.mlp(T.gap(f)), (b, c, 1, 1))


class FFN(Module):
    def __init__(self, width: int, rng, dtype, expansion: int = 2):
        self.fc1 = Conv2d(width, expansion * width, 1, rng, dtype)
        self.fc2 = Conv2d(expansion * width, width, 1, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class StaticLocalBlock(Module):
    """Prior-free local branch: f + GELU(LN(conv3x3(f)))."""

    def __init__(self, width: int, rng, dtype):
        self.conv = Conv2d(width, width, 3, rng, dtype)
        self.norm = LayerNorm(width, dtype, axis=1)

    def forward(self, f: Tensor, priors: Tensor | None = None) -> Tensor:
        return f + T.gelu(self.norm(self.conv(f)))


class ConcatPriorBlock(Module):
    """Static local branch with priors injected by channel concatenation.

    The token-averaged prior vector is broadcast over space, concatenated with
    the features and squeezed back by a 1x1 conv before the static block.
    """

    def __init__(self, width: int, rng, dtype):
        self.squeeze = Conv2d(2 * width, width, 1, rng, dtype)
        self.block = StaticLocalBlock(width, rng, dtype)

    def forward(self, f: Tensor, priors: Tensor) -> Tensor:
        b, c, h, w = f.shape
        pooled = T.reshape(T.mean(priors, axis=1), (b, c, 1, 1))
        tiled = pooled + np.zeros((1, 1, h, w), dtype=f.dtype)
        return self.block(self.squeeze(T.concat([f, tiled], axis=1)))


class EncoderScale(Module):
    def __init__(self, index: int, cfg: FusionConfig, rng, init_tokens: Parameter | None = None):
        dtype = cfg.np_dtype
        width = cfg.widths[index]
        c_prev = 1 if index == 0 else cfg.widths[index - 1]
        self.index = index
        self.width = width
        self.ddcb_mode = cfg.ddcb_mode
        self.apg_mode = cfg.apg_mode
        self.embed = Conv2d(c_prev, width, 3, rng, dtype, stride=1 if index == 0 else 2, padding=1)
        self.prior = PriorGenerator(
            width, cfg.num_priors, cfg.heads, rng, dtype,
            prev_width=None if index == 0 else c_prev,
            init_tokens=init_tokens, first=index == 0,
        )
        if cfg.ddcb_mode == "full":
            self.local = DynamicConvBlock(width, cfg.num_priors, rng, dtype, cfg.kernel_size,
                                          cfg.dyn_groups, cfg.temperature, cfg.top_k, cfg.blend)
        elif cfg.ddcb_mode == "restormer_stand_in":
            self.local = StaticLocalBlock(width, rng, dtype)
        else:
            self.local = ConcatPriorBlock(width, rng, dtype)
        self.global_ctx = GlobalExtractor(width, rng, dtype)
        self.ffn = FFN(width, rng, dtype)

    def forward(self, f_prev: Tensor, priors_prev: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (f_next, priors_next, f_emb)."""
        f_emb = self.embed(f_prev)
        priors = self.prior(f_emb, priors_prev, self.apg_mode)
        agg = self.local(f_emb, priors) + self.global_ctx(f_emb)
        return agg + self.ffn(agg), priors, f_emb


class Encoder(Module):
    def __init__(self, cfg: FusionConfig, rng, init_tokens: Parameter | None = None):
        self.scales = [EncoderScale(i, cfg, rng, init_tokens if i == 0 else None) for i in range(cfg.scales)]

    @property
    def init_tokens(self) -> Parameter:
        return self.scales[0].prior.init_tokens

    def forward(self, img: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        feats, priors = [], []
        f = img
        d = self.scales[0].prior.init_priors(img.shape[0])
        for s in self.scales:
            f, d, _ = s(f, d)
            feats.append(f)
            priors.append(d)
        return feats, priors


class SemanticInjection(Module):
    """Decoder-side injection: FiLM of decoder features from the pooled fused map, plus the map itself."""

    def __init__(self, width: int, rng, dtype):
        self.width = width
        self.mlp = MLP(width, width, 2 * width, rng, dtype, zero_last=True)

    def forward(self, d: Tensor, fused: Tensor) -> Tensor:
        b, c = d.shape[:2]
        phi = self.mlp(T.gap(fused))
        gamma = T.reshape(1.0 + phi[:, :c], (b, c, 1, 1))
        beta = T.reshape(phi[:, c:], (b, c, 1, 1))
        return d * gamma + beta + fused


class Decoder(Module):
    def __init__(self, cfg: FusionConfig, rng):
        dtype = cfg.np_dtype
        w = cfg.widths
        self.up = [Conv2d(w[i + 1], w[i], 3, rng, dtype) for i in range(cfg.scales - 1)]
        self.inject = [SemanticInjection(w[i], rng, dtype) for i in range(cfg.scales - 1)]
        self.refine = [BasicBlock(w[i], rng, dtype) for i in range(cfg.scales - 1)]
        self.head_block = BasicBlock(2 * w[0], rng, dtype)
        self.head_conv1 = Conv2d(2 * w[0], w[0], 3, rng, dtype)
        self.head_conv2 = Conv2d(w[0], 1, 3, rng, dtype)

    def forward(self, fused: list[Tensor]) -> Tensor:
        d = fused[-1]
        for i in reversed(range(len(fused) - 1)):
            d = self.up[i](T.upsample_nearest2x(d))
            d = self.refine[i](self.inject[i](d, fused[i]))
        x = self.head_block(T.concat([d, fused[0]], axis=1))
        return T.sigmoid(self.head_conv2(T.gelu(self.head_conv1(x))))


class FusionNet(Module):
    """End-to-end IR/VIS fusion network, parameterised by a FusionConfig."""

    def __init__(self, cfg: FusionConfig, seed: int | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.enc_ir = Encoder(cfg, rng)
        shared = self.enc_ir.init_tokens if cfg.d0_mode == "shared" else None
        self.enc_vis = Encoder(cfg, rng, init_tokens=shared)
        if cfg.d0_mode == "frozen":
            self.enc_ir.init_tokens.requires_grad = False
            self.enc_vis.init_tokens.requires_grad = False
        cw = CwmcConfig(cfg.cwmc_kernel, cfg.cwmc_stride, cfg.cwmc_padding, cfg.cwmc_groups)
        self.fuse = [ShuffleChannelFusion(w, rng, cfg.np_dtype, cw, cfg.scfb_mode) for w in cfg.widths]
        self.decoder = Decoder(cfg, rng)

    def check_inputs(self, ir: Tensor, vis: Tensor) -> None:
        if ir.shape != vis.shape:
            raise DimensionError(f"infrared {ir.shape} and visible {vis.shape} shapes differ")
        if ir.ndim != 4 or ir.shape[1] != 1:
            raise DimensionError(f"inputs must be [B, 1, H, W], got {ir.shape}")
        step = 2 ** (self.cfg.scales - 1)
        h, w = ir.shape[2:]
        if h % step or w % step:
            raise ConfigurationError(f"input size {h}x{w} is not divisible by {step} for {self.cfg.scales} scales")

    def encode(self, ir: Tensor, vis: Tensor):
        return self.enc_ir(ir), self.enc_vis(vis)

    def fused_features(self, ir_feats: list[Tensor], vis_feats: list[Tensor]) -> list[Tensor]:
        if len(ir_feats) != self.cfg.scales or len(vis_feats) != self.cfg.scales:
            raise ConfigurationError(
                f"expected {self.cfg.scales} scales, got {len(ir_feats)} infrared and {len(vis_feats)} visible")
        for i, (a, b) in enumerate(zip(ir_feats, vis_feats)):
            if a.shape != b.shape or a.shape[1] != self.cfg.widths[i]:
                raise ConfigurationError(
                    f"scale {i + 1}: infrared {a.shape} and visible {b.shape} do not match width {self.cfg.widths[i]}")
        return [m(a, b) for m, a, b in zip(self.fuse, ir_feats, vis_feats)]

    def fuse_and_decode(self, ir_feats: list[Tensor], vis_feats: list[Tensor]) -> Tensor:
        return self.decoder(self.fused_features(ir_feats, vis_feats))

    def forward(self, ir: Tensor, vis: Tensor) -> Tensor:
        self.check_inputs(ir, vis)
        (f_ir, _), (f_vis, _) = self.encode(ir, vis)
        return self.fuse_and_decode(f_ir, f_vis)

    def __call__(self, ir, vis) -> Tensor:
        dt = self.cfg.np_dtype
        ir = ir if isinstance(ir, Tensor) else Tensor(np.asarray(ir, dtype=dt))
        vis = vis if isinstance(vis, Tensor) else Tensor(np.asarray(vis, dtype=dt))
        return self.forward(ir, vis)
