"""Registered verification suites: loop-oracle equivalence and finite-difference gradients.

Each check returns its worst-case error; a check passes when that error is below
its threshold (1e-3 for gradient checks, 1e-5 for oracle checks). Scopes:

- ``ops``: tensor primitives, channel mixing and dynamic convolution against loop oracles
  plus gradients of every primitive;
- ``blocks``: gradients of the prior update, dynamic conv block, fusion block and each loss term;
- ``end2end``: gradient of the total loss through the 2-scale toy network.

Gradient checks run in float64 with parameters jittered away from their
structured initial values (zero gates, zero FiLM layers), so no coordinate sits
on an exact zero that finite differences cannot resolve.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles as O
from . import tensor as T
from .config import toy_config
from .dynconv import DynamicConvBlock, ddc_forward, route_from_scores
from .fusion import ChannelMixConv, CwmcConfig, ShuffleChannelFusion
from .gradcheck import grad_check
from .losses import gradient_loss, intensity_loss, ssim_loss, struct_loss, total_loss
from .model import FusionNet
from .nn import Module
from .prior import PriorGenerator
from .tensor import Tensor

GRAD_THRESHOLD = 1e-3
ORACLE_THRESHOLD = 1e-5
SCOPES = ("ops", "blocks", "end2end")
F64 = np.float64


@dataclass(frozen=True)
class Check:
    name: str
    scope: str
    kind: str  # "grad" | "oracle"
    fn: Callable[[np.random.Generator], float]

    @property
    def threshold(self) -> float:
        return GRAD_THRESHOLD if self.kind == "grad" else ORACLE_THRESHOLD


@dataclass(frozen=True)
class CheckResult:
    name: str
    scope: str
    kind: str
    error: float
    threshold: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.scope:<8} {self.name:<28} error={self.error:.3e} threshold={self.threshold:.0e}"


REGISTRY: list[Check] = []


def register(scope: str, kind: str, name: str | None = None):
    def wrap(fn):
        REGISTRY.append(Check(name or fn.__name__, scope, kind, fn))
        return fn
    return wrap


def jitter_parameters(module: Module, rng: np.random.Generator, scale: float = 0.05) -> None:
    for p in module.parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape)


def _max_diff(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=F64) - np.asarray(b, dtype=F64))))


def _probe(shape, rng) -> np.ndarray:
    return rng.standard_normal(shape)


def _scalar(y: Tensor, w: np.ndarray) -> Tensor:
    return T.tsum(y * w)


def _param_coords(p: Tensor, rng, n: int = 6) -> np.ndarray:
    return rng.choice(p.data.size, size=min(n, p.data.size), replace=False)


def _check_params(module: Module, loss: Callable[[], Tensor], rng, per_tensor: int = 4,
                  names: tuple[str, ...] | None = None, h: float = 1e-5) -> float:
    worst = 0.0
    for name, p in module.named_parameters():
        if names is not None and not any(name.startswith(n) for n in names):
            continue
        if not p.requires_grad:
            continue
        worst = max(worst, grad_check(lambda _: loss(), p, h=h, coords=_param_coords(p, rng, per_tensor)))
    return worst


# ops: oracle equivalence


@register("ops", "oracle")
def conv2d_oracle(rng) -> float:
    worst = 0.0
    for _ in range(25):
        groups = int(rng.choice([1, 2]))
        c_in, c_out = 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3))
        k = int(rng.choice([1, 3]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x = rng.standard_normal((int(rng.integers(1, 3)), c_in, 5, 6))
        w = rng.standard_normal((c_out, c_in // groups, k, k))
        b = rng.standard_normal(c_out)
        got = T.conv2d(Tensor(x), w, b, stride, pad, groups).data
        worst = max(worst, _max_diff(got, O.loop_conv2d(x, w, b, stride, pad, groups)))
    return worst


@register("ops", "oracle")
def matmul_oracle(rng) -> float:
    worst = 0.0
    for _ in range(25):
        b, n, k, m = (int(v) for v in rng.integers(1, 6, 4))
        x, y = rng.standard_normal((b, n, k)), rng.standard_normal((b, k, m))
        worst = max(worst, _max_diff(T.matmul(Tensor(x), Tensor(y)).data, O.loop_matmul(x, y)))
    return worst


@register("ops", "oracle")
def softmax_layernorm_gelu_oracle(rng) -> float:
    worst = 0.0
    for _ in range(10):
        v = rng.standard_normal(7) * 3
        worst = max(worst, _max_diff(T.softmax(Tensor(v)).data, O.loop_softmax(v)))
        g, s = rng.standard_normal(7), rng.standard_normal(7)
        worst = max(worst, _max_diff(T.layer_norm(Tensor(v), Tensor(g), Tensor(s), 1e-5).data,
                                     O.loop_layer_norm(v, g, s, 1e-5)))
        worst = max(worst, _max_diff(T.gelu(Tensor(v)).data, [O.loop_gelu(t) for t in v]))
    return worst


@register("ops", "oracle")
def cwmc_oracle(rng) -> float:
    worst = 0.0
    for _ in range(10):
        c = int(rng.choice([4, 6, 8]))
        cfg = CwmcConfig(kernel=int(rng.choice([2, 3, 4])), stride=int(rng.integers(1, 3)),
                         padding=int(rng.integers(0, 2)), groups=int(rng.integers(1, 4)))
        m = ChannelMixConv(c, c, cfg, rng, F64)
        jitter_parameters(m, rng)
        x = rng.standard_normal((1, c, 3, 4))
        ref = O.loop_cwmc(x, m.kernels.data, m.kernel_bias.data, cfg.kernel, cfg.stride, cfg.padding,
                          m.compress.weight.data[:, :, 0, 0], m.compress.bias.data,
                          m.project.weight.data[:, :, 0, 0], m.project.bias.data)
        worst = max(worst, _max_diff(m(Tensor(x)).data, ref))
    return worst


@register("ops", "oracle")
def ddc_forward_oracle(rng) -> float:
    worst = 0.0
    for _ in range(6):
        b, m, c, o, k = 1, int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3)), 3
        x = rng.standard_normal((b, c, 4, 5))
        kernels = rng.standard_normal((b, m, o, c, k, k))
        biases = rng.standard_normal((b, m, o))
        pi = route_from_scores(Tensor(rng.standard_normal((b, m, 4, 5))), 1.0, min(2, m), 0.5).blended.data
        got = ddc_forward(Tensor(x), Tensor(kernels), Tensor(biases), Tensor(pi), 1, 1).data
        worst = max(worst, _max_diff(got, O.materialized_dynamic_conv(x, kernels, biases, pi, 1, 1)))
    return worst


@register("ops", "oracle")
def cross_attention_oracle(rng) -> float:
    g = PriorGenerator(4, 3, 2, rng, F64)
    jitter_parameters(g, rng, 0.3)
    f = rng.standard_normal((2, 4, 3, 3))
    delta, attn = g.cross_attention(Tensor(f))
    worst = 0.0
    for bi in range(2):
        tokens = f[bi].reshape(4, -1).T
        ref, ref_attn = O.loop_cross_attention(
            tokens, g.queries.data, g.q_proj.weight.data, g.q_proj.bias.data, g.k_proj.weight.data,
            g.k_proj.bias.data, g.v_proj.weight.data, g.v_proj.bias.data, g.o_proj.weight.data,
            g.o_proj.bias.data, 2)
        worst = max(worst, _max_diff(delta.data[bi], ref), _max_diff(attn[bi], ref_attn))
    return worst


# ops: primitive gradients


def _op_grad(rng, shape, fn, h=1e-6) -> float:
    x = Tensor(rng.standard_normal(shape))
    w = _probe(fn(Tensor(x.data.copy())).shape, rng)
    return grad_check(lambda t: _scalar(fn(t), w), x, h=h)


@register("ops", "grad")
def conv2d_grad(rng) -> float:
    wt = Tensor(rng.standard_normal((4, 2, 3, 3)))
    bias = Tensor(rng.standard_normal(4))
    e1 = _op_grad(rng, (2, 4, 5, 5), lambda t: T.conv2d(t, wt, bias, 2, 1, groups=2))
    x = Tensor(rng.standard_normal((2, 4, 5, 5)))
    w = _probe((2, 4, 3, 3), rng)
    e2 = grad_check(lambda t: _scalar(T.conv2d(x, t, bias, 2, 1, groups=2), w), wt, h=1e-6)
    return max(e1, e2)


@register("ops", "grad")
def matmul_grad(rng) -> float:
    b = Tensor(rng.standard_normal((2, 4, 3)))
    return _op_grad(rng, (2, 5, 4), lambda t: T.matmul(t, b))


@register("ops", "grad")
def softmax_grad(rng) -> float:
    return max(_op_grad(rng, (3, 5), lambda t: T.softmax(t, axis=-1, temperature=0.7)),
               _op_grad(rng, (2, 4, 3), lambda t: T.topk_softmax(t, 2, axis=1)))


@register("ops", "grad")
def layer_norm_grad(rng) -> float:
    g, s = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))
    e1 = _op_grad(rng, (2, 4, 3, 3), lambda t: T.layer_norm(t, g, s, axis=1))
    x = Tensor(rng.standard_normal((2, 4, 3, 3)))
    w = _probe(x.shape, rng)
    e2 = grad_check(lambda t: _scalar(T.layer_norm(x, t, s, axis=1), w), g, h=1e-6)
    return max(e1, e2)


@register("ops", "grad")
def activation_grad(rng) -> float:
    return max(_op_grad(rng, (3, 7), T.gelu), _op_grad(rng, (3, 7), T.sigmoid),
               _op_grad(rng, (3, 7), lambda t: T.exp(t * 0.5)))


@register("ops", "grad")
def shape_ops_grad(rng) -> float:
    idx = np.array([[0, 2], [1, 3], [3, 0]])
    return max(
        _op_grad(rng, (2, 4, 3), lambda t: T.take(t, idx, axis=1)),
        _op_grad(rng, (1, 2, 3, 3), T.upsample_nearest2x),
        _op_grad(rng, (1, 2, 3, 3), lambda t: T.replicate_pad2d(t, 1)),
        _op_grad(rng, (1, 2, 3, 3), lambda t: T.pad2d(t, 1)),
        _op_grad(rng, (2, 3, 4), lambda t: T.transpose(t, (2, 0, 1))[1:, :, ::2]),
        _op_grad(rng, (2, 3), lambda t: T.concat([t, t * 2.0], axis=0)),
        _op_grad(rng, (2, 3), lambda t: t / (T.tsum(t * t) + 1.0)),
    )


@register("ops", "grad")
def sobel_grad(rng) -> float:
    return _op_grad(rng, (1, 2, 5, 5), T.sobel_gradient, h=1e-7)


# blocks


@register("blocks", "grad")
def apg_step_grad(rng) -> float:
    g = PriorGenerator(4, 3, 2, rng, F64, prev_width=2)
    jitter_parameters(g, rng, 0.3)
    f = Tensor(rng.standard_normal((2, 4, 3, 3)))
    prev = Tensor(rng.standard_normal((2, 3, 2)))
    w = _probe((2, 3, 4), rng)

    def loss():
        return _scalar(g(f, prev, "full"), w)

    e = max(grad_check(lambda t: _scalar(g(t, prev, "full"), w), f, h=1e-6),
            grad_check(lambda t: _scalar(g(f, t, "full"), w), prev, h=1e-6))
    return max(e, _check_params(g, loss, rng, h=1e-6))


@register("blocks", "grad")
def ddcb_block_grad(rng) -> float:
    blk = DynamicConvBlock(4, 3, rng, F64, top_k=2, blend=0.5)
    jitter_parameters(blk, rng)
    f = Tensor(rng.standard_normal((1, 4, 4, 4)))
    priors = Tensor(rng.standard_normal((1, 3, 4)))
    w = _probe(f.shape, rng)

    def loss():
        return _scalar(blk(f, priors), w)

    e = max(grad_check(lambda t: _scalar(blk(t, priors), w), f, h=1e-6),
            grad_check(lambda t: _scalar(blk(f, t), w), priors, h=1e-6))
    return max(e, _check_params(blk, loss, rng, h=1e-6))


@register("blocks", "grad")
def scfb_full_grad(rng) -> float:
    blk = ShuffleChannelFusion(4, rng, F64, CwmcConfig(), "full")
    jitter_parameters(blk, rng)
    a = Tensor(rng.standard_normal((1, 4, 4, 4)))
    b = Tensor(rng.standard_normal((1, 4, 4, 4)))
    w = _probe(a.shape, rng)

    def loss():
        return _scalar(blk(a, b), w)

    e = max(grad_check(lambda t: _scalar(blk(t, b), w), a, h=1e-6),
            grad_check(lambda t: _scalar(blk(a, t), w), b, h=1e-6))
    return max(e, _check_params(blk, loss, rng, per_tensor=3, h=1e-6))


def kink_distance(F: np.ndarray, I: np.ndarray, V: np.ndarray) -> float:
    """Smallest argument of any |.| or max in the loss terms (0 means an exact tie)."""
    def sobel_parts(x):
        b, c, h, w = x.shape
        kernel = np.tile(np.stack([T.SOBEL_X, T.SOBEL_Y])[:, None], (c, 1, 1, 1))
        return T.conv2d(T.replicate_pad2d(Tensor(x), 1), kernel, groups=c).data

    g = {k: T.sobel_gradient(Tensor(x)).data for k, x in (("F", F), ("I", I), ("V", V))}
    rv, ri = np.abs(F - V), np.abs(F - I)
    args = [F - np.maximum(I, V), I - V, F - V, F - I, g["I"] - g["V"],
            sobel_parts(F), sobel_parts(rv), sobel_parts(ri),
            g["F"] - np.maximum(g["I"], g["V"]),
            T.sobel_gradient(Tensor(rv)).data - g["I"], T.sobel_gradient(Tensor(ri)).data - g["V"]]
    return float(min(np.min(np.abs(a)) for a in args))


def tie_free_images(rng, size: int = 12, margin: float = 1e-3, tries: int = 1000):
    """Random (F, I, V) in (0, 1) whose loss kinks are all at least ``margin`` away."""
    for _ in range(tries):
        f, i, v = (rng.uniform(0.05, 0.95, (1, 1, size, size)) for _ in range(3))
        if kink_distance(f, i, v) >= margin:
            return f, i, v
    raise RuntimeError(f"no tie-free triple found in {tries} draws")


@register("blocks", "grad")
def loss_terms_grad(rng) -> float:
    f, i, v = tie_free_images(rng)
    x = Tensor(f)
    worst = 0.0
    for term in (intensity_loss, gradient_loss, struct_loss, lambda F, I, V: ssim_loss(F, I, V)[0]):
        worst = max(worst, grad_check(lambda t: term(t, i, v), x, h=1e-6))
    worst = max(worst, grad_check(lambda t: total_loss(t, i, v).tensor, x, h=1e-6))
    return worst


# end to end


@register("end2end", "grad")
def toy_network_grad(rng) -> float:
    net = FusionNet(toy_config(), seed=int(rng.integers(1 << 31)))
    jitter_parameters(net, rng, 0.02)
    ir = Tensor(rng.uniform(0.05, 0.95, (1, 1, 16, 16)))
    vis = Tensor(rng.uniform(0.05, 0.95, (1, 1, 16, 16)))

    # loss targets are copies: perturbing the network input must not move them
    I, V = ir.data.copy(), vis.data.copy()

    def loss():
        return total_loss(net(ir, vis), I, V).tensor

    picked = ("enc_ir.scales.0", "enc_vis.scales.1", "fuse.0", "fuse.1", "decoder")
    e = _check_params(net, loss, rng, per_tensor=2, names=picked, h=1e-6)
    return max(e, grad_check(lambda t: total_loss(net(t, vis), I, V).tensor, ir,
                             h=1e-6, coords=rng.choice(256, 12, replace=False)))


def select(scope: str | None) -> list[Check]:
    if scope is not None and scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    return [c for c in REGISTRY if scope is None or c.scope == scope]


def run_checks(scope: str | None = None, seed: int = 0, corrupt: str | None = None,
               report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run the checks of ``scope`` (all when None).

    ``corrupt`` names a check whose threshold is replaced by 0, forcing it to
    fail; it exercises the failure path of callers.
    """
    results = []
    for check in select(scope):
        rng = np.random.default_rng([seed, zlib.crc32(check.name.encode())])
        t0 = time.perf_counter()
        with np.errstate(all="raise"):
            error = float(check.fn(rng))
        threshold = 0.0 if check.name == corrupt else check.threshold
        res = CheckResult(check.name, check.scope, check.kind, error, threshold, time.perf_counter() - t0)
        results.append(res)
        if report is not None:
            report(res)
    return results
