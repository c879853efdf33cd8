"""Prior-conditioned dynamic convolution.

Each prior token is mapped by one shared generator to an expert kernel and bias.
A pointwise router produces, per location, a blend of a dense softmax and a
renormalised top-K distribution over experts; the output at each location is the
convolution with the routed mixture of expert parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .nn import Conv2d, LayerNorm, Linear, Module, param
from .tensor import Tensor


@dataclass
class RoutingField:
    """Per-location routing distributions, each [B, M, H, W] (expert axis 1)."""

    logits: Tensor
    dense: Tensor
    sparse: Tensor
    blended: Tensor
    temperature: float
    top_k: int
    blend: float


def check_routing_params(temperature: float, top_k: int, blend: float, num_experts: int) -> None:
    if not temperature > 0:
        raise ParameterError(f"routing temperature must be positive, got {temperature}")
    if not 1 <= top_k <= num_experts:
        raise ParameterError(f"top_k must lie in [1, {num_experts}], got {top_k}")
    if not 0.0 <= blend <= 1.0:
        raise ParameterError(f"blend must lie in [0, 1], got {blend}")


def route_from_scores(scores: Tensor, temperature: float, top_k: int, blend: float) -> RoutingField:
    """Build the routing field from raw router outputs [B, M, H, W]."""
    check_routing_params(temperature, top_k, blend, scores.shape[1])
    logits = scores * (1.0 / temperature)
    dense = T.softmax(logits, axis=1)
    sparse = T.topk_softmax(logits, top_k, axis=1)
    blended = sparse * blend + dense * (1.0 - blend)
    return RoutingField(logits, dense, sparse, blended, temperature, top_k, blend)


def ddc_forward(f: Tensor, kernels: Tensor, biases: Tensor, pi: Tensor,
                stride: int = 1, padding: int = 1, groups: int = 1) -> Tensor:
    """Location-dependent convolution by mixing expert responses.

    f [B, C, H, W]; kernels [B, M, O, C/groups, k, k]; biases [B, M, O]; pi [B, M, Ho, Wo].
    Since the routed kernel is linear in pi, mixing the M expert outputs with pi
    equals convolving with the per-location mixed kernel.
    """
    b, c, h, w = f.shape
    _, m, o, cg, k, _ = kernels.shape
    if cg * groups != c:
        raise DimensionError(f"channel axis: expert kernels expect {cg * groups} input channels, got {c}")
    cols = T.unfold(f, k, stride, padding)
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if pi.shape != (b, m, ho, wo):
        raise DimensionError(f"routing field shape {pi.shape} does not match conv output {(b, m, ho, wo)}")
    cols = T.reshape(cols, (b, 1, groups, cg * k * k, ho * wo))
    kmat = T.reshape(kernels, (b, m, groups, o // groups, cg * k * k))
    responses = T.reshape(T.matmul(kmat, cols), (b, m, o, ho * wo))
    responses = responses + T.reshape(biases, (b, m, o, 1))
    mixed = T.tsum(responses * T.reshape(pi, (b, m, 1, ho * wo)), axis=1)
    return T.reshape(mixed, (b, o, ho, wo))


class WeightGenerator(Module):
    """Shared two-layer map from a prior token to one expert's kernel and bias."""

    def __init__(self, width: int, c_in: int, c_out: int, k: int, groups: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.c_in, self.c_out, self.k, self.groups = c_in, c_out, k, groups
        fan_in = (c_in // groups) * k * k
        self.kernel_numel = c_out * (c_in // groups) * k * k
        self.hidden = Linear(width, width, rng, dtype)
        # the output bias carries a base kernel; token-dependent weights perturb it
        self.out = Linear(width, self.kernel_numel + c_out, rng, dtype,
                          std=0.5 / (np.sqrt(width) * np.sqrt(fan_in)))
        base = np.concatenate([rng.normal(0.0, 1.0 / np.sqrt(fan_in), self.kernel_numel), np.zeros(c_out)])
        self.out.bias = param(base, dtype)

    def forward(self, priors: Tensor) -> tuple[Tensor, Tensor]:
        """priors [B, M, C] -> kernels [B, M, O, C_in/g, k, k], biases [B, M, O]."""
        b, m, c = priors.shape
        if c != self.hidden.weight.shape[1]:
            raise DimensionError(f"prior tokens: channel axis has {c}, expected {self.hidden.weight.shape[1]}")
        flat = self.out(T.gelu(self.hidden(priors)))
        kernels = T.reshape(flat[:, :, : self.kernel_numel],
                            (b, m, self.c_out, self.c_in // self.groups, self.k, self.k))
        biases = flat[:, :, self.kernel_numel:]
        return kernels, biases


class Router(Module):
    """Pointwise routing network: 1x1 conv, GELU, 1x1 conv to M scores."""

    def __init__(self, width: int, num_experts: int, rng: np.random.Generator, dtype=np.float32):
        hidden = max(1, width // 4)
        self.fc1 = Conv2d(width, hidden, 1, rng, dtype)
        self.fc2 = Conv2d(hidden, num_experts, 1, rng, dtype)

    def forward(self, f: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(f)))


class DynamicConvBlock(Module):
    """Residual block F + GELU(LN(DDC(F, priors))), LN over channels per location."""

    def __init__(self, width: int, num_experts: int, rng: np.random.Generator, dtype=np.float32,
                 k: int = 3, groups: int = 1, temperature: float = 1.0, top_k: int = 2,
                 blend: float = 0.5):
        check_routing_params(temperature, top_k, blend, num_experts)
        self.width = width
        self.k, self.groups = k, groups
        self.temperature, self.top_k, self.blend = temperature, top_k, blend
        self.weightgen = WeightGenerator(width, width, width, k, groups, rng, dtype)
        self.router = Router(width, num_experts, rng, dtype)
        self.norm = LayerNorm(width, dtype, axis=1)

    def generate_experts(self, priors: Tensor) -> tuple[Tensor, Tensor]:
        return self.weightgen(priors)

    def route(self, f: Tensor, temperature: float | None = None, top_k: int | None = None,
              blend: float | None = None) -> RoutingField:
        return route_from_scores(
            self.router(f),
            self.temperature if temperature is None else temperature,
            self.top_k if top_k is None else top_k,
            self.blend if blend is None else blend,
        )

    def dynamic_conv(self, f: Tensor, priors: Tensor) -> Tensor:
        kernels, biases = self.generate_experts(priors)
        routing = self.route(f)
        return ddc_forward(f, kernels, biases, routing.blended, 1, self.k // 2, self.groups)

    def forward(self, f_in: Tensor, priors: Tensor) -> Tensor:
        if f_in.shape[1] != self.width:
            raise DimensionError(f"block input: channel axis has {f_in.shape[1]}, expected {self.width}")
        return f_in + T.gelu(self.norm(self.dynamic_conv(f_in, priors)))
