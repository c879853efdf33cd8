"""Fusion hyperparameters and the flat ``key=value`` config file format.

Config file keys (one per line, ``#`` starts a comment)::

    scales          number of encoder scales
    widths          comma-separated channel width per scale, strictly increasing
    num_priors      prior tokens per scale (M)
    heads           attention heads in the prior generator
    temperature     routing temperature (tau > 0)
    top_k           experts kept by the sparse router (1 <= K <= M)
    blend           weight of the sparse routing distribution (0 <= lambda <= 1)
    kernel_size     dynamic convolution kernel size (odd)
    dyn_groups      channel groups of the generated expert kernels
    cwmc_kernel     channel window length of the mixing convolution
    cwmc_stride     channel window stride
    cwmc_padding    zero padding on the channel axis
    cwmc_groups     number of channel kernels
    w_int, w_grad, w_ssim, w_struct   loss weights
    ddcb_mode       full | restormer_stand_in | concat_prior
    scfb_mode       full | single_branch | plain_conv
    apg_mode        full | proposal_only | history_only
    d0_mode         separate | shared | frozen
    steps, batch_size, lr, warmup_frac, seed   toy training
    dtype           float32 | float64
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

DDCB_MODES = ("full", "restormer_stand_in", "concat_prior")
SCFB_MODES = ("full", "single_branch", "plain_conv")
APG_MODES = ("full", "proposal_only", "history_only")
D0_MODES = ("separate", "shared", "frozen")


@dataclass(frozen=True)
class LossWeights:
    intensity: float = 4.0
    gradient: float = 24.0
    ssim: float = 0.5
    struct: float = 4.5

    def __post_init__(self):
        for k, v in dataclasses.asdict(self).items():
            if v < 0:
                raise ConfigurationError(f"loss weight {k} must be non-negative, got {v}")


@dataclass(frozen=True)
class FusionConfig:
    scales: int = 3
    widths: tuple[int, ...] = (8, 16, 32)
    num_priors: int = 8
    heads: int = 4
    temperature: float = 1.0
    top_k: int = 2
    blend: float = 0.5
    kernel_size: int = 3
    dyn_groups: int = 1
    cwmc_kernel: int = 4
    cwmc_stride: int = 2
    cwmc_padding: int = 1
    cwmc_groups: int = 4
    w_int: float = 4.0
    w_grad: float = 24.0
    w_ssim: float = 0.5
    w_struct: float = 4.5
    ddcb_mode: str = "full"
    scfb_mode: str = "full"
    apg_mode: str = "full"
    d0_mode: str = "separate"
    steps: int = 50
    batch_size: int = 4
    lr: float = 1.7e-4
    warmup_frac: float = 0.1
    seed: int = 42
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        self.validate()

    def validate(self) -> None:
        if self.scales < 1:
            raise ConfigurationError(f"scales must be >= 1, got {self.scales}")
        if len(self.widths) != self.scales:
            raise ConfigurationError(f"widths lists {len(self.widths)} entries for {self.scales} scales")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])) or min(self.widths) < 1:
            raise ConfigurationError(f"widths must be positive and strictly increasing, got {self.widths}")
        for w in self.widths:
            if w % self.heads:
                raise ConfigurationError(f"width {w} is not divisible by heads={self.heads}")
            if w % self.dyn_groups:
                raise ConfigurationError(f"width {w} is not divisible by dyn_groups={self.dyn_groups}")
        if self.num_priors < 1:
            raise ConfigurationError("num_priors must be >= 1")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if not 1 <= self.top_k <= self.num_priors:
            raise ConfigurationError(f"top_k must lie in [1, {self.num_priors}], got {self.top_k}")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigurationError(f"blend must lie in [0, 1], got {self.blend}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.cwmc_kernel < 1 or self.cwmc_stride < 1 or self.cwmc_padding < 0 or self.cwmc_groups < 1:
            raise ConfigurationError("cwmc_kernel, cwmc_stride, cwmc_groups must be >= 1 and cwmc_padding >= 0")
        for name, value, allowed in (("ddcb_mode", self.ddcb_mode, DDCB_MODES),
                                     ("scfb_mode", self.scfb_mode, SCFB_MODES),
                                     ("apg_mode", self.apg_mode, APG_MODES),
                                     ("d0_mode", self.d0_mode, D0_MODES)):
            if value not in allowed:
                raise ConfigurationError(f"{name} must be one of {allowed}, got {value!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or not 0 <= self.warmup_frac <= 1:
            raise ConfigurationError("invalid training settings (steps, batch_size, lr, warmup_frac)")
        LossWeights(self.w_int, self.w_grad, self.w_ssim, self.w_struct)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_int, self.w_grad, self.w_ssim, self.w_struct)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "FusionConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config key {unknown[0]!r}")
        return cls(**{k: (tuple(v) if k == "widths" else v) for k, v in d.items()})

    def with_overrides(self, pairs: list[str]) -> "FusionConfig":
        return FusionConfig.from_dict({**self.to_dict(), **parse_pairs(pairs)})


def toy_config(**changes) -> FusionConfig:
    """The 2-scale configuration used by the gradient suites (widths 4/8, M=4)."""
    base = dict(scales=2, widths=(4, 8), num_priors=4, heads=2, dtype="float64")
    base.update(changes)
    return FusionConfig(**base)


_TYPES = {f.name: f.type for f in dataclasses.fields(FusionConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES.get(key)
    if kind is None:
        raise ConfigurationError(f"unknown config key {key!r}")
    try:
        if key == "widths":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from exc
    return raw


def parse_pairs(lines) -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, raw)
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> FusionConfig:
    """Read a config file (if any) and apply ``key=value`` overrides on top."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_pairs(text.splitlines()))
    values.update(parse_pairs(overrides or []))
    return FusionConfig.from_dict({**FusionConfig().to_dict(), **values})


def dump_config(cfg: FusionConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {','.join(map(str, v)) if k == 'widths' else v}")
    return "\n".join(lines) + "\n"
