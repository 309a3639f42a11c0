"""1-D Fourier neural operator: lift -> pad -> spectral layers -> crop -> project.

The network maps sampled stimulus channels to the multi-channel trajectory on
the same uniform grid. Spectral weights are stored only for the non-negative
modes of the real FFT, which keeps every spectral convolution output exactly
real (Hermitian symmetry holds by construction).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Dict, List

import numpy as np

from .tensor import (
    ACTIVATIONS,
    Node,
    bias_add,
    channel_matmul,
    crop_last,
    irfft,
    mode_mul,
    pad_last,
    rfft,
)


class ConfigError(ValueError):
    """Invalid architecture hyperparameters."""


class NumericError(RuntimeError):
    """Non-finite values produced during a forward pass."""

    def __init__(self, message: str, layer: int):
        super().__init__(message)
        self.layer = layer


VARIANTS = ("classic", "mlp")


@dataclass
class FnoConfig:
    in_channels: int = 2
    out_channels: int = 2
    width: int = 64
    depth: int = 4
    modes: int = 16
    activation: str = "gelu"
    padding: int = 0
    variant: str = "mlp"
    projection_hidden: int = 128

    def validate(self) -> "FnoConfig":
        if self.width <= self.in_channels:
            raise ConfigError(f"width {self.width} must exceed in_channels {self.in_channels}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.modes < 1:
            raise ConfigError("modes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.padding < 0:
            raise ConfigError("padding must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FnoConfig":
        return cls(**d).validate()


@dataclass
class FnoParams:
    """All learnable arrays, keyed by stable names for the optimizer and checkpoints."""

    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    depth: int = 0
    variant: str = "classic"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> List[str]:
        return list(self.arrays.keys())

    def clone(self) -> "FnoParams":
        return FnoParams({k: v.copy() for k, v in self.arrays.items()}, self.depth, self.variant)

    def scalar_count(self) -> int:
        return sum(2 * a.size if np.iscomplexobj(a) else a.size for a in self.arrays.values())


def _layer_names(t: int, variant: str) -> List[str]:
    names = [f"layer{t}.spectral", f"layer{t}.w", f"layer{t}.b"]
    if variant == "mlp":
        names += [f"layer{t}.mlp1_w", f"layer{t}.mlp1_b", f"layer{t}.mlp2_w", f"layer{t}.mlp2_b"]
    return names


def init(config: FnoConfig, seed: int) -> FnoParams:
    """Deterministic weight initialization.

    Spectral weights: uniform [0,1) complex entries scaled by 1/(width*modes).
    Pointwise matrices and biases: uniform in +-sqrt(1/fan_in).
    """
    config.validate()
    rng = np.random.default_rng(seed)
    dv, k = config.width, config.modes

    def uniform(fan_in, *shape):
        s = np.sqrt(1.0 / fan_in)
        return rng.uniform(-s, s, size=shape)

    arrays: Dict[str, np.ndarray] = {}
    arrays["lift_w"] = uniform(config.in_channels, dv, config.in_channels)
    arrays["lift_b"] = uniform(config.in_channels, dv)
    spectral_scale = 1.0 / (dv * k)
    for t in range(config.depth):
        arrays[f"layer{t}.spectral"] = spectral_scale * (
            rng.random((dv, dv, k)) + 1j * rng.random((dv, dv, k))
        )
        arrays[f"layer{t}.w"] = uniform(dv, dv, dv)
        arrays[f"layer{t}.b"] = uniform(dv, dv)
        if config.variant == "mlp":
            arrays[f"layer{t}.mlp1_w"] = uniform(dv, dv, dv)
            arrays[f"layer{t}.mlp1_b"] = uniform(dv, dv)
            arrays[f"layer{t}.mlp2_w"] = uniform(dv, dv, dv)
            arrays[f"layer{t}.mlp2_b"] = uniform(dv, dv)
    ph = config.projection_hidden
    arrays["proj1_w"] = uniform(dv, ph, dv)
    arrays["proj1_b"] = uniform(dv, ph)
    arrays["proj2_w"] = uniform(ph, config.out_channels, ph)
    arrays["proj2_b"] = uniform(ph, config.out_channels)
    return FnoParams(arrays, config.depth, config.variant)


def count_params(config: FnoConfig) -> int:
    """Exact number of trainable real scalars (complex weights count twice).

    lift + sum over layers of [2*dv^2*k + dv^2 + dv (+ 2*(dv^2+dv) for mlp)]
    + two-stage projection.
    """
    config.validate()
    dv, k, ph = config.width, config.modes, config.projection_hidden
    lift = config.in_channels * dv + dv
    per_layer = 2 * dv * dv * k + dv * dv + dv
    if config.variant == "mlp":
        per_layer += 2 * (dv * dv + dv)
    proj = dv * ph + ph + ph * config.out_channels + config.out_channels
    return lift + config.depth * per_layer + proj


def spectral_conv(v: Node, r: Node) -> Node:
    """Mix the lowest k modes of v with per-mode complex matrices; zero the rest."""
    n = v.value.shape[-1]
    m = n // 2 + 1
    k = r.value.shape[-1]
    if k > m:
        raise ConfigError(f"modes {k} exceed the {m} available modes of a length-{n} grid")
    spec = crop_last(rfft(v), k)
    mixed = mode_mul(r, spec)
    return irfft(pad_last(mixed, m - k), n)


def fourier_layer(v: Node, params: Dict[str, Node], t: int, variant: str, activation: str) -> Node:
    """One integral layer: sigma(W v + b + S) with S the (optionally MLP-wrapped) spectral path."""
    act = ACTIVATIONS[activation]
    s = spectral_conv(v, params[f"layer{t}.spectral"])
    if variant == "mlp":
        h = act(bias_add(channel_matmul(params[f"layer{t}.mlp1_w"], s), params[f"layer{t}.mlp1_b"]))
        s = bias_add(channel_matmul(params[f"layer{t}.mlp2_w"], h), params[f"layer{t}.mlp2_b"])
    w = bias_add(channel_matmul(params[f"layer{t}.w"], v), params[f"layer{t}.b"])
    return act(w + s)


def build_graph(config: FnoConfig, params: Dict[str, Node], x: Node) -> Node:
    """Full forward graph on [..., in_channels, n] inputs."""
    n = x.value.shape[-1]
    if x.value.shape[-2] != config.in_channels:
        raise ConfigError(f"input has {x.value.shape[-2]} channels, config expects {config.in_channels}")
    if n < 2 * config.modes:
        raise ConfigError(f"grid length {n} too short for {config.modes} modes")
    act = ACTIVATIONS[config.activation]

    v = bias_add(channel_matmul(params["lift_w"], x), params["lift_b"])
    if config.padding:
        v = pad_last(v, config.padding)
    for t in range(config.depth):
        v = fourier_layer(v, params, t, config.variant, config.activation)
        if not np.all(np.isfinite(v.value)):
            raise NumericError(f"non-finite activation after layer {t}", layer=t)
    v = crop_last(v, n)
    h = act(bias_add(channel_matmul(params["proj1_w"], v), params["proj1_b"]))
    out = bias_add(channel_matmul(params["proj2_w"], h), params["proj2_b"])
    if not np.all(np.isfinite(out.value)):
        raise NumericError("non-finite network output", layer=config.depth)
    return out


class Fno:
    """Config + weights bundle with a no-grad forward."""

    def __init__(self, config: FnoConfig, params: FnoParams):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: FnoConfig, seed: int) -> "Fno":
        return cls(config, init(config, seed))

    def param_nodes(self, requires_grad: bool = True) -> Dict[str, Node]:
        return {
            name: Node(arr, requires_grad=requires_grad)
            for name, arr in self.params.arrays.items()
        }

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on [in, n] or [batch, in, n] stimulus channels."""
        node = build_graph(self.config, self.param_nodes(requires_grad=False), Node(np.asarray(x, dtype=np.float64)))
        return node.value


def forward(config: FnoConfig, params: FnoParams, x: np.ndarray) -> np.ndarray:
    return Fno(config, params).predict(x)
