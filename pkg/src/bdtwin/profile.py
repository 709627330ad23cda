"""Layer-level FLOPs and forward-output sizes for the DNNs hosted by digital twins.

Counts are per data point (batch size 1 by default); the per-slot data arrival
D_n(t) multiplies them downstream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InvalidSpecError(ValueError):
    pass


class LayerKind(str, enum.Enum):
    CONV = "conv"
    POOL = "pool"
    FC = "fc"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    batch: int = 1
    precision: int = 32
    # conv / pool
    in_dims: tuple[int, int, int] | None = None  # (C_i, H_i, W_i)
    out_dims: tuple[int, int, int] | None = None  # (C_o, H_o, W_o)
    filter_dims: tuple[int, int] | None = None  # (H_f, W_f)
    # fully connected
    in_size: int | None = None
    out_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        _positive("batch", self.batch)
        _positive("precision", self.precision)
        if self.kind is LayerKind.FC:
            _positive("in_size", self.in_size)
            _positive("out_size", self.out_size)
            return
        for name in ("in_dims", "out_dims"):
            dims = getattr(self, name)
            if dims is None or len(dims) != 3:
                raise InvalidSpecError(f"{self.kind.value} layer needs {name}=(C, H, W)")
            for d in dims:
                _positive(name, d)
        if self.kind is LayerKind.CONV:
            if self.filter_dims is None or len(self.filter_dims) != 2:
                raise InvalidSpecError("conv layer needs filter_dims=(H_f, W_f)")
            for d in self.filter_dims:
                _positive("filter_dims", d)
        elif self.out_dims[0] != self.in_dims[0]:
            raise InvalidSpecError("pooling keeps the channel count (C_o == C_i)")


def _positive(name, value):
    if value is None or int(value) != value or value <= 0:
        raise InvalidSpecError(f"{name} must be a positive integer, got {value!r}")


def flops_of_layer(spec: LayerSpec) -> int:
    b = spec.batch
    if spec.kind is LayerKind.CONV:
        ci = spec.in_dims[0]
        co, ho, wo = spec.out_dims
        hf, wf = spec.filter_dims
        return 2 * b * ci * hf * wf * co * ho * wo
    if spec.kind is LayerKind.POOL:
        ci, hi, wi = spec.in_dims
        return b * ci * hi * wi
    return 2 * b * spec.in_size * spec.out_size


def output_bits_of_layer(spec: LayerSpec) -> int:
    # fc row is stored in elements; scaled by precision so every size is in bits
    if spec.kind is LayerKind.FC:
        return spec.precision * spec.batch * spec.out_size
    co, ho, wo = spec.out_dims
    return spec.precision * spec.batch * co * ho * wo


@dataclass(frozen=True)
class LayerProfile:
    flops: float
    output_bits: float

    def __post_init__(self):
        if self.flops < 0 or not self.output_bits > 0:
            raise InvalidSpecError(f"bad layer profile {self}")


@dataclass(frozen=True)
class ModelProfile:
    name: str
    layers: tuple[LayerProfile, ...]
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise InvalidSpecError("a model needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        cum = np.concatenate([[0.0], np.cumsum([lp.flops for lp in self.layers], dtype=float)])
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_specs(cls, name: str, specs: Sequence[LayerSpec]) -> "ModelProfile":
        return cls(name, tuple(LayerProfile(flops_of_layer(s), output_bits_of_layer(s)) for s in specs))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def total_flops(self) -> float:
        return float(self._cum[-1])

    @property
    def flops(self) -> np.ndarray:
        return np.array([lp.flops for lp in self.layers], dtype=float)

    @property
    def output_bits(self) -> np.ndarray:
        return np.array([lp.output_bits for lp in self.layers], dtype=float)

    def prefix_table(self) -> np.ndarray:
        """prefix_flops for l = 0..L as an array of length L+1."""
        return self._cum.copy()


def prefix_flops(model: ModelProfile, l: int) -> float:
    if not 0 <= l <= model.n_layers:
        raise IndexError(f"layer index {l} outside 0..{model.n_layers}")
    return float(model._cum[l])


def suffix_flops(model: ModelProfile, l: int) -> float:
    return model.total_flops - prefix_flops(model, l)


# --- presets -------------------------------------------------------------------------


def _conv(cin, hw, cout, k, batch, precision, pad_same=True):
    h, w = hw
    ho, wo = (h, w) if pad_same else (h - k + 1, w - k + 1)
    return LayerSpec(LayerKind.CONV, batch, precision, in_dims=(cin, h, w),
                     out_dims=(cout, ho, wo), filter_dims=(k, k))


def _pool(c, hw, batch, precision, k=2):
    h, w = hw
    return LayerSpec(LayerKind.POOL, batch, precision, in_dims=(c, h, w),
                     out_dims=(c, h // k, w // k), filter_dims=(k, k))


def _fc(si, so, batch, precision):
    return LayerSpec(LayerKind.FC, batch, precision, in_size=si, out_size=so)


def vgg11_cifar10_specs(batch: int = 1, precision: int = 32) -> list[LayerSpec]:
    # configuration "A": 3x3 convs with padding 1, 2x2 max-pools
    cfg = [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"]
    specs, c, hw = [], 3, (32, 32)
    for item in cfg:
        if item == "M":
            specs.append(_pool(c, hw, batch, precision))
            hw = (hw[0] // 2, hw[1] // 2)
        else:
            specs.append(_conv(c, hw, item, 3, batch, precision))
            c = item
    flat = c * hw[0] * hw[1]
    specs += [_fc(flat, 4096, batch, precision), _fc(4096, 4096, batch, precision),
              _fc(4096, 10, batch, precision)]
    return specs


def cnn_fashion_mnist_specs(batch: int = 1, precision: int = 32) -> list[LayerSpec]:
    return [
        _conv(1, (28, 28), 32, 5, batch, precision),
        _pool(32, (28, 28), batch, precision),
        _conv(32, (14, 14), 64, 5, batch, precision),
        _pool(64, (14, 14), batch, precision),
        _fc(64 * 7 * 7, 512, batch, precision),
        _fc(512, 10, batch, precision),
    ]


PRESETS = {
    "vgg11_cifar10": vgg11_cifar10_specs,
    "cnn_fashion_mnist": cnn_fashion_mnist_specs,
}


def build_preset(name: str, batch: int = 1, precision: int = 32) -> ModelProfile:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidSpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if batch < 1:
        raise InvalidSpecError("batch must be >= 1")
    return ModelProfile.from_specs(name, factory(batch, precision))


def model_from_config(entry: dict) -> ModelProfile:
    """Build a model from a config entry: either {preset: ...} or {name: ..., layers: [...]}."""
    if "preset" in entry:
        return build_preset(entry["preset"], entry.get("batch", 1), entry.get("precision", 32))
    batch = entry.get("batch", 1)
    precision = entry.get("precision", 32)
    specs = []
    for layer in entry["layers"]:
        kw = dict(layer)
        kind = kw.pop("kind")
        kw.setdefault("batch", batch)
        kw.setdefault("precision", precision)
        for key in ("in_dims", "out_dims", "filter_dims"):
            if key in kw:
                kw[key] = tuple(kw[key])
        specs.append(LayerSpec(kind, **kw))
    return ModelProfile.from_specs(entry.get("name", "custom"), specs)
