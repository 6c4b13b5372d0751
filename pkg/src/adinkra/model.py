"""The custom VGG-style CNN: six 3x3 conv layers, three pools, three FC layers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import ops
from .core.tensor import ParamTensor, Tensor
from .errors import ConfigurationError, PreconditionError, SpecError


@dataclass(frozen=True)
class ModelSpec:
    input_size: int = 128
    input_channels: int = 3
    conv_channels: tuple[int, ...] = (64, 128, 256, 256, 512, 512)
    pool_after: tuple[int, ...] = (2, 4, 6)
    fc_widths: tuple[int, ...] = (4096, 4096, 62)
    dropout_p: float = 0.5
    num_classes: int = 62

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "pool_after", tuple(int(i) for i in self.pool_after))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))

    @classmethod
    def paper(cls, num_classes: int = 62) -> "ModelSpec":
        return cls(fc_widths=(4096, 4096, num_classes), num_classes=num_classes)

    @classmethod
    def reduced(cls, num_classes: int = 62) -> "ModelSpec":
        """Desk-scale preset: 64px input and 512-wide FC layers."""
        return cls(input_size=64, fc_widths=(512, 512, num_classes), num_classes=num_classes)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("conv_channels", "pool_after", "fc_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["pool_after"] = list(self.pool_after)
        d["fc_widths"] = list(self.fc_widths)
        return d

    def validate(self) -> None:
        if self.input_channels != 3:
            raise SpecError("the network takes 3-channel input")
        if not self.conv_channels or any(c < 1 for c in self.conv_channels):
            raise SpecError(f"bad conv_channels {self.conv_channels}")
        if any(not 1 <= i <= len(self.conv_channels) for i in self.pool_after):
            raise SpecError(f"pool_after {self.pool_after} refers to missing conv layers")
        div = 2 ** len(self.pool_after)
        if self.input_size < div or self.input_size % div:
            raise SpecError(f"input_size {self.input_size} is not divisible by {div}")
        if not self.fc_widths or self.fc_widths[-1] != self.num_classes:
            raise SpecError(f"last FC width {self.fc_widths[-1:]} != num_classes {self.num_classes}")
        if not 0 <= self.dropout_p < 1:
            raise SpecError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def final_size(self) -> int:
        return self.input_size // 2 ** len(self.pool_after)

    @property
    def flatten_width(self) -> int:
        return self.conv_channels[-1] * self.final_size ** 2


def parameter_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of all parameters, in declaration order."""
    shapes = []
    cin = spec.input_channels
    for i, cout in enumerate(spec.conv_channels, start=1):
        shapes.append((f"conv{i}.weight", (cout, cin, 3, 3)))
        shapes.append((f"conv{i}.bias", (cout,)))
        cin = cout
    width = spec.flatten_width
    for j, out in enumerate(spec.fc_widths, start=1):
        shapes.append((f"fc{j}.weight", (width, out)))
        shapes.append((f"fc{j}.bias", (out,)))
        width = out
    return shapes


def shape_trace(spec: ModelSpec, batch: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape at every capture point, computed without allocating anything."""
    spec.validate()
    trace = [("input", (batch, spec.input_channels, spec.input_size, spec.input_size))]
    size = spec.input_size
    pool = 0
    for i, c in enumerate(spec.conv_channels, start=1):
        trace.append((f"conv{i}", (batch, c, size, size)))
        trace.append((f"relu{i}", (batch, c, size, size)))
        if i in spec.pool_after:
            pool += 1
            size //= 2
            trace.append((f"pool{pool}", (batch, c, size, size)))
    trace.append(("flatten", (batch, spec.flatten_width)))
    for j, w in enumerate(spec.fc_widths, start=1):
        trace.append((f"fc{j}", (batch, w)))
    return trace


@dataclass
class ModelState:
    spec: ModelSpec
    parameters: list[ParamTensor]
    rng_seed: int
    by_name: dict[str, ParamTensor] = field(init=False, repr=False)

    def __post_init__(self):
        self.by_name = {p.name: p for p in self.parameters}

    @property
    def dtype(self):
        return self.parameters[0].dtype

    def param(self, name: str) -> ParamTensor:
        return self.by_name[name]

    def get_weights(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters]

    def set_weights(self, arrays: Iterable[np.ndarray]) -> None:
        for p, a in zip(self.parameters, arrays, strict=True):
            if a.shape != p.shape:
                raise PreconditionError(f"{p.name}: shape {a.shape} != {p.shape}")
            p.data[...] = a

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters)


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> ModelState:
    """Allocate parameters: He-normal weights (std sqrt(2/fan_in)), zero biases.

    The output layer starts at zero so the untrained network predicts the
    uniform distribution (loss exactly ln(num_classes)).
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    params = []
    output_layer = f"fc{len(spec.fc_widths)}.weight"
    for name, shape in parameter_shapes(spec):
        if name.endswith(".bias") or name == output_layer:
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            data = rng.standard_normal(shape, dtype=np.float64 if dtype == np.float64 else np.float32)
            data *= math.sqrt(2.0 / fan_in)
            data = data.astype(dtype, copy=False)
        params.append(ParamTensor(data, name=name))
    return ModelState(spec, params, seed)


CONV_TAGS = {f"{kind}{i}" for kind in ("conv", "relu") for i in range(1, 7)}


def _check_input(spec: ModelSpec, x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != spec.input_channels:
        raise PreconditionError(f"expected N,{spec.input_channels},S,S images, got {x.shape}")
    if x.shape[2] != spec.input_size or x.shape[3] != spec.input_size:
        raise PreconditionError(
            f"expected {spec.input_size}x{spec.input_size} images, got {x.shape[2]}x{x.shape[3]}")


def forward(model: ModelState, images, training: bool = False, seed: int = 0,
            capture: Optional[dict] = None, stop_at: Optional[str] = None) -> Tensor:
    """Run the network and return logits.

    ``capture`` maps tag names (``conv3``, ``relu3``, ``pool2``, ``flatten``,
    ``fc1``...) to ``None``; matching activations are copied into it. FC tags
    refer to post-ReLU outputs for hidden layers and raw logits for the last.
    ``stop_at`` returns the activation at that tag instead of the logits.
    ``seed`` drives the dropout masks and only matters when ``training``.
    """
    spec = model.spec
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=model.dtype))
    _check_input(spec, x.data)

    def tap(tag, t):
        if capture is not None and tag in capture:
            capture[tag] = t.data.copy()
        return tag == stop_at

    pool = 0
    for i in range(1, len(spec.conv_channels) + 1):
        x = ops.conv2d(x, model.param(f"conv{i}.weight"), model.param(f"conv{i}.bias"))
        if tap(f"conv{i}", x):
            return x
        x = ops.relu(x)
        if tap(f"relu{i}", x):
            return x
        if i in spec.pool_after:
            pool += 1
            x = ops.maxpool2(x)
            if tap(f"pool{pool}", x):
                return x
    x = ops.flatten(x)
    if tap("flatten", x):
        return x
    n_fc = len(spec.fc_widths)
    for j in range(1, n_fc + 1):
        x = ops.linear(x, model.param(f"fc{j}.weight"), model.param(f"fc{j}.bias"))
        if j < n_fc:
            x = ops.relu(x)
            if tap(f"fc{j}", x):
                return x
            x = ops.dropout(x, spec.dropout_p, training, seed=(seed * 1_000_003 + j) % 2**63)
        elif tap(f"fc{j}", x):
            return x
    if stop_at is not None:
        raise ConfigurationError(f"unknown tap {stop_at!r}")
    return x


FEATURE_TAPS = ("flatten", "fc1", "fc2")


def extract_features(model: ModelState, images, tap: str = "fc2", batch: int = 32) -> np.ndarray:
    """Activations at ``tap`` with dropout disabled, as an (N, D) matrix."""
    if tap not in FEATURE_TAPS:
        raise ConfigurationError(f"unknown feature tap {tap!r}; choose from {FEATURE_TAPS}")
    images = np.asarray(images)
    rows = []
    for start in range(0, images.shape[0], batch):
        out = forward(model, images[start:start + batch], training=False, stop_at=tap)
        rows.append(out.data)
    return np.concatenate(rows, axis=0)
