"""ADRD network: weighted dense blocks, spatial attention, residual deconvolution.

Data flow for a ``N x 3 x h x w`` input in ``[0, 1]``::

    PReLU(conv3x3)                       -> primary features (P channels)
    for each group g:  in_g -> concat(in_g, SA(in_g, WDB(in_g)))   (channels double)
    ReLU(conv1x1)                        -> global bottleneck
    log2(scale) residual-deconvolution stages (x2 each)
    conv3x3                              -> 3 channels, unclamped
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .kvtext import dataclass_from_kv, format_kv, parse_kv
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class NetworkConfig:
    primary_channels: int = 32
    growth_rate: int = 32
    dense_layers_per_group: tuple[int, ...] = field(default=(6, 12, 48, 32), metadata={"kv": "int_tuple"})
    lam: float = 0.5
    global_bottleneck_channels: int = 256
    scale_factor: int = 4
    # width of the 1x1 conv inside each dense layer, as a multiple of growth_rate
    dense_inner_factor: int = 2
    weighted_dense: bool = True
    attention: bool = True
    residual_deconv: bool = True
    prelu_init: float = 0.25
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dense_layers_per_group", tuple(int(n) for n in self.dense_layers_per_group))
        self.validate()

    @classmethod
    def full(cls) -> "NetworkConfig":
        return cls()

    @classmethod
    def lightweight(cls, growth_rate: int = 16, **kw) -> "NetworkConfig":
        """Reduced network used for module ablations: groups of 6, 10, 14, 10 layers."""
        return cls(growth_rate=growth_rate, dense_layers_per_group=(6, 10, 14, 10), **kw)

    @classmethod
    def tiny(cls, **kw) -> "NetworkConfig":
        base = dict(
            primary_channels=8,
            growth_rate=8,
            dense_layers_per_group=(3, 3),
            global_bottleneck_channels=16,
        )
        base.update(kw)
        return cls(**base)

    def validate(self) -> None:
        if self.scale_factor < 2 or self.scale_factor & (self.scale_factor - 1):
            raise ValueError(f"scale_factor must be a power of two >= 2, got {self.scale_factor}")
        for name in ("primary_channels", "growth_rate", "global_bottleneck_channels", "dense_inner_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.dense_layers_per_group:
            raise ValueError("at least one group is required")
        if any(n < 0 for n in self.dense_layers_per_group):
            raise ValueError("dense layer counts must be non-negative")

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.scale_factor))

    def group_input_channels(self) -> list[int]:
        return [self.primary_channels * 2**g for g in range(len(self.dense_layers_per_group))]

    def group_output_channels(self) -> list[int]:
        return [2 * c for c in self.group_input_channels()]

    def wdb_output_channels(self) -> list[int]:
        return [
            c + n * self.growth_rate
            for c, n in zip(self.group_input_channels(), self.dense_layers_per_group)
        ]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def to_kv(self) -> str:
        return format_kv(self.to_dict())

    @classmethod
    def from_kv(cls, text: str | dict) -> "NetworkConfig":
        items = parse_kv(text) if isinstance(text, str) else text
        return dataclass_from_kv(cls, items, aliases={"lambda": "lam"})


class Module:
    """Minimal container: parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _he_normal(rng: np.random.Generator, shape, fan_in: float, dtype, gain: float = 2.0) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(gain / fan_in)).astype(dtype)


class Conv2d(Module):
    """'Same'-padded convolution; ``gain`` is 2 when the input comes out of a rectifier."""

    def __init__(self, cin: int, cout: int, k: int, rng, dtype=np.float32, gain: float = 2.0):
        if k % 2 == 0:
            raise ValueError("only odd kernel sizes keep extents with 'same' padding")
        self.padding = k // 2
        self.weight = Parameter(_he_normal(rng, (cout, cin, k, k), cin * k * k, dtype, gain))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding=self.padding)


class ConvTranspose2d(Module):
    """x2 deconvolution: 4x4 kernel, stride 2, padding 1."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32, k: int = 4, stride: int = 2, padding: int = 1,
                 gain: float = 2.0):
        self.stride, self.padding = stride, padding
        # each output pixel sees (k/stride)^2 taps per input channel
        self.weight = Parameter(_he_normal(rng, (cin, cout, k, k), cin * k * k / stride**2, dtype, gain))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class PReLU(Module):
    def __init__(self, init: float = 0.25, dtype=np.float32):
        self.slope = Parameter(np.asarray(init, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.prelu(x, self.slope)


class DenseLayer(Module):
    """Layer ``index`` of a dense block: ``H([w_0 x_0, ..., w_{l-1} x_{l-1}])``.

    H is ReLU -> 1x1 conv -> 3x3 conv producing ``growth_rate`` channels.
    With ``weighted=False`` the edge weights are the constant 1 and the layer
    is the ordinary dense layer.
    """

    def __init__(self, index: int, head_channels: int, growth_rate: int, inner: int, rng,
                 dtype=np.float32, weighted: bool = True):
        if index < 1:
            raise ValueError("dense layer indices start at 1")
        self.index = index
        self.in_channels = head_channels + (index - 1) * growth_rate
        self.conv1 = Conv2d(self.in_channels, inner, 1, rng, dtype)
        self.conv3 = Conv2d(inner, growth_rate, 3, rng, dtype, gain=1.0)
        self.edge_weights = (
            [Parameter(np.ones((), dtype=dtype)) for _ in range(index)] if weighted else None
        )

    @property
    def weighted(self) -> bool:
        return self.edge_weights is not None

    def omega(self) -> list[float]:
        if self.edge_weights is None:
            return [1.0] * self.index
        return [float(w.data) for w in self.edge_weights]

    def __call__(self, features: list[Tensor]) -> Tensor:
        if len(features) != self.index:
            raise ValueError(f"dense layer {self.index} needs {self.index} feature maps, got {len(features)}")
        if self.edge_weights is not None:
            features = [T.scale(x, w) for x, w in zip(features, self.edge_weights)]
        h = T.concat_channels(features)
        if h.shape[1] != self.in_channels:
            raise ValueError(f"dense layer {self.index}: expected {self.in_channels} channels, got {h.shape[1]}")
        return self.conv3(self.conv1(T.relu(h)))


class WeightedDenseBlock(Module):
    def __init__(self, head_channels: int, growth_rate: int, n_layers: int, inner: int, rng,
                 dtype=np.float32, weighted: bool = True):
        self.head_channels = head_channels
        self.growth_rate = growth_rate
        self.layers = [
            DenseLayer(i, head_channels, growth_rate, inner, rng, dtype, weighted)
            for i in range(1, n_layers + 1)
        ]

    @property
    def out_channels(self) -> int:
        return self.head_channels + len(self.layers) * self.growth_rate

    def __call__(self, x0: Tensor) -> Tensor:
        if x0.shape[1] != self.head_channels:
            raise ValueError(f"block expects {self.head_channels} channels, got {x0.shape[1]}")
        if not self.layers:
            return x0
        features = [x0]
        for layer in self.layers:
            features.append(layer(features))
        return T.concat_channels(features)


class SpatialAttention(Module):
    """Bottleneck plus attentive enhancement: ``lam * tanh(f_att(|x_in - x_bot|)) * x_bot + x_bot``.

    ``f_att`` is 3x3 conv -> ReLU -> 3x3 conv -> ReLU -> 1x1 conv, all widths
    equal to the head channel count. With ``enabled=False`` only the
    bottleneck remains (the noSA ablation).
    """

    def __init__(self, head_channels: int, wdb_channels: int, lam: float, rng,
                 dtype=np.float32, enabled: bool = True):
        self.lam = float(lam)
        self.bottleneck = Conv2d(wdb_channels, head_channels, 1, rng, dtype, gain=1.0)
        self.enabled = enabled
        if enabled:
            self.att1 = Conv2d(head_channels, head_channels, 3, rng, dtype)
            self.att2 = Conv2d(head_channels, head_channels, 3, rng, dtype)
            self.att3 = Conv2d(head_channels, head_channels, 1, rng, dtype)

    def stages(self, x_in: Tensor, wdb_out: Tensor) -> dict[str, Tensor]:
        x_bot = T.relu(self.bottleneck(wdb_out))
        if x_bot.shape != x_in.shape:
            raise ValueError(f"attention: bottleneck output {x_bot.shape} does not match head {x_in.shape}")
        if not self.enabled:
            return {"bot": x_bot, "enhanced": x_bot}
        x_res = T.abs_diff(x_in, x_bot)
        x_att = T.tanh(self.att3(T.relu(self.att2(T.relu(self.att1(x_res))))))
        x_ram = T.hadamard(x_att, x_bot)
        x_enh = T.add(T.scale(x_ram, self.lam), x_bot)
        return {"bot": x_bot, "res": x_res, "att": x_att, "ram": x_ram, "enhanced": x_enh}

    def __call__(self, x_in: Tensor, wdb_out: Tensor) -> Tensor:
        return self.stages(x_in, wdb_out)["enhanced"]


class FeatureGroup(Module):
    def __init__(self, head_channels: int, cfg: NetworkConfig, n_layers: int, rng, dtype=np.float32):
        inner = cfg.dense_inner_factor * cfg.growth_rate
        self.wdb = WeightedDenseBlock(head_channels, cfg.growth_rate, n_layers, inner, rng, dtype, cfg.weighted_dense)
        self.sa = SpatialAttention(head_channels, self.wdb.out_channels, cfg.lam, rng, dtype, cfg.attention)

    def __call__(self, x: Tensor) -> Tensor:
        return T.concat_channels([x, self.sa(x, self.wdb(x))])


class ResidualDeconvStage(Module):
    """x2 upsampling: ``PReLU(deconv(x)) + conv1x1(nearest_up(x))``.

    With ``residual=False`` only the deconvolution path is kept (plain
    deconvolution baseline).
    """

    def __init__(self, channels: int, rng, dtype=np.float32, residual: bool = True, prelu_init: float = 0.25,
                 gain: float = 2.0):
        # the two paths are summed, so each starts at half the variance
        path_gain = gain / 2 if residual else gain
        self.deconv = ConvTranspose2d(channels, channels, rng, dtype, gain=path_gain)
        self.act = PReLU(prelu_init, dtype)
        self.residual = residual
        if residual:
            self.low = Conv2d(channels, channels, 1, rng, dtype, gain=path_gain)

    def __call__(self, x: Tensor) -> Tensor:
        high = self.act(self.deconv(x))
        if not self.residual:
            return high
        return T.add(high, self.low(T.nearest_upsample(x, 2)))


class ADRD(Module):
    def __init__(self, config: NetworkConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.init_seed)
        c = config.primary_channels
        self.primary = Conv2d(3, c, 3, rng, dtype, gain=1.0)
        self.primary_act = PReLU(config.prelu_init, dtype)
        self.groups = [
            FeatureGroup(cin, config, n, rng, dtype)
            for cin, n in zip(config.group_input_channels(), config.dense_layers_per_group)
        ]
        self.global_bottleneck = Conv2d(config.group_output_channels()[-1], config.global_bottleneck_channels, 1, rng,
                                        dtype, gain=1.0)
        # only the first stage reads rectified features
        self.upsample = [
            ResidualDeconvStage(config.global_bottleneck_channels, rng, dtype, config.residual_deconv,
                                config.prelu_init, gain=2.0 if s == 0 else 1.0)
            for s in range(config.n_stages)
        ]
        self.reconstruct = Conv2d(config.global_bottleneck_channels, 3, 3, rng, dtype, gain=1.0)
        for name, p in self.named_parameters():
            p.name = name

    def __call__(self, x, trace: list | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x h x w input, got {x.shape}")
        h = self.primary_act(self.primary(x))
        for g, group in enumerate(self.groups):
            if trace is not None:
                trace.append((f"group{g}.in", h.shape))
            h = group(h)
            if trace is not None:
                trace.append((f"group{g}.out", h.shape))
        h = T.relu(self.global_bottleneck(h))
        if trace is not None:
            trace.append(("global_bottleneck", h.shape))
        for s, stage in enumerate(self.upsample):
            h = stage(h)
            if trace is not None:
                trace.append((f"upsample{s}", h.shape))
        return self.reconstruct(h)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def dense_blocks(self) -> list[WeightedDenseBlock]:
        return [g.wdb for g in self.groups]


def export_weight_matrices(net: ADRD) -> list[list[list[float]]]:
    """Edge weights per block as a ragged lower-triangular matrix.

    Row ``l - 1`` holds the ``l`` weights that dense layer ``l`` applies to
    ``x_0 .. x_{l-1}``.
    """
    return [[layer.omega() for layer in block.layers] for block in net.dense_blocks()]


def format_weight_matrices(matrices: list[list[list[float]]]) -> str:
    lines = []
    for b, rows in enumerate(matrices, 1):
        lines.append(f"# block {b}: {len(rows)} dense layers")
        for l, row in enumerate(rows, 1):
            lines.append(f"layer {l:3d}: " + " ".join(f"{w:.9g}" for w in row))
        lines.append("")
    return "\n".join(lines)
