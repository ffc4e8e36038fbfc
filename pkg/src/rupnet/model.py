"""RUPNet topology: residual encoders, bridge, upsampling decoders and a
fused-skip 1x1 head.

All parameters live in a ParamStore in a stable registration order that is
shared by ``param_count``, ``build_network`` and the checkpoint writer.
"""

import logging
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

from . import ops
from .errors import InvalidShapeError, ShapeMismatchError
from .tensor import Rng, Tensor, concat_channels, ensure_finite, get_dtype, rng_normal, split_channels

logger = logging.getLogger(__name__)

RUNNING_SUFFIXES = (".running_mean", ".running_var")


class Predictor(Protocol):
    """Anything that maps N x C x H x W images to N x 1 x H x W probabilities"""

    def predict(self, x: Tensor) -> Tensor: ...


class NetworkConfig(BaseModel):
    """Channel widths, image size and flags; fixes topology and parameter count"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    in_channels: PositiveInt = 3
    encoder_channels: tuple[PositiveInt, PositiveInt, PositiveInt] = (16, 32, 64)
    bridge_channels: PositiveInt = 128
    decoder_channels: tuple[PositiveInt, PositiveInt, PositiveInt] = (64, 32, 16)
    image_size: PositiveInt = Field(default=512, description="Square training resolution, divisible by 8")
    decoder_skip_fusion: bool = Field(default=False, description="Concatenate encoder skips into each decoder block")
    bn_eps: float = Field(default=ops.BN_EPS, gt=0)
    bn_momentum: float = Field(default=ops.BN_MOMENTUM, gt=0, le=1)

    @field_validator("image_size")
    @classmethod
    def _divisible_by_eight(cls, value: int) -> int:
        if value % 8:
            raise ValueError(f"image_size must be divisible by 8, got {value}")
        return value


@dataclass
class Parameter:
    value: Tensor
    grad: Tensor
    m: Tensor
    v: Tensor


class ParamStore:
    """Ordered name -> Parameter map with gradient and Adam moment buffers"""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: Tensor) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        param = Parameter(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def accumulate(self, name: str, grad: Tensor):
        self._params[name].grad += grad

    def zero_grad(self):
        for param in self._params.values():
            param.grad.fill(0)

    def count(self) -> int:
        return sum(p.value.size for p in self._params.values())


@dataclass
class ResidualBlockParams:
    """conv3x3-BN-ReLU-conv3x3-BN plus identity or 1x1+BN projection shortcut"""

    name: str
    in_channels: int
    out_channels: int
    conv1: Tensor
    bn1: ops.BatchNormState
    conv2: Tensor
    bn2: ops.BatchNormState
    shortcut: Tensor | None = None
    shortcut_bn: ops.BatchNormState | None = None


@dataclass
class BlockTrace:
    records: dict[str, ops.OpRecord] = field(default_factory=dict)


# Layout


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple[int, ...]
    trainable: bool


def _conv_bn_slots(prefix: str, cin: int, cout: int, k: int) -> list[Slot]:
    return [
        Slot(f"{prefix}.weight", (cout, cin, k, k), True),
        Slot(f"{prefix}_bn.gamma", (cout,), True),
        Slot(f"{prefix}_bn.beta", (cout,), True),
        Slot(f"{prefix}_bn.running_mean", (cout,), False),
        Slot(f"{prefix}_bn.running_var", (cout,), False),
    ]


def block_slots(name: str, cin: int, cout: int) -> list[Slot]:
    slots = _conv_bn_slots(f"{name}.conv1", cin, cout, 3) + _conv_bn_slots(f"{name}.conv2", cout, cout, 3)
    if cin != cout:
        slots += _conv_bn_slots(f"{name}.shortcut", cin, cout, 1)
    return slots


def block_plan(config: NetworkConfig) -> list[tuple[str, int, int]]:
    """(name, in_channels, out_channels) for every residual block, in forward order"""
    e1, e2, e3 = config.encoder_channels
    d1, d2, d3 = config.decoder_channels
    fuse = config.decoder_skip_fusion
    return [
        ("enc1", config.in_channels, e1),
        ("enc2", e1, e2),
        ("enc3", e2, e3),
        ("bridge", e3, config.bridge_channels),
        ("dec1", config.bridge_channels + (e3 if fuse else 0), d1),
        ("dec2", d1 + (e2 if fuse else 0), d2),
        ("dec3", d2 + (e1 if fuse else 0), d3),
    ]


def head_channels(config: NetworkConfig) -> int:
    return config.decoder_channels[2] + sum(config.encoder_channels)


def network_layout(config: NetworkConfig) -> list[Slot]:
    slots = []
    for name, cin, cout in block_plan(config):
        slots += block_slots(name, cin, cout)
    slots.append(Slot("head.weight", (1, head_channels(config), 1, 1), True))
    slots.append(Slot("head.bias", (1,), True))
    return slots


def param_count(config: NetworkConfig) -> int:
    """Trainable scalars: conv weights, head bias, BN gamma/beta (running stats excluded)"""
    return sum(int(np.prod(s.shape)) for s in network_layout(config) if s.trainable)


# Residual block


def residual_block_forward(x: Tensor, p: ResidualBlockParams, mode: str = "train", update_stats: bool = True) -> tuple[Tensor, BlockTrace]:
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ShapeMismatchError(f"{p.name} expects {p.in_channels} input channels, got shape {x.shape}")
    trace = BlockTrace()
    rec = trace.records

    h, rec["conv1"] = ops.conv2d(x, p.conv1)
    h, rec["conv1_bn"] = ops.batchnorm(h, p.bn1, mode, update_stats)
    h, rec["relu1"] = ops.relu(h)
    h, rec["conv2"] = ops.conv2d(h, p.conv2)
    h, rec["conv2_bn"] = ops.batchnorm(h, p.bn2, mode, update_stats)

    if p.shortcut is not None:
        s, rec["shortcut"] = ops.conv2d(x, p.shortcut)
        s, rec["shortcut_bn"] = ops.batchnorm(s, p.shortcut_bn, mode, update_stats)
    else:
        s = x
    y, rec["relu_out"] = ops.relu(h + s)
    return y, trace


def residual_block_backward(trace: BlockTrace, p: ResidualBlockParams, g: Tensor, store: ParamStore) -> Tensor:
    rec = trace.records

    # record keys double as parameter prefixes: conv "w" -> <key>.weight, BN -> <key>.gamma/.beta
    def through(key: str, upstream: Tensor) -> Tensor:
        dx, grads = ops.backward(rec[key], upstream)
        for kind, grad in grads.items():
            store.accumulate(f"{p.name}.{key}.{'weight' if kind == 'w' else kind}", grad)
        return dx

    gz = through("relu_out", g)
    gh = through("conv1", through("conv1_bn", through("relu1", through("conv2", through("conv2_bn", gz)))))
    if p.shortcut is not None:
        gs = through("shortcut", through("shortcut_bn", gz))
    else:
        gs = gz
    return gh + gs


# Network


class Network:
    """RUPNet with its parameters, running statistics and last train-mode trace"""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.params = ParamStore()
        self.buffers: dict[str, Tensor] = {}
        self.blocks: dict[str, ResidualBlockParams] = {}
        self.freeze_batchnorm = False
        self._trace = None

    # construction

    def _allocate(self, rng: Rng | None, dtype):
        for slot in network_layout(self.config):
            if not slot.trainable:
                fill = 1.0 if slot.name.endswith(".running_var") else 0.0
                self.buffers[slot.name] = np.full(slot.shape, fill, dtype=dtype)
            elif slot.name.endswith(".weight"):
                fan_in = int(np.prod(slot.shape[1:]))
                value = rng_normal(rng, slot.shape, 0.0, float(np.sqrt(2.0 / fan_in))) if rng else np.zeros(slot.shape)
                self.params.add(slot.name, value.astype(dtype))
            else:
                fill = 1.0 if slot.name.endswith(".gamma") else 0.0
                self.params.add(slot.name, np.full(slot.shape, fill, dtype=dtype))

        for name, cin, cout in block_plan(self.config):
            self.blocks[name] = ResidualBlockParams(
                name=name,
                in_channels=cin,
                out_channels=cout,
                conv1=self.params[f"{name}.conv1.weight"].value,
                bn1=self._bn_state(f"{name}.conv1_bn"),
                conv2=self.params[f"{name}.conv2.weight"].value,
                bn2=self._bn_state(f"{name}.conv2_bn"),
                shortcut=self.params[f"{name}.shortcut.weight"].value if cin != cout else None,
                shortcut_bn=self._bn_state(f"{name}.shortcut_bn") if cin != cout else None,
            )

    def _bn_state(self, prefix: str) -> ops.BatchNormState:
        return ops.BatchNormState(
            gamma=self.params[f"{prefix}.gamma"].value,
            beta=self.params[f"{prefix}.beta"].value,
            running_mean=self.buffers[f"{prefix}.running_mean"],
            running_var=self.buffers[f"{prefix}.running_var"],
            momentum=self.config.bn_momentum,
            eps=self.config.bn_eps,
        )

    @property
    def dtype(self):
        return self.params["head.bias"].value.dtype

    def state(self) -> list[tuple[str, Tensor]]:
        """Parameters and running statistics in layout order"""
        return [(s.name, self.params[s.name].value if s.trainable else self.buffers[s.name]) for s in network_layout(self.config)]

    def param_count(self) -> int:
        return self.params.count()

    # forward / backward

    def _check_input(self, x: Tensor, mode: str):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatchError(f"expected N x {self.config.in_channels} x H x W input, got {x.shape}")
        _, _, h, w = x.shape
        if h % 8 or w % 8:
            raise InvalidShapeError(f"input height and width must be divisible by 8, got {h}x{w}")
        if mode == "train" and (h, w) != (self.config.image_size, self.config.image_size):
            raise InvalidShapeError(f"train mode expects {self.config.image_size}x{self.config.image_size} inputs, got {h}x{w}")

    def forward(self, x: Tensor, mode: str = "infer") -> Tensor:
        """Probability mask N x 1 x H x W; train mode keeps a trace for ``backward``"""
        self._check_input(x, mode)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        update = mode == "train" and not self.freeze_batchnorm
        trace: dict = {"blocks": {}, "pools": [], "ups": [], "fusion": []}

        def block(name: str, inp: Tensor) -> Tensor:
            out, trace["blocks"][name] = residual_block_forward(inp, self.blocks[name], mode, update)
            return out

        skips = []
        h = x
        for name in ("enc1", "enc2", "enc3"):
            h = block(name, h)
            skips.append(h)
            h, rec = ops.maxpool2x2(h)
            trace["pools"].append(rec)
        h = block("bridge", h)

        for name, skip in zip(("dec1", "dec2", "dec3"), reversed(skips), strict=True):
            h, rec = ops.bilinear_upsample(h, 2)
            trace["ups"].append(rec)
            if self.config.decoder_skip_fusion:
                trace["fusion"].append((h.shape[1], skip.shape[1]))
                h = concat_channels([h, skip])
            h = block(name, h)

        s2, trace["skip2"] = ops.bilinear_upsample(skips[1], 2)
        s3, trace["skip3"] = ops.bilinear_upsample(skips[2], 4)
        fused = concat_channels([h, skips[0], s2, s3])
        trace["head_split"] = [h.shape[1], skips[0].shape[1], s2.shape[1], s3.shape[1]]
        logits, trace["head"] = ops.conv2d(fused, self.params["head.weight"].value, self.params["head.bias"].value)
        y, trace["sigmoid"] = ops.sigmoid(logits)

        if mode == "train":
            self._trace = trace
        return y

    def predict(self, x: Tensor) -> Tensor:
        return ensure_finite(self.forward(x, "infer"), "network prediction")

    def backward(self, upstream: Tensor) -> Tensor:
        """Accumulate parameter gradients for the last train-mode forward; returns d(input)"""
        if self._trace is None:
            raise RuntimeError("backward called without a train-mode forward")
        trace = self._trace
        g, _ = ops.backward(trace["sigmoid"], upstream)
        g, grads = ops.backward(trace["head"], g)
        self.params.accumulate("head.weight", grads["w"])
        self.params.accumulate("head.bias", grads["b"])
        g_dec, g_e1, g_s2, g_s3 = split_channels(g, trace["head_split"])
        g_skips = [g_e1, ops.backward(trace["skip2"], g_s2)[0], ops.backward(trace["skip3"], g_s3)[0]]

        for i, name in reversed(list(enumerate(("dec1", "dec2", "dec3")))):
            g_dec = residual_block_backward(trace["blocks"][name], self.blocks[name], g_dec, self.params)
            if self.config.decoder_skip_fusion:
                g_dec, g_skip = split_channels(g_dec, trace["fusion"][i])
                g_skips[2 - i] = g_skips[2 - i] + g_skip
            g_dec, _ = ops.backward(trace["ups"][i], g_dec)

        g = residual_block_backward(trace["blocks"]["bridge"], self.blocks["bridge"], g_dec, self.params)
        for i, name in reversed(list(enumerate(("enc1", "enc2", "enc3")))):
            g, _ = ops.backward(trace["pools"][i], g)
            g = residual_block_backward(trace["blocks"][name], self.blocks[name], g + g_skips[i], self.params)
        return g

    # introspection

    def summary(self, size: int | None = None) -> list[dict]:
        """Per-block rows: name, channels, output spatial size and parameter count"""
        size = size or self.config.image_size
        spatial = {"enc1": size, "enc2": size // 2, "enc3": size // 4, "bridge": size // 8, "dec1": size // 4, "dec2": size // 2, "dec3": size}
        rows = []
        for name, cin, cout in block_plan(self.config):
            count = sum(int(np.prod(s.shape)) for s in block_slots(name, cin, cout) if s.trainable)
            rows.append({"name": name, "in_channels": cin, "out_channels": cout, "output": (cout, spatial[name], spatial[name]), "params": count})
        head_in = head_channels(self.config)
        rows.append({"name": "head", "in_channels": head_in, "out_channels": 1, "output": (1, size, size), "params": head_in + 1})
        return rows


def build_network(config: NetworkConfig | dict, rng: Rng) -> Network:
    """Allocate and initialize a network (fan-in scaled normal conv weights)"""
    from .config import parse_section

    if not isinstance(config, NetworkConfig):
        config = parse_section(NetworkConfig, config)
    net = Network(config)
    net._allocate(rng, get_dtype())
    logger.debug(f"Built RUPNet with {net.param_count()} trainable parameters")
    return net


def empty_network(config: NetworkConfig) -> Network:
    """Zero-initialized network with the layout of ``config`` (checkpoint loading)"""
    net = Network(config)
    net._allocate(None, np.float32)
    return net


def forward(net: Network, x: Tensor, mode: str = "infer") -> Tensor:
    return net.forward(x, mode)
