"""Central finite-difference checks of every backward rule, in 64-bit mode.

Relative error per tensor is max|analytic - numeric| divided by the larger
of the two gradients' max magnitudes, never less than ``SCALE_FLOOR``.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .losses import combined_loss, combined_loss_grad
from .model import NetworkConfig, ParamStore, ResidualBlockParams, build_network, residual_block_backward, residual_block_forward
from .tensor import Rng, Tensor, float64_mode
from .train import TrainConfig

logger = logging.getLogger(__name__)

STEP = 1e-5
SCALE_FLOOR = 1e-8
TOLERANCE = 1e-4
TINY_CONFIG = NetworkConfig(encoder_channels=(2, 4, 8), bridge_channels=16, decoder_channels=(8, 4, 2), image_size=8)


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = TOLERANCE

    @property
    def failed(self) -> list[str]:
        return [kind for kind, err in self.errors.items() if not err < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), SCALE_FLOOR)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _entries(array: Tensor, gen: np.random.Generator, max_entries: int | None) -> np.ndarray:
    if max_entries is None or array.size <= max_entries:
        return np.arange(array.size)
    return np.sort(gen.choice(array.size, size=max_entries, replace=False))


def numeric_gradient(loss: Callable[[], float], array: Tensor, entries: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of ``loss`` w.r.t. ``array.flat[entries]`` (perturbed in place)"""
    grads = np.empty(len(entries))
    for k, i in enumerate(entries):
        old = array.flat[i]
        array.flat[i] = old + h
        plus = loss()
        array.flat[i] = old - h
        minus = loss()
        array.flat[i] = old
        grads[k] = (plus - minus) / (2 * h)
    return grads


def _compare(loss: Callable[[], float], pairs: list[tuple[Tensor, Tensor]], gen: np.random.Generator, max_entries: int | None) -> float:
    """Worst error over (array, analytic gradient) pairs"""
    worst = 0.0
    for array, analytic in pairs:
        entries = _entries(array, gen, max_entries)
        numeric = numeric_gradient(loss, array, entries)
        worst = max(worst, relative_error(analytic.reshape(-1)[entries], numeric))
    return worst


def _projected(forward: Callable[[], Tensor], projection: Tensor) -> Callable[[], float]:
    # scalar loss sum(y * R) has upstream gradient R
    return lambda: float(np.sum(forward() * projection))


def check_op(forward: Callable[[], tuple[Tensor, ops.OpRecord]], inputs: dict[str, Tensor], gen: np.random.Generator, max_entries: int | None, param_keys: dict[str, str] | None = None) -> float:
    """Check d(input) and parameter gradients of one primitive.

    ``inputs`` maps "x" and parameter names to arrays; ``param_keys`` maps
    each parameter name to the key ``backward`` reports it under.
    """
    y, rec = forward()
    projection = gen.standard_normal(y.shape)
    dx, grads = ops.backward(rec, projection)
    pairs = [(inputs["x"], dx)]
    for name, key in (param_keys or {}).items():
        pairs.append((inputs[name], grads[key]))
    return _compare(_projected(lambda: forward()[0], projection), pairs, gen, max_entries)


def check_layers(seed: int = 0, max_entries: int | None = None) -> dict[str, float]:
    gen = Rng(seed, "gradcheck").generator
    errors = {}

    def conv_error(k: int) -> float:
        x = gen.standard_normal((1, 3, 8, 8))
        w = gen.standard_normal((4, 3, k, k))
        b = gen.standard_normal(4)
        return check_op(lambda: ops.conv2d(x, w, b), {"x": x, "w": w, "b": b}, gen, max_entries, {"w": "w", "b": "b"})

    errors["conv2d"] = max(conv_error(3), conv_error(1))

    def bn_error(mode: str) -> float:
        x = gen.standard_normal((1, 4, 8, 8)) * 2.0 + 0.5
        state = ops.BatchNormState(gen.uniform(0.5, 1.5, 4), gen.standard_normal(4), gen.standard_normal(4), gen.uniform(0.5, 2.0, 4))
        return check_op(lambda: ops.batchnorm(x, state, mode, update_stats=False), {"x": x, "gamma": state.gamma, "beta": state.beta}, gen, max_entries, {"gamma": "gamma", "beta": "beta"})

    errors["batchnorm"] = max(bn_error("train"), bn_error("infer"))

    x = gen.standard_normal((1, 4, 8, 8))
    x[np.abs(x) < 1e-2] += 0.05  # keep away from the kink
    errors["relu"] = check_op(lambda: ops.relu(x), {"x": x}, gen, max_entries)

    x = gen.permutation(4 * 8 * 8).reshape(1, 4, 8, 8) / 16.0
    errors["maxpool2x2"] = check_op(lambda: ops.maxpool2x2(x), {"x": x}, gen, max_entries)

    x = gen.standard_normal((1, 2, 4, 4))
    errors["bilinear_upsample"] = max(check_op(lambda f=f: ops.bilinear_upsample(x, f), {"x": x}, gen, max_entries) for f in (2, 4))

    x = gen.standard_normal((1, 4, 8, 8)) * 2.0
    errors["sigmoid"] = check_op(lambda: ops.sigmoid(x), {"x": x}, gen, max_entries)

    pred = gen.uniform(0.1, 0.9, (1, 1, 2, 2))
    target = (gen.random((1, 1, 2, 2)) < 0.5).astype(np.float64)
    cfg = TrainConfig()
    errors["combined_loss"] = _compare(lambda: combined_loss(pred, target, cfg), [(pred, combined_loss_grad(pred, target, cfg))], gen, max_entries)
    return errors


def _randomize(store: ParamStore, gen: np.random.Generator):
    # move BN affine parameters off gamma=1, beta=0 so no activation sits on a ReLU kink
    for name, param in store.items():
        if name.endswith(".gamma"):
            param.value[...] = gen.uniform(0.5, 1.5, param.value.shape)
        elif name.endswith(".beta"):
            param.value[...] = gen.uniform(-0.5, 0.5, param.value.shape)


def check_residual_block(seed: int = 0, max_entries: int | None = None) -> float:
    gen = Rng(seed, "gradcheck", 1).generator
    store = ParamStore()

    def bn(prefix: str, c: int) -> ops.BatchNormState:
        return ops.BatchNormState(store.add(f"blk.{prefix}.gamma", np.ones(c)).value, store.add(f"blk.{prefix}.beta", np.zeros(c)).value, np.zeros(c), np.ones(c))

    p = ResidualBlockParams(
        name="blk",
        in_channels=2,
        out_channels=4,
        conv1=store.add("blk.conv1.weight", gen.standard_normal((4, 2, 3, 3)) * 0.5).value,
        bn1=bn("conv1_bn", 4),
        conv2=store.add("blk.conv2.weight", gen.standard_normal((4, 4, 3, 3)) * 0.5).value,
        bn2=bn("conv2_bn", 4),
        shortcut=store.add("blk.shortcut.weight", gen.standard_normal((4, 2, 1, 1))).value,
        shortcut_bn=bn("shortcut_bn", 4),
    )
    _randomize(store, gen)
    x = gen.standard_normal((1, 2, 8, 8))
    projection = gen.standard_normal((1, 4, 8, 8))

    y, trace = residual_block_forward(x, p, "train", update_stats=False)
    dx = residual_block_backward(trace, p, projection, store)
    pairs = [(x, dx)] + [(param.value, param.grad.copy()) for _, param in store.items()]
    loss = _projected(lambda: residual_block_forward(x, p, "train", update_stats=False)[0], projection)
    return _compare(loss, pairs, gen, max_entries)


def check_network(seed: int = 0, max_entries: int | None = None) -> float:
    """End-to-end loss gradient of the tiny network on a 1x3x8x8 input"""
    gen = Rng(seed, "gradcheck", 2).generator
    net = build_network(TINY_CONFIG, Rng(seed, "init"))
    net.freeze_batchnorm = True
    _randomize(net.params, gen)
    x = gen.random((1, 3, 8, 8))
    target = (gen.random((1, 1, 8, 8)) < 0.5).astype(np.float64)
    cfg = TrainConfig()

    def loss() -> float:
        return combined_loss(net.forward(x, "train"), target, cfg)

    net.params.zero_grad()
    pred = net.forward(x, "train")
    net.backward(combined_loss_grad(pred, target, cfg))
    pairs = [(param.value, param.grad.copy()) for _, param in net.params.items()]
    return _compare(loss, pairs, gen, max_entries)


def run_gradcheck(seed: int = 0, max_entries: int | None = None, tolerance: float = TOLERANCE) -> GradcheckReport:
    """Every layer kind, the residual block and the whole network, once each"""
    report = GradcheckReport(tolerance=tolerance)
    with float64_mode():
        report.errors.update(check_layers(seed, max_entries))
        report.errors["residual_block"] = check_residual_block(seed, max_entries)
        report.errors["network"] = check_network(seed, max_entries)
    for kind, err in report.errors.items():
        status = "ok" if err < tolerance else "FAIL"
        logger.info(f"{kind:>18}: max relative error {err:.3e} [{status}]")
    return report
