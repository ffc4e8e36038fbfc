#!/usr/bin/env python3
"""Tests for residual blocks, network topology, parameter accounting and checkpoints."""

import os
import struct
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from rupnet import ops
from rupnet.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from rupnet.errors import ConfigurationError, CorruptCheckpointError, InvalidShapeError, NumericError, ShapeMismatchError
from rupnet.model import NetworkConfig, ResidualBlockParams, block_slots, build_network, forward, param_count, residual_block_forward
from rupnet.tensor import Rng

SMALL = NetworkConfig(encoder_channels=(4, 8, 16), bridge_channels=32, decoder_channels=(16, 8, 4), image_size=16)


def oracle_block(cin, cout):
    # two 3x3 convs, two BN affine pairs, optional 1x1 projection with its own BN
    count = 9 * cin * cout + 9 * cout * cout + 2 * cout + 2 * cout
    if cin != cout:
        count += cin * cout + 2 * cout
    return count


def oracle_count(cfg):
    e1, e2, e3 = cfg.encoder_channels
    d1, d2, d3 = cfg.decoder_channels
    b = cfg.bridge_channels
    fuse = cfg.decoder_skip_fusion
    total = oracle_block(cfg.in_channels, e1) + oracle_block(e1, e2) + oracle_block(e2, e3) + oracle_block(e3, b)
    total += oracle_block(b + (e3 if fuse else 0), d1) + oracle_block(d1 + (e2 if fuse else 0), d2) + oracle_block(d2 + (e1 if fuse else 0), d3)
    return total + (d3 + e1 + e2 + e3) + 1


def block_params(cin, cout, gen, zero=False):
    def bn(c):
        return ops.BatchNormState(np.zeros(c) if zero else np.ones(c), np.zeros(c), np.zeros(c), np.ones(c))

    def weight(*shape):
        return np.zeros(shape) if zero else gen.standard_normal(shape) * 0.3

    projection = cin != cout
    return ResidualBlockParams(
        name="blk",
        in_channels=cin,
        out_channels=cout,
        conv1=weight(cout, cin, 3, 3),
        bn1=bn(cout),
        conv2=weight(cout, cout, 3, 3),
        bn2=bn(cout),
        shortcut=weight(cout, cin, 1, 1) if projection else None,
        shortcut_bn=bn(cout) if projection else None,
    )


class TestResidualBlock(unittest.TestCase):
    def test_zeroed_residual_branch_is_relu(self):
        x = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
        y, _ = residual_block_forward(x, block_params(2, 2, None, zero=True), "train")
        np.testing.assert_allclose(y, np.maximum(x, 0.0))

    def test_projection_shape(self):
        y, trace = residual_block_forward(np.ones((1, 3, 8, 8)), block_params(3, 16, np.random.default_rng(1)), "train")
        self.assertEqual(y.shape, (1, 16, 8, 8))
        self.assertIn("shortcut", trace.records)

    def test_channel_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            residual_block_forward(np.ones((1, 4, 8, 8)), block_params(3, 16, np.random.default_rng(1)))

    def test_one_to_one_block_count(self):
        slots = block_slots("b", 1, 1)
        self.assertEqual(sum(int(np.prod(s.shape)) for s in slots if s.trainable), 22)
        self.assertFalse(any(s.name.startswith("b.shortcut") for s in slots))


class TestParamCount(unittest.TestCase):
    def test_default_matches_oracle(self):
        cfg = NetworkConfig()
        self.assertEqual(param_count(cfg), oracle_count(cfg))
        self.assertEqual(param_count(cfg), param_count(NetworkConfig()))

    def test_skip_fusion_matches_oracle(self):
        cfg = NetworkConfig(decoder_skip_fusion=True)
        self.assertEqual(param_count(cfg), oracle_count(cfg))

    def test_built_network_matches(self):
        self.assertEqual(build_network(SMALL, Rng(0)).param_count(), param_count(SMALL))

    def test_monotone_in_every_width(self):
        base = NetworkConfig()
        wider = [
            base.model_copy(update={"encoder_channels": (17, 32, 64)}),
            base.model_copy(update={"encoder_channels": (16, 33, 64)}),
            base.model_copy(update={"encoder_channels": (16, 32, 65)}),
            base.model_copy(update={"bridge_channels": 129}),
            base.model_copy(update={"decoder_channels": (65, 32, 16)}),
            base.model_copy(update={"decoder_channels": (64, 33, 16)}),
            base.model_copy(update={"decoder_channels": (64, 32, 17)}),
        ]
        for cfg in wider:
            self.assertGreater(param_count(cfg), param_count(base))


class TestBuildAndForward(unittest.TestCase):
    def test_topology_determinism(self):
        a, b = build_network(SMALL, Rng(1)), build_network(SMALL, Rng(2))
        self.assertEqual([(n, p.value.shape) for n, p in a.params.items()], [(n, p.value.shape) for n, p in b.params.items()])
        self.assertFalse(np.array_equal(a.params["enc1.conv1.weight"].value, b.params["enc1.conv1.weight"].value))

    def test_seeded_build_is_bitwise_identical(self):
        a, b = build_network(NetworkConfig(), Rng(5)), build_network(NetworkConfig(), Rng(5))
        for (name, x), (_, y) in zip(a.state(), b.state(), strict=True):
            self.assertEqual(x.tobytes(), y.tobytes(), name)

    def test_initialization(self):
        net = build_network(NetworkConfig(), Rng(0))
        w = net.params["dec1.conv1.weight"].value
        self.assertAlmostEqual(float(w.std()), np.sqrt(2.0 / (128 * 9)), delta=0.05 * np.sqrt(2.0 / (128 * 9)))
        self.assertTrue(np.all(net.params["enc2.conv2_bn.gamma"].value == 1.0))
        self.assertTrue(np.all(net.params["enc2.conv2_bn.beta"].value == 0.0))
        self.assertEqual(float(net.params["head.bias"].value[0]), 0.0)
        self.assertEqual(net.params["head.weight"].value.shape, (1, 16 + 16 + 32 + 64, 1, 1))

    def test_invalid_config(self):
        with self.assertRaises(ConfigurationError):
            build_network({"image_size": 100}, Rng(0))
        with self.assertRaises(ConfigurationError):
            build_network({"encoder_channels": [0, 8, 16]}, Rng(0))

    def test_batch_shape_and_range(self):
        cfg = SMALL.model_copy(update={"image_size": 64})
        net = build_network(cfg, Rng(0))
        x = np.random.default_rng(0).random((2, 3, 64, 64)).astype(np.float32)
        for mode in ("train", "infer"):
            y = forward(net, x, mode)
            self.assertEqual(y.shape, (2, 1, 64, 64))
            self.assertTrue(np.all((y > 0) & (y < 1)))

    def test_full_resolution_shape(self):
        net = build_network(NetworkConfig(), Rng(0))
        y = net.predict(np.random.default_rng(1).random((1, 3, 512, 512)).astype(np.float32))
        self.assertEqual(y.shape, (1, 1, 512, 512))
        self.assertTrue(np.all((y > 0) & (y < 1)))
        bridge = next(r for r in net.summary(512) if r["name"] == "bridge")
        self.assertEqual(bridge["output"], (128, 64, 64))

    def test_bridge_runs_at_one_eighth(self):
        net = build_network(SMALL, Rng(0))
        net.forward(np.zeros((1, 3, 16, 16), dtype=np.float32), "train")
        self.assertEqual(net._trace["blocks"]["bridge"].records["conv1"].output_shape, (1, 32, 2, 2))

    def test_infer_is_stateless(self):
        net = build_network(SMALL, Rng(0))
        x = np.random.default_rng(2).random((1, 3, 16, 16)).astype(np.float32)
        before = [v.copy() for _, v in net.state()]
        self.assertEqual(net.predict(x).tobytes(), net.predict(x).tobytes())
        for old, (_, new) in zip(before, net.state(), strict=True):
            np.testing.assert_array_equal(old, new)

    def test_predict_rejects_non_finite_output(self):
        net = build_network(SMALL, Rng(0))
        net.params["head.bias"].value[0] = np.nan
        x = np.random.default_rng(2).random((1, 3, 16, 16)).astype(np.float32)
        with self.assertRaises(NumericError) as ctx:
            net.predict(x)
        self.assertIn("network prediction", str(ctx.exception))
        self.assertTrue(np.all(np.isnan(net.forward(x, "infer"))))

    def test_train_updates_running_stats_unless_frozen(self):
        net = build_network(SMALL, Rng(0))
        x = np.random.default_rng(3).random((2, 3, 16, 16)).astype(np.float32)
        net.freeze_batchnorm = True
        net.forward(x, "train")
        self.assertTrue(np.all(net.buffers["enc1.conv1_bn.running_mean"] == 0.0))
        net.freeze_batchnorm = False
        net.forward(x, "train")
        self.assertFalse(np.all(net.buffers["enc1.conv1_bn.running_mean"] == 0.0))

    def test_shape_errors(self):
        net = build_network(SMALL, Rng(0))
        with self.assertRaises(ShapeMismatchError):
            net.forward(np.zeros((1, 1, 16, 16), dtype=np.float32))
        with self.assertRaises(InvalidShapeError):
            net.forward(np.zeros((1, 3, 12, 12), dtype=np.float32))
        with self.assertRaises(InvalidShapeError):
            net.forward(np.zeros((1, 3, 32, 32), dtype=np.float32), "train")

    def test_skip_fusion_keeps_output_shape(self):
        fused = SMALL.model_copy(update={"decoder_skip_fusion": True})
        net = build_network(fused, Rng(0))
        self.assertGreater(net.param_count(), param_count(SMALL))
        y = net.forward(np.random.default_rng(4).random((1, 3, 16, 16)).astype(np.float32), "train")
        self.assertEqual(y.shape, (1, 1, 16, 16))
        net.backward(np.ones_like(y))
        self.assertTrue(all(np.all(np.isfinite(p.grad)) for _, p in net.params.items()))

    def test_backward_fills_every_gradient(self):
        net = build_network(SMALL, Rng(0))
        y = net.forward(np.random.default_rng(5).random((2, 3, 16, 16)).astype(np.float32), "train")
        dx = net.backward(np.random.default_rng(6).standard_normal(y.shape).astype(np.float32))
        self.assertEqual(dx.shape, (2, 3, 16, 16))
        for name, p in net.params.items():
            self.assertTrue(np.any(p.grad), name)


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "net.rupn"
        self.net = build_network(SMALL, Rng(9))
        # move running stats off their initial values
        self.net.forward(np.random.default_rng(9).random((2, 3, 16, 16)).astype(np.float32), "train")
        save_checkpoint(self.net, self.path)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.config, self.net.config)
        for (name, a), (_, b) in zip(self.net.state(), loaded.state(), strict=True):
            self.assertEqual(a.tobytes(), b.tobytes(), name)
        x = np.random.default_rng(10).random((1, 3, 16, 16)).astype(np.float32)
        self.assertEqual(self.net.predict(x).tobytes(), loaded.predict(x).tobytes())
        self.assertEqual(encode_checkpoint(loaded), self.path.read_bytes())

    def test_other_resolution_after_load(self):
        loaded = load_checkpoint(self.path)
        y = loaded.predict(np.random.default_rng(11).random((1, 3, 64, 64)).astype(np.float32))
        self.assertEqual(y.shape, (1, 1, 64, 64))
        self.assertTrue(np.all((y > 0) & (y < 1)))

    def test_truncated(self):
        data = self.path.read_bytes()
        with self.assertRaises(CorruptCheckpointError) as ctx:
            decode_checkpoint(data[:-3])
        self.assertGreater(ctx.exception.offset, 0)
        with self.assertRaises(CorruptCheckpointError):
            decode_checkpoint(data[:10])

    def test_bad_magic_and_version(self):
        data = self.path.read_bytes()
        with self.assertRaises(CorruptCheckpointError) as ctx:
            decode_checkpoint(b"NOPE" + data[4:])
        self.assertEqual(ctx.exception.offset, 0)
        with self.assertRaises(CorruptCheckpointError) as ctx:
            decode_checkpoint(MAGIC + struct.pack("<I", 2) + data[8:])
        self.assertEqual(ctx.exception.offset, 4)

    def test_trailing_bytes(self):
        with self.assertRaises(CorruptCheckpointError):
            decode_checkpoint(self.path.read_bytes() + b"\x00")

    def test_layout(self):
        data = self.path.read_bytes()
        self.assertEqual(data[:4], b"RUPN")
        (config_len,) = struct.unpack("<I", data[8:12])
        self.assertIn(b'"encoder_channels"', data[12 : 12 + config_len])
        self.assertIn(b"enc1.conv1_bn.running_var", data)


if __name__ == "__main__":
    unittest.main()
