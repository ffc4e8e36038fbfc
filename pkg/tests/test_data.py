#!/usr/bin/env python3
"""Tests for netpbm I/O, dataset loading, seeded splits and the synthetic generator."""

import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from pydantic import ValidationError

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from rupnet.data import Dataset, Sample, load_dataset, split_dataset
from rupnet.errors import DecodeError, EmptyDatasetError, InvalidArgumentError, PairingError
from rupnet.netpbm import decode, encode, read_image, write_image
from rupnet.synth import SynthConfig, generate_synthetic


def write_pair(root: Path, stem: str, image: np.ndarray, mask: np.ndarray):
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    write_image(image, root / "images" / f"{stem}.ppm")
    write_image(mask, root / "masks" / f"{stem}.pgm")


class TestNetpbm(unittest.TestCase):
    def test_p6_byte_mapping(self):
        t = decode(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
        np.testing.assert_array_equal(t, [[[1, 0]], [[0, 0]], [[0, 1]]])

    def test_p5_zeros(self):
        t = decode(b"P5 3 2 255\n" + bytes(6))
        self.assertEqual(t.shape, (1, 2, 3))
        self.assertFalse(np.any(t))

    def test_header_comments(self):
        t = decode(b"P5\n# made by hand\n1 1\n# max\n255\n" + bytes([51]))
        self.assertAlmostEqual(float(t[0, 0, 0]), 0.2, places=6)

    def test_truncated_payload(self):
        data = b"P5\n4 4\n255\n" + bytes(3)
        with self.assertRaises(DecodeError) as ctx:
            decode(data, "short.pgm")
        self.assertEqual(ctx.exception.offset, len(data))
        self.assertEqual(ctx.exception.path, "short.pgm")

    def test_malformed_headers(self):
        for data in (b"P3\n1 1\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5\n1", b"P5\nx 1\n255\n\x00"):
            with self.assertRaises(DecodeError):
                decode(data)

    def test_missing_file(self):
        with self.assertRaises(DecodeError):
            read_image("/nonexistent/image.ppm")

    def test_round_trip_after_quantization(self):
        values = (np.arange(3 * 4 * 5) % 256 / 255.0).astype(np.float32).reshape(3, 4, 5)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "t.ppm"
            write_image(values, path)
            np.testing.assert_array_equal(read_image(path), values)

    def test_mask_bytes(self):
        mask = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        self.assertEqual(set(encode(mask)[-4:]), {0, 255})

    def test_two_channels_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            encode(np.zeros((2, 2, 2)))


class TestLoadDataset(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_pairs_sorted_and_resized(self):
        gen = np.random.default_rng(0)
        for stem in ("c", "a", "b"):
            write_pair(self.root, stem, gen.random((3, 16, 16)), (gen.random((1, 16, 16)) < 0.5).astype(float))
        d = load_dataset(self.root, 8)
        self.assertEqual(d.ids, ["a", "b", "c"])
        self.assertEqual(d[0].image.shape, (3, 8, 8))
        self.assertEqual(d[0].mask.shape, (1, 8, 8))
        self.assertTrue(set(np.unique(d[0].mask)) <= {0.0, 1.0})
        self.assertTrue(0.0 <= d[0].image.min() and d[0].image.max() <= 1.0)

    def test_unpaired_image(self):
        write_pair(self.root, "a", np.zeros((3, 8, 8)), np.zeros((1, 8, 8)))
        write_image(np.zeros((3, 8, 8)), self.root / "images" / "lonely.ppm")
        with self.assertRaises(PairingError) as ctx:
            load_dataset(self.root, 8)
        self.assertEqual(ctx.exception.stem, "lonely")

    def test_empty_and_missing(self):
        (self.root / "images").mkdir()
        (self.root / "masks").mkdir()
        with self.assertRaises(EmptyDatasetError):
            load_dataset(self.root, 8)
        with self.assertRaises(EmptyDatasetError):
            load_dataset(self.root / "nowhere", 8)

    def test_mask_threshold_boundary(self):
        write_pair(self.root, "dark", np.zeros((3, 8, 8)), np.full((1, 8, 8), 127 / 255))
        write_pair(self.root, "light", np.zeros((3, 8, 8)), np.full((1, 8, 8), 128 / 255))
        d = load_dataset(self.root, 8)
        self.assertTrue(np.all(d[0].mask == 0.0))
        self.assertTrue(np.all(d[1].mask == 1.0))

    def test_grayscale_image_replicated(self):
        (self.root / "images").mkdir()
        (self.root / "masks").mkdir()
        write_image(np.full((1, 8, 8), 0.4), self.root / "images" / "g.pgm")
        write_image(np.zeros((1, 8, 8)), self.root / "masks" / "g.pgm")
        self.assertEqual(load_dataset(self.root, 8)[0].image.shape, (3, 8, 8))


def tiny_dataset(n: int) -> Dataset:
    return Dataset([Sample(f"s{i:04d}", np.zeros((3, 1, 1)), np.zeros((1, 1, 1))) for i in range(n)])


class TestSplit(unittest.TestCase):
    def test_880_120(self):
        train, test = split_dataset(tiny_dataset(1000), 0.88, 0)
        self.assertEqual((len(train), len(test)), (880, 120))
        self.assertFalse(set(train.ids) & set(test.ids))

    def test_seeded(self):
        a, _ = split_dataset(tiny_dataset(50), 0.7, 3)
        b, _ = split_dataset(tiny_dataset(50), 0.7, 3)
        c, _ = split_dataset(tiny_dataset(50), 0.7, 4)
        self.assertEqual(a.ids, b.ids)
        self.assertNotEqual(a.ids, c.ids)

    def test_partition_property(self):
        gen = np.random.default_rng(0)
        for _ in range(25):
            n = int(gen.integers(4, 200))
            fraction = float(gen.uniform(0.3, 0.7))
            d = tiny_dataset(n)
            train, test = split_dataset(d, fraction, int(gen.integers(1000)))
            self.assertFalse(set(train.ids) & set(test.ids))
            self.assertEqual(sorted(train.ids + test.ids), d.ids)
            self.assertEqual(len(train), math.floor(fraction * n + 0.5))

    def test_empty_side(self):
        with self.assertRaises(EmptyDatasetError):
            split_dataset(tiny_dataset(3), 0.1, 0)
        with self.assertRaises(InvalidArgumentError):
            split_dataset(tiny_dataset(3), 1.0, 0)


def inside_any(ellipses, y: float, x: float) -> bool:
    for e in ellipses:
        dy, dx = y - e.cy, x - e.cx
        u = dx * math.cos(e.angle) + dy * math.sin(e.angle)
        v = -dx * math.sin(e.angle) + dy * math.cos(e.angle)
        if (u / e.rx) ** 2 + (v / e.ry) ** 2 <= 1.0:
            return True
    return False


class TestSynthetic(unittest.TestCase):
    def test_seeded_generation_is_bitwise(self):
        cfg = SynthConfig(count=5, size=32, seed=7)
        a, b = generate_synthetic(cfg), generate_synthetic(cfg)
        for x, y in zip(a, b, strict=True):
            self.assertEqual(x.image.tobytes(), y.image.tobytes())
            self.assertEqual(x.mask.tobytes(), y.mask.tobytes())

    def test_mask_coverage_bounds(self):
        cfg = SynthConfig(count=20, size=32, seed=1)
        for sample in generate_synthetic(cfg):
            positives = int(sample.mask.sum())
            self.assertTrue(1 <= positives <= 32 * 32 / 2, sample.id)
            self.assertTrue(set(np.unique(sample.mask)) <= {0.0, 1.0})
            self.assertTrue(0.0 <= sample.image.min() and sample.image.max() <= 1.0)

    def test_mask_matches_point_in_ellipse(self):
        d = generate_synthetic(SynthConfig(count=6, size=24, seed=2))
        for sample in d:
            ellipses = d.annotations[sample.id]
            self.assertTrue(1 <= len(ellipses) <= 3)
            for i in range(24):
                for j in range(24):
                    self.assertEqual(bool(sample.mask[0, i, j]), inside_any(ellipses, i + 0.5, j + 0.5), (sample.id, i, j))

    def test_invalid_config(self):
        with self.assertRaises(ValidationError):
            SynthConfig(size=60)
        with self.assertRaises(ValidationError):
            SynthConfig(radius_range=(0.1, 0.6))


if __name__ == "__main__":
    unittest.main()
