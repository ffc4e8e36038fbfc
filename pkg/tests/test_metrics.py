#!/usr/bin/env python3
"""Tests for confusion counts, segmentation metrics, dataset evaluation and report emission."""

import json
import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from rupnet.bench import FpsStats
from rupnet.data import Dataset, Sample
from rupnet.errors import EmptyDatasetError, InvalidShapeError, ShapeMismatchError
from rupnet.evaluate import evaluate, mean_metrics
from rupnet.metrics import METRIC_NAMES, ConfusionCounts, confusion, metrics_from_counts
from rupnet.report import BaselineRow, MetricsReport, emit_all, emit_report, load_baselines, read_per_image_csv, read_report, speedups

BASELINES = Path(__file__).parent.parent / "configs" / "kvasir_seg_baselines.json"


def oracle_metrics(pred, gt, threshold=0.5):
    """Pixel-loop reference with the perfect-empty convention"""
    tp = fp = fn = tn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist(), strict=True):
        if p >= threshold and g == 1:
            tp += 1
        elif p >= threshold:
            fp += 1
        elif g == 1:
            fn += 1
        else:
            tn += 1
    empty = tp + fp + fn == 0

    def div(a, b):
        return a / b if b else (1.0 if empty else 0.0)

    recall, precision = div(tp, tp + fn), div(tp, tp + fp)
    f2 = 5 * precision * recall / (4 * precision + recall) if 4 * precision + recall else 0.0
    return {"dsc": div(2 * tp, 2 * tp + fp + fn), "iou": div(tp, tp + fp + fn), "recall": recall, "precision": precision, "accuracy": div(tp + tn, tp + fp + fn + tn), "f2": f2}


class TestConfusion(unittest.TestCase):
    def test_hand_count(self):
        c = confusion(np.ones((1, 2, 2)), np.array([[[1.0, 1.0], [0.0, 0.0]]]))
        self.assertEqual((c.tp, c.fp, c.fn, c.tn), (2, 2, 0, 0))

    def test_exact_prediction(self):
        gt = (np.random.default_rng(0).random((1, 8, 8)) < 0.3).astype(float)
        c = confusion(gt.copy(), gt)
        self.assertEqual((c.fp, c.fn), (0, 0))
        self.assertEqual(c.total, 64)

    def test_threshold_is_inclusive(self):
        c = confusion(np.full((1, 1, 1), 0.5), np.ones((1, 1, 1)))
        self.assertEqual(c.tp, 1)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            confusion(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


class TestMetrics(unittest.TestCase):
    def test_hand_case(self):
        m = metrics_from_counts(ConfusionCounts(2, 2, 0, 0))
        self.assertAlmostEqual(m.dsc, 0.6667, places=4)
        self.assertAlmostEqual(m.iou, 0.5)
        self.assertAlmostEqual(m.recall, 1.0)
        self.assertAlmostEqual(m.precision, 0.5)
        self.assertAlmostEqual(m.accuracy, 0.5)
        self.assertAlmostEqual(m.f2, 0.8333, places=4)

    def test_perfect_empty(self):
        m = metrics_from_counts(ConfusionCounts(0, 0, 0, 16))
        self.assertTrue(all(getattr(m, name) == 1.0 for name in METRIC_NAMES))

    def test_missed_object_scores_zero(self):
        m = metrics_from_counts(ConfusionCounts(0, 0, 5, 11))
        self.assertEqual((m.dsc, m.iou, m.recall, m.precision, m.f2), (0.0, 0.0, 0.0, 0.0, 0.0))

    def test_all_true_positive(self):
        m = metrics_from_counts(ConfusionCounts(9, 0, 0, 0))
        self.assertTrue(all(getattr(m, name) == 1.0 for name in METRIC_NAMES))

    def test_iou_never_exceeds_dsc(self):
        gen = np.random.default_rng(1)
        for _ in range(500):
            m = metrics_from_counts(ConfusionCounts(*(int(v) for v in gen.integers(0, 20, 4))))
            self.assertLessEqual(m.iou, m.dsc + 1e-15)
            for name in METRIC_NAMES:
                self.assertTrue(0.0 <= getattr(m, name) <= 1.0)

    def test_f2_definition(self):
        m = metrics_from_counts(ConfusionCounts(7, 3, 5, 20))
        p, r = 7 / 10, 7 / 12
        self.assertAlmostEqual(m.f2, (1 + 2**2) * p * r / (2**2 * p + r), places=12)

    def test_matches_pixel_loop_oracle(self):
        gen = np.random.default_rng(2)
        for k in range(1000):
            pred = gen.random((1, 16, 16))
            # some images with no foreground at all, some with no prediction
            gt = (gen.random((1, 16, 16)) < [0.0, 0.1, 0.5][k % 3]).astype(float)
            if k % 7 == 0:
                pred *= 0.4
            got = metrics_from_counts(confusion(pred, gt)).model_dump()
            want = oracle_metrics(pred, gt)
            for name in METRIC_NAMES:
                self.assertAlmostEqual(got[name], want[name], delta=1e-6)


class OracleNet:
    """Predicts channel 0 of the image, which the fixtures set equal to the mask"""

    def predict(self, x):
        return x[:, :1].copy()


def mask_dataset(n=6, size=8, seed=0) -> Dataset:
    gen = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        mask = (gen.random((1, size, size)) < 0.3).astype(np.float32)
        image = np.concatenate([mask, gen.random((2, size, size)).astype(np.float32)])
        samples.append(Sample(f"img{i}", image, mask))
    return Dataset(samples)


class NoisyNet:
    def predict(self, x):
        gen = np.random.default_rng(int(x.sum() * 1000) % 2**32)
        return np.clip(x[:, :1] * 0.7 + gen.random(x[:, :1].shape) * 0.5, 0, 1)


class TestEvaluate(unittest.TestCase):
    def test_oracle_network_scores_one(self):
        report = evaluate(OracleNet(), mask_dataset())
        for name in METRIC_NAMES:
            self.assertEqual(getattr(report.means, name), 1.0)
        self.assertEqual([r.id for r in report.per_image], [f"img{i}" for i in range(6)])

    def test_means_consistent_with_rows(self):
        report = evaluate(NoisyNet(), mask_dataset(n=9), batch_size=1)
        for name in METRIC_NAMES:
            brute = sum(getattr(r, name) for r in report.per_image) / len(report.per_image)
            self.assertAlmostEqual(getattr(report.means, name), brute, delta=1e-9)

    def test_order_independent(self):
        d = mask_dataset(n=10, seed=3)
        reversed_d = Dataset(list(reversed(d.samples)))
        a, b = evaluate(NoisyNet(), d, batch_size=1), evaluate(NoisyNet(), reversed_d, batch_size=1)
        for name in METRIC_NAMES:
            self.assertAlmostEqual(getattr(a.means, name), getattr(b.means, name), delta=1e-12)

    def test_errors(self):
        with self.assertRaises(EmptyDatasetError):
            evaluate(OracleNet(), Dataset([]))
        with self.assertRaises(InvalidShapeError):
            evaluate(OracleNet(), mask_dataset(size=12))

    def test_mean_metrics_uses_every_row(self):
        rows = [metrics_from_counts(ConfusionCounts(1, 0, 0, 3)), metrics_from_counts(ConfusionCounts(0, 0, 1, 3))]
        self.assertAlmostEqual(mean_metrics(rows).dsc, 0.5)


def sample_report(with_fps=True) -> MetricsReport:
    report = evaluate(NoisyNet(), mask_dataset(n=4))
    if with_fps:
        fps = FpsStats(value=152.60, per_frame_ms_mean=6.55, per_frame_ms_std=0.4, warmup=5, iters=100, image_size=512)
        report = report.model_copy(update={"fps": fps, "hardware": "test-machine", "config_fingerprint": "abc", "checkpoint_hash": "def"})
    return report


class TestReport(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_published_speedup(self):
        ratios = speedups(152.60, [BaselineRow(method="ResUNet++", fps=7.0193)])
        self.assertAlmostEqual(ratios[0].ratio, 21.74, delta=0.01)

    def test_baselines_file(self):
        rows = load_baselines(BASELINES)
        self.assertEqual([r.method for r in rows], ["U-Net", "ResUNet", "ResUNet++"])
        by_method = {s.method: s.ratio for s in speedups(152.60, rows)}
        self.assertEqual(by_method["ResUNet++"], 21.74)

    def test_json_round_trip(self):
        path = self.dir / "report.json"
        written = emit_report(sample_report(), path, load_baselines(BASELINES))
        self.assertEqual(read_report(path).model_dump(), written.model_dump())
        self.assertEqual(len(written.speedup), 3)

    def test_without_baselines_speedup_omitted(self):
        path = self.dir / "report.json"
        emit_report(sample_report(), path)
        data = json.loads(path.read_text())
        self.assertNotIn("speedup", data)
        self.assertEqual(set(data["means"]), set(METRIC_NAMES))
        self.assertIn("empty_images", data["conventions"])

    def test_speedup_needs_fps(self):
        path = self.dir / "report.json"
        written = emit_report(sample_report(with_fps=False), path, load_baselines(BASELINES))
        self.assertIsNone(written.speedup)

    def test_csv_matches_means(self):
        report = emit_all(sample_report(), self.dir / "report.json")
        rows = read_per_image_csv(self.dir / "report.csv")
        self.assertEqual([r.model_dump() for r in rows], [r.model_dump() for r in report.per_image])
        with open(self.dir / "report.csv") as f:
            self.assertEqual(f.readline().strip(), "id,dsc,iou,recall,precision,accuracy,f2")
        for name in METRIC_NAMES:
            self.assertAlmostEqual(math.fsum(getattr(r, name) for r in rows) / len(rows), getattr(report.means, name), delta=1e-12)


if __name__ == "__main__":
    unittest.main()
