#!/usr/bin/env python

import os
import shutil
import tempfile
import unittest

import numpy as np
from pydantic import ValidationError

from ncdwf.data import (RawDataset, SplitSpec, generate_gaussian_mixture,
                        load_csv, load_split, save_csv, save_split, split)
from ncdwf.errors import DataError


class TestGaussianMixture(unittest.TestCase):
    def test_shapes_and_determinism(self):
        a = generate_gaussian_mixture(4, 10, 3, 5.0, 1.0, seed=7)
        b = generate_gaussian_mixture(4, 10, 3, 5.0, 1.0, seed=7)
        self.assertEqual(a.features.shape, (40, 3))
        np.testing.assert_array_equal(a.labels, np.repeat(np.arange(4), 10))
        self.assertEqual(a.features.tobytes(), b.features.tobytes())
        c = generate_gaussian_mixture(4, 10, 3, 5.0, 1.0, seed=8)
        self.assertFalse(np.array_equal(a.features, c.features))

    def test_small_noise(self):
        raw = generate_gaussian_mixture(3, 5, 2, 5.0, 1e-12, seed=0)
        for c in range(3):
            rows = raw.features[raw.labels == c]
            np.testing.assert_allclose(rows, np.tile(rows[0], (5, 1)),
                                       atol=1e-10)

    def test_separation(self):
        raw = generate_gaussian_mixture(5, 3, 4, 10.0, 0.5, seed=1,
                                        separation=8.0)
        # true centers are at least 4 apart
        centers = np.array([raw.features[raw.labels == c].mean(axis=0)
                            for c in range(5)])
        for i in range(5):
            for j in range(i):
                self.assertGreater(np.linalg.norm(centers[i] - centers[j]),
                                   4.0 - 2.0)

    def test_nearest_center_oracle(self):
        raw = generate_gaussian_mixture(2, 1000, 2, 10.0, 1.0, seed=2,
                                        separation=8.0)
        centers = np.array([raw.features[raw.labels == c].mean(axis=0)
                            for c in range(2)])
        d = np.linalg.norm(raw.features[:, None, :] - centers[None], axis=2)
        acc = np.mean(np.argmin(d, axis=1) == raw.labels)
        self.assertGreaterEqual(acc, 0.999)

    def test_crowded(self):
        with self.assertRaises(DataError):
            generate_gaussian_mixture(20, 2, 1, 1.0, 1.0, seed=0,
                                      separation=4.0)


class TestSplit(unittest.TestCase):
    def setUp(self):
        self.raw = generate_gaussian_mixture(10, 100, 3, 10.0, 1.0, seed=3)
        self.spec = SplitSpec(total_classes=10, labeled=5, unlabeled=5)

    def test_classes_and_counts(self):
        data = split(self.raw, self.spec, 0.2, seed=0)
        self.assertEqual(data.lab_train.classes, [0, 1, 2, 3, 4])
        self.assertEqual(len(data.lab_train), 400)
        self.assertEqual(len(data.unlab_train), 400)
        self.assertEqual(len(data.test_lab), 100)
        self.assertEqual(len(data.test_unlab), 100)
        for c in range(5):
            self.assertEqual(np.sum(data.lab_train.y == c), 80)
            self.assertEqual(np.sum(data.test_lab.y == c), 20)
        self.assertEqual(sorted(set(data.sealed_labels.reveal().tolist())),
                         [5, 6, 7, 8, 9])
        self.assertEqual(sorted(set(data.test_unlab.y.tolist())),
                         [5, 6, 7, 8, 9])

    def test_partition(self):
        data = split(self.raw, self.spec, 0.2, seed=0)
        idx = np.concatenate([data.lab_train.indices,
                              data.unlab_train.indices,
                              data.test_lab.indices,
                              data.test_unlab.indices])
        np.testing.assert_array_equal(np.sort(idx), np.arange(len(self.raw)))
        np.testing.assert_array_equal(data.unlab_train.x,
                                      self.raw.features[
                                          data.unlab_train.indices])

    def test_unlabeled_pool_has_no_labels(self):
        data = split(self.raw, self.spec, 0.2, seed=0)
        self.assertFalse(hasattr(data.unlab_train, 'y'))
        self.assertFalse(hasattr(data.unlab_train, 'labels'))

    def test_tiny_class(self):
        raw = RawDataset(np.zeros((3, 2)), [0, 0, 1])
        with self.assertRaises(DataError):
            split(raw, SplitSpec(total_classes=2, labeled=1, unlabeled=1))

    def test_class_count_mismatch(self):
        with self.assertRaises(DataError):
            split(self.raw, SplitSpec(total_classes=12, labeled=6,
                                      unlabeled=6))

    def test_spec_validation(self):
        with self.assertRaises(ValidationError):
            SplitSpec(total_classes=10, labeled=5, unlabeled=4)
        with self.assertRaises(ValidationError):
            SplitSpec(total_classes=10, labeled=0, unlabeled=10)
        with self.assertRaises(ValidationError):
            SplitSpec(total_classes=10, labeled=5, unlabeled=5, extra=1)


class TestCsv(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmpdir, 'data.csv')

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def write(self, text):
        with open(self.path, 'w') as f:
            f.write(text)

    def test_small_file(self):
        self.write('feat_0,feat_1,feat_2,label\n1,2,3,0\n4,5,6.5,1\n')
        raw = load_csv(self.path)
        self.assertEqual(len(raw), 2)
        self.assertEqual(raw.dim, 3)
        np.testing.assert_array_equal(raw.features[1], [4, 5, 6.5])
        np.testing.assert_array_equal(raw.labels, [0, 1])

    def test_short_row(self):
        self.write('feat_0,feat_1,feat_2,label\n1,2,3,0\n4,5,1\n')
        with self.assertRaises(DataError) as cm:
            load_csv(self.path)
        self.assertIn(':3:', str(cm.exception))

    def test_non_numeric(self):
        self.write('feat_0,label\n1,0\nabc,1\n')
        with self.assertRaises(DataError) as cm:
            load_csv(self.path)
        self.assertIn(':3:', str(cm.exception))

    def test_missing_label_column(self):
        self.write('feat_0,feat_1\n1,2\n')
        with self.assertRaises(DataError) as cm:
            load_csv(self.path)
        self.assertIn('label', str(cm.exception))

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        scale = 10.0 ** rng.integers(-5, 5, size=(20, 1))
        x = rng.normal(size=(20, 5)) * scale
        y = rng.integers(0, 3, size=20)
        save_csv(self.path, x, y)
        raw = load_csv(self.path)
        np.testing.assert_array_equal(raw.features, x)
        np.testing.assert_array_equal(raw.labels, y)

    def test_split_files(self):
        raw = generate_gaussian_mixture(4, 10, 2, 10.0, 1.0, seed=5)
        spec = SplitSpec(total_classes=4, labeled=2, unlabeled=2)
        data = split(raw, spec, 0.2, seed=1)
        paths = save_split(data, self.tmpdir)
        self.assertEqual(len(paths), 4)
        loaded = load_split(self.tmpdir, spec)
        np.testing.assert_array_equal(loaded.lab_train.x, data.lab_train.x)
        np.testing.assert_array_equal(loaded.unlab_train.x,
                                      data.unlab_train.x)
        np.testing.assert_array_equal(loaded.sealed_labels.reveal(),
                                      data.sealed_labels.reveal())
        with self.assertRaises(DataError):
            load_split(self.tmpdir, SplitSpec(total_classes=4, labeled=1,
                                              unlabeled=3))


if __name__ == '__main__':
    unittest.main()
