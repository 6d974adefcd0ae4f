"""Feature-space datasets.

Synthetic Gaussian mixtures, CSV files of precomputed embeddings
(header feat_0,...,feat_{d-1},label) and the split into a labeled pool
(the first M classes) and an unlabeled pool (the other N classes).

True labels of the unlabeled training pool are kept in a SealedLabels
store that only evaluation code opens.
"""

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DataError, ShapeError

logger = logging.getLogger(__name__)

MAX_CENTER_ATTEMPTS = 10000

POOL_FILES = {
    'lab_train': 'lab_train.csv',
    'unlab_train': 'unlab_train.csv',
    'test_lab': 'lab_test.csv',
    'test_unlab': 'unlab_test.csv',
}


class SplitSpec(BaseModel):
    """First `labeled` class indices form the labeled pool, the
    remaining `unlabeled` ones the unlabeled pool."""
    model_config = ConfigDict(extra='forbid')

    total_classes: int = Field(10, ge=2)
    labeled: int = Field(5, ge=1)
    unlabeled: int = Field(5, ge=1)

    @model_validator(mode='after')
    def _check_counts(self):
        if self.labeled + self.unlabeled != self.total_classes:
            raise ValueError('labeled + unlabeled (%d + %d) != total_classes '
                             '(%d)' % (self.labeled, self.unlabeled,
                                       self.total_classes))
        return self

    @property
    def labeled_classes(self):
        return list(range(self.labeled))

    @property
    def unlabeled_classes(self):
        return list(range(self.labeled, self.total_classes))


@dataclass
class RawDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if (self.features.ndim != 2 or
                self.labels.shape != (len(self.features),)):
            raise ShapeError('features %s with labels %s'
                             % (self.features.shape, self.labels.shape))
        if not np.all(np.isfinite(self.features)):
            raise DataError('dataset has non-finite features')
        if len(self.labels) and self.labels.min() < 0:
            raise DataError('labels must be nonnegative')

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass
class LabeledPool:
    x: np.ndarray
    y: np.ndarray
    # row numbers in the source dataset
    indices: np.ndarray = None

    def __len__(self):
        return len(self.y)

    @property
    def classes(self):
        return sorted(set(self.y.tolist()))


class UnlabeledPool(object):
    """Training view of unlabeled samples: features only."""

    def __init__(self, x, indices=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.indices = indices

    def __len__(self):
        return len(self.x)


class SealedLabels(object):
    """Evaluation-only store of the unlabeled pool's true labels."""

    def __init__(self, labels):
        self._labels = np.array(labels, dtype=int)

    def reveal(self):
        return self._labels.copy()

    def __len__(self):
        return len(self._labels)

    def __repr__(self):
        return '<SealedLabels (%d)>' % len(self._labels)


@dataclass
class SplitDataset:
    lab_train: LabeledPool
    unlab_train: UnlabeledPool
    test_lab: LabeledPool
    test_unlab: LabeledPool
    sealed_labels: SealedLabels
    dim: int
    spec: SplitSpec


def generate_gaussian_mixture(classes, per_class, dim, center_scale,
                              noise_sigma, seed, separation=4.0):
    """Centers uniform in [-center_scale, center_scale]^dim, pairwise at
    least separation * noise_sigma apart; samples center + N(0, sigma^2).
    Samples are ordered by class."""
    if min(classes, per_class, dim) < 1:
        raise DataError('classes, per_class and dim must be >= 1')
    if not noise_sigma > 0 or not center_scale > 0:
        raise DataError('noise_sigma and center_scale must be positive')
    rng = np.random.default_rng(seed)
    min_dist = separation * noise_sigma
    centers = []
    attempts = 0
    while len(centers) < classes:
        if attempts >= MAX_CENTER_ATTEMPTS:
            raise DataError('could not place %d centers %g apart in '
                            '[-%g, %g]^%d (%d attempts)'
                            % (classes, min_dist, center_scale, center_scale,
                               dim, attempts))
        attempts += 1
        c = rng.uniform(-center_scale, center_scale, size=dim)
        if all(np.linalg.norm(c - other) >= min_dist for other in centers):
            centers.append(c)
    centers = np.array(centers)
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(0.0, noise_sigma, size=(classes * per_class, dim))
    features = centers[labels] + noise
    logger.debug('gaussian mixture: %d classes x %d, dim %d, %d attempts',
                 classes, per_class, dim, attempts)
    return RawDataset(features, labels)


def split(raw, spec, test_fraction=0.2, seed=0):
    """Stratified train/test split of every class, then the labeled /
    unlabeled partition by class index."""
    if not 0 < test_fraction < 1:
        raise DataError('test_fraction must be in (0, 1): %r' % test_fraction)
    if len(raw) == 0:
        raise DataError('empty dataset')
    if raw.num_classes != spec.total_classes:
        raise DataError('dataset has %d classes, split expects %d'
                        % (raw.num_classes, spec.total_classes))
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(spec.total_classes):
        idx = np.flatnonzero(raw.labels == c)
        if len(idx) < 2:
            raise DataError('class %d has %d sample(s), need at least 2'
                            % (c, len(idx)))
        idx = rng.permutation(idx)
        n_test = min(max(int(round(test_fraction * len(idx))), 1),
                     len(idx) - 1)
        test_idx.append(np.sort(idx[:n_test]))
        train_idx.append(np.sort(idx[n_test:]))
    M = spec.labeled

    def pool(parts, labeled):
        chosen = parts[:M] if labeled else parts[M:]
        idx = np.concatenate(chosen)
        return idx, raw.features[idx], raw.labels[idx]

    i, x, y = pool(train_idx, True)
    lab_train = LabeledPool(x, y, i)
    i, x, y = pool(train_idx, False)
    unlab_train = UnlabeledPool(x, i)
    sealed = SealedLabels(y)
    i, x, y = pool(test_idx, True)
    test_lab = LabeledPool(x, y, i)
    i, x, y = pool(test_idx, False)
    test_unlab = LabeledPool(x, y, i)
    logger.info('split: %d labeled / %d unlabeled training samples, '
                '%d + %d test', len(lab_train), len(unlab_train),
                len(test_lab), len(test_unlab))
    return SplitDataset(lab_train, unlab_train, test_lab, test_unlab, sealed,
                        raw.dim, spec)


def load_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise DataError('%s: empty file' % path)
        header = [h.strip() for h in header]
        if header[-1] != 'label':
            raise DataError('%s:1: missing label column' % path)
        dim = len(header) - 1
        if dim < 1 or header[:-1] != ['feat_%d' % i for i in range(dim)]:
            raise DataError('%s:1: expected header feat_0,...,feat_%d,label'
                            % (path, dim - 1))
        features, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataError('%s:%d: expected %d values, got %d'
                                % (path, lineno, dim + 1, len(row)))
            try:
                features.append([float(v) for v in row[:-1]])
            except ValueError:
                raise DataError('%s:%d: non-numeric feature' % (path, lineno))
            try:
                label = int(row[-1])
            except ValueError:
                raise DataError('%s:%d: bad label %r' % (path, lineno,
                                                         row[-1]))
            if label < 0:
                raise DataError('%s:%d: negative label' % (path, lineno))
            labels.append(label)
    features = np.array(features, dtype=np.float64).reshape(-1, dim)
    if not np.all(np.isfinite(features)):
        raise DataError('%s: non-finite feature values' % path)
    return RawDataset(features, labels)


def save_csv(path, features, labels):
    features = np.asarray(features, dtype=np.float64)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['feat_%d' % i for i in range(features.shape[1])] +
                        ['label'])
        for x, y in zip(features, labels):
            writer.writerow(['%.17g' % v for v in x] + [int(y)])


def save_split(split_data, directory):
    """Writes the four pools; the unlabeled training file carries the
    true labels for evaluation."""
    os.makedirs(directory, exist_ok=True)
    pools = {
        'lab_train': (split_data.lab_train.x, split_data.lab_train.y),
        'unlab_train': (split_data.unlab_train.x,
                        split_data.sealed_labels.reveal()),
        'test_lab': (split_data.test_lab.x, split_data.test_lab.y),
        'test_unlab': (split_data.test_unlab.x, split_data.test_unlab.y),
    }
    paths = []
    for key, (x, y) in pools.items():
        path = os.path.join(directory, POOL_FILES[key])
        save_csv(path, x, y)
        paths.append(path)
    return paths


def load_split(directory, spec):
    pools = {}
    for key, name in POOL_FILES.items():
        raw = load_csv(os.path.join(directory, name))
        labeled = key in ('lab_train', 'test_lab')
        allowed = (spec.labeled_classes if labeled
                   else spec.unlabeled_classes)
        bad = sorted(set(raw.labels.tolist()) - set(allowed))
        if bad:
            raise DataError('%s: labels %s outside classes %d..%d'
                            % (name, bad, allowed[0], allowed[-1]))
        pools[key] = raw
    dims = {raw.dim for raw in pools.values()}
    if len(dims) != 1:
        raise DataError('%s: pools have different feature dims %s'
                        % (directory, sorted(dims)))
    missing = (set(spec.labeled_classes) -
               set(pools['lab_train'].labels.tolist()))
    if missing:
        raise DataError('lab_train.csv has no samples of class(es) %s'
                        % sorted(missing))
    unlab = pools['unlab_train']
    return SplitDataset(
        LabeledPool(pools['lab_train'].features, pools['lab_train'].labels),
        UnlabeledPool(unlab.features),
        LabeledPool(pools['test_lab'].features, pools['test_lab'].labels),
        LabeledPool(pools['test_unlab'].features,
                    pools['test_unlab'].labels),
        SealedLabels(unlab.labels),
        dims.pop(), spec)
