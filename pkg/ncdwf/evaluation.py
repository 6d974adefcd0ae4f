"""Metrics: labeled accuracy, clustering accuracy under the best
one-to-one matching of predicted to true labels (Hungarian), and the
Lab / Unlab / All report for the task-aware and the generalized
(KCI-routed) protocols."""

import csv
import enum
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError, ShapeError
from .kci import Route, route_batch, check_tau

logger = logging.getLogger(__name__)


class Protocol(enum.Enum):
    TASK_AWARE = 'TaskAware'
    GENERALIZED = 'Generalized'


def hungarian(score):
    """Permutation perm (perm[i] = column matched to row i) maximizing
    sum_i score[i, perm[i]]."""
    score = np.asarray(score, dtype=np.float64)
    if score.ndim != 2 or score.shape[0] != score.shape[1]:
        raise ShapeError('hungarian needs a square matrix, got %s'
                         % (score.shape,))
    if not np.all(np.isfinite(score)):
        raise ShapeError('hungarian: non-finite entries')
    rows, cols = linear_sum_assignment(score, maximize=True)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


@dataclass
class Contingency:
    """counts[i, j]: samples predicted as pred_labels[i] with true label
    true_labels[j]; zero-padded to a square matrix."""
    counts: np.ndarray
    pred_labels: list
    true_labels: list

    @classmethod
    def build(cls, y_pred, y_true):
        y_pred = np.asarray(y_pred)
        y_true = np.asarray(y_true)
        if y_pred.shape != y_true.shape or y_pred.ndim != 1:
            raise ShapeError('y_pred %s and y_true %s differ in shape'
                             % (y_pred.shape, y_true.shape))
        pred_labels, pi = np.unique(y_pred, return_inverse=True)
        true_labels, ti = np.unique(y_true, return_inverse=True)
        K = max(len(pred_labels), len(true_labels))
        counts = np.zeros((K, K), dtype=int)
        np.add.at(counts, (pi, ti), 1)
        return cls(counts, pred_labels.tolist(), true_labels.tolist())

    @property
    def total(self):
        return int(self.counts.sum())


def clustering_accuracy(y_pred, y_true, denominator=None):
    """Fraction of samples matched under the best label permutation.
    denominator defaults to len(y_true)."""
    y_pred = np.asarray(y_pred)
    y_true = np.asarray(y_true)
    if len(y_pred) != len(y_true):
        raise ShapeError('y_pred has %d entries, y_true %d'
                         % (len(y_pred), len(y_true)))
    if denominator is None:
        denominator = len(y_true)
        if denominator < 1:
            raise DataError('clustering accuracy of an empty set')
    if len(y_true) == 0:
        return 0.0
    table = Contingency.build(y_pred, y_true)
    perm = hungarian(table.counts)
    matched = table.counts[np.arange(len(perm)), perm].sum()
    return float(matched) / denominator


def best_mapping(y_pred, y_true):
    """{predicted label: true label} under the optimal matching."""
    table = Contingency.build(y_pred, y_true)
    perm = hungarian(table.counts)
    return {p: table.true_labels[perm[i]]
            for i, p in enumerate(table.pred_labels)
            if perm[i] < len(table.true_labels)}


@dataclass
class MetricsReport:
    lab_acc: float
    unlab_acc: float
    protocol: Protocol
    tau: float = None

    @property
    def all_acc(self):
        return (self.lab_acc + self.unlab_acc) / 2

    def to_dict(self):
        return {
            'protocol': self.protocol.value,
            'tau': self.tau,
            'lab_acc': self.lab_acc,
            'unlab_acc': self.unlab_acc,
            'all_acc': self.all_acc,
        }

    def __str__(self):
        name = self.protocol.value
        if self.tau is not None:
            name += ' tau=%g' % self.tau
        return '%-20s Lab %6.2f  Unlab %6.2f  All %6.2f' % (
            name, 100 * self.lab_acc, 100 * self.unlab_acc,
            100 * self.all_acc)


def _require(pool, what):
    if pool is None or len(pool) == 0:
        raise DataError('%s test set is empty' % what)


def evaluate_task_aware(model, test_lab, test_unlab):
    _require(test_lab, 'labeled')
    _require(test_unlab, 'unlabeled')
    lab_pred = np.argmax(model.predict_labeled(test_lab.x), axis=1)
    lab_acc = float(np.mean(lab_pred == test_lab.y))
    unlab_pred = np.argmax(model.predict_unlabeled(test_unlab.x), axis=1)
    unlab_acc = clustering_accuracy(unlab_pred, test_unlab.y)
    return MetricsReport(lab_acc, unlab_acc, Protocol.TASK_AWARE)


def evaluate_generalized(model, kci, tau, test_lab, test_unlab):
    """Each sample goes through the KCI; going to the wrong head counts
    as an error on its side."""
    _require(test_lab, 'labeled')
    _require(test_unlab, 'unlabeled')
    check_tau(tau)
    z_lab = model.features(test_lab.x)
    _, to_unlab = route_batch(kci, z_lab, tau)
    lab_pred = np.argmax(model.labeled_head(z_lab), axis=1)
    lab_acc = float(np.mean((lab_pred == test_lab.y) & ~to_unlab))

    z_unlab = model.features(test_unlab.x)
    _, to_unlab = route_batch(kci, z_unlab, tau)
    unlab_pred = np.argmax(model.unlabeled_head(z_unlab[to_unlab]), axis=1)
    unlab_acc = clustering_accuracy(unlab_pred, test_unlab.y[to_unlab],
                                    denominator=len(test_unlab))
    return MetricsReport(lab_acc, unlab_acc, Protocol.GENERALIZED, tau)


@dataclass
class SamplePrediction:
    sample_id: int
    true_label: int
    route: Route
    pred_label: int
    kci_score: float


def predict_samples(model, kci, tau, test_lab, test_unlab):
    """Routed predictions for labeled then unlabeled test samples.
    Unlabeled-head outputs are reported as M + cluster index."""
    x = np.concatenate([test_lab.x, test_unlab.x])
    y = np.concatenate([test_lab.y, test_unlab.y])
    z = model.features(x)
    scores, to_unlab = route_batch(kci, z, tau)
    lab_pred = np.argmax(model.labeled_head(z), axis=1)
    unlab_pred = model.num_labeled + np.argmax(model.unlabeled_head(z),
                                               axis=1)
    out = []
    for i in range(len(x)):
        r = Route.UNLABELED_HEAD if to_unlab[i] else Route.LABELED_HEAD
        pred = unlab_pred[i] if to_unlab[i] else lab_pred[i]
        out.append(SamplePrediction(i, int(y[i]), r, int(pred),
                                    float(scores[i])))
    return out


def write_predictions_csv(path, predictions):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample_id', 'true_label', 'route', 'pred_label',
                         'kci_score'])
        for p in predictions:
            writer.writerow([p.sample_id, p.true_label, p.route.value,
                             p.pred_label, '%.17g' % p.kci_score])


def read_predictions_csv(path):
    out = []
    with open(path, newline='', encoding='utf-8') as f:
        for row in csv.DictReader(f):
            out.append(SamplePrediction(int(row['sample_id']),
                                        int(row['true_label']),
                                        Route(row['route']),
                                        int(row['pred_label']),
                                        float(row['kci_score'])))
    return out


def labeled_head_confusion(model, x_unlab, y_unlab, num_labeled=None):
    """counts[k, m]: unlabeled-class instances of the k-th unlabeled
    class (in sorted label order) that the labeled head assigns to m."""
    M = num_labeled or model.num_labeled
    y_unlab = np.asarray(y_unlab)
    classes = np.unique(y_unlab)
    pred = np.argmax(model.predict_labeled(x_unlab), axis=1)
    counts = np.zeros((len(classes), M), dtype=int)
    rows = np.searchsorted(classes, y_unlab)
    np.add.at(counts, (rows, pred), 1)
    return classes, counts


def write_confusion_csv(path, classes, counts):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['true_label'] + ['lab_%d' % m
                                          for m in range(counts.shape[1])])
        for c, row in zip(classes, counts):
            writer.writerow([int(c)] + row.tolist())


def write_report(path, report):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info('%s -> %s', report, path)
