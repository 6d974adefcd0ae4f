"""Known-class identifier.

A small sigmoid network trained to tell pseudo-latents of labeled
classes (target 0) from latents of the unlabeled pool (target 1). At
test time its score decides which head handles an instance.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import roc_auc_score

from .errors import ConfigError, DataError, ShapeError
from .numkernel import Graph, sgd_step

logger = logging.getLogger(__name__)

# sigmoid outputs are clipped to [EPS, 1 - EPS] inside the log
EPS = 1e-12

DEFAULT_TAU = 0.99


class Route(enum.Enum):
    LABELED_HEAD = 'lab'
    UNLABELED_HEAD = 'unlab'


@dataclass
class KciDataset:
    latents: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.latents.ndim != 2 or self.labels.shape != (len(self.latents),):
            raise ShapeError('KciDataset: latents %s, labels %s'
                             % (self.latents.shape, self.labels.shape))
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError('KCI targets must be 0 or 1')

    @classmethod
    def build(cls, pseudo_latents, unlabeled_latents):
        pseudo_latents = np.asarray(pseudo_latents, dtype=np.float64)
        unlabeled_latents = np.asarray(unlabeled_latents, dtype=np.float64)
        if len(pseudo_latents) < 1 or len(unlabeled_latents) < 1:
            raise DataError('KCI needs both pseudo-latents (%d) and unlabeled '
                            'latents (%d)' % (len(pseudo_latents),
                                              len(unlabeled_latents)))
        latents = np.concatenate([pseudo_latents, unlabeled_latents])
        labels = np.concatenate([np.zeros(len(pseudo_latents)),
                                 np.ones(len(unlabeled_latents))])
        return cls(latents, labels)

    def __len__(self):
        return len(self.labels)

    @property
    def num_pseudo(self):
        return int(np.sum(self.labels == 0))

    @property
    def num_unlabeled(self):
        return int(np.sum(self.labels == 1))


@dataclass(frozen=True)
class RoutingDecision:
    score: float
    route: Route
    tau: float


def check_tau(tau):
    if not 0 < tau < 1:
        raise ConfigError('tau must be in (0, 1), got %r' % tau)


def kci_loss_node(graph, kci, latents, targets):
    """Binary cross-entropy recorded on graph; latents enter as
    constants, so only the KCI parameters receive gradients."""
    if len(targets) < 1:
        raise DataError('empty KCI batch')
    s = kci.net.forward(graph, graph.constant(latents))
    s = graph.clip(s, EPS, 1 - EPS)
    y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    log_s = graph.log(s)
    log_1ms = graph.log(graph.sub(1.0, s))
    ll = graph.add(graph.mul(log_s, y), graph.mul(log_1ms, 1 - y))
    return graph.scale(graph.mean(ll), -1.0)


def kci_loss(kci, batch):
    """Returns (loss, grads) for a KciDataset (or a subset of one)."""
    g = Graph()
    loss = kci_loss_node(g, kci, batch.latents, batch.labels)
    grads = g.backward(loss)
    return float(loss.value), grads


def kci_step(kci, optimizer, batch):
    loss, grads = kci_loss(kci, batch)
    sgd_step(optimizer, kci.parameters(), grads)
    return loss


def route(kci, z_t, tau=DEFAULT_TAU):
    check_tau(tau)
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 1:
        raise ShapeError('route expects one latent vector, got %s'
                         % (z_t.shape,))
    score = float(kci.scores(z_t[None, :])[0])
    r = Route.UNLABELED_HEAD if score > tau else Route.LABELED_HEAD
    return RoutingDecision(score, r, tau)


def route_batch(kci, Z, tau=DEFAULT_TAU):
    """Scores for the rows of Z and the mask of rows sent to the
    unlabeled head."""
    check_tau(tau)
    scores = kci.scores(np.asarray(Z, dtype=np.float64))
    return scores, scores > tau


def kci_auc(kci, z_lab, z_unlab):
    """ROC-AUC separating labeled-class latents (0) from unlabeled-class
    latents (1)."""
    if len(z_lab) < 1 or len(z_unlab) < 1:
        raise DataError('kci_auc needs latents of both kinds')
    y = np.concatenate([np.zeros(len(z_lab)), np.ones(len(z_unlab))])
    s = np.concatenate([kci.scores(z_lab), kci.scores(z_unlab)])
    return float(roc_auc_score(y, s))
