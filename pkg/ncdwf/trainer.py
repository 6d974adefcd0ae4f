"""Two-phase training.

Phase 1 fits the feature extractor and the labeled head on the labeled
pool, then takes a frozen snapshot of the extractor and stores the
per-class latent means.

Phase 2 sees only the unlabeled pool. Each mini-batch mixes unlabeled
samples with pseudo-latents and minimizes

    lambda_ce * CE(unlabeled head, Sinkhorn pseudo-labels)
  + lambda_mi * MI regularizer
  + lambda_fd * |live features - frozen features|
  + lambda_replay * CE(labeled head, pseudo-latents)

followed by one step of the known-class identifier on the same batch.

train_joint is the reference upper bound that trains on both pools
together; it is only used for comparison rows.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, asdict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError, DataError, GraphError
from .kci import KciDataset, kci_step
from .miregularizer import mi_loss_node
from .numkernel import Graph, SgdMomentum, sgd_step
from .pseudoreplay import (InversionConfig, compute_class_means,
                           generate_pseudo_dataset)
from .selflabel import SinkhornConfig, self_label

logger = logging.getLogger(__name__)


class PhaseConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    epochs: int = Field(100, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    lambda_ce: float = Field(1.0, ge=0)
    lambda_mi: float = Field(1.0, ge=0)
    lambda_fd: float = Field(1.0, ge=0)
    lambda_replay: float = Field(1.0, ge=0)
    pseudo_fraction: float = Field(0.25, ge=0, lt=1)
    seed: int = 0
    enable_plr: bool = True
    enable_mir: bool = True
    enable_fd: bool = True
    squared_fd: bool = False
    freeze_labeled_head: bool = False
    # negated MI loss, for comparison runs only
    printed_mi_sign: bool = False
    kci_learning_rate: float = Field(0.05, gt=0)
    # mean net and sigma of the MI regularizer
    mi_learning_rate: float = Field(0.01, gt=0)
    # global gradient norm bound per step, 0 turns clipping off
    grad_clip: float = Field(5.0, ge=0)

    @model_validator(mode='after')
    def _check_batch(self):
        if self.pseudo_fraction > 0 and self.batch_size < 2:
            raise ValueError('batch_size must be >= 2 when pseudo_fraction '
                             '> 0 (got %d)' % self.batch_size)
        return self


LOG_KEYS = ('epoch', 'loss_ce', 'loss_mi', 'loss_fd', 'loss_replay',
            'loss_kci', 'lab_acc', 'unlab_acc', 'kci_auc', 'wall_ms')


@dataclass
class EpochRecord:
    epoch: int
    loss_ce: float = None
    loss_mi: float = None
    loss_fd: float = None
    loss_replay: float = None
    loss_kci: float = None
    lab_acc: float = None
    unlab_acc: float = None
    kci_auc: float = None
    wall_ms: float = None

    def to_dict(self, with_time=True):
        d = asdict(self)
        if not with_time:
            del d['wall_ms']
        return d


class TrainLog(object):
    def __init__(self, phase):
        self.phase = phase
        self.records = []

    def append(self, record):
        for key, value in record.to_dict().items():
            if value is not None and not math.isfinite(value):
                raise GraphError('epoch %d: %s is not finite (%r)'
                                 % (record.epoch, key, value))
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def as_dicts(self, with_time=True):
        return [r.to_dict(with_time) for r in self.records]

    def to_jsonl(self, f):
        for d in self.as_dicts():
            d = dict(phase=self.phase, **d)
            f.write(json.dumps({k: d[k] for k in ('phase',) + LOG_KEYS}))
            f.write('\n')


def cross_entropy(graph, logits, targets):
    """Mean softmax cross-entropy. targets: class indices (B,) or a
    B x K matrix of target distributions."""
    targets = np.asarray(targets)
    K = logits.value.shape[-1]
    if targets.ndim == 1:
        onehot = np.zeros((len(targets), K))
        onehot[np.arange(len(targets)), targets.astype(int)] = 1.0
    else:
        onehot = targets.astype(np.float64)
    if onehot.shape != logits.value.shape:
        raise DataError('targets %s for logits %s'
                        % (targets.shape, logits.value.shape))
    B = len(onehot)
    ll = graph.sum(graph.mul(graph.log_softmax(logits), onehot))
    return graph.scale(ll, -1.0 / B)


def accuracy(model, x, y):
    return float(np.mean(np.argmax(model.predict_labeled(x), axis=1) == y))


def _check_coverage(labels, num_classes):
    present = set(np.asarray(labels).tolist())
    missing = sorted(set(range(num_classes)) - present)
    if missing:
        raise DataError('labeled pool has no samples of class(es) %s'
                        % missing)
    extra = sorted(c for c in present if not 0 <= c < num_classes)
    if extra:
        raise DataError('labeled pool has labels outside [0, %d): %s'
                        % (num_classes, extra))


def train_phase1(model, lab_pool, cfg):
    """Supervised training on the labeled pool; ends with the extractor
    snapshot and the class means (also for zero epochs)."""
    _check_coverage(lab_pool.y, model.num_labeled)
    x = np.asarray(lab_pool.x, dtype=np.float64)
    y = np.asarray(lab_pool.y, dtype=int)
    rng = np.random.default_rng(cfg.seed)
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum, cfg.grad_clip)
    params = (model.feature_extractor.parameters() +
              model.labeled_head.parameters())
    log = TrainLog('phase1')
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(y))
        losses = []
        for i in range(0, len(y), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            g = Graph()
            z = model.feature_extractor.forward(g, g.input(x[idx]))
            loss = cross_entropy(g, model.labeled_head.forward(g, z), y[idx])
            sgd_step(opt, params, g.backward(loss))
            losses.append(float(loss.value))
        record = EpochRecord(epoch, loss_ce=float(np.mean(losses)),
                             lab_acc=accuracy(model, x, y),
                             wall_ms=1000 * (time.perf_counter() - start))
        log.append(record)
        logger.info('phase1 epoch %d: ce %.4f lab_acc %.4f', epoch,
                    record.loss_ce, record.lab_acc)
    model.freeze_extractor_snapshot()
    model.class_means = compute_class_means(model.features(x), y,
                                            model.num_labeled)
    return log


def pseudo_counts(batch_size, pseudo_fraction):
    """(pseudo, unlabeled) sample counts of one discovery batch."""
    if pseudo_fraction > 0:
        # round first so that 0.25 * 8 stays 2 after float error
        n_p = math.ceil(round(pseudo_fraction * batch_size, 9))
    else:
        n_p = 0
    n_u = batch_size - n_p
    if n_u < 1:
        raise ConfigError('batch of %d leaves no room for unlabeled samples '
                          '(pseudo_fraction %g)' % (batch_size,
                                                    pseudo_fraction))
    return n_p, n_u


@dataclass
class DiscoveryBatch:
    x_unlab: np.ndarray
    z_pseudo: np.ndarray
    y_pseudo: np.ndarray

    @property
    def num_pseudo(self):
        return len(self.y_pseudo)

    @property
    def num_unlabeled(self):
        return len(self.x_unlab)


def compose_discovery_batch(unlab_x, pseudo, batch_size, pseudo_fraction, rng,
                            unlab_indices=None):
    """ceil(pseudo_fraction * batch_size) pseudo-latents drawn with
    replacement plus unlabeled samples: the given unlab_indices (a slice
    of the epoch's shuffle) or, without them, a uniform draw."""
    n_p, n_u = pseudo_counts(batch_size, pseudo_fraction)
    if n_p and (pseudo is None or len(pseudo) == 0):
        raise DataError('pseudo_fraction %g needs pseudo-latents, the set '
                        'is empty' % pseudo_fraction)
    if len(unlab_x) == 0:
        raise DataError('empty unlabeled pool')
    if unlab_indices is None:
        unlab_indices = rng.integers(0, len(unlab_x), size=n_u)
    if n_p:
        pick = rng.integers(0, len(pseudo), size=n_p)
        z_pseudo = pseudo.latents[pick]
        y_pseudo = pseudo.labels[pick]
    else:
        h = pseudo.latents.shape[1] if pseudo is not None else 0
        z_pseudo = np.empty((0, h))
        y_pseudo = np.empty(0, dtype=int)
    return DiscoveryBatch(np.asarray(unlab_x)[unlab_indices], z_pseudo,
                          y_pseudo)


def feature_distillation_node(graph, z_live, frozen_features, squared=False):
    """Batch mean of |z_live - frozen| (or its square); the frozen
    features are constants."""
    diff = graph.sub(z_live, graph.constant(frozen_features))
    if squared:
        per_row = graph.sum(graph.square(diff), axis=1)
    else:
        per_row = graph.row_norm(diff)
    return graph.mean(per_row)


def feature_distillation_loss(model, x, squared=False):
    if model.frozen_extractor is None:
        raise GraphError('feature distillation needs the extractor snapshot')
    g = Graph()
    z = model.feature_extractor.forward(g, g.input(x))
    return float(feature_distillation_node(g, z, model.frozen_features(x),
                                           squared).value)


@dataclass
class DiscoveryLosses:
    graph: Graph
    components: dict
    total: object
    latents: object
    plan: object

    def values(self):
        return {k: float(v.value) for k, v in self.components.items()}


def discovery_losses(model, vhead, batch, cfg, sinkhorn=None):
    """Loss graph of one discovery batch. Disabled components are
    absent from components."""
    sinkhorn = sinkhorn or SinkhornConfig()
    g = Graph()
    z = model.feature_extractor.forward(g, g.input(batch.x_unlab))
    u = model.unlabeled_head.forward(g, z)
    plan, targets = self_label(u.value, sinkhorn)
    components = {'ce': cross_entropy(g, u, targets)}
    weights = {'ce': cfg.lambda_ce}
    if cfg.enable_mir:
        # labeled-head logits are the regression target: no gradient
        l_values = model.labeled_head(z.value)
        components['mi'] = mi_loss_node(g, l_values, u, vhead,
                                        cfg.printed_mi_sign)
        weights['mi'] = cfg.lambda_mi
    if cfg.enable_fd:
        components['fd'] = feature_distillation_node(
            g, z, model.frozen_features(batch.x_unlab), cfg.squared_fd)
        weights['fd'] = cfg.lambda_fd
    if cfg.enable_plr and batch.num_pseudo:
        lp = model.labeled_head.forward(g, g.constant(batch.z_pseudo))
        components['replay'] = cross_entropy(g, lp, batch.y_pseudo)
        weights['replay'] = cfg.lambda_replay
    total = None
    for key, node in components.items():
        term = g.scale(node, weights[key])
        total = term if total is None else g.add(total, term)
    return DiscoveryLosses(g, components, total, z, plan)


def _mean_or_none(values):
    return float(np.mean(values)) if values else None


def _warm_start_sigma(model, vhead, x):
    z = model.features(x)
    sigma = vhead.fit_sigma(model.labeled_head(z), model.unlabeled_head(z))
    logger.debug('sigma warm start: min %.3g max %.3g', sigma.min(),
                 sigma.max())


def train_phase2(model, vhead, kci, unlab_pool, cfg, inversion=None,
                 sinkhorn=None, monitor=None):
    """Discovery on the unlabeled pool. monitor(epoch) may return extra
    record fields (lab_acc, unlab_acc, kci_auc).

    The MI regularizer starts from sigma fitted to the residuals of the
    untrained mean net and has its own optimizer (mi_learning_rate)."""
    if model.frozen_extractor is None or model.class_means is None:
        raise GraphError('phase 2 needs the extractor snapshot and class '
                         'means from phase 1')
    inversion = inversion or InversionConfig()
    sinkhorn = sinkhorn or SinkhornConfig()
    x = np.asarray(unlab_pool.x, dtype=np.float64)
    if len(x) == 0:
        raise DataError('empty unlabeled pool')
    n_p, n_u = pseudo_counts(cfg.batch_size, cfg.pseudo_fraction)
    rng = np.random.default_rng(cfg.seed)
    params = (model.feature_extractor.parameters() +
              model.unlabeled_head.parameters())
    if not cfg.freeze_labeled_head:
        params += model.labeled_head.parameters()
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum, cfg.grad_clip)
    mi_opt = SgdMomentum(cfg.mi_learning_rate, cfg.momentum, cfg.grad_clip)
    kci_opt = SgdMomentum(cfg.kci_learning_rate, cfg.momentum, cfg.grad_clip)
    if cfg.enable_mir and cfg.lambda_mi > 0:
        _warm_start_sigma(model, vhead, x)
    log = TrainLog('phase2')
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        pseudo = None
        if n_p:
            pseudo = generate_pseudo_dataset(model.labeled_head,
                                             model.class_means, inversion,
                                             rng)
        order = rng.permutation(len(x))
        sums = {'ce': [], 'mi': [], 'fd': [], 'replay': []}
        kci_losses = []
        for i in range(0, len(x), n_u):
            batch = compose_discovery_batch(x, pseudo, cfg.batch_size,
                                            cfg.pseudo_fraction, rng,
                                            order[i:i + n_u])
            losses = discovery_losses(model, vhead, batch, cfg, sinkhorn)
            grads = losses.graph.backward(losses.total)
            sgd_step(opt, params, grads)
            sgd_step(mi_opt, vhead.parameters(), grads)
            vhead.clamp()
            for key in sums:
                node = losses.components.get(key)
                sums[key].append(0.0 if node is None else float(node.value))
            if batch.num_pseudo:
                kci_batch = KciDataset.build(batch.z_pseudo,
                                             losses.latents.value)
                kci_losses.append(kci_step(kci, kci_opt, kci_batch))
            else:
                logger.debug('epoch %d: no pseudo-latents in batch, KCI step '
                             'skipped', epoch)
        record = EpochRecord(epoch,
                             loss_ce=_mean_or_none(sums['ce']),
                             loss_mi=_mean_or_none(sums['mi']),
                             loss_fd=_mean_or_none(sums['fd']),
                             loss_replay=_mean_or_none(sums['replay']),
                             loss_kci=_mean_or_none(kci_losses))
        if monitor is not None:
            for key, value in (monitor(epoch) or {}).items():
                if key not in ('lab_acc', 'unlab_acc', 'kci_auc'):
                    raise ConfigError('monitor returned unknown field %r'
                                      % key)
                setattr(record, key, value)
        record.wall_ms = 1000 * (time.perf_counter() - start)
        log.append(record)
        logger.info('phase2 epoch %d: ce %.4f mi %.4f fd %.4f replay %.4f '
                    'kci %s', epoch, record.loss_ce, record.loss_mi,
                    record.loss_fd, record.loss_replay,
                    '-' if record.loss_kci is None
                    else '%.4f' % record.loss_kci)
    return log


def train_joint(model, kci, lab_pool, unlab_pool, cfg, sinkhorn=None):
    """Reference upper bound with both pools available at once: each step
    takes half a batch of labeled samples (CE through the labeled head)
    and half a batch of unlabeled samples (Sinkhorn CE through the
    unlabeled head, weighted by lambda_ce) through the shared extractor.
    The known-class identifier learns labeled (0) against unlabeled (1)
    latents. The phase-2 losses and their switches are not used."""
    _check_coverage(lab_pool.y, model.num_labeled)
    sinkhorn = sinkhorn or SinkhornConfig()
    x_lab = np.asarray(lab_pool.x, dtype=np.float64)
    y_lab = np.asarray(lab_pool.y, dtype=int)
    x_unlab = np.asarray(unlab_pool.x, dtype=np.float64)
    if len(x_unlab) == 0:
        raise DataError('empty unlabeled pool')
    if cfg.batch_size < 2:
        raise ConfigError('joint training splits each batch in two, '
                          'batch_size must be >= 2 (got %d)' % cfg.batch_size)
    n_l = cfg.batch_size // 2
    n_u = cfg.batch_size - n_l
    rng = np.random.default_rng(cfg.seed)
    params = (model.feature_extractor.parameters() +
              model.labeled_head.parameters() +
              model.unlabeled_head.parameters())
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum, cfg.grad_clip)
    kci_opt = SgdMomentum(cfg.kci_learning_rate, cfg.momentum, cfg.grad_clip)
    log = TrainLog('joint')
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        lab_order = rng.permutation(len(y_lab))
        unlab_order = rng.permutation(len(x_unlab))
        losses, kci_losses = [], []
        for step, i in enumerate(range(0, len(x_unlab), n_u)):
            # the labeled pool is cycled to keep pace with the unlabeled one
            lab_idx = lab_order[np.arange(step * n_l, (step + 1) * n_l)
                                % len(y_lab)]
            g = Graph()
            z_l = model.feature_extractor.forward(g, g.input(x_lab[lab_idx]))
            ce_l = cross_entropy(g, model.labeled_head.forward(g, z_l),
                                 y_lab[lab_idx])
            z_u = model.feature_extractor.forward(
                g, g.input(x_unlab[unlab_order[i:i + n_u]]))
            u = model.unlabeled_head.forward(g, z_u)
            _, targets = self_label(u.value, sinkhorn)
            total = g.add(ce_l, g.scale(cross_entropy(g, u, targets),
                                        cfg.lambda_ce))
            sgd_step(opt, params, g.backward(total))
            losses.append(float(total.value))
            kci_losses.append(kci_step(kci, kci_opt, KciDataset.build(
                z_l.value, z_u.value)))
        record = EpochRecord(epoch, loss_ce=float(np.mean(losses)),
                             loss_kci=float(np.mean(kci_losses)),
                             lab_acc=accuracy(model, x_lab, y_lab),
                             wall_ms=1000 * (time.perf_counter() - start))
        log.append(record)
        logger.info('joint epoch %d: ce %.4f kci %.4f lab_acc %.4f', epoch,
                    record.loss_ce, record.loss_kci, record.lab_acc)
    return log
