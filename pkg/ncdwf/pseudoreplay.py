"""Pseudo-latent replay.

Labeled data is gone in the discovery phase, so we synthesize latents
for each labeled class c: start from z ~ N(0, I), do gradient ascent on
the labeled-head logit p[c] with the head parameters fixed, then pull
the result towards the stored class mean:

    z_p = alpha * z_L + (1 - alpha) * mean[c],   alpha ~ Beta(gamma, rho)
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import (ConfigError, DataError, InversionError, NumericError,
                     ShapeError)
from .numkernel import Graph

logger = logging.getLogger(__name__)


class InversionConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    iterations: int = Field(20, ge=1)
    per_class: int = Field(50, ge=1)
    beta_gamma: float = Field(1.0, gt=0)
    beta_rho: float = Field(100.0, gt=0)
    # 1.0 gives the plain update z <- z + grad
    step_size: float = Field(0.1, gt=0)


@dataclass
class ClassMeanStore:
    means: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=int)
        if self.means.ndim != 2 or self.counts.shape != (len(self.means),):
            raise ShapeError('class means %s with counts %s'
                             % (self.means.shape, self.counts.shape))
        if np.any(self.counts < 1):
            empty = np.flatnonzero(self.counts < 1).tolist()
            raise ConfigError('labeled classes without samples: %s' % empty)

    @property
    def num_classes(self):
        return self.means.shape[0]

    @property
    def latent_dim(self):
        return self.means.shape[1]


def compute_class_means(latents, labels, num_classes):
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if latents.ndim != 2 or labels.shape != (len(latents),):
        raise ShapeError('latents %s with labels %s'
                         % (latents.shape, labels.shape))
    if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError('labels outside [0, %d)' % num_classes)
    counts = np.bincount(labels.astype(int), minlength=num_classes)
    missing = np.flatnonzero(counts == 0).tolist()
    if missing:
        raise DataError('no samples for class(es) %s' % missing)
    means = np.zeros((num_classes, latents.shape[1]))
    for c in range(num_classes):
        means[c] = latents[labels == c].mean(axis=0)
    return ClassMeanStore(means, counts)


@dataclass
class PseudoLatentSet:
    latents: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def entries(self):
        return list(zip(self.latents, self.labels.tolist()))

    def write_csv(self, path):
        h = self.latents.shape[1]
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['z_%d' % i for i in range(h)] + ['class'])
            for z, c in zip(self.latents, self.labels):
                writer.writerow(['%.17g' % v for v in z] + [int(c)])


def ascend_latent(head, z_start, c, iterations, step_size):
    """Gradient ascent on logit c w.r.t. the head input. z_start may be
    one latent or a batch (rows are independent). Returns the final
    latents and the logit trace (iterations + 1 entries)."""
    if not 0 <= c < head.output_dim:
        raise InversionError('class %d outside [0, %d)'
                             % (c, head.output_dim))
    z = np.array(z_start, dtype=np.float64)
    select = np.zeros(head.output_dim)
    select[c] = 1.0
    trace = []
    for i in range(1, iterations + 1):
        try:
            g = Graph()
            zn = g.input(z, requires_grad=True)
            logits = head.forward(g, zn)
            target = g.sum(g.mul(logits, select))
            grads = g.backward(target)
        except NumericError as e:
            raise InversionError('class %d, iteration %d: %s' % (c, i, e))
        trace.append(logits.value[..., c].copy())
        z = z + step_size * grads[zn]
        if not np.all(np.isfinite(z)):
            raise InversionError('class %d, iteration %d: ascent diverged'
                                 % (c, i))
    trace.append(head(z)[..., c])
    return z, np.array(trace)


def invert_latent(labeled_head, c, rng, config=None, count=None):
    """A latent the labeled head assigns to class c, from a N(0, I)
    start; count rows are inverted together as a count x h batch."""
    config = config or InversionConfig()
    h = labeled_head.input_dim
    z1 = rng.standard_normal(h if count is None else (count, h))
    z, _ = ascend_latent(labeled_head, z1, c, config.iterations,
                         config.step_size)
    return z


def mix_with_class_mean(z_L, mean_store, c, alpha):
    """alpha * z_L + (1 - alpha) * mean[c]; for a batch of latents alpha
    may hold one weight per row."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all((alpha >= 0) & (alpha <= 1)):
        raise ConfigError('alpha must be in [0, 1], got %r' % alpha)
    if not 0 <= c < mean_store.num_classes:
        raise DataError('class %d outside [0, %d)'
                        % (c, mean_store.num_classes))
    z_L = np.asarray(z_L, dtype=np.float64)
    if z_L.shape[-1] != mean_store.latent_dim:
        raise ShapeError('latent dim %d, class means have %d'
                         % (z_L.shape[-1], mean_store.latent_dim))
    if alpha.ndim == 1:
        if z_L.ndim != 2 or len(alpha) != len(z_L):
            raise ShapeError('%d mixing weights for latents %s'
                             % (len(alpha), z_L.shape))
        alpha = alpha[:, None]
    return alpha * z_L + (1 - alpha) * mean_store.means[c]


def sample_alpha(gamma, rho, rng, size=None):
    if size is None:
        return float(rng.beta(gamma, rho))
    return rng.beta(gamma, rho, size=size)


def generate_pseudo_dataset(labeled_head, mean_store, config, rng):
    """per_class pseudo-latents for every labeled class, in class order.
    Rows of one class are inverted as a batch."""
    M = mean_store.num_classes
    if labeled_head.output_dim != M:
        raise ShapeError('labeled head has %d outputs, %d class means'
                         % (labeled_head.output_dim, M))
    if labeled_head.input_dim != mean_store.latent_dim:
        raise ShapeError('labeled head takes %d inputs, means have dim %d'
                         % (labeled_head.input_dim, mean_store.latent_dim))
    E = config.per_class
    latents = np.empty((M * E, mean_store.latent_dim))
    labels = np.repeat(np.arange(M), E)
    for c in range(M):
        z_L = invert_latent(labeled_head, c, rng, config, count=E)
        alpha = sample_alpha(config.beta_gamma, config.beta_rho, rng, size=E)
        latents[c * E:(c + 1) * E] = mix_with_class_mean(z_L, mean_store, c,
                                                         alpha)
    logger.debug('generated %d pseudo-latents for %d classes', M * E, M)
    return PseudoLatentSet(latents, labels)
