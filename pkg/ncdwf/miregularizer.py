"""Variational mutual-information regularizer.

The labeled-head logits l of an unlabeled sample are regressed from its
unlabeled-head logits u through a Gaussian q(l|u) with mean mu(u) and a
free per-dimension sigma. The loss is the negative log-likelihood
without its constant:

    mean_b sum_i [ log sigma_i + (l_i - mu(u)_i)^2 / (2 sigma_i^2) ]

l is a constant (regression target); gradients reach mu, sigma and,
through u, the unlabeled head and the feature extractor.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .numkernel import Graph, Node

logger = logging.getLogger(__name__)


@dataclass
class MiBatch:
    L: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        if (self.L.ndim != 2 or self.U.ndim != 2 or
                len(self.L) != len(self.U)):
            raise ShapeError('MiBatch: L %s and U %s must be matrices with '
                             'equal row counts' % (self.L.shape, self.U.shape))

    def __len__(self):
        return len(self.L)


def mi_loss_node(graph, l_values, u, vhead, printed_sign=False):
    """Records the loss on graph. l_values is a plain array (never
    differentiated), u may be a Node of a larger graph. With
    printed_sign the loss is negated (for comparison runs only)."""
    if isinstance(l_values, Node):
        l_values = l_values.value
    l_values = np.asarray(l_values, dtype=np.float64)
    if not isinstance(u, Node):
        u = graph.input(u)
    if l_values.shape[-1] != vhead.mean_net.output_dim:
        raise ShapeError('labeled logits have %d columns, mean net gives %d'
                         % (l_values.shape[-1], vhead.mean_net.output_dim))
    if u.value.shape[-1] != vhead.mean_net.input_dim:
        raise ShapeError('unlabeled logits have %d columns, mean net takes %d'
                         % (u.value.shape[-1], vhead.mean_net.input_dim))
    if len(l_values) != len(u.value):
        raise ShapeError('%d labeled rows, %d unlabeled rows'
                         % (len(l_values), len(u.value)))
    if not np.all(np.isfinite(vhead.log_sigma.value)):
        raise NumericError('non-finite sigma in variational head')
    B = len(l_values)
    log_sigma = graph.param(vhead.log_sigma)
    residual = graph.sub(graph.constant(l_values),
                         vhead.mean_net.forward(graph, u))
    inv_var = graph.exp(graph.scale(log_sigma, -2.0))
    quad = graph.sum(graph.mul(graph.square(residual), inv_var))
    # sum_b sum_i log sigma_i / B == sum_i log sigma_i
    loss = graph.add(graph.scale(quad, 0.5 / B), graph.sum(log_sigma))
    if printed_sign:
        loss = graph.scale(loss, -1.0)
    return loss


def mi_loss(batch, vhead, printed_sign=False):
    """Returns (loss, grads); grads is indexable by the variational head
    parameters and gives d loss / d U under the key 'U'."""
    g = Graph()
    u = g.input(batch.U, requires_grad=True)
    loss = mi_loss_node(g, batch.L, u, vhead, printed_sign)
    grads = g.backward(loss)
    result = {p: grads[p] for p in vhead.parameters()}
    result['U'] = grads[u]
    return float(loss.value), result


def optimal_sigma_check(residuals):
    """Per-dimension sigma minimizing the loss for fixed residuals."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 2 or len(residuals) < 1:
        raise ShapeError('residuals must be a non-empty B x M matrix')
    return np.sqrt(np.mean(residuals ** 2, axis=0))
