"""Equipartition pseudo-labels by entropic optimal transport.

For predictions P (N classes x B samples, each column a probability
vector) we look for Q on the transportation polytope
(row sums 1/N, column sums 1/B) maximizing <Q, P> + epsilon * H(Q).
The maximizer has the form diag(a) exp(P/epsilon) diag(b) and is found
by Sinkhorn-Knopp: alternate row and column rescaling.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import softmax

from .errors import SinkhornError

logger = logging.getLogger(__name__)


class SinkhornConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    epsilon: float = Field(1.0, gt=0)
    max_iters: int = Field(1000, ge=1)
    tol: float = Field(1e-8, gt=0)
    # train on columns of Q instead of their argmax
    soft_targets: bool = False


@dataclass
class SelfLabelProblem:
    P: np.ndarray
    epsilon: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-8


@dataclass
class TransportPlan:
    Q: np.ndarray
    iterations_used: int
    converged: bool
    # L1 violation of the marginal about to be rescaled, per half-step
    history: list = field(default_factory=list)

    def marginal_residuals(self):
        n, b = self.Q.shape
        return (np.abs(self.Q.sum(axis=1) - 1.0 / n).max(),
                np.abs(self.Q.sum(axis=0) - 1.0 / b).max())


def _check_problem(problem):
    P = np.asarray(problem.P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise SinkhornError('P must be a non-empty N x B matrix, got %s'
                            % (P.shape,))
    if not np.all(np.isfinite(P)):
        raise SinkhornError('P has non-finite entries')
    if not problem.epsilon > 0:
        raise SinkhornError('epsilon must be positive: %s' % problem.epsilon)
    if problem.max_iters < 1 or not problem.tol > 0:
        raise SinkhornError('need max_iters >= 1 and tol > 0')
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=0) - 1) > 1e-9):
        raise SinkhornError('columns of P must be probability vectors')
    return P


def solve_sinkhorn(problem):
    P = _check_problem(problem)
    n, b = P.shape
    row_target = 1.0 / n
    col_target = 1.0 / b
    # shifting P by a constant only rescales K
    K = np.exp((P - P.max()) / problem.epsilon)
    total = K.sum()
    if total == 0 or np.any(K.sum(axis=0) == 0) or np.any(K.sum(axis=1) == 0):
        raise SinkhornError('exp(P/epsilon) underflows; epsilon=%g is too '
                            'small' % problem.epsilon)
    # start column-feasible, so every recorded violation bounds the next
    Q = K * (col_target / K.sum(axis=0))[None, :]
    history = []
    converged = False
    it = 0
    for it in range(1, problem.max_iters + 1):
        rows = Q.sum(axis=1)
        history.append(np.abs(rows - row_target).sum())
        Q *= (row_target / rows)[:, None]
        cols = Q.sum(axis=0)
        history.append(np.abs(cols - col_target).sum())
        Q *= (col_target / cols)[None, :]
        row_res = np.abs(Q.sum(axis=1) - row_target).max()
        col_res = np.abs(Q.sum(axis=0) - col_target).max()
        if row_res < problem.tol and col_res < problem.tol:
            converged = True
            break
    if not converged:
        logger.debug('sinkhorn: no convergence in %d iterations (N=%d B=%d)',
                     problem.max_iters, n, b)
    return TransportPlan(Q, it, converged, history)


def harden_labels(plan, allow_unconverged=False):
    """Per-column argmax of Q; ties go to the lowest class index."""
    if not plan.converged and not allow_unconverged:
        raise SinkhornError('transport plan did not converge (%d iterations)'
                            % plan.iterations_used)
    return np.argmax(plan.Q, axis=0)


def soft_targets(plan):
    """Columns of Q rescaled to probability vectors, as a B x N matrix."""
    return (plan.Q / plan.Q.sum(axis=0, keepdims=True)).T


def transport_objective(Q, P, epsilon=1.0):
    """<Q, P> + epsilon * H(Q), with 0 log 0 = 0."""
    Q = np.asarray(Q)
    positive = Q > 0
    entropy = -np.sum(Q[positive] * np.log(Q[positive]))
    return float(np.sum(Q * P) + epsilon * entropy)


def self_label(logits, config=None):
    """Pseudo-labels for a batch of unlabeled-head logits (B x N).

    Returns (plan, targets): targets are class indices, or a B x N
    matrix of soft targets when config.soft_targets is set."""
    config = config or SinkhornConfig()
    P = softmax(np.asarray(logits, dtype=np.float64), axis=1).T
    plan = solve_sinkhorn(SelfLabelProblem(P, config.epsilon,
                                           config.max_iters, config.tol))
    if not plan.converged:
        logger.warning('sinkhorn hit max_iters=%d, using the last iterate',
                       config.max_iters)
    if config.soft_targets:
        return plan, soft_targets(plan)
    return plan, harden_labels(plan, allow_unconverged=True)
