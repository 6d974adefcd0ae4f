"""Dense numeric kernel.

float64 tensors (numpy arrays), a tape that records operations for
reverse-mode differentiation, small feed-forward networks built on it,
and SGD with classic (heavy-ball) momentum.

A Graph is single-use: build it by calling its operations (this is the
forward pass, values are computed eagerly), then call backward() once.
"""

import copy
import hashlib
import logging
import math

import numpy as np
from scipy.special import expit, logsumexp

from .errors import GraphError, NumericError, ShapeError, ConfigError

logger = logging.getLogger(__name__)

DTYPE = np.float64


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericError('non-finite value in %s' % what)


def _unbroadcast(grad, shape):
    # sum out the axes that numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Parameter(object):
    """A trainable tensor. Gradients and optimizer state are keyed by
    the Parameter object, not by its value."""

    def __init__(self, value, name=''):
        self.value = np.array(value, dtype=DTYPE)
        self.name = name
        self.frozen = False

    @property
    def shape(self):
        return self.value.shape

    def freeze(self):
        self.frozen = True
        self.value.setflags(write=False)

    def __deepcopy__(self, memo):
        p = Parameter(self.value.copy(), self.name)
        if self.frozen:
            p.freeze()
        return p

    def __repr__(self):
        return '<Parameter %s %s>' % (self.name,
                                      'x'.join(str(n) for n in self.shape))


class Node(object):
    __slots__ = ('value', 'grad', 'parents', 'backward_fn', 'requires_grad',
                 'op', 'index')

    def __init__(self, value, op, parents, backward_fn, requires_grad):
        self.value = value
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.grad = None
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return '<Node %s %s>' % (self.op, self.value.shape)


class Gradients(object):
    """Result of Graph.backward(). Index it with a Parameter or a Node;
    things that got no gradient give zeros."""

    def __init__(self, params, graph_nodes):
        self._params = params
        self._nodes = graph_nodes

    def __getitem__(self, key):
        if isinstance(key, Parameter):
            entry = self._params.get(id(key))
            if entry is None:
                return np.zeros_like(key.value)
            return entry[1]
        if isinstance(key, Node):
            if key.grad is None:
                return np.zeros_like(key.value)
            return key.grad
        raise TypeError('expected Parameter or Node, got %r' % (key,))

    def __contains__(self, param):
        return id(param) in self._params

    def items(self):
        return list(self._params.values())


class Graph(object):
    """Tape of operations. Node creation order is a topological order,
    so the backward pass simply walks the tape in reverse."""

    def __init__(self):
        self.nodes = []
        self._param_nodes = {}
        self._consumed = False

    def _record(self, node):
        if self._consumed:
            raise GraphError('graph already used for backward')
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def _op(self, value, op, parents, backward_fn):
        _check_finite(value, op)
        requires_grad = any(p.requires_grad for p in parents)
        return self._record(Node(value, op, tuple(parents),
                                 backward_fn if requires_grad else None,
                                 requires_grad))

    def _wrap(self, x):
        if isinstance(x, Node):
            return x
        return self.input(x)

    # leaves

    def input(self, value, requires_grad=False):
        value = np.array(value, dtype=DTYPE)
        _check_finite(value, 'input')
        return self._record(Node(value, 'input', (), None, requires_grad))

    constant = input

    def param(self, p):
        entry = self._param_nodes.get(id(p))
        if entry is not None:
            return entry[1]
        node = self._record(Node(p.value, 'param', (), None, not p.frozen))
        self._param_nodes[id(p)] = (p, node)
        return node

    # layers

    def affine(self, x, w, b=None):
        x, w = self._wrap(x), self._wrap(w)
        if w.value.ndim != 2 or x.value.shape[-1] != w.value.shape[1]:
            raise ShapeError('affine: input %s does not fit weight %s'
                             % (x.value.shape, w.value.shape))
        value = x.value @ w.value.T
        parents = [x, w]
        if b is not None:
            b = self._wrap(b)
            if b.value.shape != (w.value.shape[0],):
                raise ShapeError('affine: bias %s for weight %s'
                                 % (b.value.shape, w.value.shape))
            value = value + b.value
            parents.append(b)

        def backward(g):
            g2 = g.reshape(-1, w.value.shape[0])
            x2 = x.value.reshape(-1, w.value.shape[1])
            x.accumulate((g2 @ w.value).reshape(x.value.shape))
            w.accumulate(g2.T @ x2)
            if b is not None:
                b.accumulate(g2.sum(axis=0))
        return self._op(value, 'affine', parents, backward)

    def relu(self, x):
        x = self._wrap(x)

        def backward(g):
            x.accumulate(g * (x.value > 0))
        return self._op(np.maximum(x.value, 0), 'relu', [x], backward)

    def sigmoid(self, x):
        x = self._wrap(x)
        s = expit(x.value)

        def backward(g):
            x.accumulate(g * s * (1 - s))
        return self._op(s, 'sigmoid', [x], backward)

    def softmax(self, x, axis=-1):
        x = self._wrap(x)
        e = np.exp(x.value - x.value.max(axis=axis, keepdims=True))
        y = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        return self._op(y, 'softmax', [x], backward)

    def log_softmax(self, x, axis=-1):
        x = self._wrap(x)
        y = x.value - logsumexp(x.value, axis=axis, keepdims=True)

        def backward(g):
            x.accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))
        return self._op(y, 'log_softmax', [x], backward)

    def log(self, x):
        x = self._wrap(x)
        with np.errstate(divide='ignore', invalid='ignore'):
            value = np.log(x.value)

        def backward(g):
            x.accumulate(g / x.value)
        return self._op(value, 'log', [x], backward)

    def exp(self, x):
        x = self._wrap(x)
        with np.errstate(over='ignore'):
            value = np.exp(x.value)

        def backward(g):
            x.accumulate(g * value)
        return self._op(value, 'exp', [x], backward)

    def square(self, x):
        x = self._wrap(x)

        def backward(g):
            x.accumulate(2 * x.value * g)
        return self._op(x.value * x.value, 'square', [x], backward)

    def sum(self, x, axis=None):
        x = self._wrap(x)

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            x.accumulate(np.broadcast_to(g, x.value.shape))
        return self._op(np.sum(x.value, axis=axis), 'sum', [x], backward)

    def scale(self, x, factor):
        x = self._wrap(x)
        factor = float(factor)

        def backward(g):
            x.accumulate(factor * g)
        return self._op(factor * x.value, 'scale', [x], backward)

    def concat(self, xs, axis=0):
        xs = [self._wrap(x) for x in xs]
        sizes = [x.value.shape[axis] for x in xs]
        try:
            value = np.concatenate([x.value for x in xs], axis=axis)
        except ValueError as e:
            raise ShapeError('concat: %s' % e)

        def backward(g):
            for x, part in zip(xs, np.split(g, np.cumsum(sizes)[:-1],
                                            axis=axis)):
                x.accumulate(part)
        return self._op(value, 'concat', xs, backward)

    # arithmetic used by the losses

    def _binary(self, a, b, name):
        a, b = self._wrap(a), self._wrap(b)
        try:
            np.broadcast_shapes(a.value.shape, b.value.shape)
        except ValueError:
            raise ShapeError('%s: shapes %s and %s do not broadcast'
                             % (name, a.value.shape, b.value.shape))
        return a, b

    def add(self, a, b):
        a, b = self._binary(a, b, 'add')

        def backward(g):
            a.accumulate(_unbroadcast(g, a.value.shape))
            b.accumulate(_unbroadcast(g, b.value.shape))
        return self._op(a.value + b.value, 'add', [a, b], backward)

    def sub(self, a, b):
        a, b = self._binary(a, b, 'sub')

        def backward(g):
            a.accumulate(_unbroadcast(g, a.value.shape))
            b.accumulate(_unbroadcast(-g, b.value.shape))
        return self._op(a.value - b.value, 'sub', [a, b], backward)

    def mul(self, a, b):
        a, b = self._binary(a, b, 'mul')

        def backward(g):
            a.accumulate(_unbroadcast(g * b.value, a.value.shape))
            b.accumulate(_unbroadcast(g * a.value, b.value.shape))
        return self._op(a.value * b.value, 'mul', [a, b], backward)

    def clip(self, x, low, high):
        x = self._wrap(x)
        inside = (x.value >= low) & (x.value <= high)

        def backward(g):
            x.accumulate(g * inside)
        return self._op(np.clip(x.value, low, high), 'clip', [x], backward)

    def row_norm(self, x):
        """Euclidean norm of each row; the gradient at a zero row is 0."""
        x = self._wrap(x)
        if x.value.ndim != 2:
            raise ShapeError('row_norm expects a matrix, got %s'
                             % (x.value.shape,))
        norms = np.sqrt((x.value * x.value).sum(axis=1))

        def backward(g):
            safe = np.where(norms > 0, norms, 1.0)
            coef = np.where(norms > 0, g / safe, 0.0)
            x.accumulate(coef[:, None] * x.value)
        return self._op(norms, 'row_norm', [x], backward)

    def mean(self, x):
        x = self._wrap(x)
        return self.scale(self.sum(x), 1.0 / x.value.size)

    def backward(self, output, output_grad=None):
        if (not self.nodes or not isinstance(output, Node) or
                output.index < 0 or output.index >= len(self.nodes) or
                self.nodes[output.index] is not output):
            raise GraphError('backward called before forward '
                             '(output is not on this graph)')
        if self._consumed:
            raise GraphError('backward already run on this graph')
        if output_grad is None:
            output_grad = np.ones_like(output.value)
        else:
            output_grad = np.array(output_grad, dtype=DTYPE)
            if output_grad.shape != output.value.shape:
                raise ShapeError('output gradient %s for output %s'
                                 % (output_grad.shape, output.value.shape))
        for node in self.nodes:
            node.grad = None
        if output.requires_grad:
            output.grad = output_grad
        for node in reversed(self.nodes[:output.index + 1]):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
        self._consumed = True
        params = {}
        for key, (p, node) in self._param_nodes.items():
            if node.grad is not None:
                _check_finite(node.grad, 'gradient of %s' % p.name)
                params[key] = (p, node.grad)
        return Gradients(params, self.nodes)


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DenseNet(object):
    """Affine layers with relu between them, optionally ending in a
    sigmoid. Weights are stored as (out, in), so row c of the last
    weight belongs to output c."""

    FINAL_ACTIVATIONS = (None, 'sigmoid')

    def __init__(self, weights, biases, final_activation=None, name='net'):
        if final_activation not in self.FINAL_ACTIVATIONS:
            raise ConfigError('unknown final activation: %s'
                              % final_activation)
        if not weights or len(weights) != len(biases):
            raise ShapeError('%s: need one bias per weight' % name)
        self.name = name
        self.final_activation = final_activation
        self.layers = []
        for i, (w, b) in enumerate(zip(weights, biases)):
            w = Parameter(w, '%s.%d.weight' % (name, i))
            b = Parameter(b, '%s.%d.bias' % (name, i))
            if w.value.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError('%s layer %d: weight %s, bias %s'
                                 % (name, i, w.shape, b.shape))
            if self.layers and self.layers[-1][0].shape[0] != w.shape[1]:
                raise ShapeError('%s layer %d: expected input %d, got %d'
                                 % (name, i, self.layers[-1][0].shape[0],
                                    w.shape[1]))
            self.layers.append((w, b))

    @classmethod
    def create(cls, sizes, rng, final_activation=None, name='net'):
        """sizes = [in, hidden..., out]; Glorot-uniform weights,
        zero biases."""
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError('bad layer sizes: %s' % (sizes,))
        weights = [glorot_uniform(rng, n_out, n_in)
                   for n_in, n_out in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(n) for n in sizes[1:]]
        return cls(weights, biases, final_activation, name)

    @property
    def sizes(self):
        return [self.layers[0][0].shape[1]] + [w.shape[0]
                                               for w, _ in self.layers]

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self):
        return self.layers[-1][0].shape[0]

    def parameters(self):
        return [p for layer in self.layers for p in layer]

    def forward(self, graph, x):
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = graph.affine(h, graph.param(w), graph.param(b))
            if i != last:
                h = graph.relu(h)
        if self.final_activation == 'sigmoid':
            h = graph.sigmoid(h)
        return h

    def __call__(self, x):
        """Inference without recording; same arithmetic as forward()."""
        h = np.asarray(x, dtype=DTYPE)
        if h.shape[-1] != self.input_dim:
            raise ShapeError('%s: input dim %d, expected %d'
                             % (self.name, h.shape[-1], self.input_dim))
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.value.T + b.value
            if i != last:
                h = np.maximum(h, 0)
        if self.final_activation == 'sigmoid':
            h = expit(h)
        return h

    def copy(self, name=None):
        net = copy.deepcopy(self)
        if name is not None:
            net.rename(name)
        return net

    def rename(self, name):
        self.name = name
        for i, (w, b) in enumerate(self.layers):
            w.name = '%s.%d.weight' % (name, i)
            b.name = '%s.%d.bias' % (name, i)

    def freeze(self):
        for p in self.parameters():
            p.freeze()

    @property
    def frozen(self):
        return all(p.frozen for p in self.parameters())

    def checksum(self):
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()


class SgdMomentum(object):
    """v <- momentum * v + g;  p <- p - learning_rate * v

    With clip_norm > 0 the gradients of one step are first rescaled so
    that their global L2 norm is at most clip_norm."""

    def __init__(self, learning_rate, momentum=0.9, clip_norm=0.0):
        if not learning_rate > 0:
            raise ConfigError('learning rate must be positive: %s'
                              % learning_rate)
        if not 0 <= momentum < 1:
            raise ConfigError('momentum must be in [0, 1): %s' % momentum)
        if not clip_norm >= 0:
            raise ConfigError('clip_norm must be >= 0: %s' % clip_norm)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.clip_norm = float(clip_norm)
        self.velocity = {}

    def step(self, params, grads):
        """grads is a Gradients (or a mapping indexed by Parameter),
        or a sequence aligned with params. Frozen parameters are
        skipped. Nothing is modified if the step would produce a
        non-finite value."""
        if isinstance(grads, (list, tuple)):
            if len(grads) != len(params):
                raise ShapeError('%d gradients for %d parameters'
                                 % (len(grads), len(params)))
            pairs = zip(params, grads)
        else:
            pairs = ((p, grads[p]) for p in params)
        active = []
        for p, g in pairs:
            if p.frozen:
                continue
            g = np.asarray(g, dtype=DTYPE)
            if g.shape != p.value.shape:
                raise ShapeError('gradient %s for parameter %s %s'
                                 % (g.shape, p.name, p.value.shape))
            _check_finite(g, 'gradient of %s' % p.name)
            active.append((p, g))
        scale = 1.0
        if self.clip_norm > 0 and active:
            norm = math.sqrt(sum(float(np.sum(g * g)) for _, g in active))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        updates = []
        for p, g in active:
            v = self.velocity.get(p)
            v = scale * g if v is None else self.momentum * v + scale * g
            value = p.value - self.learning_rate * v
            _check_finite(value, 'parameter %s after sgd step' % p.name)
            updates.append((p, v, value))
        for p, v, value in updates:
            self.velocity[p] = v
            p.value[...] = value


def sgd_step(opt, params, grads):
    """One optimizer step; returns params (updated in place)."""
    opt.step(params, grads)
    return params


def numerical_gradient(fn, array, h=1e-5):
    """Central differences of the scalar fn() w.r.t. each entry of
    array, which is perturbed in place and restored."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = fn()
        flat[i] = orig - h
        minus = fn()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b),
                                       1e-10)
