"""The network family: feature extractor, labeled and unlabeled heads,
the variational head of the MI regularizer, the known-class identifier,
and the text checkpoint format."""

import logging

import numpy as np

from .errors import CheckpointError, GraphError, ShapeError
from .miregularizer import optimal_sigma_check
from .numkernel import DenseNet, Parameter, DTYPE
from .pseudoreplay import ClassMeanStore

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = 'NCDWF-CKPT'
CHECKPOINT_VERSION = 1

# sigma is kept in [1e-4, 1e6]
LOG_SIGMA_FLOOR = np.log(1e-4)
LOG_SIGMA_CEILING = np.log(1e6)


class NcdwfModel(object):
    """Shared extractor (input dim d -> latent dim h), labeled head
    (h -> M logits), unlabeled head (h -> N logits).

    After the first phase, frozen_extractor holds a read-only copy of
    the extractor and class_means the per-class latent means."""

    def __init__(self, feature_extractor, labeled_head, unlabeled_head):
        h = feature_extractor.output_dim
        for head in (labeled_head, unlabeled_head):
            if head.input_dim != h:
                raise ShapeError('head %s takes %d inputs, latent dim is %d'
                                 % (head.name, head.input_dim, h))
        self.feature_extractor = feature_extractor
        self.labeled_head = labeled_head
        self.unlabeled_head = unlabeled_head
        self.frozen_extractor = None
        self.class_means = None

    @classmethod
    def create(cls, input_dim, latent_dim, num_labeled, num_unlabeled, rng,
               extractor_hidden=None, head_hidden=()):
        """Extractor defaults to two hidden layers of width latent_dim;
        heads default to a single affine layer."""
        if extractor_hidden is None:
            extractor_hidden = [latent_dim, latent_dim]
        fe = DenseNet.create([input_dim] + list(extractor_hidden) +
                             [latent_dim], rng, name='feature_extractor')
        lab = DenseNet.create([latent_dim] + list(head_hidden) +
                              [num_labeled], rng, name='labeled_head')
        ulb = DenseNet.create([latent_dim] + list(head_hidden) +
                              [num_unlabeled], rng, name='unlabeled_head')
        return cls(fe, lab, ulb)

    @property
    def input_dim(self):
        return self.feature_extractor.input_dim

    @property
    def latent_dim(self):
        return self.feature_extractor.output_dim

    @property
    def num_labeled(self):
        return self.labeled_head.output_dim

    @property
    def num_unlabeled(self):
        return self.unlabeled_head.output_dim

    def parameters(self):
        return (self.feature_extractor.parameters() +
                self.labeled_head.parameters() +
                self.unlabeled_head.parameters())

    def features(self, x):
        return self.feature_extractor(x)

    def frozen_features(self, x):
        if self.frozen_extractor is None:
            raise GraphError('no extractor snapshot yet')
        return self.frozen_extractor(x)

    def predict_labeled(self, x):
        return self.labeled_head(self.feature_extractor(x))

    def predict_unlabeled(self, x):
        return self.unlabeled_head(self.feature_extractor(x))

    def freeze_extractor_snapshot(self):
        if self.frozen_extractor is not None:
            raise GraphError('extractor snapshot already taken')
        self.frozen_extractor = self.feature_extractor.copy(
            'frozen_extractor')
        self.frozen_extractor.freeze()


class VariationalHead(object):
    """Gaussian q(l|u): mean network N -> M and a free log-sigma vector
    of length M."""

    def __init__(self, mean_net, log_sigma):
        self.mean_net = mean_net
        log_sigma = Parameter(log_sigma, 'log_sigma')
        if log_sigma.shape != (mean_net.output_dim,):
            raise ShapeError('log_sigma %s for mean net output %d'
                             % (log_sigma.shape, mean_net.output_dim))
        self.log_sigma = log_sigma

    @classmethod
    def create(cls, num_unlabeled, num_labeled, rng, hidden=(64,)):
        net = DenseNet.create([num_unlabeled] + list(hidden) +
                              [num_labeled], rng, name='mean_net')
        return cls(net, np.zeros(num_labeled))

    @property
    def sigma(self):
        return np.exp(self.log_sigma.value)

    def parameters(self):
        return self.mean_net.parameters() + [self.log_sigma]

    def clamp(self):
        np.clip(self.log_sigma.value, LOG_SIGMA_FLOOR, LOG_SIGMA_CEILING,
                out=self.log_sigma.value)

    def fit_sigma(self, l_values, u_values):
        """Sets sigma to the per-dimension RMS residual of the current
        mean net on (l, u), the loss minimizer for fixed residuals."""
        residuals = (np.asarray(l_values, dtype=np.float64) -
                     self.mean_net(u_values))
        sigma = optimal_sigma_check(residuals)
        self.log_sigma.value[...] = np.log(np.maximum(sigma, 1e-300))
        self.clamp()
        return self.sigma


class KciNet(object):
    """Known-class identifier: latent -> probability of being from an
    unlabeled class."""

    def __init__(self, net):
        if net.output_dim != 1 or net.final_activation != 'sigmoid':
            raise ShapeError('KCI must end in a single sigmoid unit')
        self.net = net

    @classmethod
    def create(cls, latent_dim, rng, hidden=(128, 128)):
        return cls(DenseNet.create([latent_dim] + list(hidden) + [1], rng,
                                   final_activation='sigmoid', name='kci'))

    @property
    def latent_dim(self):
        return self.net.input_dim

    def parameters(self):
        return self.net.parameters()

    def scores(self, z):
        s = self.net(z)
        return s[..., 0]


class Checkpoint(object):
    def __init__(self, model, vhead, kci, seed=None):
        self.model = model
        self.vhead = vhead
        self.kci = kci
        self.seed = seed


def _fmt(values):
    return ' '.join('%.17g' % v for v in values)


def _net_tensors(net, prefix):
    for i, (w, b) in enumerate(net.layers):
        yield '%s.%d.weight' % (prefix, i), w.value
        yield '%s.%d.bias' % (prefix, i), b.value


def save_checkpoint(model, vhead, kci, path, seed=None):
    tensors = []
    tensors += _net_tensors(model.feature_extractor, 'feature_extractor')
    tensors += _net_tensors(model.labeled_head, 'labeled_head')
    tensors += _net_tensors(model.unlabeled_head, 'unlabeled_head')
    if model.frozen_extractor is not None:
        tensors += _net_tensors(model.frozen_extractor, 'frozen_extractor')
    tensors += _net_tensors(vhead.mean_net, 'mean_net')
    tensors.append(('log_sigma', vhead.log_sigma.value))
    tensors += _net_tensors(kci.net, 'kci')
    if model.class_means is not None:
        tensors.append(('class_means', model.class_means.means))
        tensors.append(('class_counts',
                        np.asarray(model.class_means.counts, dtype=DTYPE)))
    with open(path, 'w', encoding='utf-8') as f:
        f.write('%s v%d\n' % (CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
        f.write('M %d\n' % model.num_labeled)
        f.write('N %d\n' % model.num_unlabeled)
        f.write('d %d\n' % model.input_dim)
        f.write('h %d\n' % model.latent_dim)
        f.write('seed %s\n' % ('-' if seed is None else int(seed)))
        for name, value in tensors:
            value = np.atleast_1d(value)
            f.write('tensor %s %s\n' % (name, ' '.join(str(n) for n in
                                                      value.shape)))
            for row in value.reshape(value.shape[0], -1):
                f.write(_fmt(row) + '\n')
    logger.info('checkpoint written: %s (%d tensors)', path, len(tensors))


def _parse_checkpoint(path):
    with open(path, encoding='utf-8') as f:
        lines = f.read().splitlines()
    magic = lines[0].split() if lines else []
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise CheckpointError('%s: not an ncdwf checkpoint' % path)
    if magic[1] != 'v%d' % CHECKPOINT_VERSION:
        raise CheckpointError('%s: unsupported checkpoint version %r '
                              '(expected v%d)'
                              % (path, magic[1], CHECKPOINT_VERSION))
    header = {}
    n = 1
    for key in ('M', 'N', 'd', 'h', 'seed'):
        fields = lines[n].split() if n < len(lines) else []
        if len(fields) != 2 or fields[0] != key:
            raise CheckpointError('%s:%d: expected header field %s'
                                  % (path, n + 1, key))
        header[key] = fields[1]
        n += 1
    blocks = []
    for lineno, line in enumerate(lines[n:], start=n + 1):
        fields = line.split()
        if not fields:
            continue
        if fields[0] == 'tensor':
            try:
                dims = [int(x) for x in fields[2:]]
            except ValueError:
                dims = []
            if len(fields) < 3 or not dims:
                raise CheckpointError('%s:%d: bad tensor line'
                                      % (path, lineno))
            blocks.append((fields[1], dims, [], lineno))
        elif not blocks:
            raise CheckpointError('%s:%d: data before first tensor'
                                  % (path, lineno))
        else:
            blocks[-1][2].extend(fields)
    tensors = {}
    for name, dims, values, lineno in blocks:
        size = int(np.prod(dims))
        if len(values) < size:
            raise CheckpointError('%s: truncated file in tensor %s'
                                  % (path, name))
        if len(values) > size:
            raise CheckpointError('%s:%d: tensor %s has %d values, '
                                  'header says %s'
                                  % (path, lineno, name, len(values), dims))
        try:
            arr = np.array([float(v) for v in values], dtype=DTYPE)
        except ValueError:
            raise CheckpointError('%s: bad number in tensor %s'
                                  % (path, name))
        tensors[name] = arr.reshape(dims)
    return header, tensors


def _take_net(tensors, prefix, final_activation=None):
    weights, biases = [], []
    while '%s.%d.weight' % (prefix, len(weights)) in tensors:
        i = len(weights)
        weights.append(tensors.pop('%s.%d.weight' % (prefix, i)))
        biases.append(tensors.pop('%s.%d.bias' % (prefix, i), None))
        if biases[-1] is None:
            raise CheckpointError('missing tensor %s.%d.bias' % (prefix, i))
    if not weights:
        return None
    try:
        return DenseNet(weights, biases, final_activation, prefix)
    except ShapeError as e:
        raise CheckpointError('inconsistent tensors for %s: %s' % (prefix, e))


def load_checkpoint(path):
    header, tensors = _parse_checkpoint(path)
    try:
        dims = {k: int(header[k]) for k in ('M', 'N', 'd', 'h')}
        seed = None if header['seed'] == '-' else int(header['seed'])
    except ValueError:
        raise CheckpointError('%s: non-integer header field' % path)
    nets = {}
    for prefix in ('feature_extractor', 'labeled_head', 'unlabeled_head',
                   'mean_net'):
        nets[prefix] = _take_net(tensors, prefix)
        if nets[prefix] is None:
            raise CheckpointError('%s: missing network %s' % (path, prefix))
    frozen = _take_net(tensors, 'frozen_extractor')
    kci_net = _take_net(tensors, 'kci', 'sigmoid')
    if kci_net is None or 'log_sigma' not in tensors:
        raise CheckpointError('%s: missing kci or log_sigma' % path)
    expected = [
        ('d', nets['feature_extractor'].input_dim),
        ('h', nets['feature_extractor'].output_dim),
        ('M', nets['labeled_head'].output_dim),
        ('N', nets['unlabeled_head'].output_dim),
    ]
    for key, actual in expected:
        if dims[key] != actual:
            raise CheckpointError('%s: header %s=%d but tensors give %d'
                                  % (path, key, dims[key], actual))
    try:
        model = NcdwfModel(nets['feature_extractor'], nets['labeled_head'],
                           nets['unlabeled_head'])
        vhead = VariationalHead(nets['mean_net'], tensors.pop('log_sigma'))
        kci = KciNet(kci_net)
    except ShapeError as e:
        raise CheckpointError('%s: %s' % (path, e))
    if frozen is not None:
        if frozen.sizes != model.feature_extractor.sizes:
            raise CheckpointError('%s: frozen extractor shape differs'
                                  % path)
        frozen.rename('frozen_extractor')
        frozen.freeze()
        model.frozen_extractor = frozen
    if 'class_means' in tensors:
        means = tensors.pop('class_means')
        counts = tensors.pop('class_counts', None)
        if means.shape != (dims['M'], dims['h']) or counts is None:
            raise CheckpointError('%s: class means %s for M=%d h=%d'
                                  % (path, means.shape, dims['M'],
                                     dims['h']))
        model.class_means = ClassMeanStore(means, counts.astype(int))
    if tensors:
        raise CheckpointError('%s: unexpected tensors: %s'
                              % (path, ', '.join(sorted(tensors))))
    return Checkpoint(model, vhead, kci, seed)
