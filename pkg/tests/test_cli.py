#!/usr/bin/env python

import contextlib
import csv
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from ncdwf import cli
from ncdwf.cli import create_models, main
from ncdwf.config import build_config


class CountingPool(object):
    """Labeled pool that counts reads of its samples."""

    def __init__(self, pool):
        self._pool = pool
        self.reads = 0

    @property
    def x(self):
        self.reads += 1
        return self._pool.x

    @property
    def y(self):
        self.reads += 1
        return self._pool.y

    @property
    def indices(self):
        return self._pool.indices

    def __len__(self):
        return len(self._pool)


SMALL_CONFIG = '''\
[split]
total_classes = 4
labeled = 2
unlabeled = 2

[data]
per_class = 20
dim = 4
center_scale = 10.0
separation = 4.0

[model]
latent_dim = 4
extractor_hidden = 8
vhead_hidden = 4
kci_hidden = 4

[phase1]
epochs = 2
batch_size = 16

[phase2]
epochs = 1
batch_size = 8

[inversion]
iterations = 2
per_class = 3

[eval]
tau = 0.5
taus = 0.5,0.9
'''


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.config = os.path.join(self.tmpdir, 'small.ini')
        with open(self.config, 'w') as f:
            f.write(SMALL_CONFIG)
        self.out = os.path.join(self.tmpdir, 'out')

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def run_cli(self, *args, out=None):
        argv = list(args) + ['--config', self.config,
                             '--out', out or self.out]
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), \
                contextlib.redirect_stderr(stderr):
            status = main(argv)
        return status, stdout.getvalue(), stderr.getvalue()

    def path(self, name, out=None):
        return os.path.join(out or self.out, name)

    def read_jsonl(self, name):
        with open(self.path(name)) as f:
            return [json.loads(line) for line in f]

    def test_generate_train_eval(self):
        self.assertEqual(self.run_cli('generate')[0], 0)
        for name in ('lab_train.csv', 'unlab_train.csv', 'lab_test.csv',
                     'unlab_test.csv'):
            self.assertTrue(os.path.exists(self.path(name)), name)

        self.assertEqual(self.run_cli('train')[0], 0)
        self.assertTrue(os.path.exists(self.path('phase1.ckpt')))
        self.assertTrue(os.path.exists(self.path('phase2.ckpt')))
        log = self.read_jsonl('train_log.jsonl')
        self.assertEqual([r['phase'] for r in log],
                         ['phase1', 'phase1', 'phase2'])
        self.assertIsNotNone(log[-1]['unlab_acc'])
        self.assertIsNotNone(log[-1]['kci_auc'])

        status, stdout, _ = self.run_cli('eval')
        self.assertEqual(status, 0)
        self.assertIn('TaskAware', stdout)
        with open(self.path('report_task_aware.json')) as f:
            report = json.load(f)
        self.assertAlmostEqual(report['all_acc'],
                               (report['lab_acc'] + report['unlab_acc']) / 2,
                               delta=1e-12)
        for tau in ('0.5', '0.9'):
            self.assertTrue(os.path.exists(
                self.path('report_tau_%s.json' % tau)))
        with open(self.path('predictions.csv')) as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 16)
        self.assertEqual({r['route'] for r in rows} - {'lab', 'unlab'},
                         set())
        with open(self.path('confusion.csv')) as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['true_label', 'lab_0', 'lab_1'])
        self.assertEqual([r[0] for r in rows[1:]], ['2', '3'])

        self.assertEqual(self.run_cli('sweep-tau', '--taus', '0.3,0.6,0.95')
                         [0], 0)
        sweep = self.read_jsonl('tau_sweep.jsonl')
        self.assertEqual([r['tau'] for r in sweep], [0.3, 0.6, 0.95])

        with open(self.path('manifest.json')) as f:
            manifest = json.load(f)
        self.assertEqual(sorted(manifest['commands']),
                         ['eval', 'generate', 'sweep-tau', 'train'])
        self.assertEqual(len(manifest['config_hash']), 64)
        self.assertIn('numpy', manifest['versions'])

    def test_phases_separately(self):
        self.assertEqual(self.run_cli('generate')[0], 0)
        self.assertEqual(self.run_cli('train', '--phase', '1')[0], 0)
        self.assertFalse(os.path.exists(self.path('phase2.ckpt')))
        self.assertEqual(self.run_cli('train', '--phase', '2',
                                      '--ablate', 'no-plr')[0], 0)
        log = self.read_jsonl('train_log.jsonl')
        self.assertEqual([r['phase'] for r in log],
                         ['phase1', 'phase1', 'phase2'])
        self.assertEqual(log[-1]['loss_replay'], 0.0)

    def test_deterministic(self):
        self.assertEqual(self.run_cli('generate')[0], 0)
        other = os.path.join(self.tmpdir, 'other')
        for out in (self.out, other):
            status = self.run_cli('train', '--data', self.out, out=out)[0]
            self.assertEqual(status, 0)
        for name in ('phase1.ckpt', 'phase2.ckpt'):
            with open(self.path(name), 'rb') as a:
                with open(self.path(name, other), 'rb') as b:
                    self.assertEqual(a.read(), b.read(), name)

    def test_ablate(self):
        status, stdout, _ = self.run_cli('ablate', '--ablate', 'full',
                                         '--ablate', 'no-fd')
        self.assertEqual(status, 0)
        rows = self.read_jsonl('ablation.jsonl')
        self.assertEqual([r['setting'] for r in rows], ['full', 'no-fd'])
        self.assertIn('no-fd', stdout)

    def test_phase2_never_reads_labeled_pool(self):
        self.assertEqual(self.run_cli('generate')[0], 0)
        self.assertEqual(self.run_cli('train', '--phase', '1')[0], 0)
        pools = []
        load_dataset = cli.load_dataset

        def counting_load(cfg, directory):
            data = load_dataset(cfg, directory)
            data.lab_train = CountingPool(data.lab_train)
            pools.append(data.lab_train)
            return data

        with mock.patch('ncdwf.cli.load_dataset', counting_load):
            self.assertEqual(self.run_cli('train', '--phase', '2')[0], 0)
        self.assertEqual(len(pools), 1)
        self.assertEqual(pools[0].reads, 0)

    def test_ablate_upper_bound(self):
        pools = []
        reads = {'phase2': 0, 'joint': 0}
        dataset_for_run = cli.dataset_for_run

        def counting_dataset(cfg):
            data = dataset_for_run(cfg)
            data.lab_train = CountingPool(data.lab_train)
            pools.append(data.lab_train)
            return data

        def counted(key, fn):
            def run(*args, **kwargs):
                before = pools[-1].reads
                log = fn(*args, **kwargs)
                reads[key] += pools[-1].reads - before
                return log
            return run

        with mock.patch.multiple(
                'ncdwf.cli', dataset_for_run=counting_dataset,
                train_phase2=counted('phase2', cli.train_phase2),
                train_joint=counted('joint', cli.train_joint)):
            status, stdout, _ = self.run_cli('ablate', '--ablate', 'full',
                                             '--ablate', 'upper-bound')
        self.assertEqual(status, 0)
        rows = self.read_jsonl('ablation.jsonl')
        self.assertEqual([r['setting'] for r in rows],
                         ['full', 'upper-bound'])
        for row in rows:
            self.assertTrue(0.0 <= row['unlab_acc'] <= 1.0)
        self.assertIn('upper-bound', stdout)
        self.assertEqual(reads['phase2'], 0)
        self.assertGreater(reads['joint'], 0)

    def test_upper_bound_is_not_a_train_option(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as cm:
                main(['train', '--ablate', 'upper-bound'])
        self.assertEqual(cm.exception.code, 1)

    def test_default_extractor(self):
        model, _, _ = create_models(build_config(), 64)
        self.assertEqual(model.feature_extractor.sizes, [64, 32, 32, 32])

    def test_sweep_beta(self):
        status = self.run_cli('sweep-beta', '--seeds', '2')[0]
        self.assertEqual(status, 0)
        rows = self.read_jsonl('beta_sweep.jsonl')
        self.assertEqual(len(rows), 6)
        self.assertEqual([r['seed'] for r in rows], [0, 0, 0, 1, 1, 1])
        self.assertEqual([r['setting'] for r in rows[:3]],
                         ['beta(1,1)', 'beta(1,100)', 'beta(100,1)'])

    def test_exit_codes(self):
        # nothing generated yet
        status, _, stderr = self.run_cli('train')
        self.assertEqual(status, 2)
        self.assertIn('ncdwf generate', stderr)
        self.assertEqual(self.run_cli('eval')[0], 2)
        self.assertEqual(self.run_cli('train', '--epochs', '-1')[0], 1)
        self.assertEqual(self.run_cli('ablate', '--seeds', '0')[0], 1)
        with open(self.config, 'a') as f:
            f.write('\n[bogus]\nkey = 1\n')
        self.assertEqual(self.run_cli('generate')[0], 1)

    def test_usage_error(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as cm:
                main(['train', '--phase', '3'])
        self.assertEqual(cm.exception.code, 1)


if __name__ == '__main__':
    unittest.main()
