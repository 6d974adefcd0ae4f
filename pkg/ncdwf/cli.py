"""Command-line interface: ncdwf COMMAND [options].

Exit status: 0 on success, 1 for invalid configuration or arguments,
2 for runtime failures (missing files, bad checkpoints, numeric errors).
"""

import argparse
import copy
import json
import logging
import os
import sys

import numpy as np
import pydantic
import scipy
import sklearn

from . import __version__
from .config import PRESETS, TAU_GRID, build_config
from .data import (POOL_FILES, generate_gaussian_mixture, load_split,
                   save_split, split)
from .errors import ConfigError, DataError, NcdwfError
from .evaluation import (evaluate_generalized, evaluate_task_aware,
                         labeled_head_confusion, predict_samples,
                         write_confusion_csv, write_predictions_csv,
                         write_report)
from .kci import kci_auc
from .models import (KciNet, NcdwfModel, VariationalHead, load_checkpoint,
                     save_checkpoint)
from .trainer import train_joint, train_phase1, train_phase2

logger = logging.getLogger('ncdwf')

ABLATIONS = {
    'full': {},
    'no-plr': {'enable_plr': False},
    'no-mir': {'enable_mir': False},
    'no-fd': {'enable_fd': False},
}

# joint training on both pools, a comparison row of ablate only
UPPER_BOUND = 'upper-bound'

BETA_GRID = [(1.0, 1.0), (1.0, 100.0), (100.0, 1.0)]


def setup_logging():
    name = os.environ.get('NCDWF_LOG', 'WARNING').upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format='%(levelname)s %(name)s: %(message)s')


def versions():
    return {
        'ncdwf': __version__,
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'scikit-learn': sklearn.__version__,
        'pydantic': pydantic.VERSION,
    }


def write_manifest(cfg, command, files):
    """manifest.json in the output directory keeps one entry per
    command that wrote there."""
    path = os.path.join(cfg.run.out, 'manifest.json')
    manifest = {}
    if os.path.exists(path):
        with open(path, encoding='utf-8') as f:
            manifest = json.load(f)
    manifest.update(config=json.loads(cfg.canonical_json()),
                    config_hash=cfg.config_hash(),
                    seed=cfg.run.seed,
                    versions=versions())
    manifest.setdefault('commands', {})[command] = {
        'config_hash': cfg.config_hash(),
        'files': sorted(os.path.basename(p) for p in files),
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')


def generate_split(cfg):
    d = cfg.data
    raw = generate_gaussian_mixture(cfg.split.total_classes, d.per_class,
                                    d.dim, d.center_scale, d.noise_sigma,
                                    cfg.run.seed, d.separation)
    return split(raw, cfg.split, d.test_fraction, cfg.run.seed)


def data_dir(cfg, args):
    if getattr(args, 'data', None):
        return args.data
    if cfg.data.source == 'csv':
        return cfg.data.csv_dir
    return cfg.run.out


def load_dataset(cfg, directory):
    missing = [name for name in POOL_FILES.values()
               if not os.path.exists(os.path.join(directory, name))]
    if missing:
        raise DataError('%s: dataset files missing (%s); run `ncdwf generate`'
                        ' first' % (directory, ', '.join(missing)))
    return load_split(directory, cfg.split)


def dataset_for_run(cfg):
    if cfg.data.source == 'csv':
        return load_split(cfg.data.csv_dir, cfg.split)
    return generate_split(cfg)


def create_models(cfg, input_dim):
    m = cfg.model
    rng = np.random.default_rng(cfg.run.seed)
    model = NcdwfModel.create(input_dim, m.latent_dim, cfg.split.labeled,
                              cfg.split.unlabeled, rng, m.extractor_hidden,
                              m.head_hidden)
    vhead = VariationalHead.create(cfg.split.unlabeled, cfg.split.labeled,
                                   rng, m.vhead_hidden)
    kci = KciNet.create(m.latent_dim, rng, m.kci_hidden)
    return model, vhead, kci


def make_monitor(model, kci, data):
    """Per-epoch test metrics; only the test pools are read."""
    def monitor(epoch):
        report = evaluate_task_aware(model, data.test_lab, data.test_unlab)
        auc = kci_auc(kci, model.features(data.test_lab.x),
                      model.features(data.test_unlab.x))
        return {'lab_acc': report.lab_acc, 'unlab_acc': report.unlab_acc,
                'kci_auc': auc}
    return monitor


def ablated(phase_cfg, names):
    update = {}
    for name in names:
        if name not in ABLATIONS:
            raise ConfigError('unknown ablation %r (known: %s)'
                              % (name, ', '.join(ABLATIONS)))
        update.update(ABLATIONS[name])
    return phase_cfg.model_copy(update=update)


def parse_taus(text):
    try:
        taus = [float(t) for t in text.split(',') if t.strip()]
    except ValueError:
        raise ConfigError('bad tau list: %r' % text)
    return taus


def config_from_args(args):
    overrides = {'run': {}}
    if args.out:
        overrides['run']['out'] = args.out
    cfg = build_config(args.preset, args.config, overrides)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    epochs = getattr(args, 'epochs', None)
    if epochs is not None:
        phase = getattr(args, 'phase', 'all')
        d = cfg.model_dump()
        if phase in ('1', 'all'):
            d['phase1']['epochs'] = epochs
        if phase in ('2', 'all'):
            d['phase2']['epochs'] = epochs
        cfg = type(cfg).model_validate(d)
    if getattr(args, 'taus', None):
        d = cfg.model_dump()
        d['eval']['taus'] = parse_taus(args.taus)
        cfg = type(cfg).model_validate(d)
    return cfg


def cmd_generate(cfg, args):
    data = generate_split(cfg)
    os.makedirs(cfg.run.out, exist_ok=True)
    paths = save_split(data, cfg.run.out)
    write_manifest(cfg, 'generate', paths)
    print('wrote %d dataset files to %s' % (len(paths), cfg.run.out))


def cmd_train(cfg, args):
    data = load_dataset(cfg, data_dir(cfg, args))
    os.makedirs(cfg.run.out, exist_ok=True)
    log_path = os.path.join(cfg.run.out, 'train_log.jsonl')
    written = []
    if args.phase in ('1', 'all'):
        model, vhead, kci = create_models(cfg, data.dim)
        log1 = train_phase1(model, data.lab_train, cfg.phase1)
        path = os.path.join(cfg.run.out, 'phase1.ckpt')
        save_checkpoint(model, vhead, kci, path, cfg.run.seed)
        with open(log_path, 'w', encoding='utf-8') as f:
            log1.to_jsonl(f)
        written += [path, log_path]
    else:
        path = args.checkpoint or os.path.join(cfg.run.out, 'phase1.ckpt')
        ckpt = load_checkpoint(path)
        model, vhead, kci = ckpt.model, ckpt.vhead, ckpt.kci
    if args.phase in ('2', 'all'):
        phase2 = ablated(cfg.phase2, args.ablate or [])
        log2 = train_phase2(model, vhead, kci, data.unlab_train, phase2,
                            cfg.inversion, cfg.sinkhorn,
                            monitor=make_monitor(model, kci, data))
        path = os.path.join(cfg.run.out, 'phase2.ckpt')
        save_checkpoint(model, vhead, kci, path, cfg.run.seed)
        # phase 1 (if run) already started the log
        with open(log_path, 'a', encoding='utf-8') as f:
            log2.to_jsonl(f)
        written += [path, log_path]
    write_manifest(cfg, 'train', set(written))
    print('trained phase %s, outputs in %s' % (args.phase, cfg.run.out))


def _checkpoint_for(cfg, args):
    path = args.checkpoint or os.path.join(cfg.run.out, 'phase2.ckpt')
    ckpt = load_checkpoint(path)
    if (ckpt.model.num_labeled != cfg.split.labeled or
            ckpt.model.num_unlabeled != cfg.split.unlabeled):
        raise ConfigError('%s has M=%d N=%d, config says %d + %d'
                          % (path, ckpt.model.num_labeled,
                             ckpt.model.num_unlabeled, cfg.split.labeled,
                             cfg.split.unlabeled))
    return ckpt


def _check_input_dim(ckpt, data):
    if ckpt.model.input_dim != data.dim:
        raise DataError('checkpoint expects %d features, dataset has %d'
                        % (ckpt.model.input_dim, data.dim))


def cmd_eval(cfg, args):
    ckpt = _checkpoint_for(cfg, args)
    data = load_dataset(cfg, data_dir(cfg, args))
    _check_input_dim(ckpt, data)
    model, kci = ckpt.model, ckpt.kci
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    written = []
    report = evaluate_task_aware(model, data.test_lab, data.test_unlab)
    path = os.path.join(out, 'report_task_aware.json')
    write_report(path, report)
    written.append(path)
    print(report)
    for tau in cfg.eval.taus:
        report = evaluate_generalized(model, kci, tau, data.test_lab,
                                      data.test_unlab)
        path = os.path.join(out, 'report_tau_%g.json' % tau)
        write_report(path, report)
        written.append(path)
        print(report)
    predictions = predict_samples(model, kci, cfg.eval.tau, data.test_lab,
                                  data.test_unlab)
    path = os.path.join(out, 'predictions.csv')
    write_predictions_csv(path, predictions)
    written.append(path)
    classes, counts = labeled_head_confusion(model, data.test_unlab.x,
                                             data.test_unlab.y)
    path = os.path.join(out, 'confusion.csv')
    write_confusion_csv(path, classes, counts)
    written.append(path)
    write_manifest(cfg, 'eval', written)


def cmd_sweep_tau(cfg, args):
    ckpt = _checkpoint_for(cfg, args)
    data = load_dataset(cfg, data_dir(cfg, args))
    _check_input_dim(ckpt, data)
    os.makedirs(cfg.run.out, exist_ok=True)
    path = os.path.join(cfg.run.out, 'tau_sweep.jsonl')
    with open(path, 'w', encoding='utf-8') as f:
        for tau in cfg.eval.taus:
            report = evaluate_generalized(ckpt.model, ckpt.kci, tau,
                                          data.test_lab, data.test_unlab)
            f.write(json.dumps(report.to_dict(), sort_keys=True) + '\n')
            print(report)
    write_manifest(cfg, 'sweep-tau', [path])


def _paired_runs(cfg, seeds, settings):
    """For each seed: one phase-1 model, then one phase-2 run per
    setting from copies of it. settings maps a name to
    (phase2 config, inversion config). Yields result rows."""
    for i in range(seeds):
        run_cfg = cfg.with_seed(cfg.run.seed + i)
        data = dataset_for_run(run_cfg)
        model, vhead, kci = create_models(run_cfg, data.dim)
        train_phase1(model, data.lab_train, run_cfg.phase1)
        for name, (phase2, inversion) in settings.items():
            m, v, k = copy.deepcopy((model, vhead, kci))
            phase2 = phase2.model_copy(update={'seed': run_cfg.phase2.seed})
            if name == UPPER_BOUND:
                train_joint(m, k, data.lab_train, data.unlab_train, phase2,
                            run_cfg.sinkhorn)
            else:
                train_phase2(m, v, k, data.unlab_train, phase2, inversion,
                             run_cfg.sinkhorn)
            aware = evaluate_task_aware(m, data.test_lab, data.test_unlab)
            general = evaluate_generalized(m, k, run_cfg.eval.tau,
                                           data.test_lab, data.test_unlab)
            row = {'seed': run_cfg.run.seed, 'setting': name,
                   'lab_acc': aware.lab_acc, 'unlab_acc': aware.unlab_acc,
                   'all_acc': aware.all_acc,
                   'gen_lab_acc': general.lab_acc,
                   'gen_unlab_acc': general.unlab_acc,
                   'gen_all_acc': general.all_acc,
                   'tau': run_cfg.eval.tau}
            logger.info('seed %d %s: %s', row['seed'], name, aware)
            yield row


def _summarize(rows, key='setting'):
    groups = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row)
    print('%-16s %5s %8s %8s %8s' % (key, 'runs', 'Lab', 'Unlab', 'All'))
    for name, group in groups.items():
        means = [100 * np.mean([r[k] for r in group])
                 for k in ('lab_acc', 'unlab_acc', 'all_acc')]
        print('%-16s %5d %8.2f %8.2f %8.2f' % ((name, len(group)) +
                                             tuple(means)))


def _write_rows(cfg, name, rows, command):
    os.makedirs(cfg.run.out, exist_ok=True)
    path = os.path.join(cfg.run.out, name)
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + '\n')
    write_manifest(cfg, command, [path])
    _summarize(rows)


def cmd_ablate(cfg, args):
    names = args.ablate or list(ABLATIONS) + [UPPER_BOUND]
    settings = {}
    for name in names:
        phase2 = (cfg.phase2 if name == UPPER_BOUND
                  else ablated(cfg.phase2, [name]))
        settings[name] = (phase2, cfg.inversion)
    rows = list(_paired_runs(cfg, args.seeds, settings))
    _write_rows(cfg, 'ablation.jsonl', rows, 'ablate')


def cmd_sweep_beta(cfg, args):
    settings = {}
    for gamma, rho in BETA_GRID:
        inversion = cfg.inversion.model_copy(
            update={'beta_gamma': gamma, 'beta_rho': rho})
        settings['beta(%g,%g)' % (gamma, rho)] = (cfg.phase2, inversion)
    rows = list(_paired_runs(cfg, args.seeds, settings))
    _write_rows(cfg, 'beta_sweep.jsonl', rows, 'sweep-beta')


COMMANDS = {
    'generate': (cmd_generate, 'write a synthetic dataset (4 CSV files)'),
    'train': (cmd_train, 'train phase 1 and/or phase 2'),
    'eval': (cmd_eval, 'task-aware and generalized reports'),
    'sweep-tau': (cmd_sweep_tau, 'generalized reports over a tau grid'),
    'ablate': (cmd_ablate, 'paired phase-2 runs with components disabled'),
    'sweep-beta': (cmd_sweep_beta, 'paired runs over Beta(gamma, rho) '
                                   'mixing settings'),
}


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like other validation errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, '%s: error: %s\n' % (self.prog, message))


def create_parser():
    parser = ArgumentParser(
        prog='ncdwf',
        description='Novel class discovery without forgetting, on feature '
                    'vectors.')
    parser.add_argument('--version', action='version',
                        version='ncdwf ' + __version__)
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument('--config', metavar='PATH', help='INI config file')
        p.add_argument('--preset', choices=sorted(PRESETS),
                       help='base settings (default: synth-10-5-5)')
        p.add_argument('--seed', type=int, metavar='N',
                       help='run seed (phase seeds follow it)')
        p.add_argument('--out', metavar='DIR',
                       help='output directory (default: out)')
        if name in ('train', 'eval', 'sweep-tau'):
            p.add_argument('--data', metavar='DIR',
                           help='dataset directory (default: csv_dir for '
                                'csv data, otherwise --out)')
        if name == 'train':
            p.add_argument('--phase', choices=['1', '2', 'all'],
                           default='all', help='phases to run')
        if name in ('train', 'ablate', 'sweep-beta'):
            p.add_argument('--epochs', type=int, metavar='N',
                           help='epochs of the selected phase(s)')
        if name in ('train', 'ablate'):
            names = list(ABLATIONS)
            if name == 'ablate':
                names.append(UPPER_BOUND)
            p.add_argument('--ablate', action='append',
                           choices=sorted(names), metavar='NAME',
                           help='%s (repeatable)' % ', '.join(names))
        if name in ('train', 'eval', 'sweep-tau'):
            p.add_argument('--checkpoint', metavar='PATH',
                           help='checkpoint to start from or evaluate')
        if name in ('ablate', 'sweep-beta'):
            p.add_argument('--seeds', type=int, default=1, metavar='K',
                           help='number of paired seeds (default: 1)')
        if name in ('eval', 'sweep-tau'):
            p.add_argument('--taus', metavar='LIST',
                           help='comma-separated thresholds (default: %s)'
                                % ','.join('%g' % t for t in TAU_GRID))
    return parser


def main(argv=None):
    setup_logging()
    args = create_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if getattr(args, 'seeds', 1) < 1:
            raise ConfigError('--seeds must be >= 1')
        COMMANDS[args.command][0](cfg, args)
    except ValueError as e:
        # includes pydantic.ValidationError, ConfigError and ShapeError
        sys.stderr.write('ncdwf %s: invalid input: %s\n' % (args.command, e))
        return 1
    except (NcdwfError, OSError) as e:
        sys.stderr.write('ncdwf %s: %s\n' % (args.command, e))
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
