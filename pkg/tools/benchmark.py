#!/usr/bin/env python3
# Multi-seed checks of the training pipeline on synthetic data.
# Usage: ./benchmark.py [--seeds K] [--epochs N] [CHECK ...]
# Too slow for the unit tests; prints one PASS/FAIL line per check.

import argparse
import copy
import sys
import time

import numpy as np

from ncdwf.cli import ablated, create_models, generate_split
from ncdwf.config import TAU_GRID, build_config
from ncdwf.evaluation import evaluate_generalized, evaluate_task_aware
from ncdwf.kci import kci_auc
from ncdwf.pseudoreplay import generate_pseudo_dataset
from ncdwf.trainer import train_phase1, train_phase2


def prepare(cfg):
    data = generate_split(cfg)
    model, vhead, kci = create_models(cfg, data.dim)
    train_phase1(model, data.lab_train, cfg.phase1)
    return data, model, vhead, kci


def discover(cfg, data, models, phase2=None, inversion=None):
    model, vhead, kci = copy.deepcopy(models)
    train_phase2(model, vhead, kci, data.unlab_train, phase2 or cfg.phase2,
                 inversion or cfg.inversion, cfg.sinkhorn)
    return model, kci


def check_pseudo(cfg, seeds, overrides):
    accs = []
    for seed in seeds:
        c = cfg.with_seed(seed)
        _, model, _, _ = prepare(c)
        rng = np.random.default_rng(seed)
        pseudo = generate_pseudo_dataset(model.labeled_head,
                                         model.class_means, c.inversion, rng)
        pred = np.argmax(model.labeled_head(pseudo.latents), axis=1)
        accs.append(np.mean(pred == pseudo.labels))
    return min(accs) >= 0.90, 'min pseudo-latent accuracy %.3f' % min(accs)


def check_end_to_end(cfg, seeds, overrides):
    kept, unlab, auc = [], [], []
    for seed in seeds:
        c = cfg.with_seed(seed)
        data, model, vhead, kci = prepare(c)
        before = evaluate_task_aware(model, data.test_lab, data.test_unlab)
        start = time.perf_counter()
        model, kci = discover(c, data, (model, vhead, kci))
        after = evaluate_task_aware(model, data.test_lab, data.test_unlab)
        print('  seed %d: lab %.3f -> %.3f, unlab %.3f (%.1f s)'
              % (seed, before.lab_acc, after.lab_acc, after.unlab_acc,
                 time.perf_counter() - start))
        kept.append(after.lab_acc / max(before.lab_acc, 1e-12))
        unlab.append(after.unlab_acc)
        auc.append(kci_auc(kci, model.features(data.test_lab.x),
                           model.features(data.test_unlab.x)))
    ok = min(kept) >= 0.90 and min(unlab) >= 0.85 and min(auc) >= 0.95
    return ok, ('min kept %.3f, min unlab %.3f, min kci auc %.3f'
                % (min(kept), min(unlab), min(auc)))


def check_ablation(cfg, seeds, overrides):
    rows = {name: [] for name in ('full', 'no-plr', 'no-mir')}
    for seed in seeds:
        c = cfg.with_seed(seed)
        data, *models = prepare(c)
        for name in rows:
            model, _ = discover(c, data, models, ablated(c.phase2, [name]))
            rows[name].append(evaluate_task_aware(model, data.test_lab,
                                                  data.test_unlab))
    lab = {k: np.mean([r.lab_acc for r in v]) for k, v in rows.items()}
    unlab = {k: np.mean([r.unlab_acc for r in v]) for k, v in rows.items()}
    ok = (lab['full'] - lab['no-plr'] >= 0.15 and
          unlab['no-mir'] <= unlab['full'] + 0.02)
    return ok, ('lab full %.3f / no-plr %.3f, unlab full %.3f / no-mir %.3f'
                % (lab['full'], lab['no-plr'], unlab['full'],
                   unlab['no-mir']))


def check_tau(cfg, seeds, overrides):
    c = cfg.with_seed(seeds[0])
    data, *models = prepare(c)
    model, kci = discover(c, data, models)
    reports = [evaluate_generalized(model, kci, tau, data.test_lab,
                                    data.test_unlab) for tau in TAU_GRID]
    lab = np.array([r.lab_acc for r in reports])
    unlab = np.array([r.unlab_acc for r in reports])
    # one small step against the trend is tolerated
    bad_lab = np.diff(lab) < 0
    bad_unlab = np.diff(unlab) > 0
    ok = (bad_lab.sum() <= 1 and np.all(np.diff(lab) >= -0.01) and
          bad_unlab.sum() <= 1 and np.all(np.diff(unlab) <= 0.01))
    return ok, 'lab %s, unlab %s' % (np.round(lab, 3), np.round(unlab, 3))


def check_beta(cfg, seeds, overrides):
    cfg = build_config('synth-100-20-80-style', overrides=overrides)
    means = {}
    for gamma, rho in [(1.0, 100.0), (100.0, 1.0)]:
        accs = []
        for seed in seeds:
            c = cfg.with_seed(seed)
            data, *models = prepare(c)
            inversion = c.inversion.model_copy(
                update={'beta_gamma': gamma, 'beta_rho': rho})
            model, _ = discover(c, data, models, inversion=inversion)
            accs.append(evaluate_task_aware(model, data.test_lab,
                                            data.test_unlab).lab_acc)
        means[(gamma, rho)] = np.mean(accs)
    ok = means[(1.0, 100.0)] >= means[(100.0, 1.0)]
    return ok, 'lab (1,100) %.3f, (100,1) %.3f' % (means[(1.0, 100.0)],
                                                    means[(100.0, 1.0)])


CHECKS = {
    'pseudo': check_pseudo,
    'end-to-end': check_end_to_end,
    'ablation': check_ablation,
    'tau': check_tau,
    'beta': check_beta,
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument('--seeds', type=int, default=20,
                        help='number of seeds (default: 20)')
    parser.add_argument('--epochs', type=int,
                        help='override epochs of both phases')
    parser.add_argument('checks', nargs='*', metavar='CHECK',
                        help='any of: %s (default: all)' % ', '.join(CHECKS))
    args = parser.parse_args()
    unknown = sorted(set(args.checks) - set(CHECKS))
    if unknown:
        parser.error('unknown check(s): %s' % ', '.join(unknown))
    overrides = {}
    if args.epochs is not None:
        overrides = {'phase1': {'epochs': args.epochs},
                     'phase2': {'epochs': args.epochs}}
    cfg = build_config(overrides=overrides)
    seeds = list(range(args.seeds))
    failed = 0
    for name in args.checks or CHECKS:
        start = time.perf_counter()
        ok, info = CHECKS[name](cfg, seeds, overrides)
        print('%s %-10s %s (%.0f s)' % ('PASS' if ok else 'FAIL', name, info,
                                        time.perf_counter() - start))
        failed += not ok
    return 1 if failed else 0


if __name__ == '__main__':
    sys.exit(main())
