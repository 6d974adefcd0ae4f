#!/usr/bin/env python

import unittest

import numpy as np

from ncdwf.errors import ShapeError
from ncdwf.miregularizer import (MiBatch, mi_loss, mi_loss_node,
                                 optimal_sigma_check)
from ncdwf.models import VariationalHead
from ncdwf.numkernel import (DenseNet, Graph, SgdMomentum,
                             numerical_gradient, relative_error)


def identity_vhead(m, log_sigma=None):
    net = DenseNet([np.eye(m)], [np.zeros(m)], name='mean_net')
    return VariationalHead(net, np.zeros(m) if log_sigma is None
                           else log_sigma)


def loss_value(batch, vhead):
    mu = vhead.mean_net(batch.U)
    sigma = np.exp(vhead.log_sigma.value)
    per_sample = np.sum(np.log(sigma) + (batch.L - mu) ** 2 /
                        (2 * sigma ** 2), axis=1)
    return float(np.mean(per_sample))


class TestMiLoss(unittest.TestCase):
    def test_zero_residual(self):
        U = np.array([[0.3, -1.0], [2.0, 0.5]])
        loss, _ = mi_loss(MiBatch(U.copy(), U), identity_vhead(2))
        self.assertEqual(loss, 0.0)

    def test_unit_residual(self):
        loss, _ = mi_loss(MiBatch([[1.0]], [[0.0]]), identity_vhead(1))
        self.assertAlmostEqual(loss, 0.5, delta=1e-15)

    def test_two_dims(self):
        vhead = identity_vhead(2, log_sigma=[1.0, 0.0])
        loss, _ = mi_loss(MiBatch([[0.0, 2.0]], [[0.0, 0.0]]), vhead)
        self.assertAlmostEqual(loss, 3.0, delta=1e-12)

    def test_printed_sign(self):
        vhead = identity_vhead(2, log_sigma=[1.0, 0.0])
        batch = MiBatch([[0.0, 2.0]], [[0.0, 0.0]])
        loss, _ = mi_loss(batch, vhead, printed_sign=True)
        self.assertAlmostEqual(loss, -3.0, delta=1e-12)

    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        vhead = VariationalHead.create(3, 4, rng, hidden=(5,))
        vhead.log_sigma.value[:] = rng.normal(size=4) * 0.3
        batch = MiBatch(rng.normal(size=(6, 4)), rng.normal(size=(6, 3)))
        loss, _ = mi_loss(batch, vhead)
        self.assertAlmostEqual(loss, loss_value(batch, vhead), delta=1e-12)

    def test_gradients(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            vhead = VariationalHead.create(3, 2, rng, hidden=())
            vhead.log_sigma.value[:] = rng.normal(size=2) * 0.5
            batch = MiBatch(rng.normal(size=(4, 2)), rng.normal(size=(4, 3)))
            _, grads = mi_loss(batch, vhead)
            for p in vhead.parameters():
                num = numerical_gradient(lambda: loss_value(batch, vhead),
                                         p.value)
                self.assertLess(relative_error(grads[p], num), 1e-4)
            num = numerical_gradient(lambda: loss_value(batch, vhead),
                                     batch.U)
            self.assertLess(relative_error(grads['U'], num), 1e-4)

    def test_scale_behavior(self):
        rng = np.random.default_rng(1)
        vhead = identity_vhead(3, log_sigma=rng.normal(size=3))
        U = rng.normal(size=(5, 3))
        R = rng.normal(size=(5, 3))
        log_part = np.sum(vhead.log_sigma.value)
        q1 = mi_loss(MiBatch(U + R, U), vhead)[0] - log_part
        q2 = mi_loss(MiBatch(U + 2 * R, U), vhead)[0] - log_part
        self.assertAlmostEqual(q2, 4 * q1, delta=1e-10)

    def test_labeled_logits_detached(self):
        rng = np.random.default_rng(2)
        lab = DenseNet.create([3, 2], rng, name='labeled_head')
        ulb = DenseNet.create([3, 4], rng, name='unlabeled_head')
        vhead = VariationalHead.create(4, 2, rng)
        z = rng.normal(size=(5, 3))
        g = Graph()
        zn = g.input(z, requires_grad=True)
        l_node = lab.forward(g, zn)
        u = ulb.forward(g, zn)
        loss = mi_loss_node(g, l_node, u, vhead)
        grads = g.backward(loss)
        for p in lab.parameters():
            self.assertNotIn(p, grads)
            np.testing.assert_array_equal(grads[p], np.zeros_like(p.value))
        self.assertIn(ulb.parameters()[0], grads)

    def test_training_reduces_loss(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(2, 3))
        U = rng.normal(size=(32, 3))
        batch = MiBatch(U @ A.T, U)
        vhead = VariationalHead.create(3, 2, rng, hidden=())
        opt = SgdMomentum(0.01, 0.9)
        initial = mi_loss(batch, vhead)[0]
        for _ in range(500):
            g = Graph()
            loss = mi_loss_node(g, batch.L, g.input(batch.U), vhead)
            opt.step(vhead.parameters(), g.backward(loss))
            vhead.clamp()
        final = mi_loss(batch, vhead)[0]
        self.assertLess(final, 0.1 * initial)

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            MiBatch(np.zeros((3, 2)), np.zeros((4, 2)))
        with self.assertRaises(ShapeError):
            mi_loss(MiBatch(np.zeros((3, 3)), np.zeros((3, 2))),
                    identity_vhead(2))


class TestOptimalSigma(unittest.TestCase):
    def test_values(self):
        np.testing.assert_array_equal(
            optimal_sigma_check(np.array([[0.0, 1.0], [0.0, -1.0]])),
            [0.0, 1.0])

    def test_stationary(self):
        rng = np.random.default_rng(4)
        R = rng.normal(size=(10, 3))
        sigma = optimal_sigma_check(R)
        U = np.zeros((10, 3))
        vhead = identity_vhead(3, np.log(sigma))
        _, grads = mi_loss(MiBatch(R, U), vhead)
        np.testing.assert_allclose(grads[vhead.log_sigma], np.zeros(3),
                                   atol=1e-8)


if __name__ == '__main__':
    unittest.main()
