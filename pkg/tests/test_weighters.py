import math

import numpy as np
import pytest

from dataflex import OptimCfg, WeightStrategy, compute_weights, init_optimizer, train_step
from dataflex.errors import BadParams, NegativeLoss, NonFinite
from dataflex.weighters import apply

from conftest import TINY_ARCH, random_sample

STRATEGIES = [WeightStrategy("uniform"), WeightStrategy("linear"), WeightStrategy("softmax", 1.0)]


class TestComputeWeights:
    @pytest.mark.parametrize("strat", STRATEGIES, ids=lambda s: s.kind)
    def test_equal_losses_give_ones(self, strat):
        w = compute_weights(np.full(6, 1.7), strat)
        assert np.allclose(w, 1.0, atol=1e-12)

    def test_softmax_worked_case(self):
        w = compute_weights(np.array([0.0, math.log(2.0)]), WeightStrategy("softmax", 1.0))
        assert np.allclose(w, [2.0 / 3.0, 4.0 / 3.0], atol=1e-12)

    def test_linear_worked_case(self):
        w = compute_weights(np.array([1.0, 3.0]), WeightStrategy("linear"))
        assert np.allclose(w, [0.5, 1.5], atol=1e-12)

    def test_linear_all_zero_losses(self):
        w = compute_weights(np.zeros(4), WeightStrategy("linear"))
        assert np.array_equal(w, np.ones(4))

    @pytest.mark.parametrize("strat", STRATEGIES, ids=lambda s: s.kind)
    def test_mean_one_randomized(self, strat, rng):
        for _ in range(200):
            losses = rng.random(int(rng.integers(1, 64))) * 10.0
            w = compute_weights(losses, strat)
            assert abs(w.mean() - 1.0) <= 1e-12

    def test_softmax_strictly_monotone(self, rng):
        for _ in range(50):
            losses = rng.random(16) * 5.0
            w = compute_weights(losses, WeightStrategy("softmax", 1.0))
            order = np.argsort(losses)
            for a, b in zip(order, order[1:]):
                if losses[b] > losses[a]:
                    assert w[b] > w[a]

    def test_softmax_high_temperature_limit(self, rng):
        losses = rng.random(8) * 4.0
        w = compute_weights(losses, WeightStrategy("softmax", 1e9))
        assert np.max(np.abs(w - 1.0)) <= 1e-6

    def test_permutation_equivariance(self, rng):
        losses = rng.random(10) * 3.0
        perm = rng.permutation(10)
        for strat in STRATEGIES:
            w = compute_weights(losses, strat)
            wp = compute_weights(losses[perm], strat)
            assert np.allclose(wp, w[perm], atol=1e-12)

    def test_negative_loss_rejected(self):
        with pytest.raises(NegativeLoss):
            compute_weights(np.array([0.5, -0.1]), WeightStrategy("linear"))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFinite):
            compute_weights(np.array([0.5, np.nan]), WeightStrategy("softmax"))

    def test_bad_temperature(self):
        with pytest.raises(BadParams):
            WeightStrategy("softmax", temperature=0.0)

    def test_unknown_kind(self):
        with pytest.raises(BadParams):
            WeightStrategy("quadratic")


class TestApply:
    def test_warmup_equals_uniform_step(self, tiny_model, rng):
        batch = [random_sample(rng, TINY_ARCH.vocab_size, 6, sid=i) for i in range(4)]
        opt = init_optimizer(OptimCfg(kind="adam"), tiny_model.params.size)
        m1, o1, l1, w1 = apply(tiny_model, opt, batch, WeightStrategy("softmax"), in_warmup=True)
        m2, o2, l2 = train_step(tiny_model, opt, batch, np.ones(4))
        assert np.array_equal(m1.params, m2.params)
        assert l1 == l2
        assert np.array_equal(w1, np.ones(4))

    def test_uniform_strategy_equals_plain_step(self, tiny_model, rng):
        batch = [random_sample(rng, TINY_ARCH.vocab_size, 6, sid=i) for i in range(4)]
        opt = init_optimizer(OptimCfg(kind="adam"), tiny_model.params.size)
        m1, _, _, _ = apply(tiny_model, opt, batch, WeightStrategy("uniform"), in_warmup=False)
        m2, _, _ = train_step(tiny_model, opt, batch, np.ones(4))
        assert np.array_equal(m1.params, m2.params)

    def test_softmax_upweights_hard_samples(self, tiny_model, rng):
        batch = [random_sample(rng, TINY_ARCH.vocab_size, 6, sid=i) for i in range(6)]
        opt = init_optimizer(OptimCfg(kind="adam"), tiny_model.params.size)
        _, _, _, weights = apply(tiny_model, opt, batch, WeightStrategy("softmax", 1.0), in_warmup=False)
        assert weights.max() > 1.0
        assert weights.min() < 1.0
