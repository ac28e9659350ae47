import numpy as np
import pytest

from dataflex import ModelCfg, OptimCfg, Sample, init_model, init_optimizer


TINY_ARCH = ModelCfg(vocab_size=24, embed_dim=6, hidden_dim=8)


def make_sample(tokens, sid=0, domain=0):
    return Sample(id=sid, domain_id=domain, token_ids=np.asarray(tokens, dtype=np.int64))


def random_sample(rng, vocab, length, sid=0, domain=0):
    return make_sample(rng.integers(0, vocab, size=length), sid=sid, domain=domain)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def tiny_model(rng):
    return init_model(TINY_ARCH, rng, scale=0.5)


@pytest.fixture
def adam_opt(tiny_model):
    return init_optimizer(OptimCfg(kind="adam"), tiny_model.params.size)
