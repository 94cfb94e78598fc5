import numpy as np
import pytest
import torch

from durkit.corpus import SyntheticSpec, generate_corpus, split_corpus
from durkit.nnet import TransformerConfig, new_checkpoint


@pytest.fixture(scope="session", autouse=True)
def single_thread():
    torch.set_num_threads(1)


TINY_CONFIG = TransformerConfig(layers=2, heads=1, embed_dim=8, ffn_dim=16, phone_embed_dim=4)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY_CONFIG


@pytest.fixture(scope="session")
def small_corpus():
    """200 utterances with the default synthetic spec."""
    return generate_corpus(SyntheticSpec(seed=31), 200)


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split_corpus(small_corpus, 0.8, seed=31)


def make_checkpoint(tag, seed=0, vocab=16, max_duration=None, config=TINY_CONFIG):
    if tag.startswith("maskgit") and max_duration is None:
        max_duration = 32
    return new_checkpoint(tag, config, vocab, max_duration, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
