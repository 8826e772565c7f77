"""Shared fixtures: a small deterministic corpus and matching vocab/encoder
configs sized for fast unit tests."""

import numpy as np
import pytest

from tncse.data import build_vocab, load_synonyms, synth_corpus
from tncse.encoder import Encoder, EncoderConfig


@pytest.fixture(scope="session")
def small_data():
    corpus, dev, test = synth_corpus(seed=1, n_sentences=256, n_pairs=32)
    return corpus, dev, test


@pytest.fixture(scope="session")
def small_corpus(small_data):
    return small_data[0]


@pytest.fixture(scope="session")
def small_dev(small_data):
    return small_data[1]


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(small_corpus)


@pytest.fixture(scope="session")
def synonyms():
    return load_synonyms()


@pytest.fixture
def small_config(small_vocab):
    return EncoderConfig(vocab_size=len(small_vocab), max_seq_len=16,
                         hidden_dim=32, num_layers=2, num_heads=4,
                         ffn_dim=64, dropout_p=0.1)


@pytest.fixture
def small_encoder(small_config, small_vocab):
    return Encoder(small_config, seed=7, name="I",
                   vocab_hash=small_vocab.content_hash())


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the one-line-per-criterion acceptance verdicts into the run
    summary (their live prints are swallowed by output capture)."""
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "CRITERION_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
