"""Shared fixtures: a small generated corpus reused across test modules."""

import pytest

from codeclm.corpus import CorpusConfig, generate_corpus
from codeclm.model_ar import ARConfig


def small_corpus_config(seed=7):
    return CorpusConfig(
        seed=seed,
        n_asr=30,
        n_mt=30,
        n_tts=30,
        n_dev=4,
        n_test=4,
        speakers_train=4,
        speakers_dev=2,
        speakers_test=2,
        k=16,
    )


def small_model_config(**kw):
    base = dict(
        d_model=32, n_layers=2, n_heads=2, d_ffn=64, lstm_layers=2, k=16, n_phonemes=40, max_len=192
    )
    base.update(kw)
    return ARConfig(**base)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("shared-corpus")
    generate_corpus(small_corpus_config(), root)
    return root
