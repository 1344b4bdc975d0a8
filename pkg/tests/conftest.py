"""Shared fixtures sized for speed.

The corpus fixture holds seven very short utterances and the model fixture a
few thousand parameters — enough to exercise every stage of the pipeline
(synthesis, feature extraction, training, evaluation, the CLI) while keeping
the whole suite fast. Accuracy-sensitive checks build their own inputs.
"""

from __future__ import annotations

import numpy as np
import pytest

from crnndenoise.corpus import CorpusConfig, build_corpus
from crnndenoise.model import CrnnConfig, LmConfig, init_model_params


def tiny_corpus_config(**overrides) -> CorpusConfig:
    """A seven-utterance corpus (5 train / 1 val / 1 test) of 2-3 word
    utterances over an eight-word vocabulary."""
    base = dict(
        total=7,
        vocab_size=11,
        snr_min_db=5.0,
        snr_max_db=15.0,
        noise_environments=2,
        rir_count=2,
        words_min=2,
        words_max=3,
        word_ms=120,
        crossfade_ms=8,
        mix_then_rir=True,
        sample_rate=16000,
        rms=0.1,
    )
    base.update(overrides)
    return CorpusConfig(**base)


def tiny_model_config() -> CrnnConfig:
    return CrnnConfig(conv_filters=(2, 4, 8), hidden=8)


def tiny_lm_config() -> LmConfig:
    return LmConfig(vocab_size=11, embed_dim=8, max_words=4)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory) -> str:
    out = tmp_path_factory.mktemp("tinycorpus")
    build_corpus(tiny_corpus_config(), seed=123, out_dir=out)
    return str(out)


@pytest.fixture()
def tiny_model():
    """Freshly initialized compact model plus its two configs."""
    cfg = tiny_model_config()
    lm_cfg = tiny_lm_config()
    params = init_model_params(cfg, lm_cfg, seed=7)
    return params, cfg, lm_cfg


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
