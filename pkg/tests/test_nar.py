"""Layer-filling model: conditioning contract, generation, memorization."""

import numpy as np
import pytest

from codeclm import codec
from codeclm.corpus import Corpus
from codeclm.engine import no_grad
from codeclm.errors import DataError
from codeclm.model_nar import (
    NARConfig,
    NARExample,
    build_nar_vocab,
    init_nar_params,
    nar_assemble,
    nar_forward,
    nar_forward_batch,
    nar_generate,
)
from codeclm.training import TrainConfig, build_nar_examples, load_nar_model, train_nar_model


def small_nar_cfg(**kw):
    base = dict(d_model=32, n_layers=2, n_heads=2, d_ffn=64, lstm_layers=2, k=16, n_phonemes=40, max_len=192)
    base.update(kw)
    return NARConfig(**base)


def make_example(cfg, vocab, t=8, s=3, seed=0):
    rng = np.random.default_rng(seed)
    sem = (vocab.phoneme_id(0, 0) + rng.integers(0, cfg.n_phonemes, size=s)).astype(np.int32)
    tokens = rng.integers(0, cfg.k, size=(t, 8)).astype(np.int64)
    return NARExample(sem_ids=sem, tokens=tokens)


def test_forward_shape_all_layers():
    cfg = small_nar_cfg()
    vocab = build_nar_vocab(cfg)
    params = init_nar_params(cfg, seed=1)
    ex = make_example(cfg, vocab)
    for layer in range(2, 9):
        logits = nar_forward(params, cfg, vocab, ex.sem_ids, None, ex.tokens[:, : layer - 1], layer)
        assert logits.shape == (8, cfg.k)


def test_layer_bounds_rejected():
    cfg = small_nar_cfg()
    vocab = build_nar_vocab(cfg)
    params = init_nar_params(cfg, seed=1)
    ex = make_example(cfg, vocab)
    with pytest.raises(DataError):
        nar_forward(params, cfg, vocab, ex.sem_ids, None, ex.tokens[:, :0], 1)
    with pytest.raises(DataError):
        nar_forward(params, cfg, vocab, ex.sem_ids, None, ex.tokens[:, :8], 9)
    with pytest.raises(DataError):
        nar_forward(params, cfg, vocab, ex.sem_ids, None, ex.tokens[:, :3], 3)


def test_higher_layers_never_leak_into_inputs():
    cfg = small_nar_cfg()
    vocab = build_nar_vocab(cfg)
    params = init_nar_params(cfg, seed=2)
    ex = make_example(cfg, vocab, seed=3)
    layer = 4
    # changing target-region codes at layers >= l must not move any logits;
    # the prompt rows stay untouched since they expose all 8 layers
    altered = ex.tokens.copy()
    altered[2:, layer - 1 :] = (altered[2:, layer - 1 :] + 5) % cfg.k
    with no_grad():
        a = nar_forward_batch(params, cfg, nar_assemble(cfg, vocab, [ex], layer, [2])).data
        b = nar_forward_batch(params, cfg, nar_assemble(cfg, vocab, [NARExample(ex.sem_ids, altered)], layer, [2])).data
    assert np.array_equal(a, b)


def test_prompt_region_exposes_all_layers():
    cfg = small_nar_cfg()
    vocab = build_nar_vocab(cfg)
    params = init_nar_params(cfg, seed=2)
    ex = make_example(cfg, vocab, seed=4)
    layer = 3
    altered = ex.tokens.copy()
    altered[0, 7] = (altered[0, 7] + 1) % cfg.k  # layer-8 code inside the prompt
    with no_grad():
        a = nar_forward_batch(params, cfg, nar_assemble(cfg, vocab, [ex], layer, [2])).data
        b = nar_forward_batch(params, cfg, nar_assemble(cfg, vocab, [NARExample(ex.sem_ids, altered)], layer, [2])).data
    assert np.abs(a - b).max() > 0


def test_generate_shape_passthrough_and_seven_forwards():
    cfg = small_nar_cfg()
    vocab = build_nar_vocab(cfg)
    params = init_nar_params(cfg, seed=5)
    ex = make_example(cfg, vocab, seed=6)
    counter = []
    out = nar_generate(params, cfg, vocab, ex.sem_ids, None, ex.tokens[:, 0], forward_counter=counter)
    assert out.shape == (8, 8)
    assert out.dtype == np.uint16
    assert np.array_equal(out[:, 0], ex.tokens[:, 0])
    assert counter == list(range(2, 9))
    again = nar_generate(params, cfg, vocab, ex.sem_ids, None, ex.tokens[:, 0])
    assert np.array_equal(out, again)


def test_overfit_single_utterance_memorizes(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    cfg = small_nar_cfg(k=16)
    examples = build_nar_examples(corpus, "train")
    target = min(examples, key=lambda e: len(e.tokens))
    tcfg = TrainConfig(steps=450, batch_size=1, max_lr=3e-3, warmup=40, seed=3, log_every=50, checkpoint_every=0)
    from codeclm.engine import Adam
    from codeclm.model_nar import init_nar_params
    from codeclm.training import nar_train_step

    params = init_nar_params(cfg, tcfg.seed)
    opt = Adam(params.tensors)
    for step in range(1, tcfg.steps + 1):
        nar_train_step(params, opt, cfg, corpus.vocab, [target], tcfg, step)
    out = nar_generate(params, cfg, corpus.vocab, target.sem_ids, None, target.tokens[:, 0])
    assert np.array_equal(out.astype(np.int64), target.tokens)
    recon = codec.decode(out, corpus.codebooks)
    ref = codec.decode(target.tokens.astype(np.uint16), corpus.codebooks)
    assert float(((recon - ref) ** 2).mean()) < 1e-3


def test_nar_training_run_and_reload(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    cfg = small_nar_cfg(k=16)
    tcfg = TrainConfig(steps=4, batch_size=2, max_lr=5e-4, warmup=4, seed=1, log_every=2, checkpoint_every=0)
    result = train_nar_model(corpus, cfg, tcfg, tmp_path / "nar")
    assert (tmp_path / "nar" / "ckpt_final.vlck").exists()
    params = load_nar_model(tmp_path / "nar" / "ckpt_final.vlck", cfg)
    for name, t in result.params.tensors.items():
        assert t.data.tobytes() == params.tensors[name].data.tobytes()
    log = (tmp_path / "nar" / "train_log.tsv").read_text()
    assert log.startswith("# step\tlr\tloss\tlayer\n")


def test_ar_and_nar_checkpoints_not_interchangeable(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    cfg = small_nar_cfg(k=16)
    tcfg = TrainConfig(steps=2, batch_size=2, max_lr=5e-4, warmup=4, seed=1, checkpoint_every=0)
    train_nar_model(corpus, cfg, tcfg, tmp_path / "nar")
    from codeclm.training import load_model
    from tests.conftest import small_model_config

    with pytest.raises(DataError):
        load_model(tmp_path / "nar" / "ckpt_final.vlck", small_model_config())
