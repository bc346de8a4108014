"""Training loop: schedule, stream losses, determinism, exact resume."""

import numpy as np
import pytest

from codeclm import checkpoint as ckpt
from codeclm.corpus import Corpus
from codeclm.errors import DataError
from codeclm.model_ar import batch_loss, init_params
from codeclm.training import (
    TrainConfig,
    batch_indices,
    build_stream_examples,
    load_model,
    lr_at,
    teacher_forced_accuracy,
    train_model,
)
from tests.conftest import small_model_config


def quick_tcfg(**kw):
    base = dict(steps=6, batch_size=3, max_lr=3e-4, warmup=4, seed=1, log_every=2, checkpoint_every=3)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule_shape():
    assert np.isclose(lr_at(400, 1e-3, 400), 1e-3)
    assert np.isclose(lr_at(100, 1e-3, 400), 0.25e-3)
    assert np.isclose(lr_at(1600, 1e-3, 400), 0.5e-3)
    # warmup is linear, decay is inverse square root, peak at the knot
    grid = [lr_at(s, 1e-3, 400) for s in range(1, 2000)]
    assert max(grid) == lr_at(400, 1e-3, 400)
    with pytest.raises(DataError):
        lr_at(0, 1e-3, 400)


def test_batch_indices_pure_function():
    a = batch_indices(3, "asr_a", 17, 100, 8)
    b = batch_indices(3, "asr_a", 17, 100, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, batch_indices(3, "asr_a", 18, 100, 8))
    assert not np.array_equal(a, batch_indices(3, "mt_ab", 17, 100, 8))


def test_stream_examples_shapes(small_corpus_dir):
    corpus = Corpus(small_corpus_dir)
    asr = build_stream_examples(corpus, "train", "asr_a")
    assert len(asr) == 30
    ex = asr[0]
    assert ex.input_kind == "ac8" and ex.input_ids.shape[1] == 8
    assert ex.output_kind == "sem"
    assert ex.input_ids.shape[0] == 4 * len(ex.output_ids)
    mt = build_stream_examples(corpus, "train", "mt_ab")
    assert mt[0].input_kind == "sem" and mt[0].output_kind == "sem"
    tts = build_stream_examples(corpus, "train", "tts_b")
    assert tts[0].output_kind == "ac1" and tts[0].input_kind == "sem"
    assert len(tts[0].output_ids) == 4 * len(tts[0].input_ids)


def test_short_training_reduces_loss(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    tcfg = quick_tcfg(steps=150, batch_size=4, max_lr=2e-3, warmup=30, checkpoint_every=0)
    result = train_model(corpus, mcfg, tcfg, tmp_path / "run")
    first = result.history[0]["loss_total"]
    last = np.mean([h["loss_total"] for h in result.history[-3:]])
    assert last < 0.6 * first
    log = (tmp_path / "run" / "train_log.tsv").read_text()
    lines = [l for l in log.splitlines() if not l.startswith("#")]
    assert lines and all(len(l.split("\t")) == 6 for l in lines)
    header = log.splitlines()[0]
    assert header == "# step\tlr\tloss_total\tloss_asr\tloss_mt\tloss_tts"


def test_training_is_deterministic(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    runs = []
    for name in ("a", "b"):
        result = train_model(corpus, mcfg, quick_tcfg(), tmp_path / name)
        runs.append({k: t.data.tobytes() for k, t in result.params.tensors.items()})
    assert runs[0] == runs[1]


def test_resume_matches_uninterrupted_run(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    full = train_model(corpus, mcfg, quick_tcfg(steps=6, checkpoint_every=3), tmp_path / "full")
    train_model(corpus, mcfg, quick_tcfg(steps=3, checkpoint_every=0), tmp_path / "half")
    resumed = train_model(
        corpus,
        mcfg,
        quick_tcfg(steps=6, checkpoint_every=0),
        tmp_path / "resumed",
        resume_from=tmp_path / "half" / "ckpt_final.vlck",
    )
    for name, t in full.params.tensors.items():
        assert t.data.tobytes() == resumed.params.tensors[name].data.tobytes(), name
    # optimizer moments also continue exactly
    a = full.opt.state_arrays()
    b = resumed.opt.state_arrays()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_final_checkpoint_reloads_and_scores(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    result = train_model(corpus, mcfg, quick_tcfg(), tmp_path / "run")
    params = load_model(tmp_path / "run" / "ckpt_final.vlck", mcfg)
    exs = build_stream_examples(corpus, "dev", "mt_ab")
    ref = float(batch_loss(result.params, mcfg, corpus.vocab, exs[:3]).data)
    got = float(batch_loss(params, mcfg, corpus.vocab, exs[:3]).data)
    assert np.isclose(ref, got, atol=1e-6)
    acc = teacher_forced_accuracy(params, mcfg, corpus.vocab, exs)
    assert 0.0 <= acc <= 1.0


def test_checkpoint_refuses_other_architecture(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    train_model(corpus, mcfg, quick_tcfg(steps=2, checkpoint_every=0), tmp_path / "run")
    with pytest.raises(DataError):
        load_model(tmp_path / "run" / "ckpt_final.vlck", small_model_config(n_heads=4))


def test_mismatched_vocab_rejected(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    with pytest.raises(DataError):
        train_model(corpus, small_model_config(k=64), quick_tcfg(steps=1), tmp_path / "run")


def test_ablation_stream_subset_trains(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    tcfg = quick_tcfg(steps=3, streams=("asr_a", "asr_b"), checkpoint_every=0)
    result = train_model(corpus, mcfg, tcfg, tmp_path / "run")
    assert result.history[-1]["loss_mt"] == 0.0
    assert result.history[-1]["loss_asr"] > 0.0


def test_early_stop(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    tcfg = quick_tcfg(steps=50, early_stop_loss=100.0, checkpoint_every=0)
    result = train_model(corpus, mcfg, tcfg, tmp_path / "run")
    assert result.stopped_at == 1


def test_grad_flow_to_all_parameter_groups(small_corpus_dir, tmp_path):
    corpus = Corpus(small_corpus_dir)
    mcfg = small_model_config()
    result = train_model(corpus, mcfg, quick_tcfg(steps=1, checkpoint_every=0), tmp_path / "run")
    moments = result.opt.state_arrays()
    for name in result.params.tensors:
        assert np.abs(moments[f"opt.m.{name}"]).max() > 0, name
