"""Metrics: edit distance, error rates, corpus BLEU, speaker similarity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codeclm.corpus import CorpusConfig, SpeakerProfile, make_signatures, make_speakers, signature_mean, synth_utterance
from codeclm.errors import DataError
from codeclm.metrics import bleu, corpus_error_rate, error_rate, levenshtein, speaker_similarity
from codeclm.seeding import derive_rng


def test_identical_sequences_zero():
    assert error_rate([1, 2, 3], [1, 2, 3]) == 0.0


def test_single_substitution():
    assert error_rate(list("abc"), list("abd")) == pytest.approx(1 / 3)


def test_kitten_sitting():
    assert levenshtein("kitten", "sitting") == 3
    assert error_rate(list("kitten"), list("sitting")) == pytest.approx(3 / 7)


def test_empty_reference_rejected():
    with pytest.raises(DataError):
        error_rate([1], [])


def test_corpus_rate_pools_counts():
    pairs = [(list("ab"), list("ab")), (list("abcd"), list("abce"))]
    assert corpus_error_rate(pairs) == pytest.approx(1 / 6)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 5), max_size=8),
    st.lists(st.integers(0, 5), max_size=8),
    st.lists(st.integers(0, 5), max_size=8),
)
def test_edit_distance_triangle_inequality(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert levenshtein(a, b) == levenshtein(b, a)


def test_bleu_perfect_match_is_100():
    seqs = [list("abcdef"), list("xyzw")]
    assert bleu(seqs, seqs) == pytest.approx(100.0)


def test_bleu_zero_overlap_is_zero():
    assert bleu([list("aaaa")], [list("bbbb")]) == 0.0


def test_bleu_hand_counted_example():
    # hyp [a,b,c,d,e,f] vs ref [a,b,c,d,g,h]: clipped precisions are
    # 4/6, 3/5, 2/4, 1/3 with no brevity penalty, so the score is
    # 100 * (4/6 * 3/5 * 2/4 * 1/3) ** 0.25
    got = bleu([list("abcdef")], [list("abcdgh")])
    want = 100.0 * (4 / 6 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25
    assert got == pytest.approx(want, abs=1e-9)
    assert got == pytest.approx(50.8133, abs=1e-3)


def test_bleu_brevity_penalty():
    got = bleu([list("abcd")], [list("abcdefgh")])
    prec = (4 / 4 * 3 / 3 * 2 / 2 * 1 / 1) ** 0.25
    assert got == pytest.approx(100.0 * prec * np.exp(1 - 8 / 4), abs=1e-9)


def test_bleu_smoothing_flag():
    # too short for any 4-gram: zero by default, positive with add-one
    assert bleu([list("ab")], [list("ab")]) == 0.0
    assert bleu([list("ab")], [list("ab")], smooth=True) > 0.0


def test_bleu_permutation_invariant():
    rng = derive_rng("bleu-perm")
    hyps = [list(rng.integers(0, 9, size=rng.integers(4, 12))) for _ in range(8)]
    refs = [list(rng.integers(0, 9, size=rng.integers(4, 12))) for _ in range(8)]
    base = bleu(hyps, refs, smooth=True)
    order = rng.permutation(8)
    assert bleu([hyps[i] for i in order], [refs[i] for i in order], smooth=True) == pytest.approx(base)


def test_bleu_mismatched_counts():
    with pytest.raises(DataError):
        bleu([list("ab")], [])


def test_speaker_similarity_identical_is_one():
    rng = derive_rng("ss-identical")
    frames = rng.standard_normal((12, 6)).astype(np.float32)
    mean = rng.standard_normal(6) * 0.1
    assert speaker_similarity(frames, frames, mean) == pytest.approx(1.0)


def test_speaker_similarity_orthogonal_bases():
    # noise-free utterances with orthogonal speaker bases and identical
    # phoneme content: after subtracting the signature mean the embeddings
    # are exactly the bases, whose cosine is 0
    f_dim = 8
    sigs = derive_rng("ss-orth").standard_normal((2, 5, f_dim)).astype(np.float32)
    base_a = np.zeros(f_dim, dtype=np.float32)
    base_b = np.zeros(f_dim, dtype=np.float32)
    base_a[0] = 1.0
    base_b[1] = 1.0
    phonemes = np.array([0, 1, 2])
    mean = sigs[0][phonemes].repeat(4, axis=0).mean(axis=0)
    fa = sigs[0][phonemes].repeat(4, axis=0) + base_a
    fb = sigs[0][phonemes].repeat(4, axis=0) + base_b
    assert abs(speaker_similarity(fa, fb, mean)) < 1e-6


def test_speaker_similarity_symmetric_and_scale_invariant():
    rng = derive_rng("ss-sym")
    a = rng.standard_normal((10, 4)).astype(np.float32)
    b = rng.standard_normal((14, 4)).astype(np.float32)
    mean = np.zeros(4)
    assert speaker_similarity(a, b, mean) == pytest.approx(speaker_similarity(b, a, mean))
    # scaling one utterance's embedding (mean frame) preserves the cosine
    assert speaker_similarity(3.0 * a, b, mean) == pytest.approx(speaker_similarity(a, b, mean))


def test_speaker_similarity_zero_norm_rejected():
    frames = np.zeros((4, 3), dtype=np.float32)
    with pytest.raises(DataError):
        speaker_similarity(frames, frames, np.zeros(3))


def test_same_speaker_beats_cross_speaker_on_sampled_pairs():
    cfg = CorpusConfig()
    sigs = make_signatures(11, cfg.n_phonemes, cfg.f_dim)
    mean = signature_mean(sigs)
    speakers = make_speakers(cfg)["train"]
    rng = derive_rng("ss-mc", 0)
    wins = 0
    for trial in range(100):
        ia = int(rng.integers(0, len(speakers)))
        ib = int(rng.integers(0, len(speakers) - 1))
        ib = ib + 1 if ib >= ia else ib
        sp_a, sp_b = speakers[ia], speakers[ib]
        utts = []
        for i, sp in enumerate((sp_a, sp_a, sp_b)):
            local = rng.integers(0, cfg.n_phonemes, size=int(rng.integers(5, 21)))
            utts.append(synth_utterance(local, 0, sp, sigs, ("sst", 0, trial, i)))
        same = speaker_similarity(utts[0], utts[1], mean)
        cross = speaker_similarity(utts[0], utts[2], mean)
        wins += int(same > cross)
    assert wins >= 99
