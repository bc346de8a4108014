"""Evaluation metrics: edit-distance error rates, corpus BLEU, speaker cosine."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .errors import DataError


def levenshtein(a, b) -> int:
    """Unit-cost edit distance over arbitrary hashable tokens."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


def error_rate(hyp, ref) -> float:
    """Edit distance divided by reference length (phoneme or word tokens)."""
    ref = list(ref)
    if not ref:
        raise DataError("error_rate needs a nonempty reference")
    return levenshtein(hyp, ref) / len(ref)


def corpus_error_rate(pairs) -> float:
    """Pooled rate: total edit distance over total reference length."""
    num = den = 0
    for hyp, ref in pairs:
        ref = list(ref)
        if not ref:
            raise DataError("corpus_error_rate needs nonempty references")
        num += levenshtein(hyp, ref)
        den += len(ref)
    if den == 0:
        raise DataError("corpus_error_rate needs at least one pair")
    return num / den


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs, smooth: bool = False) -> float:
    """Corpus BLEU-4: clipped n-gram precisions, brevity penalty, scaled to 100.

    One reference per hypothesis. Any zero precision yields 0 unless the
    add-one smoothing flag is set, which applies (m+1)/(t+1) at every order.
    """
    if len(hyps) != len(refs):
        raise DataError("bleu needs one reference per hypothesis")
    if not hyps:
        raise DataError("bleu needs at least one pair")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += max(0, len(hyp) - n + 1)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    log_sum = 0.0
    for m, t in zip(matches, totals):
        if smooth:
            p = (m + 1) / (t + 1)
        else:
            if m == 0 or t == 0:
                return 0.0
            p = m / t
        log_sum += math.log(p)
    geo = math.exp(log_sum / 4.0)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / max(1, hyp_len))
    return 100.0 * geo * bp


def speaker_similarity(frames_a: np.ndarray, frames_b: np.ndarray, signature_mean: np.ndarray) -> float:
    """Cosine of mean frame vectors after removing the signature component.

    Subtracting the global phoneme-signature mean leaves, in expectation,
    the speaker base, which stands in for a speaker embedding here.
    """
    frames_a = np.asarray(frames_a, dtype=np.float64)
    frames_b = np.asarray(frames_b, dtype=np.float64)
    if frames_a.ndim != 2 or frames_b.ndim != 2 or len(frames_a) == 0 or len(frames_b) == 0:
        raise DataError("speaker_similarity needs two nonempty (T, F) arrays")
    ea = frames_a.mean(axis=0) - signature_mean
    eb = frames_b.mean(axis=0) - signature_mean
    na = float(np.linalg.norm(ea))
    nb = float(np.linalg.norm(eb))
    if na == 0.0 or nb == 0.0:
        raise DataError("speaker embedding has zero norm")
    return float(ea @ eb / (na * nb))
