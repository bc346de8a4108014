"""Decoding strategies and task orchestration.

Text outputs use length-normalized beam search; speech outputs use top-k
sampling of layer-1 codes (restricted to the acoustic block plus the end
token) followed by non-autoregressive completion of layers 2 to 8, five
candidates per call. Candidate selection offers the speaker-similarity
strategy and the similarity-minus-error-rate strategy over min-max
normalized scores. Speech translation runs as labeled cascades.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec as codec_mod
from .corpus import oracle_decode
from .errors import DataError
from .metrics import error_rate, speaker_similarity
from .model_ar import ARConfig
from .model_nar import NARConfig, nar_generate
from .seeding import derive_rng
from .session import DecoderSession, PrefixSpec
from .vocab import Vocabulary

N_CANDIDATES = 5


@dataclass
class Hypothesis:
    """One decoded output; tokens exclude the end symbol."""

    tokens: list
    log_prob: float
    finished: bool
    truncated: bool = False

    @property
    def normalized_score(self) -> float:
        # the end token counts toward length so empty outputs stay comparable
        return self.log_prob / (len(self.tokens) + 1)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class SessionStepper:
    """Beam-search adapter over a decoder session with a fixed prefix."""

    def __init__(self, params, cfg: ARConfig, vocab: Vocabulary, prefix: PrefixSpec, out_kind: str = "sem"):
        self.params = params
        self.cfg = cfg
        self.vocab = vocab
        self.prefix = prefix
        self.out_kind = out_kind
        self.session: DecoderSession | None = None

    def start(self, n: int) -> np.ndarray:
        self.session = DecoderSession(self.params, self.cfg, self.vocab)
        return self.session.prime([self.prefix] * n)

    def step(self, tokens: np.ndarray) -> np.ndarray:
        return self.session.advance(tokens, self.out_kind)

    def reorder(self, parent: np.ndarray) -> None:
        self.session.reorder(parent)


def beam_search(stepper, eos_id: int, beam: int, max_len: int, allowed=None) -> list[Hypothesis]:
    """Length-normalized beam search; returns hypotheses best-first.

    Each iteration ranks every (active row, token) extension by summed log
    probability, keeps the top `beam`, banks those ending in the end token,
    and continues the rest. Rows still active at `max_len` are returned as
    truncated hypotheses. `allowed` optionally limits candidate tokens to a
    set of ids (the end token should be included); probabilities stay
    normalized over the full vocabulary.
    """
    if beam < 1:
        raise DataError("beam must be at least 1")
    if max_len < 1:
        raise DataError("max_len must be at least 1")
    mask = None
    if allowed is not None:
        first = stepper.start(beam)
        mask = np.full(first.shape[1], -np.inf)
        mask[np.asarray(allowed, dtype=np.int64)] = 0.0
        logp = _log_softmax(first[0]) + mask
    else:
        logp = _log_softmax(stepper.start(beam)[0])
    order = np.argsort(-logp, kind="stable")[:beam]
    finished: list[Hypothesis] = []
    active_tokens: list[list[int]] = []
    active_scores: list[float] = []
    pending: list[int] = []
    parents: list[int] = []
    for t in order:
        if not np.isfinite(logp[t]):
            continue
        if t == eos_id:
            finished.append(Hypothesis([], float(logp[t]), True))
        else:
            active_tokens.append([int(t)])
            active_scores.append(float(logp[t]))
            pending.append(int(t))
            parents.append(0)
    length = 1
    while active_tokens and length < max_len:
        stepper.reorder(np.asarray(parents, dtype=np.int64))
        logp = _log_softmax(stepper.step(np.asarray(pending, dtype=np.int64)))
        if mask is not None:
            logp = logp + mask
        scores = np.asarray(active_scores)[:, None] + logp
        flat = np.argsort(-scores, axis=None, kind="stable")[:beam]
        rows, cols = np.unravel_index(flat, scores.shape)
        next_tokens: list[list[int]] = []
        next_scores: list[float] = []
        pending, parents = [], []
        for r, c in zip(rows, cols):
            if not np.isfinite(scores[r, c]):
                continue
            if c == eos_id:
                finished.append(Hypothesis(list(active_tokens[r]), float(scores[r, c]), True))
            else:
                next_tokens.append(active_tokens[r] + [int(c)])
                next_scores.append(float(scores[r, c]))
                pending.append(int(c))
                parents.append(int(r))
        active_tokens, active_scores = next_tokens, next_scores
        length += 1
    for tokens, score in zip(active_tokens, active_scores):
        finished.append(Hypothesis(tokens, score, True, truncated=True))
    finished.sort(key=lambda h: -h.normalized_score)
    return finished


def greedy_decode(stepper, eos_id: int, max_len: int) -> Hypothesis:
    return beam_search(stepper, eos_id, beam=1, max_len=max_len)[0]


def text_max_len(input_len: int) -> int:
    return 4 * input_len + 10


def decode_text(
    params,
    cfg: ARConfig,
    vocab: Vocabulary,
    task: str,
    lang_in: int,
    lang_out: int,
    input_kind: str,
    input_ids: np.ndarray,
    beam: int,
    cap: int | None = None,
) -> list[Hypothesis]:
    """Beam decode of a semantic output (transcription or translation).

    `cap` optionally tightens the output length limit below the standard
    4*input+10 rule (cascades use it so a later stage's prefix still fits).
    """
    stepper = SessionStepper(params, cfg, vocab, PrefixSpec(task, lang_in, lang_out, input_kind, input_ids))
    allowed = [vocab.phoneme_id(lang_out, p) for p in range(vocab.n_phonemes)] + [vocab.EOS]
    limit = min(text_max_len(len(input_ids)), cfg.max_len - 1)
    if cap is not None:
        limit = min(limit, cap)
    return beam_search(stepper, vocab.EOS, beam, limit, allowed=allowed)


# ---------------------------------------------------------------------------
# speech sampling
# ---------------------------------------------------------------------------


@dataclass
class SpeechCandidate:
    tokens: np.ndarray  # (T, 8) uint16, prompt region excluded
    log_prob: float  # summed layer-1 log probabilities
    truncated: bool = False
    ss: float = 0.0
    wer: float = 0.0


def _topk_sample(logits_row: np.ndarray, support: np.ndarray, top_k: int, temperature: float, rng) -> int:
    vals = logits_row[support].astype(np.float64)
    k = min(top_k, len(support))
    keep = np.argsort(-vals, kind="stable")[:k]
    kept = vals[keep] / max(temperature, 1e-8)
    kept -= kept.max()
    probs = np.exp(kept)
    probs /= probs.sum()
    return int(support[keep[rng.choice(k, p=probs)]])


def sample_speech(
    params_ar,
    cfg_ar: ARConfig,
    params_nar,
    cfg_nar: NARConfig,
    vocab: Vocabulary,
    text_ids: np.ndarray,
    lang: int,
    prompt: tuple[np.ndarray, np.ndarray] | None = None,
    n: int = N_CANDIDATES,
    seed: int = 0,
    top_k: int = 10,
    temperature: float = 1.0,
) -> list[SpeechCandidate]:
    """n sampled synthesis candidates for one text, batched in one session.

    prompt is (prompt_text_ids, prompt_token_matrix); its text is prepended
    to the input stream and its layer-1 codes are force-fed before sampling
    begins. Sampled layer-1 sequences are completed to 8 layers by the
    layer-filling model. Candidates that hit the length cap are flagged.
    """
    text_ids = np.asarray(text_ids, dtype=np.int64)
    if len(text_ids) == 0:
        raise DataError("cannot synthesize empty text")
    if prompt is not None:
        prompt_text, prompt_tokens = prompt
        prompt_text = np.asarray(prompt_text, dtype=np.int64)
        prompt_tokens = np.asarray(prompt_tokens, dtype=np.int64)
        if prompt_tokens.ndim != 2 or prompt_tokens.shape[1] != 8:
            raise DataError("prompt tokens must be (P, 8)")
        full_text = np.concatenate([prompt_text, text_ids])
    else:
        prompt_text = prompt_tokens = None
        full_text = text_ids

    session = DecoderSession(params_ar, cfg_ar, vocab)
    logits = session.prime([PrefixSpec("tts", lang, lang, "sem", full_text)] * n)
    if prompt_tokens is not None and len(prompt_tokens):
        for code in prompt_tokens[:, 0]:
            logits = session.advance(np.full(n, int(code), dtype=np.int64), "ac1")

    ac_base = vocab.acoustic_id(1, 0)
    support = np.concatenate([np.arange(ac_base, ac_base + cfg_ar.k), [vocab.EOS]])
    rngs = [derive_rng(seed, "cand", i) for i in range(n)]
    forced = 0 if prompt_tokens is None else len(prompt_tokens)
    cap = min(text_max_len(len(text_ids)), cfg_ar.max_len - 1 - forced)
    if cap < 1:
        raise DataError("prompt leaves no position capacity for sampling")
    sampled: list[list[int]] = [[] for _ in range(n)]
    log_probs = np.zeros(n, dtype=np.float64)
    done = np.zeros(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    for _ in range(cap):
        logp = _log_softmax(logits)
        feed = np.zeros(n, dtype=np.int64)
        for i in range(n):
            if done[i]:
                continue  # finished rows are fed a placeholder code
            choice = _topk_sample(logits[i], support, top_k, temperature, rngs[i])
            log_probs[i] += logp[i, choice]
            if choice == vocab.EOS:
                done[i] = True
            else:
                code = vocab.acoustic_code(choice, 1)
                sampled[i].append(code)
                feed[i] = code
        if done.all():
            break
        logits = session.advance(feed, "ac1")
    truncated[:] = ~done

    out: list[SpeechCandidate] = []
    for i in range(n):
        layer1 = np.asarray(sampled[i], dtype=np.int64)
        if len(layer1) == 0:
            out.append(SpeechCandidate(np.zeros((0, 8), dtype=np.uint16), float(log_probs[i]), bool(truncated[i])))
            continue
        tokens = nar_generate(params_nar, cfg_nar, vocab, full_text, prompt_tokens, layer1)
        out.append(SpeechCandidate(tokens, float(log_probs[i]), bool(truncated[i])))
    return out


# ---------------------------------------------------------------------------
# candidate selection
# ---------------------------------------------------------------------------


def _minmax(values: list[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def _argmax_ties_low(values: np.ndarray, tol: float = 1e-9) -> int:
    # scores within tol of the max count as tied so float noise in the
    # normalization cannot override the lowest-index tie rule
    return int(np.argmax(values >= values.max() - tol))


def select_candidate(ss: list[float], wer: list[float], strategy: int) -> int:
    """Index of the winning candidate; ties go to the lowest index."""
    if len(ss) != N_CANDIDATES or len(wer) != N_CANDIDATES:
        raise DataError(f"selection requires exactly {N_CANDIDATES} candidates")
    if strategy == 1:
        return _argmax_ties_low(np.asarray(ss, dtype=np.float64))
    if strategy == 2:
        return _argmax_ties_low(_minmax(ss) - _minmax(wer))
    raise DataError(f"unknown strategy {strategy!r}")


def score_candidates(
    candidates: list[SpeechCandidate],
    prompt_frames: np.ndarray,
    ref_text_local: np.ndarray,
    lang: int,
    codebooks,
    signatures: np.ndarray,
    signature_mean: np.ndarray,
) -> None:
    """Fill ss and wer on each candidate via the synthetic oracle decoder."""
    for cand in candidates:
        if len(cand.tokens) == 0:
            cand.ss, cand.wer = -1.0, 1.0
            continue
        frames = codec_mod.decode(cand.tokens, codebooks)
        cand.ss = speaker_similarity(frames, prompt_frames, signature_mean)
        hyp_local = oracle_decode(frames, lang, signatures)
        cand.wer = error_rate(hyp_local.tolist(), ref_text_local.tolist())


def synthesize_and_select(
    params_ar,
    cfg_ar,
    params_nar,
    cfg_nar,
    vocab,
    text_ids,
    lang,
    prompt,
    prompt_frames,
    ref_text_local,
    codebooks,
    signatures,
    signature_mean,
    strategy: int,
    seed: int,
) -> tuple[int, list[SpeechCandidate]]:
    cands = sample_speech(params_ar, cfg_ar, params_nar, cfg_nar, vocab, text_ids, lang, prompt, seed=seed)
    score_candidates(cands, prompt_frames, ref_text_local, lang, codebooks, signatures, signature_mean)
    chosen = select_candidate([c.ss for c in cands], [c.wer for c in cands], strategy)
    return chosen, cands


# ---------------------------------------------------------------------------
# cascades
# ---------------------------------------------------------------------------


@dataclass
class CascadeResult:
    asr_ids: np.ndarray  # source-language phoneme vocabulary ids
    mt_ids: np.ndarray  # target-language phoneme vocabulary ids
    tokens: np.ndarray | None = None  # (T, 8) for speech output
    chosen: int = -1
    candidates: list = field(default_factory=list)


def _stage(label: str, fn):
    try:
        return fn()
    except DataError as e:
        raise DataError(f"{label} stage: {e}") from e


def cascade_s2tt(
    params, cfg: ARConfig, vocab: Vocabulary, speech_tokens: np.ndarray, src_lang: int, tgt_lang: int, beam: int
) -> CascadeResult:
    """Speech-to-text translation as transcription followed by translation."""
    asr_top = _stage(
        "asr", lambda: decode_text(params, cfg, vocab, "asr", src_lang, src_lang, "ac8", speech_tokens, beam)
    )[0]
    asr_ids = np.asarray(asr_top.tokens, dtype=np.int64)
    if len(asr_ids) == 0:
        return CascadeResult(asr_ids=asr_ids, mt_ids=np.zeros(0, dtype=np.int64))
    mt_top = _stage(
        "mt", lambda: decode_text(params, cfg, vocab, "mt", src_lang, tgt_lang, "sem", asr_ids, beam)
    )[0]
    return CascadeResult(asr_ids=asr_ids, mt_ids=np.asarray(mt_top.tokens, dtype=np.int64))


def cascade_s2st(
    params_ar,
    cfg_ar: ARConfig,
    params_nar,
    cfg_nar: NARConfig,
    vocab: Vocabulary,
    speech_tokens: np.ndarray,
    src_lang: int,
    tgt_lang: int,
    beam: int,
    strategy: int,
    codebooks,
    signatures: np.ndarray,
    signature_mean: np.ndarray,
    seed: int = 0,
) -> CascadeResult:
    """Speech-to-speech translation; the source doubles as the speaker prompt."""
    asr_top = _stage(
        "asr",
        lambda: decode_text(params_ar, cfg_ar, vocab, "asr", src_lang, src_lang, "ac8", speech_tokens, beam),
    )[0]
    asr_ids = np.asarray(asr_top.tokens, dtype=np.int64)
    if len(asr_ids) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CascadeResult(asr_ids=asr_ids, mt_ids=empty, tokens=np.zeros((0, 8), dtype=np.uint16))
    # the translation becomes synthesis input behind the transcript prompt,
    # so its length must leave room in the synthesis prefix
    mt_cap = cfg_ar.max_len - 2 - len(asr_ids)
    if mt_cap < 1:
        raise DataError("s2st: transcription fills the entire position capacity")
    mt_top = _stage(
        "mt",
        lambda: decode_text(params_ar, cfg_ar, vocab, "mt", src_lang, tgt_lang, "sem", asr_ids, beam, cap=mt_cap),
    )[0]
    text = CascadeResult(asr_ids=asr_ids, mt_ids=np.asarray(mt_top.tokens, dtype=np.int64))
    if len(text.mt_ids) == 0:
        return CascadeResult(asr_ids=text.asr_ids, mt_ids=text.mt_ids, tokens=np.zeros((0, 8), dtype=np.uint16))
    prompt = (text.asr_ids, np.asarray(speech_tokens, dtype=np.int64))
    prompt_frames = codec_mod.decode(np.asarray(speech_tokens, dtype=np.uint16), codebooks)
    ref_local = np.asarray([vocab.phoneme_local(int(t), tgt_lang) for t in text.mt_ids], dtype=np.int64)
    chosen, cands = _stage(
        "tts",
        lambda: synthesize_and_select(
            params_ar,
            cfg_ar,
            params_nar,
            cfg_nar,
            vocab,
            text.mt_ids,
            tgt_lang,
            prompt,
            prompt_frames,
            ref_local,
            codebooks,
            signatures,
            signature_mean,
            strategy,
            seed,
        ),
    )
    return CascadeResult(
        asr_ids=text.asr_ids, mt_ids=text.mt_ids, tokens=cands[chosen].tokens, chosen=chosen, candidates=cands
    )
