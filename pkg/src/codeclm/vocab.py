"""Unified symbol table for the decoder.

Layout (deterministic given phoneme count and codebook size K):

    0..3       specials  <pad> <bos> <eos> <sep>
    then       phoneme block(s): one per language, or a single shared block
    then       8 blocks of K acoustic symbols (one block per codec layer)
    then       language IDs, task IDs

Semantic symbols (specials + phonemes + LIDs + TIDs) also get a dense "row"
numbering 0..n_semantic-1 so the semantic embedding table covers exactly
them, without rows for acoustic symbols.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

LANG_A = 0
LANG_B = 1
LANG_NAMES = ("a", "b")
TASKS = ("asr", "mt", "tts")
N_CODEC_LAYERS = 8


class Vocabulary:
    PAD = 0
    BOS = 1
    EOS = 2
    SEP = 3

    def __init__(self, n_phonemes: int = 40, k: int = 64, shared_phonemes: bool = False):
        if k <= 0:
            raise ValueError("K must be positive")
        self.n_phonemes = n_phonemes
        self.k = k
        self.shared_phonemes = bool(shared_phonemes)
        self._symbols: list[str] = ["<pad>", "<bos>", "<eos>", "<sep>"]
        self._phoneme_offsets = {}
        if shared_phonemes:
            off = len(self._symbols)
            self._phoneme_offsets = {LANG_A: off, LANG_B: off}
            self._symbols += [f"p{i:02d}" for i in range(n_phonemes)]
        else:
            for lang, name in enumerate(LANG_NAMES):
                self._phoneme_offsets[lang] = len(self._symbols)
                self._symbols += [f"p{name}{i:02d}" for i in range(n_phonemes)]
        self._acoustic_offsets = []
        for layer in range(1, N_CODEC_LAYERS + 1):
            self._acoustic_offsets.append(len(self._symbols))
            self._symbols += [f"ac{layer}_{c:03d}" for c in range(k)]
        self._lang_offset = len(self._symbols)
        self._symbols += [f"<lang_{n}>" for n in LANG_NAMES]
        self._tid_offset = len(self._symbols)
        self._symbols += [f"<{t}>" for t in TASKS]
        self._lookup = {s: i for i, s in enumerate(self._symbols)}
        # dense numbering of semantic ids (everything except acoustic blocks)
        self._sem_rows = {}
        for i in range(len(self._symbols)):
            if not self.is_acoustic(i):
                self._sem_rows[i] = len(self._sem_rows)
        self._sem_row_table = np.full(len(self._symbols), -1, dtype=np.int32)
        for vid, row in self._sem_rows.items():
            self._sem_row_table[vid] = row

    # -- sizes and ranges ---------------------------------------------------
    @property
    def size(self) -> int:
        return len(self._symbols)

    @property
    def n_semantic(self) -> int:
        return len(self._sem_rows)

    def phoneme_id(self, lang: int, local: int) -> int:
        if not 0 <= local < self.n_phonemes:
            raise DataError(f"phoneme index {local} out of range")
        return self._phoneme_offsets[lang] + local

    def phoneme_local(self, vocab_id: int, lang: int) -> int:
        off = self._phoneme_offsets[lang]
        if not off <= vocab_id < off + self.n_phonemes:
            raise DataError(f"id {vocab_id} is not a language-{LANG_NAMES[lang]} phoneme")
        return vocab_id - off

    def is_phoneme(self, vocab_id: int, lang: int | None = None) -> bool:
        langs = (lang,) if lang is not None else (LANG_A, LANG_B)
        return any(
            self._phoneme_offsets[lg] <= vocab_id < self._phoneme_offsets[lg] + self.n_phonemes
            for lg in langs
        )

    def acoustic_id(self, layer: int, code: int) -> int:
        if not 1 <= layer <= N_CODEC_LAYERS:
            raise DataError(f"layer {layer} out of range")
        if not 0 <= code < self.k:
            raise DataError(f"code {code} out of range for K={self.k}")
        return self._acoustic_offsets[layer - 1] + code

    def acoustic_code(self, vocab_id: int, layer: int) -> int:
        off = self._acoustic_offsets[layer - 1]
        if not off <= vocab_id < off + self.k:
            raise DataError(f"id {vocab_id} is not a layer-{layer} acoustic symbol")
        return vocab_id - off

    def is_acoustic(self, vocab_id: int, layer: int | None = None) -> bool:
        if layer is not None:
            off = self._acoustic_offsets[layer - 1]
            return off <= vocab_id < off + self.k
        return self._acoustic_offsets[0] <= vocab_id < self._acoustic_offsets[0] + N_CODEC_LAYERS * self.k

    def lang_id(self, lang: int) -> int:
        return self._lang_offset + lang

    def tid(self, task: str) -> int:
        if task not in TASKS:
            raise DataError(f"unknown task {task!r}")
        return self._tid_offset + TASKS.index(task)

    def semantic_row(self, vocab_id: int) -> int:
        row = self._sem_rows.get(int(vocab_id))
        if row is None:
            raise DataError(f"id {vocab_id} is not a semantic symbol")
        return row

    def semantic_rows(self, vocab_ids: np.ndarray) -> np.ndarray:
        """Vectorized semantic_row; raises on any acoustic id."""
        rows = self._sem_row_table[np.asarray(vocab_ids, dtype=np.int64)]
        if (rows < 0).any():
            raise DataError("acoustic id passed where a semantic symbol is required")
        return rows

    # -- symbols ------------------------------------------------------------
    def symbol_of(self, vocab_id: int) -> str:
        return self._symbols[vocab_id]

    def lookup(self, symbol: str) -> int:
        try:
            return self._lookup[symbol]
        except KeyError:
            raise DataError(f"unknown symbol {symbol!r}") from None

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, s in enumerate(self._symbols):
                f.write(f"{i}\t{s}\n")


def build_vocabulary(n_phonemes: int = 40, k: int = 64, shared_phonemes: bool = False) -> Vocabulary:
    return Vocabulary(n_phonemes=n_phonemes, k=k, shared_phonemes=shared_phonemes)
