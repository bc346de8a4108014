"""Text-side pretreatment: toy lexicon-based G2P and phoneme sequences.

The corpus generator works directly at the phoneme level, so the lexicon is
mainly a front door for word-level input: each word maps to a fixed phoneme
string, concatenated without boundary symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .vocab import Vocabulary


@dataclass
class PhonemeSequence:
    ids: np.ndarray  # vocab ids, all inside the stated language's phoneme block
    lang: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)

    def __len__(self) -> int:
        return len(self.ids)


def phoneme_sequence(vocab: Vocabulary, lang: int, local_indices) -> PhonemeSequence:
    ids = np.asarray([vocab.phoneme_id(lang, int(i)) for i in local_indices], dtype=np.int32)
    return PhonemeSequence(ids=ids, lang=lang)


def validate_phoneme_sequence(seq: PhonemeSequence, vocab: Vocabulary) -> None:
    for i in seq.ids:
        if not vocab.is_phoneme(int(i), seq.lang):
            raise DataError(f"id {int(i)} outside the phoneme block of language {seq.lang}")


class Lexicon:
    """word -> phoneme-symbol list, one language per instance."""

    def __init__(self, entries: dict[str, list[str]], vocab: Vocabulary, lang: int):
        self.vocab = vocab
        self.lang = lang
        self.entries = {}
        for word, phones in entries.items():
            ids = []
            for ph in phones:
                vid = vocab.lookup(ph)
                if not vocab.is_phoneme(vid, lang):
                    raise DataError(f"lexicon entry {word!r} uses non-phoneme symbol {ph!r}")
                ids.append(vid)
            self.entries[word] = ids

    @classmethod
    def load(cls, path, vocab: Vocabulary, lang: int) -> "Lexicon":
        entries = {}
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                try:
                    word, phones = line.split("\t")
                except ValueError:
                    raise DataError(f"{path}:{line_no}: expected 'word<TAB>ph1 ph2 ...'") from None
                entries[word] = phones.split()
        return cls(entries, vocab, lang)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word in sorted(self.entries):
                phones = " ".join(self.vocab.symbol_of(i) for i in self.entries[word])
                f.write(f"{word}\t{phones}\n")


def g2p(words, lang: int, lexicon: Lexicon) -> PhonemeSequence:
    """Concatenate per-word phoneme entries; unknown words are an error."""
    if lexicon.lang != lang:
        raise DataError(f"lexicon is for language {lexicon.lang}, not {lang}")
    ids: list[int] = []
    for word in words:
        entry = lexicon.entries.get(word)
        if entry is None:
            raise DataError(f"word {word!r} not in lexicon")
        ids.extend(entry)
    return PhonemeSequence(ids=np.asarray(ids, dtype=np.int32), lang=lang)
