"""Deterministic synthetic corpus: aligned speech frames + transcripts.

Speech is a frame-feature sequence: each phoneme emits exactly 4 frames of
value speaker_base + signature(phoneme) + gaussian noise, where signatures
are fixed seeded random vectors per (language, phoneme). This makes every
task learnable and exactly checkable: an oracle decoder (nearest signature
after subtracting the estimated speaker component) recovers transcripts from
frames, and the toy translation is a bijection on phoneme strings.

All randomness flows from the corpus seed through derived streams, so a
corpus is byte-reproducible from (seed, config).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import codec as codec_mod
from .errors import DataError
from .seeding import derive_rng
from .vocab import LANG_A, LANG_B, LANG_NAMES, Vocabulary

GENERATOR_VERSION = "1"
FRAME_MAGIC = b"VLFR1"
SIGNATURE_MAGIC = b"VLSG1"
SPLITS = ("train", "dev", "test")


@dataclass
class CorpusConfig:
    seed: int = 7
    f_dim: int = 16
    n_phonemes: int = 40
    frames_per_phoneme: int = 4
    noise_scale: float = 0.05
    len_min: int = 5
    len_max: int = 20
    n_asr: int = 1000  # per language, train split
    n_mt: int = 2000
    n_tts: int = 1000  # per language, train split
    n_dev: int = 50  # per stream
    n_test: int = 50  # per stream
    speakers_train: int = 16
    speakers_dev: int = 2
    speakers_test: int = 2
    base_scale: float = 0.5
    min_speaker_dist: float = 0.5
    k: int = 64
    codec_iterations: int = 20

    def validate(self) -> None:
        if self.len_min < 1 or self.len_max < self.len_min:
            raise DataError("bad sentence length range")
        if min(self.n_asr, self.n_mt, self.n_tts, self.n_dev, self.n_test) < 1:
            raise DataError("corpus sizes must be >= 1")
        if min(self.speakers_train, self.speakers_dev, self.speakers_test) < 1:
            raise DataError("need at least one speaker per split")


@dataclass
class SpeakerProfile:
    id: str
    base: np.ndarray  # (F,)
    noise_scale: float


@dataclass
class Record:
    id: str
    task: str  # asr | mt | tts
    lang_in: int
    lang_out: int
    speaker: str | None
    frame_offset: int
    token_offset: int


# ---------------------------------------------------------------------------
# primitive generators
# ---------------------------------------------------------------------------


def make_signatures(seed: int, n_phonemes: int, f_dim: int) -> np.ndarray:
    """(2, n_phonemes, F) float32, one unit-variance vector per phoneme."""
    rng = derive_rng(seed, "signatures")
    return rng.standard_normal((2, n_phonemes, f_dim)).astype(np.float32)


def signature_mean(signatures: np.ndarray) -> np.ndarray:
    return signatures.reshape(-1, signatures.shape[-1]).mean(axis=0)


def make_speakers(cfg: CorpusConfig) -> dict[str, list[SpeakerProfile]]:
    """Speaker profiles per split; bases resampled to keep pairwise distance."""
    rng = derive_rng(cfg.seed, "speakers")
    total = cfg.speakers_train + cfg.speakers_dev + cfg.speakers_test
    bases: list[np.ndarray] = []
    while len(bases) < total:
        cand = (rng.standard_normal(cfg.f_dim) * cfg.base_scale).astype(np.float32)
        if all(float(np.linalg.norm(cand - b)) > cfg.min_speaker_dist for b in bases):
            bases.append(cand)
    profiles = [
        SpeakerProfile(id=f"spk{i:02d}", base=bases[i], noise_scale=cfg.noise_scale) for i in range(total)
    ]
    n1 = cfg.speakers_train
    n2 = n1 + cfg.speakers_dev
    return {"train": profiles[:n1], "dev": profiles[n1:n2], "test": profiles[n2:]}


def synth_utterance(
    local_phonemes: np.ndarray,
    lang: int,
    speaker: SpeakerProfile,
    signatures: np.ndarray,
    seed_components: tuple,
    frames_per_phoneme: int = 4,
) -> np.ndarray:
    """Each phoneme emits exactly `frames_per_phoneme` noisy frames."""
    local_phonemes = np.asarray(local_phonemes, dtype=np.int64)
    clean = np.repeat(signatures[lang][local_phonemes], frames_per_phoneme, axis=0) + speaker.base
    rng = derive_rng(*seed_components)
    noise = rng.standard_normal(clean.shape).astype(np.float32) * speaker.noise_scale
    return (clean + noise).astype(np.float32)


_PERM_SEED = ("toy-translate", GENERATOR_VERSION)


def _translate_perm(n_phonemes: int) -> np.ndarray:
    return derive_rng(*_PERM_SEED, n_phonemes).permutation(n_phonemes)


def toy_translate(local_src: np.ndarray, n_phonemes: int = 40) -> np.ndarray:
    """Fixed permutation into language B, then swap each adjacent pair."""
    perm = _translate_perm(n_phonemes)
    mapped = perm[np.asarray(local_src, dtype=np.int64)]
    out = mapped.copy()
    even = len(out) - (len(out) % 2)
    out[0:even:2], out[1:even:2] = mapped[1:even:2], mapped[0:even:2]
    return out.astype(np.int32)


def toy_translate_inverse(local_tgt: np.ndarray, n_phonemes: int = 40) -> np.ndarray:
    perm = _translate_perm(n_phonemes)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n_phonemes)
    tgt = np.asarray(local_tgt, dtype=np.int64)
    unswapped = tgt.copy()
    even = len(tgt) - (len(tgt) % 2)
    unswapped[0:even:2], unswapped[1:even:2] = tgt[1:even:2], tgt[0:even:2]
    return inv[unswapped].astype(np.int32)


def oracle_decode(frames: np.ndarray, lang: int, signatures: np.ndarray, frames_per_phoneme: int = 4) -> np.ndarray:
    """Nearest-signature decoding with run-length collapse.

    The speaker component is estimated as mean(frames) - mean(signatures of
    the language); each corrected frame maps to its nearest signature, and
    each run of identical labels emits floor((run + 2) / 4) phonemes, which
    forgives one-frame glitches at run boundaries.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DataError("frames must be a nonempty (T, F) array")
    sig = signatures[lang]
    est_base = frames.mean(axis=0) - sig.mean(axis=0)
    corrected = frames - est_base
    d = -2.0 * (corrected @ sig.T) + (sig * sig).sum(axis=1)[None, :]
    labels = np.argmin(d, axis=1)
    out: list[int] = []
    run_start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[run_start]:
            count = (t - run_start + frames_per_phoneme // 2) // frames_per_phoneme
            out.extend([int(labels[run_start])] * count)
            run_start = t
    return np.asarray(out, dtype=np.int32)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_frame_file(path, utterances: list[tuple[str, np.ndarray]], f_dim: int) -> dict[str, int]:
    offsets = {}
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<I", f_dim))
        for utt_id, frames in utterances:
            frames = np.asarray(frames, dtype=np.float32)
            if frames.ndim != 2 or frames.shape[1] != f_dim:
                raise DataError(f"{utt_id}: frames must be (T, {f_dim})")
            offsets[utt_id] = f.tell()
            ident = utt_id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<I", frames.shape[0]))
            f.write(frames.astype("<f4").tobytes())
    return offsets


def read_frame_record(path, offset: int) -> tuple[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != FRAME_MAGIC:
            raise DataError(f"{path}: bad frame-file magic {magic!r}")
        (f_dim,) = struct.unpack("<I", f.read(4))
        f.seek(offset)
        (id_len,) = struct.unpack("<H", f.read(2))
        utt_id = f.read(id_len).decode("utf-8")
        (t,) = struct.unpack("<I", f.read(4))
        raw = f.read(t * f_dim * 4)
        if len(raw) != t * f_dim * 4:
            raise DataError(f"{path}: truncated frame record at {offset}")
        frames = np.frombuffer(raw, dtype="<f4").reshape(t, f_dim).copy()
    return utt_id, frames


def save_signatures(path, signatures: np.ndarray, speakers: list[SpeakerProfile]) -> None:
    n_langs, n_phonemes, f_dim = signatures.shape
    with open(path, "wb") as f:
        f.write(SIGNATURE_MAGIC)
        f.write(struct.pack("<III", n_langs, n_phonemes, f_dim))
        f.write(signatures.astype("<f4").tobytes())
        f.write(struct.pack("<I", len(speakers)))
        for sp in speakers:
            ident = sp.id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<f", sp.noise_scale))
            f.write(sp.base.astype("<f4").tobytes())


def load_signatures(path) -> tuple[np.ndarray, list[SpeakerProfile]]:
    with open(path, "rb") as f:
        if f.read(5) != SIGNATURE_MAGIC:
            raise DataError(f"{path}: bad signature-file magic")
        n_langs, n_phonemes, f_dim = struct.unpack("<III", f.read(12))
        signatures = (
            np.frombuffer(f.read(n_langs * n_phonemes * f_dim * 4), dtype="<f4")
            .reshape(n_langs, n_phonemes, f_dim)
            .copy()
        )
        (n_speakers,) = struct.unpack("<I", f.read(4))
        speakers = []
        for _ in range(n_speakers):
            (id_len,) = struct.unpack("<H", f.read(2))
            sp_id = f.read(id_len).decode("utf-8")
            (noise,) = struct.unpack("<f", f.read(4))
            base = np.frombuffer(f.read(f_dim * 4), dtype="<f4").copy()
            speakers.append(SpeakerProfile(id=sp_id, base=base, noise_scale=noise))
    return signatures, speakers


def write_manifest(path, records: list[Record], cfg: CorpusConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# generator_version={GENERATOR_VERSION}\n")
        f.write(f"# corpus_seed={cfg.seed}\n")
        f.write(f"# k={cfg.k}\n")
        f.write(f"# f_dim={cfg.f_dim}\n")
        f.write(f"# n_phonemes={cfg.n_phonemes}\n")
        f.write(f"# noise_scale={cfg.noise_scale}\n")
        f.write(f"# frames_per_phoneme={cfg.frames_per_phoneme}\n")
        for r in records:
            f.write(
                f"{r.id}\t{r.task}\t{LANG_NAMES[r.lang_in]}\t{LANG_NAMES[r.lang_out]}\t"
                f"{r.speaker or '-'}\t{r.frame_offset}\t{r.token_offset}\n"
            )


def read_manifest(path) -> tuple[dict[str, str], list[Record]]:
    header: dict[str, str] = {}
    records: list[Record] = []
    lang_index = {n: i for i, n in enumerate(LANG_NAMES)}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise DataError(f"{path}:{line_no}: expected 7 tab-separated fields")
            records.append(
                Record(
                    id=parts[0],
                    task=parts[1],
                    lang_in=lang_index[parts[2]],
                    lang_out=lang_index[parts[3]],
                    speaker=None if parts[4] == "-" else parts[4],
                    frame_offset=int(parts[5]),
                    token_offset=int(parts[6]),
                )
            )
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate utterance ids")
    return header, records


def write_texts(path, texts: dict[str, list[tuple[str, int, np.ndarray]]], vocab: Vocabulary) -> None:
    """texts: id -> [(role, lang, local phoneme indices)], roles text|src|tgt."""
    with open(path, "w", encoding="utf-8") as f:
        for utt_id in texts:
            for role, lang, local in texts[utt_id]:
                symbols = " ".join(vocab.symbol_of(vocab.phoneme_id(lang, int(i))) for i in local)
                f.write(f"{utt_id}\t{role}\t{LANG_NAMES[lang]}\t{symbols}\n")


def read_texts(path, vocab: Vocabulary) -> dict[str, dict[str, tuple[int, np.ndarray]]]:
    """id -> role -> (lang, local phoneme indices)."""
    out: dict[str, dict[str, tuple[int, np.ndarray]]] = {}
    lang_index = {n: i for i, n in enumerate(LANG_NAMES)}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 tab-separated fields")
            utt_id, role, lang_name, symbols = parts
            lang = lang_index[lang_name]
            local = np.asarray(
                [vocab.phoneme_local(vocab.lookup(s), lang) for s in symbols.split()], dtype=np.int32
            )
            out.setdefault(utt_id, {})[role] = (lang, local)
    return out


def format_config(cfg: CorpusConfig, extra: dict | None = None) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg)]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


def _draw_sentence(rng: np.random.Generator, cfg: CorpusConfig) -> tuple[int, ...]:
    length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
    return tuple(int(x) for x in rng.integers(0, cfg.n_phonemes, size=length))


def _sentence_pool(cfg: CorpusConfig, lang: int, stream: str, split: str, n: int, seen: set) -> list[np.ndarray]:
    rng = derive_rng(cfg.seed, "sentences", stream, split)
    out = []
    while len(out) < n:
        s = _draw_sentence(rng, cfg)
        if s in seen:
            continue
        seen.add(s)
        out.append(np.asarray(s, dtype=np.int32))
    return out


@dataclass
class GeneratedCorpus:
    cfg: CorpusConfig
    signatures: np.ndarray
    speakers: dict[str, list[SpeakerProfile]]
    records: dict[str, list[Record]] = field(default_factory=dict)
    oracle_per: float = float("nan")


def generate_corpus(cfg: CorpusConfig, out_dir) -> GeneratedCorpus:
    import os

    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    vocab = Vocabulary(n_phonemes=cfg.n_phonemes, k=cfg.k)
    signatures = make_signatures(cfg.seed, cfg.n_phonemes, cfg.f_dim)
    speakers = make_speakers(cfg)

    seen: dict[int, set] = {LANG_A: set(), LANG_B: set()}
    speech_utts: list[tuple[str, str, int, np.ndarray, SpeakerProfile, np.ndarray]] = []
    # (id, task, lang, local phonemes, speaker, frames)
    texts: dict[str, list[tuple[str, int, np.ndarray]]] = {}
    records: dict[str, list[Record]] = {s: [] for s in SPLITS}

    def stream_sizes(split: str, train_n: int) -> int:
        return {"train": train_n, "dev": cfg.n_dev, "test": cfg.n_test}[split]

    for split in SPLITS:
        split_speakers = speakers[split]
        for task, train_n in (("asr", cfg.n_asr), ("tts", cfg.n_tts)):
            for lang in (LANG_A, LANG_B):
                stream = f"{task}_{LANG_NAMES[lang]}"
                pool = _sentence_pool(cfg, lang, stream, split, stream_sizes(split, train_n), seen[lang])
                spk_rng = derive_rng(cfg.seed, "speaker-choice", stream, split)
                for i, local in enumerate(pool):
                    utt_id = f"{stream}_{split}_{i:05d}"
                    sp = split_speakers[int(spk_rng.integers(0, len(split_speakers)))]
                    frames = synth_utterance(
                        local, lang, sp, signatures, (cfg.seed, "utt", utt_id), cfg.frames_per_phoneme
                    )
                    speech_utts.append((utt_id, task, lang, local, sp, frames))
                    texts[utt_id] = [("text", lang, local)]
        # machine translation records (text only)
        pool = _sentence_pool(cfg, LANG_A, "mt_ab", split, stream_sizes(split, cfg.n_mt), seen[LANG_A])
        for i, local in enumerate(pool):
            utt_id = f"mt_ab_{split}_{i:05d}"
            texts[utt_id] = [
                ("src", LANG_A, local),
                ("tgt", LANG_B, toy_translate(local, cfg.n_phonemes)),
            ]
            records[split].append(Record(utt_id, "mt", LANG_A, LANG_B, None, -1, -1))

    # codec: train on train-split speech only, then tokenize everything
    train_frames = [u[5] for u in speech_utts if u[0].split("_")[2] == "train"]
    codebooks = codec_mod.train_codebooks(train_frames, cfg.k, cfg.seed, iterations=cfg.codec_iterations)
    frame_offsets = write_frame_file(
        f"{out_dir}/frames.bin", [(u[0], u[5]) for u in speech_utts], cfg.f_dim
    )
    token_matrices = [(u[0], codec_mod.encode(u[5], codebooks)) for u in speech_utts]
    token_offsets = codec_mod.write_token_file(f"{out_dir}/tokens.bin", token_matrices)

    for utt_id, task, lang, local, sp, frames in speech_utts:
        split = utt_id.split("_")[2]
        records[split].append(
            Record(utt_id, task, lang, lang, sp.id, frame_offsets[utt_id], token_offsets[utt_id])
        )

    for split in SPLITS:
        records[split].sort(key=lambda r: r.id)
        write_manifest(f"{out_dir}/manifest_{split}.tsv", records[split], cfg)
    write_texts(f"{out_dir}/texts.tsv", texts, vocab)
    codec_mod.save_codebooks(codebooks, f"{out_dir}/codebooks.vlcb")
    all_speakers = speakers["train"] + speakers["dev"] + speakers["test"]
    save_signatures(f"{out_dir}/signatures.bin", signatures, all_speakers)
    vocab.dump(f"{out_dir}/vocab.txt")

    # generation-time sanity: the oracle decoder must nearly invert synthesis
    per_num = per_den = 0
    check = [u for u in speech_utts if u[1] == "asr" and u[0].split("_")[2] == "train"][:200]
    for utt_id, task, lang, local, sp, frames in check:
        hyp = oracle_decode(frames, lang, signatures, cfg.frames_per_phoneme)
        per_num += _edit_distance(hyp.tolist(), local.tolist())
        per_den += len(local)
    oracle_per = per_num / max(1, per_den)
    with open(f"{out_dir}/corpus_config.txt", "w", encoding="utf-8") as f:
        f.write(format_config(cfg, {"oracle_per": f"{oracle_per:.6f}"}))
    return GeneratedCorpus(
        cfg=cfg, signatures=signatures, speakers=speakers, records=records, oracle_per=oracle_per
    )


def _edit_distance(a: list, b: list) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


class Corpus:
    """Read-only view over a generated corpus directory."""

    def __init__(self, root):
        import os

        self.root = str(root)
        self.header, _ = read_manifest(os.path.join(self.root, "manifest_train.tsv"))
        self.k = int(self.header["k"])
        self.f_dim = int(self.header["f_dim"])
        self.n_phonemes = int(self.header["n_phonemes"])
        self.frames_per_phoneme = int(self.header.get("frames_per_phoneme", 4))
        self.seed = int(self.header["corpus_seed"])
        self.vocab = Vocabulary(n_phonemes=self.n_phonemes, k=self.k)
        self.signatures, self.speakers = load_signatures(os.path.join(self.root, "signatures.bin"))
        self.codebooks = codec_mod.load_codebooks(os.path.join(self.root, "codebooks.vlcb"))
        self.texts = read_texts(os.path.join(self.root, "texts.tsv"), self.vocab)
        self._records: dict[str, list[Record]] = {}
        self._speaker_map = {sp.id: sp for sp in self.speakers}

    def records(self, split: str) -> list[Record]:
        import os

        if split not in self._records:
            _, recs = read_manifest(os.path.join(self.root, f"manifest_{split}.tsv"))
            self._records[split] = recs
        return self._records[split]

    def tokens(self, record: Record) -> np.ndarray:
        import os

        utt_id, tokens = codec_mod.read_token_record(os.path.join(self.root, "tokens.bin"), record.token_offset)
        if utt_id != record.id:
            raise DataError(f"token offset mismatch for {record.id}")
        return tokens

    def frames(self, record: Record) -> np.ndarray:
        import os

        utt_id, frames = read_frame_record(os.path.join(self.root, "frames.bin"), record.frame_offset)
        if utt_id != record.id:
            raise DataError(f"frame offset mismatch for {record.id}")
        return frames

    def text(self, record: Record, role: str) -> tuple[int, np.ndarray]:
        entry = self.texts.get(record.id, {}).get(role)
        if entry is None:
            raise DataError(f"no {role!r} text for {record.id}")
        return entry

    def speaker(self, record: Record) -> SpeakerProfile:
        return self._speaker_map[record.speaker]

    @property
    def signature_mean(self) -> np.ndarray:
        return signature_mean(self.signatures)
