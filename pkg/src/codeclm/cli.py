"""Command-line entry point: data synthesis, training, inference, evaluation.

Heavy imports happen inside subcommand handlers so thread-cap flags can set
the numeric library environment before numpy loads. Exit codes: 0 success,
2 usage error, 3 data or I/O error, 4 numeric failure.

Inference output is one line per utterance with six tab-separated fields:
id, task, strategy ("-" for text tasks), per-candidate speaker-similarity
scores, per-candidate error-rate scores (comma-joined, "-" when absent), and
the final output: space-joined phoneme symbols for text, or semicolon-joined
frames of eight comma-joined codec codes for speech.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import DataError, NumericError

THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_thread_flags(args) -> None:
    threads = 1 if getattr(args, "deterministic", False) else getattr(args, "threads", None)
    if threads is not None:
        for var in THREAD_ENV_VARS:
            os.environ[var] = str(threads)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# flat-config helpers
# ---------------------------------------------------------------------------


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise DataError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _fill_dataclass(cls, raw: dict, used: set):
    from dataclasses import fields

    kwargs = {}
    for f in fields(cls):
        if f.name in raw:
            used.add(f.name)
            if f.name == "streams":
                kwargs[f.name] = tuple(s.strip() for s in raw[f.name].split(",") if s.strip())
            else:
                default = f.default
                kwargs[f.name] = _coerce(raw[f.name], default)
    return cls(**kwargs)


def _sibling_config(ckpt_path: str) -> dict:
    from .config import load_flat

    path = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), "model_config.txt")
    if not os.path.exists(path):
        raise DataError(f"no model_config.txt next to {ckpt_path}")
    return load_flat(path)


def _load_ar(ckpt_path: str):
    from .model_ar import config_from_dict
    from .training import load_model

    raw = _sibling_config(ckpt_path)
    if raw.get("arch", "ar") != "ar":
        raise DataError(f"{ckpt_path} is not an autoregressive checkpoint")
    cfg = config_from_dict(raw)
    return load_model(ckpt_path, cfg), cfg


def _load_nar(ckpt_path: str):
    from .model_nar import nar_config_from_dict
    from .training import load_nar_model

    raw = _sibling_config(ckpt_path)
    if raw.get("arch") != "nar":
        raise DataError(f"{ckpt_path} is not a layer-filling checkpoint")
    cfg = nar_config_from_dict(raw)
    return load_nar_model(ckpt_path, cfg), cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    from .config import load_flat
    from .corpus import CorpusConfig, generate_corpus

    raw = load_flat(args.config) if args.config else {}
    used: set = set()
    cfg = _fill_dataclass(CorpusConfig, raw, used)
    unknown = set(raw) - used
    if unknown:
        raise DataError(f"unknown corpus config keys: {sorted(unknown)}")
    generated = generate_corpus(cfg, args.out)
    n_train = len(generated.records["train"])
    _say(f"corpus written to {args.out}: {n_train} train records, oracle PER {generated.oracle_per:.4f}")
    return 0


def cmd_train_codec(args) -> int:
    import numpy as np

    from . import codec
    from .corpus import read_frame_record, read_manifest

    manifest = os.path.join(args.frames, "manifest_train.tsv")
    _, records = read_manifest(manifest)
    frame_path = os.path.join(args.frames, "frames.bin")
    frames = []
    for rec in records:
        if rec.frame_offset < 0:
            continue
        _, f = read_frame_record(frame_path, rec.frame_offset)
        frames.append(f)
    if not frames:
        raise DataError(f"no speech frames found under {args.frames}")
    cb = codec.train_codebooks(frames, k=args.k, seed=args.seed)
    codec.save_codebooks(cb, args.out)
    total = int(np.sum([len(f) for f in frames]))
    _say(f"codebooks (K={args.k}, {cb.n_layers} layers) trained on {total} frames -> {args.out}")
    return 0


TRAIN_ONLY_KEYS = {"arch"}


def cmd_train(args) -> int:
    from .config import load_flat
    from .corpus import Corpus
    from .training import TrainConfig, train_model, train_nar_model

    raw = load_flat(args.config)
    arch = raw.get("arch", "ar")
    corpus = Corpus(args.data)
    # the vocabulary comes from the corpus unless the config overrides it
    raw.setdefault("k", str(corpus.k))
    raw.setdefault("n_phonemes", str(corpus.n_phonemes))
    used: set = set(TRAIN_ONLY_KEYS)
    tcfg = _fill_dataclass(TrainConfig, raw, used)
    if arch == "ar":
        from .model_ar import ARConfig

        mcfg = _fill_dataclass(ARConfig, raw, used)
        unknown = set(raw) - used
        if unknown:
            raise DataError(f"unknown train config keys: {sorted(unknown)}")
        result = train_model(corpus, mcfg, tcfg, args.out, progress=_say)
    elif arch == "nar":
        from .model_nar import NARConfig

        mcfg = _fill_dataclass(NARConfig, raw, used)
        unknown = set(raw) - used
        if unknown:
            raise DataError(f"unknown train config keys: {sorted(unknown)}")
        result = train_nar_model(corpus, mcfg, tcfg, args.out, progress=_say)
    else:
        raise DataError(f"arch must be 'ar' or 'nar', got {arch!r}")
    _say(f"trained {arch} model for {result.stopped_at} steps -> {args.out}/ckpt_final.vlck")
    return 0


def _render_ids(vocab, ids) -> str:
    return " ".join(vocab.symbol_of(int(t)) for t in ids)


def _render_tokens(mat) -> str:
    return ";".join(",".join(str(int(c)) for c in row) for row in mat)


def _parse_tokens(s: str):
    import numpy as np

    if not s:
        return np.zeros((0, 8), dtype=np.uint16)
    rows = []
    for part in s.split(";"):
        cells = part.split(",")
        if len(cells) != 8:
            raise DataError(f"expected 8 codes per frame, got {len(cells)}")
        rows.append([int(c) for c in cells])
    return np.asarray(rows, dtype=np.uint16)


def _scores_field(values) -> str:
    return ",".join(f"{v:.6f}" for v in values)


def _utt_seed(base_seed: int, utt_id: str) -> int:
    from .seeding import derive_rng

    return int(derive_rng(base_seed, "utt", utt_id).integers(0, 2**31))


def _tts_prompt(corpus, records, rec):
    """Speaker prompt: a different utterance by the same speaker, or a
    half split of the target utterance when no sibling exists."""
    import numpy as np

    for other in records:
        if other.task == "tts" and other.speaker == rec.speaker and other.id != rec.id:
            _, other_local = corpus.text(other, "text")
            prompt_text = corpus.vocab.phoneme_id(other.lang_in, 0) + other_local.astype(np.int64)
            return prompt_text, corpus.tokens(other).astype(np.int64)
    _, local = corpus.text(rec, "text")
    half = max(1, len(local) // 2)
    prompt_text = corpus.vocab.phoneme_id(rec.lang_in, 0) + local[:half].astype(np.int64)
    prompt_tokens = corpus.tokens(rec).astype(np.int64)[: half * corpus.frames_per_phoneme]
    return prompt_text, prompt_tokens


def cmd_infer(args) -> int:
    import numpy as np

    from . import codec
    from .corpus import Corpus, read_manifest
    from .inference import (
        cascade_s2st,
        cascade_s2tt,
        decode_text,
        sample_speech,
        score_candidates,
        select_candidate,
    )

    corpus = Corpus(os.path.dirname(os.path.abspath(args.inp)))
    _, records = read_manifest(args.inp)
    vocab = corpus.vocab
    params, cfg = _load_ar(args.ckpt)
    if vocab.k != cfg.k or vocab.n_phonemes != cfg.n_phonemes:
        raise DataError("checkpoint vocabulary does not match the corpus")
    needs_nar = args.task in ("tts", "s2st")
    if needs_nar:
        if not args.nar_ckpt:
            raise DataError(f"--nar-ckpt is required for task {args.task}")
        nar_params, nar_cfg = _load_nar(args.nar_ckpt)
    else:
        nar_params = nar_cfg = None

    if args.task in ("asr", "mt", "tts"):
        selected = [r for r in records if r.task == args.task]
    else:
        # cascades start from source-language speech; the toy translation
        # direction is a -> b, so only language-a inputs are translatable
        selected = [r for r in records if r.task == "asr" and r.lang_in == 0]
    if not selected:
        raise DataError(f"no usable records for task {args.task!r} in {args.inp}")

    lines = []
    for rec in selected:
        if args.task == "asr":
            tokens = corpus.tokens(rec).astype(np.int64)
            hyp = decode_text(params, cfg, vocab, "asr", rec.lang_in, rec.lang_in, "ac8", tokens, args.beam)[0]
            lines.append(f"{rec.id}\tasr\t-\t-\t-\t{_render_ids(vocab, hyp.tokens)}")
        elif args.task == "mt":
            src_lang, src_local = corpus.text(rec, "src")
            src_ids = vocab.phoneme_id(src_lang, 0) + src_local.astype(np.int64)
            hyp = decode_text(params, cfg, vocab, "mt", rec.lang_in, rec.lang_out, "sem", src_ids, args.beam)[0]
            lines.append(f"{rec.id}\tmt\t-\t-\t-\t{_render_ids(vocab, hyp.tokens)}")
        elif args.task == "tts":
            _, local = corpus.text(rec, "text")
            text_ids = vocab.phoneme_id(rec.lang_in, 0) + local.astype(np.int64)
            prompt = _tts_prompt(corpus, selected, rec)
            cands = sample_speech(
                params, cfg, nar_params, nar_cfg, vocab, text_ids, rec.lang_in,
                prompt=prompt, seed=_utt_seed(args.seed, rec.id),
            )
            prompt_frames = codec.decode(prompt[1].astype(np.uint16), corpus.codebooks)
            score_candidates(
                cands, prompt_frames, local.astype(np.int64), rec.lang_in,
                corpus.codebooks, corpus.signatures, corpus.signature_mean,
            )
            chosen = select_candidate([c.ss for c in cands], [c.wer for c in cands], args.strategy)
            lines.append(
                f"{rec.id}\ttts\t{args.strategy}\t{_scores_field(c.ss for c in cands)}"
                f"\t{_scores_field(c.wer for c in cands)}\t{_render_tokens(cands[chosen].tokens)}"
            )
        elif args.task == "s2tt":
            tokens = corpus.tokens(rec).astype(np.int64)
            res = cascade_s2tt(params, cfg, vocab, tokens, rec.lang_in, 1 - rec.lang_in, args.beam)
            lines.append(f"{rec.id}\ts2tt\t-\t-\t-\t{_render_ids(vocab, res.mt_ids)}")
        else:
            tokens = corpus.tokens(rec).astype(np.int64)
            res = cascade_s2st(
                params, cfg, nar_params, nar_cfg, vocab, tokens, rec.lang_in, 1 - rec.lang_in,
                args.beam, args.strategy, corpus.codebooks, corpus.signatures, corpus.signature_mean,
                seed=_utt_seed(args.seed, rec.id),
            )
            if res.candidates:
                ss = _scores_field(c.ss for c in res.candidates)
                wer = _scores_field(c.wer for c in res.candidates)
            else:
                ss = wer = "-"
            lines.append(f"{rec.id}\ts2st\t{args.strategy}\t{ss}\t{wer}\t{_render_tokens(res.tokens)}")
        if args.verbose:
            _say(f"{rec.id} done")

    with open(args.out, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    _say(f"{len(lines)} utterances -> {args.out}")
    return 0


def _read_hyp_file(path) -> dict[str, tuple[str, str]]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise DataError(f"{path}:{line_no}: expected 6 tab-separated fields")
            utt_id, task, _strategy, _ss, _wer, payload = parts
            if utt_id in out:
                raise DataError(f"{path}:{line_no}: duplicate id {utt_id}")
            out[utt_id] = (task, payload)
    return out


def _symbols_to_local(vocab, payload: str, lang: int):
    import numpy as np

    if not payload:
        return []
    return [vocab.phoneme_local(vocab.lookup(s), lang) for s in payload.split()]


def cmd_eval(args) -> int:
    import numpy as np

    from . import codec
    from .corpus import Corpus, oracle_decode, read_manifest, toy_translate
    from .metrics import bleu, corpus_error_rate

    corpus = Corpus(os.path.dirname(os.path.abspath(args.ref)))
    _, records = read_manifest(args.ref)
    hyps = _read_hyp_file(args.hyp)
    vocab = corpus.vocab

    if args.task in ("asr", "mt", "tts"):
        selected = [r for r in records if r.task == args.task]
    else:
        selected = [r for r in records if r.task == "asr" and r.lang_in == 0]
    selected = [r for r in selected if r.id in hyps]
    if not selected:
        raise DataError("no overlapping utterances between hypothesis file and reference manifest")

    report_lines = []

    def add(metric: str, value) -> None:
        report_lines.append(f"{args.task}\t{metric}\t{value}")

    if args.task == "asr":
        pairs = []
        for rec in selected:
            _, ref_local = corpus.text(rec, "text")
            hyp_local = _symbols_to_local(vocab, hyps[rec.id][1], rec.lang_in)
            pairs.append((hyp_local, ref_local.tolist()))
        add("per", f"{corpus_error_rate(pairs):.6f}")
    elif args.task == "mt":
        hyp_seqs, ref_seqs = [], []
        for rec in selected:
            _, tgt_local = corpus.text(rec, "tgt")
            hyp_seqs.append(_symbols_to_local(vocab, hyps[rec.id][1], rec.lang_out))
            ref_seqs.append(tgt_local.tolist())
        add("bleu", f"{bleu(hyp_seqs, ref_seqs):.4f}")
    elif args.task == "tts":
        pairs = []
        for rec in selected:
            _, ref_local = corpus.text(rec, "text")
            mat = _parse_tokens(hyps[rec.id][1])
            if len(mat) == 0:
                hyp_local = []
            else:
                frames = codec.decode(mat, corpus.codebooks)
                hyp_local = oracle_decode(frames, rec.lang_in, corpus.signatures).tolist()
            pairs.append((hyp_local, ref_local.tolist()))
        per = corpus_error_rate(pairs)
        add("per", f"{per:.6f}")
        add("recovery", f"{max(0.0, 1.0 - per):.6f}")
    elif args.task == "s2tt":
        hyp_seqs, ref_seqs = [], []
        for rec in selected:
            _, src_local = corpus.text(rec, "text")
            ref_seqs.append(toy_translate(src_local, corpus.n_phonemes).tolist())
            hyp_seqs.append(_symbols_to_local(vocab, hyps[rec.id][1], 1 - rec.lang_in))
        add("bleu", f"{bleu(hyp_seqs, ref_seqs):.4f}")
    elif args.task == "s2st":
        hyp_seqs, ref_seqs = [], []
        for rec in selected:
            _, src_local = corpus.text(rec, "text")
            ref_seqs.append(toy_translate(src_local, corpus.n_phonemes).tolist())
            mat = _parse_tokens(hyps[rec.id][1])
            if len(mat) == 0:
                hyp_seqs.append([])
            else:
                frames = codec.decode(mat, corpus.codebooks)
                hyp_seqs.append(oracle_decode(frames, 1 - rec.lang_in, corpus.signatures).tolist())
        add("bleu", f"{bleu(hyp_seqs, ref_seqs):.4f}")
    else:
        raise DataError(f"unknown eval task {args.task!r}")
    add("n", len(selected))

    report = "\n".join(report_lines) + "\n"
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(report)
    sys.stdout.write(report)
    return 0


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


def _greedy_asr_per(params, cfg, corpus, split: str) -> float:
    import numpy as np

    from .inference import decode_text
    from .metrics import corpus_error_rate

    vocab = corpus.vocab
    pairs = []
    for rec in corpus.records(split):
        if rec.task != "asr":
            continue
        tokens = corpus.tokens(rec).astype(np.int64)
        hyp = decode_text(params, cfg, vocab, "asr", rec.lang_in, rec.lang_in, "ac8", tokens, beam=1)[0]
        _, ref_local = corpus.text(rec, "text")
        hyp_local = [vocab.phoneme_local(int(t), rec.lang_in) for t in hyp.tokens]
        pairs.append((hyp_local, ref_local.tolist()))
    return corpus_error_rate(pairs)


def _asr_train_config(raw: dict, used: set):
    from .training import TrainConfig

    raw = dict(raw)
    raw["streams"] = raw.get("streams", "asr_a,asr_b")
    tcfg = _fill_dataclass(TrainConfig, raw, used)
    if any(not s.startswith("asr") for s in tcfg.streams):
        raise DataError("ablations train transcription streams only")
    return tcfg


def cmd_ablate_codec_layers(args) -> int:
    from dataclasses import replace

    from .config import load_flat
    from .corpus import Corpus
    from .model_ar import ARConfig
    from .training import train_model

    layers = sorted({int(x) for x in args.layers.split(",") if x.strip()})
    if not layers or any(not 1 <= l <= 8 for l in layers):
        raise DataError("--layers must name values in 1..8")
    corpus = Corpus(args.data)
    raw = load_flat(args.config)
    raw.setdefault("k", str(corpus.k))
    raw.setdefault("n_phonemes", str(corpus.n_phonemes))
    used: set = set(TRAIN_ONLY_KEYS)
    base_tcfg = _asr_train_config(raw, used)
    base_mcfg = _fill_dataclass(ARConfig, raw, used)
    unknown = set(raw) - used - {"streams"}
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed_offset in range(args.seeds):
        for n_layers in layers:
            tcfg = replace(base_tcfg, seed=base_tcfg.seed + seed_offset)
            mcfg = replace(base_mcfg, asr_input_layers=n_layers)
            run_dir = os.path.join(args.out, f"layers{n_layers}_seed{tcfg.seed}")
            _say(f"training variant: {n_layers} input layers, seed {tcfg.seed}")
            result = train_model(corpus, mcfg, tcfg, run_dir, progress=_say)
            per = _greedy_asr_per(result.params, mcfg, corpus, args.split)
            rows.append((n_layers, tcfg.seed, per))
            _say(f"layers={n_layers} seed={tcfg.seed} per={per:.4f}")

    table_path = os.path.join(args.out, "codec_layers_per.tsv")
    with open(table_path, "w", encoding="utf-8") as f:
        f.write("# layers\tseed\tper\n")
        for n_layers, seed, per in rows:
            f.write(f"{n_layers}\t{seed}\t{per:.6f}\n")
        import statistics

        for n_layers in layers:
            med = statistics.median(p for l, _, p in rows if l == n_layers)
            f.write(f"{n_layers}\tmedian\t{med:.6f}\n")
    _say(f"table -> {table_path}")
    return 0


def cmd_ablate_lstm(args) -> int:
    from dataclasses import replace

    from .config import load_flat
    from .corpus import Corpus
    from .model_ar import ARConfig
    from .training import train_model

    if args.on and args.off:
        raise DataError("choose at most one of --on/--off")
    variants = [True] if args.on else [False] if args.off else [True, False]
    corpus = Corpus(args.data)
    raw = load_flat(args.config)
    raw.setdefault("k", str(corpus.k))
    raw.setdefault("n_phonemes", str(corpus.n_phonemes))
    used: set = set(TRAIN_ONLY_KEYS)
    base_tcfg = _asr_train_config(raw, used)
    base_mcfg = _fill_dataclass(ARConfig, raw, used)
    unknown = set(raw) - used - {"streams"}
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed_offset in range(args.seeds):
        for use_lstm in variants:
            tcfg = replace(base_tcfg, seed=base_tcfg.seed + seed_offset)
            mcfg = replace(base_mcfg, use_lstm_prenet=use_lstm)
            name = "on" if use_lstm else "off"
            run_dir = os.path.join(args.out, f"lstm_{name}_seed{tcfg.seed}")
            _say(f"training variant: pre-net {name}, seed {tcfg.seed}")
            result = train_model(corpus, mcfg, tcfg, run_dir, progress=_say)
            per = _greedy_asr_per(result.params, mcfg, corpus, args.split)
            rows.append((name, tcfg.seed, per))
            _say(f"lstm={name} seed={tcfg.seed} per={per:.4f}")

    table_path = os.path.join(args.out, "lstm_prenet_per.tsv")
    with open(table_path, "w", encoding="utf-8") as f:
        f.write("# lstm_prenet\tseed\tper\n")
        for name, seed, per in rows:
            f.write(f"{name}\t{seed}\t{per:.6f}\n")
        import statistics

        for name in dict.fromkeys(n for n, _, _ in rows):
            med = statistics.median(p for n, _, p in rows if n == name)
            f.write(f"{name}\tmedian\t{med:.6f}\n")
    _say(f"table -> {table_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap numeric library threads")
    common.add_argument("--deterministic", action="store_true", help="force single-threaded numeric paths")
    common.add_argument("--verbose", action="store_true", help="progress messages on stderr")

    parser = argparse.ArgumentParser(prog="codeclm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="generate a synthetic bilingual corpus")
    p.add_argument("--config", help="flat key=value corpus config (defaults apply when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth_data)

    p = sub.add_parser("train-codec", parents=[common], help="train RVQ codebooks from corpus frames")
    p.add_argument("--frames", required=True, help="corpus directory holding frames.bin and manifests")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output codebook file")
    p.set_defaults(handler=cmd_train_codec)

    p = sub.add_parser("train", parents=[common], help="train the AR or NAR model per config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="decode a manifest with a trained model")
    p.add_argument("--task", required=True, choices=("asr", "mt", "tts", "s2tt", "s2st"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--nar-ckpt", dest="nar_ckpt", default=None)
    p.add_argument("--strategy", type=int, choices=(1, 2), default=2)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="inp", required=True, help="manifest TSV inside a corpus directory")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score a hypothesis file against references")
    p.add_argument("--task", required=True, choices=("asr", "mt", "tts", "s2tt", "s2st"))
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, help="reference manifest TSV inside a corpus directory")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    ab = sub.add_parser("ablate", help="paper-style ablation harnesses")
    absub = ab.add_subparsers(dest="ablation", required=True)

    p = absub.add_parser("codec-layers", parents=[common], help="PER vs number of acoustic input layers")
    p.add_argument("--layers", default="1,2,3,8")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(handler=cmd_ablate_codec_layers)

    p = absub.add_parser("lstm", parents=[common], help="PER with the LSTM pre-net on/off")
    p.add_argument("--on", action="store_true")
    p.add_argument("--off", action="store_true")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(handler=cmd_ablate_lstm)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_flags(args)
    try:
        return args.handler(args)
    except NumericError as e:
        _say(f"numeric error: {e}")
        return 4
    except (DataError, OSError) as e:
        _say(f"error: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
