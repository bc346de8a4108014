"""Joint multi-task training: summed stream losses, warmup schedule, resume.

Each optimization step draws one batch per active task stream, sums the
stream losses into a single scalar, and applies one clipped Adam update.
Batch selection is a pure function of (seed, stream, step), so training is
reproducible and a resumed run continues the exact same trajectory.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .config import save_flat
from .corpus import Corpus
from .engine import Adam, clip_global_norm, ops
from .errors import DataError, NumericError
from .model_ar import ARConfig, TrainExample, batch_loss, init_params
from .seeding import derive_rng
from .transformer import ParamSet
from .vocab import LANG_NAMES, Vocabulary

ALL_STREAMS = ("asr_a", "asr_b", "mt_ab", "tts_a", "tts_b")
LOG_COLUMNS = ("step", "lr", "loss_total", "loss_asr", "loss_mt", "loss_tts")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    max_lr: float = 1e-3
    warmup: int = 400
    clip_norm: float = 1.0
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 500
    streams: tuple = ALL_STREAMS
    early_stop_loss: float = 0.0  # stop once total loss falls below, 0 disables

    def validate(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.warmup < 1:
            raise DataError("steps, batch_size and warmup must be positive")
        unknown = set(self.streams) - set(ALL_STREAMS)
        if unknown:
            raise DataError(f"unknown streams {sorted(unknown)}")


def lr_at(step: int, max_lr: float, warmup: int) -> float:
    """1-indexed warmup-then-inverse-sqrt schedule; peak exactly at warmup."""
    if step < 1:
        raise DataError("schedule steps are 1-indexed")
    return max_lr * min(step / warmup, (warmup / step) ** 0.5)


def stream_lang(stream: str) -> int:
    return LANG_NAMES.index(stream.rsplit("_", 1)[1]) if not stream.startswith("mt") else 0


def build_stream_examples(corpus: Corpus, split: str, stream: str) -> list[TrainExample]:
    """Materialize one task stream as model-ready examples."""
    vocab = corpus.vocab
    out: list[TrainExample] = []
    if stream.startswith(("asr", "tts")):
        task = stream[:3]
        lang = LANG_NAMES.index(stream.rsplit("_", 1)[1])
        for rec in corpus.records(split):
            if rec.task != task or rec.lang_in != lang:
                continue
            tokens = corpus.tokens(rec)
            _, local = corpus.text(rec, "text")
            text_ids = vocab.phoneme_id(lang, 0) + local.astype(np.int32)
            if task == "asr":
                out.append(TrainExample("asr", lang, lang, "ac8", tokens.astype(np.int32), "sem", text_ids))
            else:
                out.append(TrainExample("tts", lang, lang, "sem", text_ids, "ac1", tokens[:, 0].astype(np.int32)))
    elif stream == "mt_ab":
        for rec in corpus.records(split):
            if rec.task != "mt":
                continue
            src_lang, src = corpus.text(rec, "src")
            tgt_lang, tgt = corpus.text(rec, "tgt")
            src_ids = vocab.phoneme_id(src_lang, 0) + src.astype(np.int32)
            tgt_ids = vocab.phoneme_id(tgt_lang, 0) + tgt.astype(np.int32)
            out.append(TrainExample("mt", src_lang, tgt_lang, "sem", src_ids, "sem", tgt_ids))
    else:
        raise DataError(f"unknown stream {stream!r}")
    if not out:
        raise DataError(f"stream {stream!r} is empty in split {split!r}")
    return out


def batch_indices(seed: int, stream: str, step: int, n: int, batch_size: int) -> np.ndarray:
    """Pure function of its arguments, so resumed runs redraw identical batches."""
    rng = derive_rng(seed, "batch", stream, step)
    return rng.integers(0, n, size=batch_size)


def _zero_grads(params: ParamSet) -> None:
    for t in params.tensors.values():
        t.grad = None


def train_step(
    params: ParamSet,
    opt: Adam,
    model_cfg: ARConfig,
    vocab: Vocabulary,
    streams: dict[str, list[TrainExample]],
    tcfg: TrainConfig,
    step: int,
) -> dict[str, float]:
    """One joint update; returns per-stream and grouped losses."""
    _zero_grads(params)
    total = None
    stream_losses: dict[str, float] = {}
    for stream in tcfg.streams:
        examples = streams[stream]
        idx = batch_indices(tcfg.seed, stream, step, len(examples), tcfg.batch_size)
        loss = batch_loss(params, model_cfg, vocab, [examples[i] for i in idx])
        stream_losses[stream] = float(loss.data)
        total = loss if total is None else ops.add(total, loss)
    total.backward()
    clip_global_norm(params.tensors, tcfg.clip_norm)
    opt.step(params.tensors, lr_at(step, tcfg.max_lr, tcfg.warmup))
    grouped = {
        "loss_total": float(total.data),
        "loss_asr": stream_losses.get("asr_a", 0.0) + stream_losses.get("asr_b", 0.0),
        "loss_mt": stream_losses.get("mt_ab", 0.0),
        "loss_tts": stream_losses.get("tts_a", 0.0) + stream_losses.get("tts_b", 0.0),
    }
    grouped.update(stream_losses)
    return grouped


@dataclass
class TrainResult:
    params: ParamSet
    opt: Adam
    history: list[dict] = field(default_factory=list)
    stopped_at: int = 0


def _log_line(step: int, lr: float, losses: dict[str, float]) -> str:
    vals = [str(step), f"{lr:.8f}"] + [f"{losses[k]:.6f}" for k in LOG_COLUMNS[2:]]
    return "\t".join(vals)


def train_model(
    corpus: Corpus,
    model_cfg: ARConfig,
    tcfg: TrainConfig,
    out_dir,
    resume_from=None,
    progress=None,
) -> TrainResult:
    """Full training run with TSV logging and periodic checkpoints."""
    model_cfg.validate()
    tcfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    vocab = corpus.vocab
    if vocab.k != model_cfg.k or vocab.n_phonemes != model_cfg.n_phonemes:
        raise DataError("model vocabulary does not match corpus vocabulary")
    params = init_params(model_cfg, tcfg.seed)
    opt = Adam(params.tensors)
    start_step = 0
    if resume_from is not None:
        arrays, start_step, _ = ckpt.load_checkpoint(resume_from, model_cfg.to_dict())
        model_arrays, opt_arrays = ckpt.split_arrays(arrays)
        _load_model_arrays(params, model_arrays)
        opt.load_state_arrays(opt_arrays, start_step)

    streams = {s: build_stream_examples(corpus, "train", s) for s in tcfg.streams}
    log_path = os.path.join(out_dir, "train_log.tsv")
    mode = "a" if (resume_from is not None and os.path.exists(log_path)) else "w"
    result = TrainResult(params=params, opt=opt)
    save_flat(os.path.join(out_dir, "model_config.txt"), model_cfg.to_dict())

    with open(log_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write("# " + "\t".join(LOG_COLUMNS) + "\n")
        t0 = time.time()
        for step in range(start_step + 1, tcfg.steps + 1):
            losses = train_step(params, opt, model_cfg, vocab, streams, tcfg, step)
            if not np.isfinite(losses["loss_total"]):
                raise NumericError(f"non-finite loss at step {step}")
            lr = lr_at(step, tcfg.max_lr, tcfg.warmup)
            entry = {"step": step, "lr": lr, **losses}
            result.history.append(entry)
            result.stopped_at = step
            if step % tcfg.log_every == 0 or step == 1 or step == tcfg.steps:
                log.write(_log_line(step, lr, losses) + "\n")
                log.flush()
                if progress is not None:
                    rate = (time.time() - t0) / max(1, step - start_step)
                    progress(f"step {step}/{tcfg.steps} loss {losses['loss_total']:.4f} ({rate:.2f}s/step)")
            if tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0 and step < tcfg.steps:
                _save(params, opt, model_cfg, step, os.path.join(out_dir, f"ckpt_step{step}.vlck"))
            if tcfg.early_stop_loss and losses["loss_total"] < tcfg.early_stop_loss:
                break
    _save(params, opt, model_cfg, result.stopped_at, os.path.join(out_dir, "ckpt_final.vlck"))
    return result


def _save(params: ParamSet, opt: Adam, model_cfg: ARConfig, step: int, path) -> None:
    arrays = {name: t.data for name, t in params.tensors.items()}
    arrays.update(opt.state_arrays())
    ckpt.save_checkpoint(path, arrays, step, model_cfg.to_dict())


def _load_model_arrays(params: ParamSet, arrays: dict[str, np.ndarray]) -> None:
    missing = set(params.tensors) - set(arrays)
    extra = set(arrays) - set(params.tensors)
    if missing or extra:
        raise DataError(f"checkpoint parameter mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    for name, arr in arrays.items():
        if params.tensors[name].data.shape != arr.shape:
            raise DataError(f"checkpoint shape mismatch for {name}")
        params.tensors[name].data = arr.astype(np.float32)


def load_model(ckpt_path, model_cfg: ARConfig) -> ParamSet:
    """Parameters only (no optimizer state), digest-checked."""
    arrays, _, _ = ckpt.load_checkpoint(ckpt_path, model_cfg.to_dict())
    model_arrays, _ = ckpt.split_arrays(arrays)
    params = init_params(model_cfg, seed=0)
    _load_model_arrays(params, model_arrays)
    return params


def build_nar_examples(corpus: Corpus, split: str, streams=("tts_a", "tts_b")) -> list:
    """NAR training pairs: semantic ids plus the full 8-layer token matrix."""
    from .model_nar import NARExample

    langs = {LANG_NAMES.index(s.rsplit("_", 1)[1]) for s in streams}
    vocab = corpus.vocab
    out = []
    for rec in corpus.records(split):
        if rec.task != "tts" or rec.lang_in not in langs:
            continue
        _, local = corpus.text(rec, "text")
        sem_ids = vocab.phoneme_id(rec.lang_in, 0) + local.astype(np.int32)
        out.append(NARExample(sem_ids=sem_ids, tokens=corpus.tokens(rec).astype(np.int64)))
    if not out:
        raise DataError(f"no speech records for streams {streams} in split {split!r}")
    return out


def nar_train_step(params, opt, nar_cfg, vocab, examples, tcfg: TrainConfig, step: int) -> dict[str, float]:
    """One update on a single randomly chosen layer with a random prompt split."""
    from .model_nar import nar_assemble, nar_batch_loss

    _zero_grads(params)
    rng = derive_rng(tcfg.seed, "nar-step", step)
    layer = int(rng.integers(2, 9))
    frac = float(rng.uniform(0.0, 0.5))
    idx = batch_indices(tcfg.seed, "nar", step, len(examples), tcfg.batch_size)
    chosen = [examples[i] for i in idx]
    prompt_lens = [int(frac * len(ex.tokens)) for ex in chosen]
    batch = nar_assemble(nar_cfg, vocab, chosen, layer, prompt_lens)
    loss = nar_batch_loss(params, nar_cfg, vocab, batch)
    loss.backward()
    clip_global_norm(params.tensors, tcfg.clip_norm)
    opt.step(params.tensors, lr_at(step, tcfg.max_lr, tcfg.warmup))
    return {"loss_total": float(loss.data), "layer": layer}


def train_nar_model(
    corpus: Corpus,
    nar_cfg,
    tcfg: TrainConfig,
    out_dir,
    resume_from=None,
    progress=None,
):
    """Training run for the layer-filling model; same checkpoint format."""
    from .model_nar import init_nar_params

    nar_cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    vocab = corpus.vocab
    if vocab.k != nar_cfg.k or vocab.n_phonemes != nar_cfg.n_phonemes:
        raise DataError("model vocabulary does not match corpus vocabulary")
    params = init_nar_params(nar_cfg, tcfg.seed)
    opt = Adam(params.tensors)
    start_step = 0
    if resume_from is not None:
        arrays, start_step, _ = ckpt.load_checkpoint(resume_from, nar_cfg.to_dict())
        model_arrays, opt_arrays = ckpt.split_arrays(arrays)
        _load_model_arrays(params, model_arrays)
        opt.load_state_arrays(opt_arrays, start_step)
    streams = tuple(s for s in tcfg.streams if s.startswith("tts")) or ("tts_a", "tts_b")
    examples = build_nar_examples(corpus, "train", streams)
    log_path = os.path.join(out_dir, "train_log.tsv")
    mode = "a" if (resume_from is not None and os.path.exists(log_path)) else "w"
    result = TrainResult(params=params, opt=opt)
    save_flat(os.path.join(out_dir, "model_config.txt"), nar_cfg.to_dict())
    with open(log_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write("# step\tlr\tloss\tlayer\n")
        t0 = time.time()
        for step in range(start_step + 1, tcfg.steps + 1):
            losses = nar_train_step(params, opt, nar_cfg, vocab, examples, tcfg, step)
            if not np.isfinite(losses["loss_total"]):
                raise NumericError(f"non-finite loss at step {step}")
            lr = lr_at(step, tcfg.max_lr, tcfg.warmup)
            result.history.append({"step": step, "lr": lr, **losses})
            result.stopped_at = step
            if step % tcfg.log_every == 0 or step == 1 or step == tcfg.steps:
                log.write(f"{step}\t{lr:.8f}\t{losses['loss_total']:.6f}\t{losses['layer']}\n")
                log.flush()
                if progress is not None:
                    rate = (time.time() - t0) / max(1, step - start_step)
                    progress(f"step {step}/{tcfg.steps} loss {losses['loss_total']:.4f} ({rate:.2f}s/step)")
            if tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0 and step < tcfg.steps:
                _save_nar(params, opt, nar_cfg, step, os.path.join(out_dir, f"ckpt_step{step}.vlck"))
            if tcfg.early_stop_loss and losses["loss_total"] < tcfg.early_stop_loss:
                break
    _save_nar(params, opt, nar_cfg, result.stopped_at, os.path.join(out_dir, "ckpt_final.vlck"))
    return result


def _save_nar(params, opt, nar_cfg, step, path) -> None:
    arrays = {name: t.data for name, t in params.tensors.items()}
    arrays.update(opt.state_arrays())
    ckpt.save_checkpoint(path, arrays, step, nar_cfg.to_dict())


def load_nar_model(ckpt_path, nar_cfg):
    from .model_nar import init_nar_params

    arrays, _, _ = ckpt.load_checkpoint(ckpt_path, nar_cfg.to_dict())
    model_arrays, _ = ckpt.split_arrays(arrays)
    params = init_nar_params(nar_cfg, seed=0)
    _load_model_arrays(params, model_arrays)
    return params


def teacher_forced_accuracy(
    params: ParamSet, model_cfg: ARConfig, vocab: Vocabulary, examples: list[TrainExample]
) -> float:
    """Fraction of target positions where the argmax matches, no sampling."""
    from .engine import no_grad
    from .model_ar import batch_assemble, forward_batch

    correct = total = 0
    with no_grad():
        for i in range(0, len(examples), 16):
            chunk = examples[i : i + 16]
            asm = batch_assemble(model_cfg, vocab, chunk)
            logits = forward_batch(params, model_cfg, asm)
            pred = logits.data.argmax(axis=-1)
            active = asm.targets >= 0
            correct += int((pred[active] == asm.targets[active]).sum())
            total += int(active.sum())
    return correct / max(1, total)
