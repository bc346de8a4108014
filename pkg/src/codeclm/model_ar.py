"""Autoregressive multi-task sequence model over a shared token vocabulary.

Every task is one conditional generation problem over the layout
[input ++ task-id ++ start ++ output ++ end]. Inputs attend bidirectionally
among themselves, outputs are causal, and position indices restart at the
start token so output positions are comparable across tasks. Speech enters
as codec codes: full 8-layer stacks on the input side (averaged embedding
tables through a recurrent pre-net) and layer-1 codes on the output side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .engine import Tensor, ops
from .errors import DataError
from .seeding import derive_rng
from .transformer import (
    ParamSet,
    add_block_params,
    add_final_norm_params,
    additive_mask,
    block_forward,
    final_norm,
    prefix_attention_mask,
    sinusoid_table,
)
from .vocab import N_CODEC_LAYERS, TASKS, Vocabulary


@dataclass
class ARConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ffn: int = 512
    lstm_layers: int = 3
    k: int = 64
    n_phonemes: int = 40
    max_len: int = 512
    use_lstm_prenet: bool = True
    asr_input_layers: int = 8
    lang_embed_before_lstm: bool = False
    shared_phonemes: bool = False
    # train-time dropout over the averaged acoustic input layers; with few
    # synthetic speakers the residual layers fingerprint the speaker, and
    # zeroing random layers keeps recognition from keying on that
    ac_layer_dropout: float = 0.0

    def validate(self) -> None:
        if self.d_model % (2 * self.n_heads) != 0:
            raise DataError("d_model must be divisible by 2 * n_heads")
        if not 1 <= self.asr_input_layers <= N_CODEC_LAYERS:
            raise DataError("asr_input_layers outside codec layer range")
        if not 0.0 <= self.ac_layer_dropout < 1.0:
            raise DataError("ac_layer_dropout must be in [0, 1)")

    def to_dict(self) -> dict[str, str]:
        d = {"arch": "ar"}
        d.update({f.name: str(getattr(self, f.name)) for f in fields(self)})
        return d


def config_from_dict(d: dict[str, str]) -> ARConfig:
    kwargs = {}
    for f in fields(ARConfig):
        if f.name not in d:
            continue
        raw = d[f.name]
        if isinstance(f.default, bool):
            kwargs[f.name] = raw in ("True", "true", "1")
        elif isinstance(f.default, float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = int(raw)
    return ARConfig(**kwargs)


def build_vocab(cfg: ARConfig) -> Vocabulary:
    return Vocabulary(n_phonemes=cfg.n_phonemes, k=cfg.k, shared_phonemes=cfg.shared_phonemes)


def init_params(cfg: ARConfig, seed: int) -> ParamSet:
    cfg.validate()
    vocab = build_vocab(cfg)
    rng = derive_rng(seed, "init-ar")
    params = ParamSet(rng)
    d = cfg.d_model
    params.add("emb.sem", (vocab.n_semantic, d), fan_in=d)
    params.add("emb.lang", (2, d), fan_in=d)
    for layer in range(1, N_CODEC_LAYERS + 1):
        params.add(f"emb.ac{layer}", (cfg.k, d), fan_in=d)
    if cfg.use_lstm_prenet:
        for i in range(cfg.lstm_layers):
            params.add(f"lstm.{i}.wx", (d, 4 * d), fan_in=d)
            params.add(f"lstm.{i}.wh", (d, 4 * d), fan_in=d)
            params.add(f"lstm.{i}.b", (4 * d,), zeros=True)
    for i in range(cfg.n_layers):
        add_block_params(params, f"block{i}", d, cfg.d_ffn)
    add_final_norm_params(params, d)
    params.add("head.w", (d, vocab.size), fan_in=d)
    params.add("head.b", (vocab.size,), zeros=True)
    return params


@dataclass
class TrainExample:
    """One task instance in the shared layout, before batching.

    input_ids: (T_in,) semantic vocab ids, or (T_in, 8) codec codes.
    output_ids: (m,) semantic vocab ids, or (m,) layer-1 codec codes.
    """

    task: str
    lang_in: int
    lang_out: int
    input_kind: str  # sem | ac8
    input_ids: np.ndarray
    output_kind: str  # sem | ac1
    output_ids: np.ndarray

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        if self.input_kind not in ("sem", "ac8") or self.output_kind not in ("sem", "ac1"):
            raise DataError("bad segment kinds")
        if len(self.input_ids) == 0 or len(self.output_ids) == 0:
            raise DataError("empty input or output segment")


@dataclass
class BatchedAssembly:
    """Numpy views of a homogeneous batch in the padded shared layout.

    Columns: [input padded to T_in_max][task id][start][output padded to
    m_max]. boundary is the start-token column, shared by every row.
    """

    task: str
    input_kind: str
    output_kind: str
    n: int
    total: int
    boundary: int
    t_in_max: int
    m_max: int
    in_lens: np.ndarray  # (n,)
    out_lens: np.ndarray  # (n,) target counts including the end token
    sem_rows: np.ndarray  # (n, T) rows into the semantic table
    sem_scale: np.ndarray  # (n, T, 1)
    lang_ids: np.ndarray  # (n, T)
    lang_scale: np.ndarray  # (n, T, 1)
    ac_in_codes: np.ndarray | None  # (n, T_in_max, 8)
    ac_out_codes: np.ndarray | None  # (n, m_max)
    ac_in_scale: np.ndarray | None  # (n, T_in_max, 1)
    ac_out_scale: np.ndarray | None  # (n, m_max, 1)
    region_in_langs: np.ndarray | None  # (n, T_in_max)
    region_out_langs: np.ndarray | None  # (n, m_max)
    pos_idx: np.ndarray  # (n, T)
    add_mask: np.ndarray  # (n, 1, T, T)
    targets: np.ndarray  # (n, T), -1 where ignored
    weights: np.ndarray  # (n, T) per-position loss weights


def batch_assemble(cfg: ARConfig, vocab: Vocabulary, examples: list[TrainExample]) -> BatchedAssembly:
    if not examples:
        raise DataError("empty batch")
    first = examples[0]
    for ex in examples:
        if (ex.task, ex.input_kind, ex.output_kind) != (first.task, first.input_kind, first.output_kind):
            raise DataError("batch must be homogeneous in task and segment kinds")
    n = len(examples)
    in_lens = np.array([len(ex.input_ids) for ex in examples], dtype=np.int64)
    m_lens = np.array([len(ex.output_ids) for ex in examples], dtype=np.int64)
    t_in_max = int(in_lens.max())
    m_max = int(m_lens.max())
    boundary = t_in_max + 1
    total = t_in_max + 2 + m_max
    if total > cfg.max_len:
        raise DataError(f"assembled length {total} exceeds max_len {cfg.max_len}")

    pad_row = vocab.semantic_row(vocab.PAD)
    sem_rows = np.full((n, total), pad_row, dtype=np.int32)
    sem_scale = np.zeros((n, total, 1), dtype=np.float32)
    lang_ids = np.zeros((n, total), dtype=np.int32)
    lang_scale = np.zeros((n, total, 1), dtype=np.float32)
    pos_idx = np.zeros((n, total), dtype=np.int32)
    targets = np.full((n, total), -1, dtype=np.int32)
    weights = np.zeros((n, total), dtype=np.float32)
    allowed = np.zeros((n, total, total), dtype=bool)

    ac_in_codes = ac_in_scale = region_in_langs = None
    ac_out_codes = ac_out_scale = region_out_langs = None
    if first.input_kind == "ac8":
        ac_in_codes = np.zeros((n, t_in_max, N_CODEC_LAYERS), dtype=np.int32)
        ac_in_scale = np.zeros((n, t_in_max, 1), dtype=np.float32)
        region_in_langs = np.zeros((n, t_in_max), dtype=np.int32)
    if first.output_kind == "ac1":
        ac_out_codes = np.zeros((n, m_max), dtype=np.int32)
        ac_out_scale = np.zeros((n, m_max, 1), dtype=np.float32)
        region_out_langs = np.zeros((n, m_max), dtype=np.int32)

    base_allow = prefix_attention_mask(boundary, total)
    for i, ex in enumerate(examples):
        t_in = len(ex.input_ids)
        m = len(ex.output_ids)
        # input segment, columns [0, t_in)
        if ex.input_kind == "sem":
            sem_rows[i, :t_in] = vocab.semantic_rows(np.asarray(ex.input_ids, dtype=np.int64))
            sem_scale[i, :t_in, 0] = 1.0
        else:
            ac_in_codes[i, :t_in] = ex.input_ids
            ac_in_scale[i, :t_in, 0] = 1.0
            region_in_langs[i, :t_in] = ex.lang_in
        lang_ids[i, :t_in] = ex.lang_in
        lang_scale[i, :t_in, 0] = 1.0
        pos_idx[i, :t_in] = np.arange(t_in)
        # task id, column t_in_max, positioned as if appended to the input
        sem_rows[i, t_in_max] = vocab.semantic_row(vocab.tid(ex.task))
        sem_scale[i, t_in_max, 0] = 1.0
        pos_idx[i, t_in_max] = t_in
        # start token
        sem_rows[i, boundary] = vocab.semantic_row(vocab.BOS)
        sem_scale[i, boundary, 0] = 1.0
        lang_ids[i, boundary] = ex.lang_out
        lang_scale[i, boundary, 0] = 1.0
        pos_idx[i, boundary] = 0
        # output segment, columns [boundary + 1, boundary + 1 + m)
        out_col = boundary + 1
        if ex.output_kind == "sem":
            sem_rows[i, out_col : out_col + m] = vocab.semantic_rows(np.asarray(ex.output_ids, dtype=np.int64))
            sem_scale[i, out_col : out_col + m, 0] = 1.0
            target_ids = np.asarray(ex.output_ids, dtype=np.int32)
        else:
            ac_out_codes[i, :m] = ex.output_ids
            ac_out_scale[i, :m, 0] = 1.0
            region_out_langs[i, :m] = ex.lang_out
            target_ids = np.asarray([vocab.acoustic_id(1, int(c)) for c in ex.output_ids], dtype=np.int32)
        lang_ids[i, out_col : out_col + m] = ex.lang_out
        lang_scale[i, out_col : out_col + m, 0] = 1.0
        pos_idx[i, out_col : out_col + m] = np.arange(1, m + 1)
        # targets: position boundary + j predicts output[j], last one end
        targets[i, boundary : boundary + m] = target_ids
        targets[i, boundary + m] = vocab.EOS
        weights[i, boundary : boundary + m + 1] = 1.0 / ((m + 1) * n)
        # attention: prefix rule restricted to this row's real keys
        key_ok = np.zeros(total, dtype=bool)
        key_ok[:t_in] = True
        key_ok[t_in_max : out_col + m] = True
        allowed[i] = base_allow & key_ok[None, :]

    return BatchedAssembly(
        task=first.task,
        input_kind=first.input_kind,
        output_kind=first.output_kind,
        n=n,
        total=total,
        boundary=boundary,
        t_in_max=t_in_max,
        m_max=m_max,
        in_lens=in_lens,
        out_lens=m_lens + 1,
        sem_rows=sem_rows,
        sem_scale=sem_scale,
        lang_ids=lang_ids,
        lang_scale=lang_scale,
        ac_in_codes=ac_in_codes,
        ac_out_codes=ac_out_codes,
        ac_in_scale=ac_in_scale,
        ac_out_scale=ac_out_scale,
        region_in_langs=region_in_langs,
        region_out_langs=region_out_langs,
        pos_idx=pos_idx,
        add_mask=additive_mask(allowed)[:, None, :, :],
        targets=targets,
        weights=weights,
    )


def _lstm_weights(params: ParamSet, cfg: ARConfig) -> list[tuple[Tensor, Tensor, Tensor]]:
    return [(params[f"lstm.{i}.wx"], params[f"lstm.{i}.wh"], params[f"lstm.{i}.b"]) for i in range(cfg.lstm_layers)]


def _acoustic_region(
    params: ParamSet,
    cfg: ARConfig,
    codes: np.ndarray,
    scale: np.ndarray,
    langs: np.ndarray,
    n_input_layers: int | None,
    layer_scale: np.ndarray | None = None,
) -> Tensor:
    """Embed codec codes, run the recurrent pre-net, zero padded rows."""
    if n_input_layers is None:
        emb = ops.embedding(params["emb.ac1"], codes)
    else:
        tables = [params[f"emb.ac{layer}"] for layer in range(1, n_input_layers + 1)]
        emb = ops.acoustic_embed(tables, codes[..., :n_input_layers], reduce="mean", layer_scale=layer_scale)
    if cfg.lang_embed_before_lstm:
        emb = ops.add(emb, ops.embedding(params["emb.lang"], langs))
    if cfg.use_lstm_prenet:
        emb = ops.lstm_stack(emb, _lstm_weights(params, cfg))
    return ops.mul(emb, Tensor(scale))


def forward_batch(
    params: ParamSet, cfg: ARConfig, asm: BatchedAssembly, ac_drop_scale: np.ndarray | None = None
) -> Tensor:
    """Logits (n, T, vocab) for a batched assembly.

    ac_drop_scale, when given, weights each acoustic input layer per frame
    (the train-time dropout mask); decoding always passes None.
    """
    pos_table = sinusoid_table(cfg.max_len, cfg.d_model)
    x = ops.mul(ops.embedding(params["emb.sem"], asm.sem_rows), Tensor(asm.sem_scale))
    lang_scale = asm.lang_scale
    if cfg.lang_embed_before_lstm:
        # acoustic positions receive their language embedding inside the
        # pre-net, so the global language term must skip those columns
        lang_scale = lang_scale.copy()
        if asm.ac_in_scale is not None:
            lang_scale[:, : asm.t_in_max] *= 1.0 - asm.ac_in_scale
        if asm.ac_out_scale is not None:
            lang_scale[:, asm.boundary + 1 :] *= 1.0 - asm.ac_out_scale
    x = ops.add(x, ops.mul(ops.embedding(params["emb.lang"], asm.lang_ids), Tensor(lang_scale)))
    if asm.ac_in_codes is not None:
        region = _acoustic_region(
            params,
            cfg,
            asm.ac_in_codes,
            asm.ac_in_scale,
            asm.region_in_langs,
            cfg.asr_input_layers,
            layer_scale=ac_drop_scale,
        )
        x = ops.add(x, ops.pad_axis1(region, 0, asm.total - asm.t_in_max))
    if asm.ac_out_codes is not None:
        region = _acoustic_region(params, cfg, asm.ac_out_codes, asm.ac_out_scale, asm.region_out_langs, None)
        x = ops.add(x, ops.pad_axis1(region, asm.boundary + 1, 0))
    x = ops.add(x, Tensor(pos_table[asm.pos_idx]))
    for i in range(cfg.n_layers):
        x = block_forward(params, f"block{i}", x, cfg.n_heads, asm.add_mask)
    x = final_norm(params, x)
    return ops.add(ops.matmul(x, params["head.w"]), params["head.b"])


def batch_loss(params: ParamSet, cfg: ARConfig, vocab: Vocabulary, examples: list[TrainExample]) -> Tensor:
    """Mean over examples of per-example token-mean negative log likelihood."""
    asm = batch_assemble(cfg, vocab, examples)
    logits = forward_batch(params, cfg, asm)
    flat = ops.reshape(logits, (asm.n * asm.total, vocab.size))
    targets = asm.targets.reshape(-1)
    ignore = targets < 0
    return ops.softmax_cross_entropy(
        flat, np.where(ignore, 0, targets), ignore_mask=ignore, weights=asm.weights.reshape(-1)
    )


def example_from_parts(
    task: str,
    lang_in: int,
    lang_out: int,
    input_kind: str,
    input_ids: np.ndarray,
    output_kind: str,
    output_ids: np.ndarray,
) -> TrainExample:
    return TrainExample(task, lang_in, lang_out, input_kind, np.asarray(input_ids), output_kind, np.asarray(output_ids))
