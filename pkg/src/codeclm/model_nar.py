"""Non-autoregressive codec model filling acoustic layers 2 to 8.

Given semantic tokens, an acoustic prompt carrying all 8 layers, and the
target's layers below l, the model predicts layer l for every target frame
in one bidirectional pass. A layer-index embedding tells the network which
layer it is producing, known acoustic layers enter as summed embeddings
through the same style of recurrent pre-net as the autoregressive model,
and each layer has its own output head over the codebook.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

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
    sinusoid_table,
)
from .vocab import N_CODEC_LAYERS, Vocabulary


@dataclass
class NARConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ffn: int = 512
    lstm_layers: int = 3
    k: int = 64
    n_phonemes: int = 40
    max_len: int = 512
    use_lstm_prenet: bool = True
    shared_phonemes: bool = False

    def validate(self) -> None:
        if self.d_model % (2 * self.n_heads) != 0:
            raise DataError("d_model must be divisible by 2 * n_heads")

    def to_dict(self) -> dict[str, str]:
        d = {"arch": "nar"}
        d.update({f.name: str(getattr(self, f.name)) for f in fields(self)})
        return d


def nar_config_from_dict(d: dict[str, str]) -> NARConfig:
    kwargs = {}
    for f in fields(NARConfig):
        if f.name not in d:
            continue
        raw = d[f.name]
        kwargs[f.name] = raw in ("True", "true", "1") if isinstance(f.default, bool) else int(raw)
    return NARConfig(**kwargs)


def build_nar_vocab(cfg: NARConfig) -> Vocabulary:
    return Vocabulary(n_phonemes=cfg.n_phonemes, k=cfg.k, shared_phonemes=cfg.shared_phonemes)


def init_nar_params(cfg: NARConfig, seed: int) -> ParamSet:
    cfg.validate()
    vocab = build_nar_vocab(cfg)
    rng = derive_rng(seed, "init-nar")
    params = ParamSet(rng)
    d = cfg.d_model
    params.add("emb.sem", (vocab.n_semantic, d), fan_in=d)
    params.add("emb.layer", (N_CODEC_LAYERS, d), fan_in=d)
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
    for layer in range(2, N_CODEC_LAYERS + 1):
        params.add(f"head{layer}.w", (d, cfg.k), fan_in=d)
        params.add(f"head{layer}.b", (cfg.k,), zeros=True)
    return params


@dataclass
class NARExample:
    """One utterance: semantic ids plus its full 8-layer token matrix."""

    sem_ids: np.ndarray  # (S,) vocabulary ids
    tokens: np.ndarray  # (T, 8) codec codes

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[1] != N_CODEC_LAYERS:
            raise DataError("tokens must be (T, 8)")
        if len(self.sem_ids) == 0 or len(self.tokens) == 0:
            raise DataError("empty example")


@dataclass
class NARBatch:
    layer: int
    n: int
    s_max: int
    a_max: int
    sem_rows: np.ndarray  # (n, s_max)
    sem_scale: np.ndarray  # (n, s_max, 1)
    ac_codes: np.ndarray  # (n, a_max, 8)
    ac_avail: np.ndarray  # (n, a_max, 8) float 0/1: which layers are inputs
    ac_scale: np.ndarray  # (n, a_max, 1) real acoustic positions
    pos_idx: np.ndarray  # (n, s_max + a_max)
    add_mask: np.ndarray  # (n, 1, T, T)
    targets: np.ndarray  # (n, a_max), -1 outside the predicted region
    weights: np.ndarray  # (n, a_max)


def nar_assemble(
    cfg: NARConfig,
    vocab: Vocabulary,
    examples: list[NARExample],
    layer: int,
    prompt_lens: list[int],
) -> NARBatch:
    """Pad a batch; prompt frames expose all 8 layers, targets layers < `layer`."""
    if not 2 <= layer <= N_CODEC_LAYERS:
        raise DataError(f"layer {layer} outside [2, {N_CODEC_LAYERS}]")
    if len(prompt_lens) != len(examples):
        raise DataError("one prompt length per example required")
    n = len(examples)
    s_lens = [len(ex.sem_ids) for ex in examples]
    a_lens = [len(ex.tokens) for ex in examples]
    s_max, a_max = max(s_lens), max(a_lens)
    total = s_max + a_max
    if total > cfg.max_len:
        raise DataError(f"assembled length {total} exceeds max_len {cfg.max_len}")
    pad_row = vocab.semantic_row(vocab.PAD)
    sem_rows = np.full((n, s_max), pad_row, dtype=np.int32)
    sem_scale = np.zeros((n, s_max, 1), dtype=np.float32)
    ac_codes = np.zeros((n, a_max, N_CODEC_LAYERS), dtype=np.int32)
    ac_avail = np.zeros((n, a_max, N_CODEC_LAYERS), dtype=np.float32)
    ac_scale = np.zeros((n, a_max, 1), dtype=np.float32)
    pos_idx = np.zeros((n, total), dtype=np.int32)
    targets = np.full((n, a_max), -1, dtype=np.int32)
    weights = np.zeros((n, a_max), dtype=np.float32)
    key_ok = np.zeros((n, total), dtype=bool)
    for i, ex in enumerate(examples):
        s, a, p = s_lens[i], a_lens[i], prompt_lens[i]
        if not 0 <= p < a:
            raise DataError("prompt must be a strict prefix of the token matrix")
        sem_rows[i, :s] = vocab.semantic_rows(np.asarray(ex.sem_ids, dtype=np.int64))
        sem_scale[i, :s, 0] = 1.0
        ac_codes[i, :a] = ex.tokens
        ac_scale[i, :a, 0] = 1.0
        ac_avail[i, :p, :] = 1.0  # prompt: all layers known
        ac_avail[i, p:a, : layer - 1] = 1.0  # target: layers below l
        pos_idx[i, :s] = np.arange(s)
        pos_idx[i, s_max : s_max + a] = np.arange(a)
        key_ok[i, :s] = True
        key_ok[i, s_max : s_max + a] = True
        targets[i, p:a] = ex.tokens[p:, layer - 1]
        weights[i, p:a] = 1.0 / ((a - p) * n)
    allowed = key_ok[:, None, :] & np.ones((n, total, 1), dtype=bool)
    return NARBatch(
        layer=layer,
        n=n,
        s_max=s_max,
        a_max=a_max,
        sem_rows=sem_rows,
        sem_scale=sem_scale,
        ac_codes=ac_codes,
        ac_avail=ac_avail,
        ac_scale=ac_scale,
        pos_idx=pos_idx,
        add_mask=additive_mask(allowed)[:, None, :, :],
        targets=targets,
        weights=weights,
    )


def nar_forward_batch(params: ParamSet, cfg: NARConfig, batch: NARBatch) -> Tensor:
    """Logits (n, a_max, K) for the batch's layer."""
    pos_table = sinusoid_table(cfg.max_len, cfg.d_model)
    sem = ops.mul(ops.embedding(params["emb.sem"], batch.sem_rows), Tensor(batch.sem_scale))
    ac = None
    for layer in range(1, N_CODEC_LAYERS + 1):
        contrib = ops.mul(
            ops.embedding(params[f"emb.ac{layer}"], batch.ac_codes[:, :, layer - 1]),
            Tensor(batch.ac_avail[:, :, layer - 1 : layer]),
        )
        ac = contrib if ac is None else ops.add(ac, contrib)
    if cfg.use_lstm_prenet:
        weights = [(params[f"lstm.{i}.wx"], params[f"lstm.{i}.wh"], params[f"lstm.{i}.b"]) for i in range(cfg.lstm_layers)]
        ac = ops.lstm_stack(ac, weights)
    ac = ops.mul(ac, Tensor(batch.ac_scale))
    x = ops.add(ops.pad_axis1(sem, 0, batch.a_max), ops.pad_axis1(ac, batch.s_max, 0))
    x = ops.add(x, Tensor(pos_table[batch.pos_idx]))
    layer_vec = np.zeros((batch.n, batch.s_max + batch.a_max), dtype=np.int32) + (batch.layer - 1)
    x = ops.add(x, ops.embedding(params["emb.layer"], layer_vec))
    for i in range(cfg.n_layers):
        x = block_forward(params, f"block{i}", x, cfg.n_heads, batch.add_mask)
    x = final_norm(params, x)
    x = ops.slice_axis1(x, batch.s_max, batch.s_max + batch.a_max)
    return ops.add(ops.matmul(x, params[f"head{batch.layer}.w"]), params[f"head{batch.layer}.b"])


def nar_batch_loss(params: ParamSet, cfg: NARConfig, vocab: Vocabulary, batch: NARBatch) -> Tensor:
    logits = nar_forward_batch(params, cfg, batch)
    flat = ops.reshape(logits, (batch.n * batch.a_max, cfg.k))
    targets = batch.targets.reshape(-1)
    ignore = targets < 0
    return ops.softmax_cross_entropy(
        flat, np.where(ignore, 0, targets), ignore_mask=ignore, weights=batch.weights.reshape(-1)
    )


def nar_forward(
    params: ParamSet,
    cfg: NARConfig,
    vocab: Vocabulary,
    sem_ids: np.ndarray,
    prompt: np.ndarray | None,
    partial: np.ndarray,
    layer: int,
) -> np.ndarray:
    """Logits (T, K) for one utterance's layer `layer`.

    partial holds the target's layers 1..layer-1 as a (T, layer-1) matrix;
    prompt, when given, is a full (P, 8) matrix prepended to the target.
    """
    if not 2 <= layer <= N_CODEC_LAYERS:
        raise DataError(f"layer {layer} outside [2, {N_CODEC_LAYERS}]")
    partial = np.asarray(partial)
    if partial.ndim != 2 or partial.shape[1] != layer - 1:
        raise DataError(f"partial must have exactly {layer - 1} columns")
    t = partial.shape[0]
    padded = np.zeros((t, N_CODEC_LAYERS), dtype=np.int64)
    padded[:, : layer - 1] = partial
    if prompt is not None and len(prompt):
        tokens = np.concatenate([np.asarray(prompt, dtype=np.int64), padded])
        p_len = len(prompt)
    else:
        tokens = padded
        p_len = 0
    ex = NARExample(sem_ids=np.asarray(sem_ids), tokens=tokens)
    batch = nar_assemble(cfg, vocab, [ex], layer, [p_len])
    # targets in the assembly come from the zero-filled layer column; the
    # caller only wants logits, so they are ignored here
    from .engine import no_grad

    with no_grad():
        logits = nar_forward_batch(params, cfg, batch)
    return logits.data[0, p_len:]


def nar_generate(
    params: ParamSet,
    cfg: NARConfig,
    vocab: Vocabulary,
    sem_ids: np.ndarray,
    prompt: np.ndarray | None,
    layer1: np.ndarray,
    forward_counter: list | None = None,
) -> np.ndarray:
    """Greedy per-layer completion: (T, 8) matrix with layer 1 passed through."""
    layer1 = np.asarray(layer1, dtype=np.int64)
    if layer1.ndim != 1 or len(layer1) == 0:
        raise DataError("layer1 must be a nonempty vector")
    partial = layer1[:, None]
    for layer in range(2, N_CODEC_LAYERS + 1):
        logits = nar_forward(params, cfg, vocab, sem_ids, prompt, partial, layer)
        if forward_counter is not None:
            forward_counter.append(layer)
        nxt = logits.argmax(axis=1)
        partial = np.concatenate([partial, nxt[:, None]], axis=1)
    return partial.astype(np.uint16)
