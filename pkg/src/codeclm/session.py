"""Incremental decoding sessions with per-layer key/value caches.

The math here is written directly in numpy, separately from the training
engine, so the two paths cross-check each other: a full teacher-forced
forward and an incremental session must agree on every logit to float32
tolerance. Sessions carry attention caches, the recurrent pre-net state for
acoustic outputs, and support row reordering for beam search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model_ar import ARConfig
from .transformer import NEG_INF, prefix_attention_mask, sinusoid_table
from .vocab import N_CODEC_LAYERS, Vocabulary

_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)


def _ln(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return (xc / np.sqrt(var + eps)) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    denom = exps.sum(axis=-1, keepdims=True, dtype=np.float64)
    return (exps / denom).astype(np.float32)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, t, d = x.shape
    dh = d // n_heads
    return x.reshape(n, t, n_heads, dh).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    n, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, h * dh)


@dataclass
class PrefixSpec:
    """Conditioning side of one decode row: input segment, task, languages."""

    task: str
    lang_in: int
    lang_out: int
    input_kind: str  # sem | ac8
    input_ids: np.ndarray


class DecoderSession:
    """Stateful incremental decoder over a primed conditioning prefix."""

    def __init__(self, params, cfg: ARConfig, vocab: Vocabulary):
        # accepts the training ParamSet or a plain name -> array mapping
        tensors = getattr(params, "tensors", params)
        self.w = {name: np.asarray(getattr(t, "data", t), dtype=np.float32) for name, t in tensors.items()}
        self.cfg = cfg
        self.vocab = vocab
        self.pos_table = sinusoid_table(cfg.max_len, cfg.d_model)
        self.n_rows = 0
        self.out_len = 0
        self.k_cache: list[np.ndarray] = []
        self.v_cache: list[np.ndarray] = []
        self.key_valid: np.ndarray | None = None
        self.lstm_h: np.ndarray | None = None
        self.lstm_c: np.ndarray | None = None
        self.lang_out: np.ndarray | None = None

    # -- shared pieces -----------------------------------------------------

    def _lstm_stack_full(self, x: np.ndarray) -> np.ndarray:
        """Run the pre-net over a whole segment (priming only)."""
        d = self.cfg.d_model
        for i in range(self.cfg.lstm_layers):
            wx, wh, b = self.w[f"lstm.{i}.wx"], self.w[f"lstm.{i}.wh"], self.w[f"lstm.{i}.b"]
            n, t, _ = x.shape
            h = np.zeros((n, d), dtype=np.float32)
            c = np.zeros((n, d), dtype=np.float32)
            outs = np.empty((n, t, d), dtype=np.float32)
            xw = x @ wx + b
            for step in range(t):
                z = xw[:, step] + h @ wh
                ig = _sigmoid(z[:, :d])
                fg = _sigmoid(z[:, d : 2 * d])
                gg = np.tanh(z[:, 2 * d : 3 * d])
                og = _sigmoid(z[:, 3 * d :])
                c = fg * c + ig * gg
                h = og * np.tanh(c)
                outs[:, step] = h
            x = outs
        return x

    def _lstm_step(self, x: np.ndarray) -> np.ndarray:
        """Advance the pre-net state one step; x is (n, d_model)."""
        d = self.cfg.d_model
        for i in range(self.cfg.lstm_layers):
            wx, wh, b = self.w[f"lstm.{i}.wx"], self.w[f"lstm.{i}.wh"], self.w[f"lstm.{i}.b"]
            z = x @ wx + b + self.lstm_h[i] @ wh
            ig = _sigmoid(z[:, :d])
            fg = _sigmoid(z[:, d : 2 * d])
            gg = np.tanh(z[:, 2 * d : 3 * d])
            og = _sigmoid(z[:, 3 * d :])
            self.lstm_c[i] = fg * self.lstm_c[i] + ig * gg
            self.lstm_h[i] = og * np.tanh(self.lstm_c[i])
            x = self.lstm_h[i]
        return x

    def _block_prime(self, i: int, x: np.ndarray, add_mask: np.ndarray) -> np.ndarray:
        w = self.w
        p = f"block{i}"
        h = _ln(x, w[f"{p}.ln1.gain"], w[f"{p}.ln1.bias"])
        q = _split_heads(h @ w[f"{p}.attn.wq"] + w[f"{p}.attn.bq"], self.cfg.n_heads)
        k = _split_heads(h @ w[f"{p}.attn.wk"] + w[f"{p}.attn.bk"], self.cfg.n_heads)
        v = _split_heads(h @ w[f"{p}.attn.wv"] + w[f"{p}.attn.bv"], self.cfg.n_heads)
        self.k_cache[i] = k
        self.v_cache[i] = v
        dh = self.cfg.d_model // self.cfg.n_heads
        scores = (q @ k.transpose(0, 1, 3, 2)) / np.float32(np.sqrt(dh)) + add_mask[:, None]
        attn = _merge_heads(_softmax_rows(scores) @ v)
        x = x + (attn @ w[f"{p}.attn.wo"] + w[f"{p}.attn.bo"])
        h = _ln(x, w[f"{p}.ln2.gain"], w[f"{p}.ln2.bias"])
        h = _gelu(h @ w[f"{p}.ffn.w1"] + w[f"{p}.ffn.b1"]) @ w[f"{p}.ffn.w2"] + w[f"{p}.ffn.b2"]
        return x + h

    def _block_step(self, i: int, x: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
        """x is (n, 1, d); attends to cached keys plus itself."""
        w = self.w
        p = f"block{i}"
        h = _ln(x, w[f"{p}.ln1.gain"], w[f"{p}.ln1.bias"])
        q = _split_heads(h @ w[f"{p}.attn.wq"] + w[f"{p}.attn.bq"], self.cfg.n_heads)
        k = _split_heads(h @ w[f"{p}.attn.wk"] + w[f"{p}.attn.bk"], self.cfg.n_heads)
        v = _split_heads(h @ w[f"{p}.attn.wv"] + w[f"{p}.attn.bv"], self.cfg.n_heads)
        self.k_cache[i] = np.concatenate([self.k_cache[i], k], axis=2)
        self.v_cache[i] = np.concatenate([self.v_cache[i], v], axis=2)
        dh = self.cfg.d_model // self.cfg.n_heads
        scores = (q @ self.k_cache[i].transpose(0, 1, 3, 2)) / np.float32(np.sqrt(dh))
        scores = scores + np.where(key_mask, 0.0, NEG_INF).astype(np.float32)[:, None, None, :]
        attn = _merge_heads(_softmax_rows(scores) @ self.v_cache[i])
        x = x + (attn @ w[f"{p}.attn.wo"] + w[f"{p}.attn.bo"])
        h = _ln(x, w[f"{p}.ln2.gain"], w[f"{p}.ln2.bias"])
        h = _gelu(h @ w[f"{p}.ffn.w1"] + w[f"{p}.ffn.b1"]) @ w[f"{p}.ffn.w2"] + w[f"{p}.ffn.b2"]
        return x + h

    def _head(self, x: np.ndarray) -> np.ndarray:
        x = _ln(x, self.w["final_ln.gain"], self.w["final_ln.bias"])
        return x @ self.w["head.w"] + self.w["head.b"]

    # -- public API ----------------------------------------------------------

    def prime(self, prefixes: list[PrefixSpec]) -> np.ndarray:
        """Encode conditioning prefixes; returns first-step logits (n, vocab)."""
        if not prefixes:
            raise DataError("no prefixes to prime")
        cfg, vocab, w = self.cfg, self.vocab, self.w
        kinds = {p.input_kind for p in prefixes}
        if len(kinds) != 1:
            raise DataError("prefixes must share an input kind")
        kind = kinds.pop()
        n = len(prefixes)
        in_lens = np.array([len(p.input_ids) for p in prefixes], dtype=np.int64)
        t_in_max = int(in_lens.max())
        total = t_in_max + 2
        boundary = t_in_max + 1
        if total > cfg.max_len:
            raise DataError("prefix exceeds max_len")

        x = np.zeros((n, total, cfg.d_model), dtype=np.float32)
        pos_idx = np.zeros((n, total), dtype=np.int32)
        key_valid = np.zeros((n, total), dtype=bool)
        self.lang_out = np.array([p.lang_out for p in prefixes], dtype=np.int32)

        if kind == "ac8":
            codes = np.zeros((n, t_in_max, N_CODEC_LAYERS), dtype=np.int32)
            scale = np.zeros((n, t_in_max, 1), dtype=np.float32)
            for i, p in enumerate(prefixes):
                codes[i, : in_lens[i]] = p.input_ids
                scale[i, : in_lens[i], 0] = 1.0
            tabs = [w[f"emb.ac{layer}"] for layer in range(1, cfg.asr_input_layers + 1)]
            emb = np.mean([tab[codes[..., i]] for i, tab in enumerate(tabs)], axis=0).astype(np.float32)
            if cfg.lang_embed_before_lstm:
                emb = emb + w["emb.lang"][np.array([p.lang_in for p in prefixes])][:, None, :]
            if cfg.use_lstm_prenet:
                emb = self._lstm_stack_full(emb)
            x[:, :t_in_max] += emb * scale
            if not cfg.lang_embed_before_lstm:
                for i, p in enumerate(prefixes):
                    x[i, : in_lens[i]] += w["emb.lang"][p.lang_in]
        else:
            for i, p in enumerate(prefixes):
                rows = vocab.semantic_rows(np.asarray(p.input_ids, dtype=np.int64))
                x[i, : in_lens[i]] = w["emb.sem"][rows] + w["emb.lang"][p.lang_in]

        for i, p in enumerate(prefixes):
            t_in = int(in_lens[i])
            pos_idx[i, :t_in] = np.arange(t_in)
            key_valid[i, :t_in] = True
            x[i, t_in_max] = w["emb.sem"][vocab.semantic_row(vocab.tid(p.task))]
            pos_idx[i, t_in_max] = t_in
            x[i, boundary] = w["emb.sem"][vocab.semantic_row(vocab.BOS)] + w["emb.lang"][p.lang_out]
            pos_idx[i, boundary] = 0
        key_valid[:, t_in_max:] = True
        x += self.pos_table[pos_idx]

        allowed = prefix_attention_mask(boundary, total)[None] & key_valid[:, None, :]
        add_mask = np.where(allowed, 0.0, NEG_INF).astype(np.float32)

        self.k_cache = [None] * cfg.n_layers
        self.v_cache = [None] * cfg.n_layers
        for i in range(cfg.n_layers):
            x = self._block_prime(i, x, add_mask)
        self.key_valid = key_valid
        self.n_rows = n
        self.out_len = 0
        d = cfg.d_model
        self.lstm_h = np.zeros((cfg.lstm_layers, n, d), dtype=np.float32)
        self.lstm_c = np.zeros((cfg.lstm_layers, n, d), dtype=np.float32)
        return self._head(x[:, boundary])

    def advance(self, tokens: np.ndarray, kind: str) -> np.ndarray:
        """Feed one chosen token per row; returns next-step logits (n, vocab).

        kind "sem" expects vocabulary ids, "ac1" expects layer-1 codec codes.
        """
        if self.key_valid is None:
            raise DataError("advance before prime")
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.shape != (self.n_rows,):
            raise DataError(f"expected {self.n_rows} tokens, got {tokens.shape}")
        w, vocab = self.w, self.vocab
        if kind == "sem":
            rows = vocab.semantic_rows(tokens)
            emb = w["emb.sem"][rows] + w["emb.lang"][self.lang_out]
        elif kind == "ac1":
            emb = w["emb.ac1"][tokens]
            if self.cfg.lang_embed_before_lstm:
                emb = emb + w["emb.lang"][self.lang_out]
            if self.cfg.use_lstm_prenet:
                emb = self._lstm_step(emb)
            if not self.cfg.lang_embed_before_lstm:
                emb = emb + w["emb.lang"][self.lang_out]
        else:
            raise DataError(f"unknown token kind {kind!r}")
        if self.out_len + 1 >= len(self.pos_table):
            raise DataError("output length exceeds the model's position capacity")
        self.out_len += 1
        x = (emb + self.pos_table[self.out_len])[:, None, :]
        key_mask = np.concatenate([self.key_valid, np.ones((self.n_rows, 1), dtype=bool)], axis=1)
        for i in range(self.cfg.n_layers):
            x = self._block_step(i, x, key_mask)
        self.key_valid = key_mask
        return self._head(x[:, 0])

    def reorder(self, parent: np.ndarray) -> None:
        """Rearrange rows so row i continues from old row parent[i]."""
        parent = np.asarray(parent, dtype=np.int64)
        if parent.ndim != 1 or parent.min() < 0 or parent.max() >= self.n_rows:
            raise DataError("bad parent indices")
        for i in range(self.cfg.n_layers):
            self.k_cache[i] = self.k_cache[i][parent]
            self.v_cache[i] = self.v_cache[i][parent]
        self.key_valid = self.key_valid[parent]
        self.lstm_h = self.lstm_h[:, parent]
        self.lstm_c = self.lstm_c[:, parent]
        self.lang_out = self.lang_out[parent]
        self.n_rows = len(parent)
