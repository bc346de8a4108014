"""Residual vector quantizer standing in for an offline neural codec.

Frame-feature sequences (T x F float32) are quantized greedily through 8
codebooks: each layer picks the nearest codeword (Euclidean, lowest index on
ties) to the running residual and subtracts it. Decoding sums the selected
codewords of the first `layers` layers. Codebooks are trained offline with
k-means (fixed 20 Lloyd iterations, empty clusters re-seeded from the point
farthest from its centroid) and are immutable afterwards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .seeding import derive_rng

N_LAYERS = 8
CODEBOOK_MAGIC = b"VLCB1"


@dataclass
class Codebooks:
    tables: np.ndarray  # (n_layers, K, F) float32
    seed: int
    iterations: int

    @property
    def k(self) -> int:
        return self.tables.shape[1]

    @property
    def dim(self) -> int:
        return self.tables.shape[2]

    @property
    def n_layers(self) -> int:
        return self.tables.shape[0]


def _nearest(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center per point; ties go to the lowest index."""
    # |p - c|^2 = |p|^2 - 2 p.c + |c|^2; the |p|^2 term is constant per row.
    d = -2.0 * (points @ centers.T) + (centers * centers).sum(axis=1)[None, :]
    return np.argmin(d, axis=1)


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iterations: int) -> np.ndarray:
    n = points.shape[0]
    centers = points[rng.choice(n, size=k, replace=False)].copy()
    for _ in range(iterations):
        assign = _nearest(points, centers)
        dist = ((points - centers[assign]) ** 2).sum(axis=1)
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = points[members].mean(axis=0, dtype=np.float64).astype(points.dtype)
            else:
                far = int(np.argmax(dist))
                centers[c] = points[far]
                dist[far] = 0.0
    return centers


def train_codebooks(
    corpus_frames: list[np.ndarray], k: int, seed: int, iterations: int = 20, n_layers: int = N_LAYERS
) -> Codebooks:
    """Layer-wise k-means on residuals. Frames are (T_i, F) float arrays."""
    points = np.concatenate([np.asarray(f, dtype=np.float32) for f in corpus_frames], axis=0)
    if points.shape[0] < k:
        raise DataError(f"need at least K={k} frames, got {points.shape[0]}")
    residual = points.copy()
    tables = np.empty((n_layers, k, points.shape[1]), dtype=np.float32)
    for layer in range(n_layers):
        rng = derive_rng(seed, "codec-layer", layer)
        centers = _kmeans(residual, k, rng, iterations)
        tables[layer] = centers
        residual = residual - centers[_nearest(residual, centers)]
    return Codebooks(tables=tables, seed=seed, iterations=iterations)


def encode(frames: np.ndarray, cb: Codebooks) -> np.ndarray:
    """Greedy residual quantization -> (T, n_layers) integer token matrix."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[1] != cb.dim:
        raise DataError(f"frames must be (T, {cb.dim}), got {frames.shape}")
    residual = frames.copy()
    tokens = np.empty((frames.shape[0], cb.n_layers), dtype=np.uint16)
    for layer in range(cb.n_layers):
        idx = _nearest(residual, cb.tables[layer])
        tokens[:, layer] = idx
        residual -= cb.tables[layer][idx]
    return tokens


def decode(tokens: np.ndarray, cb: Codebooks, layers: int = N_LAYERS) -> np.ndarray:
    """Sum the selected codewords of the first `layers` layers."""
    tokens = np.asarray(tokens)
    if not 1 <= layers <= cb.n_layers:
        raise DataError(f"layers must be in [1, {cb.n_layers}]")
    if tokens.ndim != 2 or tokens.shape[1] != cb.n_layers:
        raise DataError(f"tokens must be (T, {cb.n_layers}), got {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cb.k):
        raise DataError("token index out of range")
    out = np.zeros((tokens.shape[0], cb.dim), dtype=np.float32)
    for layer in range(layers):
        out += cb.tables[layer][tokens[:, layer]]
    return out


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def save_codebooks(cb: Codebooks, path) -> None:
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        f.write(struct.pack("<IIIqI", cb.k, cb.dim, cb.n_layers, cb.seed, cb.iterations))
        f.write(cb.tables.astype("<f4").tobytes())


def load_codebooks(path) -> Codebooks:
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != CODEBOOK_MAGIC:
            raise DataError(f"{path}: bad codebook magic {magic!r}")
        k, dim, n_layers, seed, iterations = struct.unpack("<IIIqI", f.read(24))
        raw = f.read(n_layers * k * dim * 4)
        if len(raw) != n_layers * k * dim * 4:
            raise DataError(f"{path}: truncated codebook file")
        tables = np.frombuffer(raw, dtype="<f4").reshape(n_layers, k, dim).copy()
    return Codebooks(tables=tables, seed=seed, iterations=iterations)


def write_token_file(path, utterances: list[tuple[str, np.ndarray]]) -> dict[str, int]:
    """One record per utterance: id, T_A, then T_A x 8 uint16 little-endian.

    Returns id -> byte offset for the manifest.
    """
    offsets = {}
    with open(path, "wb") as f:
        for utt_id, tokens in utterances:
            tokens = np.asarray(tokens, dtype=np.uint16)
            if tokens.ndim != 2 or tokens.shape[1] != N_LAYERS:
                raise DataError(f"{utt_id}: token matrix must be (T, {N_LAYERS})")
            offsets[utt_id] = f.tell()
            ident = utt_id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<I", tokens.shape[0]))
            f.write(tokens.astype("<u2").tobytes())
    return offsets


def read_token_record(path, offset: int) -> tuple[str, np.ndarray]:
    with open(path, "rb") as f:
        f.seek(offset)
        (id_len,) = struct.unpack("<H", f.read(2))
        utt_id = f.read(id_len).decode("utf-8")
        (t_a,) = struct.unpack("<I", f.read(4))
        raw = f.read(t_a * N_LAYERS * 2)
        if len(raw) != t_a * N_LAYERS * 2:
            raise DataError(f"{path}: truncated token record at {offset}")
        tokens = np.frombuffer(raw, dtype="<u2").reshape(t_a, N_LAYERS).copy()
    return utt_id, tokens
