"""Binary checkpoints: named float32 arrays plus a config fingerprint.

The fingerprint is a digest of the canonical config so a checkpoint never
silently loads into a mismatched architecture. Optimizer moments are stored
as ordinary arrays under reserved name prefixes, which makes resume exact.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import DataError

MAGIC = b"VLCK1"
OPT_M_PREFIX = "opt.m."
OPT_V_PREFIX = "opt.v."


def config_digest(config: dict[str, str]) -> str:
    canonical = "\n".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(path, arrays: dict[str, np.ndarray], step: int, config: dict[str, str]) -> None:
    digest = config_digest(config).encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", len(digest)))
        f.write(digest)
        f.write(struct.pack("<QI", step, len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
            ident = name.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f4").tobytes())


def load_checkpoint(path, config: dict[str, str] | None = None) -> tuple[dict[str, np.ndarray], int, str]:
    """Returns (arrays, step, digest); checks digest when config is given."""

    def read_exact(f, n: int) -> bytes:
        raw = f.read(n)
        if len(raw) != n:
            raise DataError(f"{path}: truncated checkpoint")
        return raw

    with open(path, "rb") as f:
        if read_exact(f, 5) != MAGIC:
            raise DataError(f"{path}: bad checkpoint magic")
        (digest_len,) = struct.unpack("<H", read_exact(f, 2))
        digest = read_exact(f, digest_len).decode("ascii")
        step, n_arrays = struct.unpack("<QI", read_exact(f, 12))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", read_exact(f, 2))
            name = read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", read_exact(f, 1))
            shape = tuple(struct.unpack("<I", read_exact(f, 4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(read_exact(f, count * 4), dtype="<f4").reshape(shape).copy()
    if config is not None:
        expected = config_digest(config)
        if digest != expected:
            raise DataError(f"{path}: checkpoint config digest {digest[:12]} does not match model {expected[:12]}")
    return arrays, step, digest


def split_arrays(arrays: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Separate model parameters from optimizer-state arrays."""
    model = {k: v for k, v in arrays.items() if not k.startswith((OPT_M_PREFIX, OPT_V_PREFIX))}
    opt = {k: v for k, v in arrays.items() if k.startswith((OPT_M_PREFIX, OPT_V_PREFIX))}
    return model, opt
