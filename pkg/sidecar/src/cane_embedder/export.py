"""Batch-encode a corpus and write the CANEEMB1 container atomically.

CANEEMB1 layout, little-endian:

    bytes 0-7   ASCII magic "CANEEMB1"
    u32         dim
    u64         count
    records     count x [u16 id_len][id bytes, UTF-8][dim x f32]

Records sorted ascending by id bytes; every vector unit L2 norm. The write
goes through a temp file in the destination directory plus an atomic rename,
so a crashed or failed export never leaves a torn file for the consumer.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import DEFAULT_MODEL, load_encoder
from .posts import read_post_texts

logger = logging.getLogger(__name__)

MAGIC = b"CANEEMB1"


@dataclass(frozen=True)
class SidecarConfig:
    posts: Path
    out: Path
    model: str = DEFAULT_MODEL
    batch: int = 64
    device: str = "cpu"

    def __post_init__(self):
        object.__setattr__(self, "posts", Path(self.posts))
        object.__setattr__(self, "out", Path(self.out))
        if self.batch < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch}")


@dataclass(frozen=True)
class ExportSummary:
    path: Path
    count: int
    dim: int
    model: str


def _encode_sorted(posts, encoder, batch: int) -> np.ndarray:
    """Vectors for posts (already sorted), batched, with per-batch progress."""
    n = len(posts)
    n_batches = (n + batch - 1) // batch
    parts = []
    for b in range(n_batches):
        chunk = posts[b * batch:(b + 1) * batch]
        vecs = encoder.encode([p.text for p in chunk])
        if vecs.ndim != 2 or vecs.shape[1] != encoder.dim:
            raise RuntimeError(
                f"encoder returned shape {vecs.shape}, expected (*, {encoder.dim})")
        if vecs.shape[0] != len(chunk):
            raise RuntimeError(
                f"post count mismatch in batch {b + 1}: {len(chunk)} texts in, "
                f"{vecs.shape[0]} vectors out")
        parts.append(vecs)
        logger.info("batch %d/%d: %d posts encoded", b + 1, n_batches, len(chunk))
    out = np.vstack(parts)
    if out.shape[0] != n:  # belt and braces before anything touches disk
        raise RuntimeError(f"post count mismatch: {n} posts, {out.shape[0]} vectors")
    return out


def _unit_rows(vecs: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise RuntimeError(f"{bad.size} zero vector(s) cannot be unit-normalized "
                           f"(first at row {bad[0]})")
    return (vecs / norms[:, None].astype(np.float32)).astype(np.float32)


def _container_bytes(ids: list[str], vecs: np.ndarray) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", vecs.shape[1])
    out += struct.pack("<Q", len(ids))
    for pid, row in zip(ids, vecs):
        raw = pid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"post id longer than 65535 bytes: {pid[:40]}...")
        out += struct.pack("<H", len(raw))
        out += raw
        out += row.tobytes()
    return bytes(out)


def export_real_embeddings(config: SidecarConfig) -> ExportSummary:
    """Encode every post and write the container; see the module docstring."""
    posts = read_post_texts(config.posts)  # any corrupt line aborts here
    # UTF-8 byte order == code point order, so plain str sort gives id-bytes order
    posts = sorted(posts, key=lambda p: p.post_id)
    encoder = load_encoder(config.model, config.device)
    logger.info("encoding %d posts with %s (dim %d, batch %d)",
                len(posts), encoder.model_id, encoder.dim, config.batch)
    vecs = _unit_rows(_encode_sorted(posts, encoder, config.batch))
    payload = _container_bytes([p.post_id for p in posts], vecs)

    config.out.parent.mkdir(parents=True, exist_ok=True)
    tmp = config.out.with_name(f"{config.out.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, config.out)
    finally:
        tmp.unlink(missing_ok=True)
    logger.info("wrote %s: %d vectors, dim %d", config.out, len(posts), encoder.dim)
    return ExportSummary(path=config.out, count=len(posts), dim=encoder.dim,
                         model=encoder.model_id)
