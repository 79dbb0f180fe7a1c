"""Binary embedding container (CANEEMB1), loading/validation, and a toy embedder.

CANEEMB1 layout, little-endian:
    bytes 0-7   ASCII magic "CANEEMB1"
    u32         dim
    u64         count
    records     count x [u16 id_len][id bytes, UTF-8][dim x f32]
Records are sorted ascending by id bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import stable_hash64
from .corpus import PostCollection

MAGIC = b"CANEEMB1"


@dataclass
class EmbeddingMatrix:
    """Row-per-post embedding matrix keyed by post_id.

    ``ids`` is sorted ascending by UTF-8 bytes and ``vectors[i]`` is the row
    for ``ids[i]``. Rows are unit L2 norm (f32 storage, f64 math upstream).
    """

    ids: list[str]
    vectors: np.ndarray  # (n, dim) float32

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError("vectors must be (len(ids), dim)")
        self._row: dict[str, int] = {pid: i for i, pid in enumerate(self.ids)}
        if len(self._row) != len(self.ids):
            raise ValueError("duplicate post_id in embedding matrix")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, post_id: str) -> np.ndarray:
        return self.vectors[self._row[post_id]]

    def subset(self, ids: list[str]) -> "EmbeddingMatrix":
        order = sorted(ids, key=lambda s: s.encode("utf-8"))
        idx = [self._row[i] for i in order]
        return EmbeddingMatrix(order, self.vectors[idx].copy())


def _normalize_rows(raw: np.ndarray) -> np.ndarray:
    """Unit-normalize rows with f64 accumulation; zero rows are rejected."""
    x = raw.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.nonzero(norms == 0.0)[0][0])
        raise ValueError(f"zero-norm embedding row at index {bad}")
    return (x / norms[:, None]).astype(np.float32)


def from_raw(ids: list[str], raw: np.ndarray) -> EmbeddingMatrix:
    """Build a normalized EmbeddingMatrix from unsorted ids and raw rows."""
    order = np.argsort(np.array([i.encode("utf-8") for i in ids], dtype=object))
    sorted_ids = [ids[int(i)] for i in order]
    rows = np.asarray(raw, dtype=np.float64)[np.asarray(order, dtype=int)]
    return EmbeddingMatrix(sorted_ids, _normalize_rows(rows))


def parse_embeddings_file(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Parse a CANEEMB1 file into (ids, raw f32 rows) without normalizing."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a CANEEMB1 file")
    dim = struct.unpack_from("<I", data, 8)[0]
    count = struct.unpack_from("<Q", data, 12)[0]
    if dim == 0:
        raise ValueError(f"{path}: dim=0 is invalid")
    ids: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    off = 20
    rec_f32 = 4 * dim
    for r in range(count):
        if off + 2 > len(data):
            raise ValueError(f"{path}: truncated record header at record {r}")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + rec_f32 > len(data):
            raise ValueError(f"{path}: truncated record {r}")
        ids.append(data[off:off + id_len].decode("utf-8"))
        off += id_len
        rows[r] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
        off += rec_f32
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes after last record")
    encoded = [i.encode("utf-8") for i in ids]
    if any(encoded[i] >= encoded[i + 1] for i in range(len(encoded) - 1)):
        raise ValueError(f"{path}: records not sorted ascending by id bytes")
    return ids, rows


def read_embeddings(path: str | Path, posts: PostCollection) -> EmbeddingMatrix:
    """Load a CANEEMB1 file and key it to ``posts``; rows are re-normalized.

    The file's id set must match the corpus's post ids exactly in both
    directions; mismatches are fatal, listing the first 10 offenders.
    """
    ids, raw = parse_embeddings_file(path)
    file_ids = set(ids)
    corpus_ids = {p.post_id for p in posts}
    missing = sorted(corpus_ids - file_ids)
    extra = sorted(file_ids - corpus_ids)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"{len(missing)} corpus post(s) missing from file: {missing[:10]}")
        if extra:
            parts.append(f"{len(extra)} file id(s) not in corpus: {extra[:10]}")
        raise ValueError(f"{path}: embedding/corpus id mismatch — " + "; ".join(parts))
    return EmbeddingMatrix(ids, _normalize_rows(raw))


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write the CANEEMB1 layout (records sorted ascending by id bytes)."""
    if len(matrix) == 0:
        raise ValueError("nothing to write: empty embedding matrix")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", matrix.dim)
    out += struct.pack("<Q", len(matrix))
    order = sorted(range(len(matrix.ids)), key=lambda i: matrix.ids[i].encode("utf-8"))
    vecs = np.ascontiguousarray(matrix.vectors, dtype="<f4")
    for i in order:
        enc = matrix.ids[i].encode("utf-8")
        if len(enc) > 0xFFFF:
            raise ValueError(f"post_id too long to serialize ({len(enc)} bytes)")
        out += struct.pack("<H", len(enc))
        out += enc
        out += vecs[i].tobytes()
    try:
        Path(path).write_bytes(bytes(out))
    except OSError as exc:
        raise OSError(f"failed writing embeddings to {path}: {exc}") from exc


def toy_embed(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector from hashed character 3-grams.

    Each 3-gram is hashed (keyed by ``seed``) into one of ``dim`` signed
    buckets; near-duplicate texts therefore land near each other. Texts
    shorter than 3 characters hash as a single gram; if no gram survives
    (empty text or exact cancellation) a seed-derived fixed unit vector
    is returned instead.
    """
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    if text:
        grams = [text[i:i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else [text]
        for gram in grams:
            h = stable_hash64(gram.encode("utf-8"), seed)
            bucket = h % dim
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            acc[bucket] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        rng = np.random.Generator(np.random.PCG64(stable_hash64(b"toy-embed-empty", seed)))
        acc = rng.standard_normal(dim)
        norm = float(np.linalg.norm(acc))
    return (acc / norm).astype(np.float32)


def toy_embed_posts(posts: PostCollection, dim: int, seed: int) -> EmbeddingMatrix:
    """Embed every post's normalized text with toy_embed."""
    ids = sorted((p.post_id for p in posts), key=lambda s: s.encode("utf-8"))
    norm_by_id = {p.post_id: p.text_norm for p in posts}
    rows = np.stack([toy_embed(norm_by_id[i], dim, seed) for i in ids])
    return EmbeddingMatrix(ids, rows)
